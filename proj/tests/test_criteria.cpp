#include <gtest/gtest.h>

#include <set>

#include "aspectcheck/criteria.hpp"
#include "aspectcheck/error.hpp"

using namespace aspectcheck;

namespace {
const CriteriaCatalog& catalog() {
    static const auto cat = CriteriaCatalog::load(std::string(ASPECTCHECK_DATA_DIR) + "/criteria.json");
    return cat;
}
}  // namespace

TEST(Taxonomy, StandardTreeShape) {
    const auto& t = AspectTaxonomy::standard();
    EXPECT_EQ(t.edge_count(), 10u);
    EXPECT_EQ(t.root(), Aspect::Overall);
    EXPECT_EQ(t.ancestors(Aspect::Grammaticality),
              (std::vector<Aspect>{Aspect::Fluency, Aspect::Readability, Aspect::Overall}));
    EXPECT_EQ(t.ancestors(Aspect::NonHallucination),
              (std::vector<Aspect>{Aspect::Faithfulness, Aspect::Adequacy, Aspect::Overall}));
    EXPECT_TRUE(t.ancestors(Aspect::Overall).empty());
    EXPECT_EQ(t.children(Aspect::Readability).size(), 3u);
}

TEST(Taxonomy, EveryAncestorChainEndsAtRoot) {
    const auto& t = AspectTaxonomy::standard();
    for (auto a : kAllAspects) {
        auto anc = t.ancestors(a);
        if (a == t.root()) continue;
        ASSERT_FALSE(anc.empty());
        EXPECT_EQ(anc.back(), t.root());
        std::set<Aspect> uniq(anc.begin(), anc.end());
        EXPECT_EQ(uniq.size(), anc.size());
    }
}

TEST(Taxonomy, RejectsCycleAndTwoRoots) {
    auto edges = AspectTaxonomy::standard().edges();
    auto cyc = edges;
    cyc.push_back({Aspect::Overall, Aspect::Grammaticality});
    EXPECT_THROW(AspectTaxonomy::from_edges(cyc), ValidationError);
    auto two = edges;
    two.pop_back();
    EXPECT_THROW(AspectTaxonomy::from_edges(two), ValidationError);
    auto dup = edges;
    dup.push_back({Aspect::Fluency, Aspect::Overall});
    EXPECT_THROW(AspectTaxonomy::from_edges(dup), ValidationError);
}

TEST(Aspect, CodesRoundTrip) {
    for (auto a : kAllAspects) {
        EXPECT_EQ(parse_aspect(code(a)), a);
        EXPECT_EQ(parse_aspect(name(a)), a);
    }
    EXPECT_THROW(parse_aspect("Style"), ValidationError);
}

TEST(DescriptionKind, ParseRoundTrip) {
    for (auto k : kDesignedKinds) EXPECT_EQ(parse_description_kind(to_string(k)), k);
    EXPECT_EQ(parse_description_kind("selection3"), DescriptionKind::selection_(3));
    EXPECT_THROW(parse_description_kind("selection0"), ValidationError);
    EXPECT_THROW(parse_description_kind("selectionx"), ValidationError);
    EXPECT_THROW(parse_description_kind("verbose"), ValidationError);
}

TEST(Catalog, ShippedCatalogHasEightyEntries) {
    EXPECT_EQ(catalog().size(), 80u);
    for (auto a : kAllAspects)
        for (auto k : kDesignedKinds) EXPECT_NE(catalog().find({a, k}), nullptr);
}

TEST(Catalog, SelectionCountsPerAspect) {
    std::map<Aspect, int> count;
    for (const auto& c : catalog().entries())
        if (c.kind.tier == DescriptionTier::Selection) ++count[c.aspect];
    EXPECT_EQ(count[Aspect::Overall], 2);
    EXPECT_EQ(count[Aspect::Readability], 2);
    EXPECT_EQ(count[Aspect::Coherence], 3);
    EXPECT_EQ(count[Aspect::Fluency], 3);
    EXPECT_EQ(count[Aspect::Grammaticality], 3);
    EXPECT_EQ(count[Aspect::Simplicity], 1);
    EXPECT_EQ(count[Aspect::Adequacy], 2);
    EXPECT_EQ(count[Aspect::Faithfulness], 3);
    EXPECT_EQ(count[Aspect::NonHallucination], 2);
    EXPECT_EQ(count[Aspect::NonContradiction], 1);
    EXPECT_EQ(count[Aspect::Informativeness], 3);
}

TEST(Catalog, TermKindDefinitionsFollowPattern) {
    for (const auto& c : catalog().of_kind(DescriptionKind::term())) {
        EXPECT_EQ(c.definition.rfind("It measures", 0), 0u) << c.definition;
        EXPECT_NE(c.definition.find("the target"), std::string::npos);
        EXPECT_EQ(c.definition.back(), '.');
    }
}

TEST(Catalog, LookupAndMissing) {
    const auto& c = catalog().at(Aspect::Grammaticality, DescriptionKind::default_());
    EXPECT_EQ(c.term, "Grammaticality");
    EXPECT_THROW(catalog().at(Aspect::Simplicity, DescriptionKind::selection_(2)), NotFoundError);
}

TEST(Catalog, RejectsDuplicatesAndMissingMandatory) {
    std::string base = R"({"criteria":[)";
    std::string entries;
    for (auto a : kAllAspects)
        for (auto k : kDesignedKinds) {
            std::string def = k.tier == DescriptionTier::Term ? "It measures the target text." : "Definition.";
            entries += R"({"aspect":")" + std::string(code(a)) + R"(","kind":")" + to_string(k) +
                       R"(","term":"T","definition":")" + def + R"("},)";
        }
    auto ok = base + entries.substr(0, entries.size() - 1) + "]}";
    EXPECT_EQ(CriteriaCatalog::parse(ok).size(), 55u);
    auto dup = base + entries + R"({"aspect":"All.","kind":"default","term":"T","definition":"D."}]})";
    EXPECT_THROW(CriteriaCatalog::parse(dup), ValidationError);
    auto missing = base + R"({"aspect":"All.","kind":"default","term":"T","definition":"D."}]})";
    EXPECT_THROW(CriteriaCatalog::parse(missing), ValidationError);
    auto counted = R"({"expected_count":56,"criteria":[)" + entries.substr(0, entries.size() - 1) + "]}";
    EXPECT_THROW(CriteriaCatalog::parse(counted), ValidationError);
    auto badterm = base + entries +
                   R"({"aspect":"All.","kind":"selection1","term":"","definition":""}]})";
    EXPECT_THROW(CriteriaCatalog::parse(badterm), ValidationError);
}

TEST(Criterion, RenderAndStrip) {
    Criterion c{Aspect::Fluency, DescriptionKind::default_(), "Fluency", "Reads naturally."};
    EXPECT_EQ(c.render(), "Fluency: Reads naturally.");
    EXPECT_EQ(strip_criterion(c, StripMode::DefinitionOnly).render(), "Reads naturally.");
    EXPECT_EQ(strip_criterion(c, StripMode::TermOnly).render(), "Fluency");
    EXPECT_EQ(strip_criterion(c, StripMode::SingleWord).render(), "Aspect");
    EXPECT_EQ(strip_criterion(c, StripMode::Empty).render(), "");
}
