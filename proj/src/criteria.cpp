#include "aspectcheck/criteria.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aspectcheck/error.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;

namespace {

struct AspectInfo {
    Aspect aspect;
    std::string_view code;
    std::string_view name;
};

constexpr std::array<AspectInfo, kAspectCount> kAspectInfo = {{
    {Aspect::Overall, "All.", "Overall"},
    {Aspect::Readability, "Read.", "Readability"},
    {Aspect::Adequacy, "Ade.", "Adequacy"},
    {Aspect::Fluency, "Flu.", "Fluency"},
    {Aspect::Coherence, "Coh.", "Coherence"},
    {Aspect::Simplicity, "Sim.", "Simplicity"},
    {Aspect::Grammaticality, "Gram.", "Grammaticality"},
    {Aspect::Faithfulness, "Fai.", "Faithfulness"},
    {Aspect::Informativeness, "Inf.", "Informativeness"},
    {Aspect::NonContradiction, "Cont.", "NonContradiction"},
    {Aspect::NonHallucination, "Hal.", "NonHallucination"},
}};

bool valid_term_definition(std::string_view def) {
    return detail::starts_with(def, "It measures") && def.find("the target") != std::string_view::npos &&
           !def.empty() && def.back() == '.';
}

}  // namespace

std::string_view code(Aspect aspect) { return kAspectInfo[index_of(aspect)].code; }
std::string_view name(Aspect aspect) { return kAspectInfo[index_of(aspect)].name; }

std::optional<Aspect> try_parse_aspect(std::string_view text) {
    for (const auto& info : kAspectInfo) {
        if (info.code == text || info.name == text) return info.aspect;
    }
    return std::nullopt;
}

Aspect parse_aspect(std::string_view text) {
    if (auto a = try_parse_aspect(text)) return *a;
    throw ValidationError("unknown aspect '" + std::string(text) + "'");
}

const AspectTaxonomy& AspectTaxonomy::standard() {
    static const AspectTaxonomy taxonomy = from_edges({
        {Aspect::Readability, Aspect::Overall},
        {Aspect::Adequacy, Aspect::Overall},
        {Aspect::Fluency, Aspect::Readability},
        {Aspect::Coherence, Aspect::Readability},
        {Aspect::Simplicity, Aspect::Readability},
        {Aspect::Grammaticality, Aspect::Fluency},
        {Aspect::Faithfulness, Aspect::Adequacy},
        {Aspect::Informativeness, Aspect::Adequacy},
        {Aspect::NonContradiction, Aspect::Faithfulness},
        {Aspect::NonHallucination, Aspect::Faithfulness},
    });
    return taxonomy;
}

AspectTaxonomy AspectTaxonomy::from_edges(const std::vector<Edge>& edges) {
    AspectTaxonomy t;
    for (const auto& e : edges) {
        if (e.child == e.parent)
            throw ValidationError("aspect " + std::string(code(e.child)) + " is its own parent");
        auto& slot = t.parent_[index_of(e.child)];
        if (slot)
            throw ValidationError("aspect " + std::string(code(e.child)) + " has two parents");
        slot = e.parent;
    }
    std::vector<Aspect> roots;
    for (auto a : kAllAspects)
        if (!t.parent_[index_of(a)]) roots.push_back(a);
    if (roots.size() != 1)
        throw ValidationError("aspect taxonomy must have exactly one root, found " +
                              std::to_string(roots.size()));
    t.root_ = roots.front();
    for (auto a : kAllAspects) {
        // A path longer than the number of aspects means a cycle.
        std::size_t steps = 0;
        for (auto p = t.parent_[index_of(a)]; p; p = t.parent_[index_of(*p)]) {
            if (++steps > kAspectCount)
                throw ValidationError("aspect taxonomy has a cycle through " + std::string(code(a)));
        }
    }
    return t;
}

std::vector<Aspect> AspectTaxonomy::children(Aspect aspect) const {
    std::vector<Aspect> out;
    for (auto a : kAllAspects)
        if (parent_[index_of(a)] == aspect) out.push_back(a);
    return out;
}

std::size_t AspectTaxonomy::edge_count() const {
    std::size_t n = 0;
    for (const auto& p : parent_) n += p.has_value();
    return n;
}

std::vector<AspectTaxonomy::Edge> AspectTaxonomy::edges() const {
    std::vector<Edge> out;
    for (auto a : kAllAspects)
        if (auto p = parent_[index_of(a)]) out.push_back({a, *p});
    return out;
}

std::vector<Aspect> AspectTaxonomy::ancestors(Aspect aspect) const {
    std::vector<Aspect> out;
    for (auto p = parent(aspect); p; p = parent(*p)) out.push_back(*p);
    return out;
}

std::string to_string(DescriptionKind kind) {
    switch (kind.tier) {
    case DescriptionTier::Default: return "default";
    case DescriptionTier::Simplified: return "simplified";
    case DescriptionTier::Detailed: return "detailed";
    case DescriptionTier::Term: return "term";
    case DescriptionTier::List: return "list";
    case DescriptionTier::Selection: return "selection" + std::to_string(kind.selection);
    }
    return "unknown";
}

DescriptionKind parse_description_kind(std::string_view text) {
    for (auto k : kDesignedKinds)
        if (to_string(k) == text) return k;
    constexpr std::string_view prefix = "selection";
    if (detail::starts_with(text, prefix) && text.size() > prefix.size()) {
        int k = 0;
        for (char c : text.substr(prefix.size())) {
            if (c < '0' || c > '9') throw ValidationError("bad description kind '" + std::string(text) + "'");
            k = k * 10 + (c - '0');
            if (k > 1000) throw ValidationError("selection index too large in '" + std::string(text) + "'");
        }
        if (k < 1) throw ValidationError("selection index must be >= 1 in '" + std::string(text) + "'");
        return DescriptionKind::selection_(k);
    }
    throw ValidationError("unknown description kind '" + std::string(text) + "'");
}

std::string Criterion::render() const {
    if (term.empty()) return definition;
    if (definition.empty()) return term;
    return term + ": " + definition;
}

CriteriaCatalog CriteriaCatalog::parse(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("criteria catalog: malformed JSON: ") + e.what());
    }
    CriteriaCatalog cat;
    if (doc.contains("aspects")) {
        std::vector<AspectTaxonomy::Edge> edges;
        for (const auto& a : doc.at("aspects")) {
            if (a.contains("parent") && !a["parent"].is_null()) {
                edges.push_back({parse_aspect(a.at("code").get<std::string>()),
                                 parse_aspect(a["parent"].get<std::string>())});
            }
        }
        cat.taxonomy_ = AspectTaxonomy::from_edges(edges);
    }
    if (!doc.contains("criteria") || !doc["criteria"].is_array())
        throw ValidationError("criteria catalog: missing 'criteria' array");
    std::size_t index = 0;
    for (const auto& item : doc["criteria"]) {
        auto where = "criteria catalog entry " + std::to_string(index++);
        Criterion c;
        try {
            c.aspect = parse_aspect(item.at("aspect").get<std::string>());
            c.kind = parse_description_kind(item.at("kind").get<std::string>());
            c.term = item.value("term", "");
            c.definition = item.at("definition").get<std::string>();
        } catch (const json::exception& e) {
            throw ValidationError(where + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        auto label = where + " (" + std::string(code(c.aspect)) + ", " + to_string(c.kind) + ")";
        if (c.definition.empty()) throw ValidationError(label + ": empty definition");
        if (c.term.empty() && c.kind.tier != DescriptionTier::Selection)
            throw ValidationError(label + ": empty term");
        if (c.kind.tier == DescriptionTier::Term && !valid_term_definition(c.definition))
            throw ValidationError(label + ": term-kind definition must read 'It measures ... the target ... .'");
        auto key = c.key();
        if (!cat.entries_.emplace(key, std::move(c)).second)
            throw ValidationError(label + ": duplicate entry");
    }
    for (auto a : kAllAspects) {
        for (auto k : kDesignedKinds) {
            if (!cat.entries_.contains({a, k}))
                throw ValidationError("criteria catalog: missing mandatory entry (" + std::string(code(a)) +
                                      ", " + to_string(k) + ")");
        }
    }
    if (doc.contains("expected_count")) {
        auto expected = doc["expected_count"].get<std::size_t>();
        if (expected != cat.entries_.size())
            throw ValidationError("criteria catalog: expected " + std::to_string(expected) +
                                  " entries, found " + std::to_string(cat.entries_.size()));
    }
    return cat;
}

CriteriaCatalog CriteriaCatalog::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open criteria catalog " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const Criterion* CriteriaCatalog::find(const CriterionKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

const Criterion& CriteriaCatalog::at(Aspect aspect, DescriptionKind kind) const {
    if (const auto* c = find({aspect, kind})) return *c;
    throw NotFoundError("no criterion for (" + std::string(code(aspect)) + ", " + to_string(kind) + ")");
}

std::vector<Criterion> CriteriaCatalog::entries() const {
    std::vector<Criterion> out;
    out.reserve(entries_.size());
    for (const auto& [_, c] : entries_) out.push_back(c);
    return out;
}

std::vector<Criterion> CriteriaCatalog::of_kind(DescriptionKind kind) const {
    std::vector<Criterion> out;
    for (const auto& [key, c] : entries_)
        if (key.kind == kind) out.push_back(c);
    return out;
}

std::vector<Criterion> CriteriaCatalog::of_aspect(Aspect aspect) const {
    std::vector<Criterion> out;
    for (const auto& [key, c] : entries_)
        if (key.aspect == aspect) out.push_back(c);
    return out;
}

Criterion strip_criterion(const Criterion& criterion, StripMode mode) {
    Criterion out = criterion;
    switch (mode) {
    case StripMode::DefinitionOnly: out.term.clear(); break;
    case StripMode::TermOnly: out.definition.clear(); break;
    case StripMode::SingleWord:
        out.term = "Aspect";
        out.definition.clear();
        break;
    case StripMode::Empty:
        out.term.clear();
        out.definition.clear();
        break;
    }
    return out;
}

std::string_view to_string(StripMode mode) {
    switch (mode) {
    case StripMode::DefinitionOnly: return "definition_only";
    case StripMode::TermOnly: return "term_only";
    case StripMode::SingleWord: return "single_word";
    case StripMode::Empty: return "empty";
    }
    return "unknown";
}

StripMode parse_strip_mode(std::string_view text) {
    for (auto m : {StripMode::DefinitionOnly, StripMode::TermOnly, StripMode::SingleWord, StripMode::Empty})
        if (to_string(m) == text) return m;
    throw ValidationError("unknown strip mode '" + std::string(text) + "'");
}

}  // namespace aspectcheck
