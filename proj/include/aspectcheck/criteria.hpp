#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aspectcheck {

enum class Aspect {
    Overall,
    Readability,
    Adequacy,
    Fluency,
    Coherence,
    Simplicity,
    Grammaticality,
    Faithfulness,
    Informativeness,
    NonContradiction,
    NonHallucination,
};

inline constexpr std::size_t kAspectCount = 11;

inline constexpr std::array<Aspect, kAspectCount> kAllAspects = {
    Aspect::Overall,        Aspect::Readability,  Aspect::Adequacy,        Aspect::Fluency,
    Aspect::Coherence,      Aspect::Simplicity,   Aspect::Grammaticality,  Aspect::Faithfulness,
    Aspect::Informativeness, Aspect::NonContradiction, Aspect::NonHallucination};

/// Column order of the published variance tables (Flu. ... All.).
inline constexpr std::array<Aspect, kAspectCount> kReportAspectOrder = {
    Aspect::Fluency,      Aspect::Coherence,        Aspect::Grammaticality,
    Aspect::Simplicity,   Aspect::Readability,      Aspect::Faithfulness,
    Aspect::NonContradiction, Aspect::NonHallucination, Aspect::Informativeness,
    Aspect::Adequacy,     Aspect::Overall};

/// Short code, e.g. "Gram.".
std::string_view code(Aspect aspect);
/// Enum-style name, e.g. "NonContradiction".
std::string_view name(Aspect aspect);
/// Accepts either the code or the name.
Aspect parse_aspect(std::string_view text);
std::optional<Aspect> try_parse_aspect(std::string_view text);

inline constexpr std::size_t index_of(Aspect a) { return static_cast<std::size_t>(a); }

/// Parent links of the aspect tree; Overall is the root.
class AspectTaxonomy {
public:
    struct Edge {
        Aspect child;
        Aspect parent;
    };

    static const AspectTaxonomy& standard();

    /// Throws ValidationError unless the edges form a single tree over all 11 aspects.
    static AspectTaxonomy from_edges(const std::vector<Edge>& edges);

    std::optional<Aspect> parent(Aspect aspect) const { return parent_[index_of(aspect)]; }
    std::vector<Aspect> children(Aspect aspect) const;
    Aspect root() const { return root_; }
    std::size_t edge_count() const;
    std::vector<Edge> edges() const;

    /// Strict ancestors, nearest first, ending at the root.
    std::vector<Aspect> ancestors(Aspect aspect) const;

    bool operator==(const AspectTaxonomy&) const = default;

private:
    AspectTaxonomy() = default;
    std::array<std::optional<Aspect>, kAspectCount> parent_{};
    Aspect root_ = Aspect::Overall;
};

inline std::vector<Aspect> ancestors(const AspectTaxonomy& taxonomy, Aspect aspect) {
    return taxonomy.ancestors(aspect);
}

enum class DescriptionTier { Default, Simplified, Detailed, Term, List, Selection };

/// Detail tier of a criterion. Selection entries carry a 1-based index.
struct DescriptionKind {
    DescriptionTier tier = DescriptionTier::Default;
    int selection = 0;

    static constexpr DescriptionKind default_() { return {DescriptionTier::Default, 0}; }
    static constexpr DescriptionKind simplified() { return {DescriptionTier::Simplified, 0}; }
    static constexpr DescriptionKind detailed() { return {DescriptionTier::Detailed, 0}; }
    static constexpr DescriptionKind term() { return {DescriptionTier::Term, 0}; }
    static constexpr DescriptionKind list() { return {DescriptionTier::List, 0}; }
    static constexpr DescriptionKind selection_(int k) { return {DescriptionTier::Selection, k}; }

    auto operator<=>(const DescriptionKind&) const = default;
};

inline constexpr std::array<DescriptionKind, 5> kDesignedKinds = {
    DescriptionKind::default_(), DescriptionKind::simplified(), DescriptionKind::detailed(),
    DescriptionKind::term(), DescriptionKind::list()};

/// "default", "simplified", "detailed", "term", "list", "selection<k>".
std::string to_string(DescriptionKind kind);
DescriptionKind parse_description_kind(std::string_view text);

struct CriterionKey {
    Aspect aspect = Aspect::Overall;
    DescriptionKind kind;

    auto operator<=>(const CriterionKey&) const = default;
};

struct Criterion {
    Aspect aspect = Aspect::Overall;
    DescriptionKind kind;
    std::string term;
    std::string definition;

    CriterionKey key() const { return {aspect, kind}; }

    /// Text substituted for the criterion in evaluation prompts: "Term: definition",
    /// or whichever half is present.
    std::string render() const;

    bool operator==(const Criterion&) const = default;
};

/// Criterion descriptions keyed by (aspect, description kind). Immutable after load.
class CriteriaCatalog {
public:
    static constexpr std::size_t kMandatoryEntries = 55;

    static CriteriaCatalog parse(std::string_view json_text);
    static CriteriaCatalog load(const std::filesystem::path& path);

    const Criterion& at(Aspect aspect, DescriptionKind kind) const;
    const Criterion& at(const CriterionKey& key) const { return at(key.aspect, key.kind); }
    const Criterion* find(const CriterionKey& key) const;

    std::size_t size() const { return entries_.size(); }
    std::vector<Criterion> entries() const;
    std::vector<Criterion> of_kind(DescriptionKind kind) const;
    std::vector<Criterion> of_aspect(Aspect aspect) const;
    const AspectTaxonomy& taxonomy() const { return taxonomy_; }

private:
    CriteriaCatalog() : taxonomy_(AspectTaxonomy::standard()) {}
    std::map<CriterionKey, Criterion> entries_;
    AspectTaxonomy taxonomy_;
};

inline CriteriaCatalog load_catalog(const std::filesystem::path& path) {
    return CriteriaCatalog::load(path);
}

enum class StripMode { DefinitionOnly, TermOnly, SingleWord, Empty };

Criterion strip_criterion(const Criterion& criterion, StripMode mode);
std::string_view to_string(StripMode mode);
StripMode parse_strip_mode(std::string_view text);

}  // namespace aspectcheck
