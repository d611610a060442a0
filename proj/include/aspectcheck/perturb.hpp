#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aspectcheck/backend.hpp"
#include "aspectcheck/corpus.hpp"
#include "aspectcheck/criteria.hpp"

namespace aspectcheck {

enum class PerturbationKind {
    Repetition,
    PassiveVoice,
    Inversion,
    ImproperConnective,
    SentenceExchange,
    IncorrectVerbForm,
    WordExchange,
    SpellingMistake,
    UncommonPhrase,
    ComplexSentence,
    Abbreviation,
    Hypernym,
    SentenceDeletion,
    Complement,
    Continuation,
    DifferentEntity,
    ConflictingFact,
    Negation,
};

inline constexpr std::size_t kPerturbationCount = 18;

inline constexpr std::array<PerturbationKind, kPerturbationCount> kAllPerturbationKinds = {
    PerturbationKind::Repetition,       PerturbationKind::PassiveVoice,     PerturbationKind::Inversion,
    PerturbationKind::ImproperConnective, PerturbationKind::SentenceExchange, PerturbationKind::IncorrectVerbForm,
    PerturbationKind::WordExchange,     PerturbationKind::SpellingMistake,  PerturbationKind::UncommonPhrase,
    PerturbationKind::ComplexSentence,  PerturbationKind::Abbreviation,     PerturbationKind::Hypernym,
    PerturbationKind::SentenceDeletion, PerturbationKind::Complement,       PerturbationKind::Continuation,
    PerturbationKind::DifferentEntity,  PerturbationKind::ConflictingFact,  PerturbationKind::Negation};

inline constexpr std::size_t index_of(PerturbationKind k) { return static_cast<std::size_t>(k); }

enum class PerturbationMethod { Rule, Llm };

/// snake_case code, e.g. "spelling_mistake".
std::string_view to_string(PerturbationKind kind);
/// Title-case label used in reports, e.g. "Spelling Mistake".
std::string_view display_name(PerturbationKind kind);
PerturbationKind parse_perturbation_kind(std::string_view text);
std::string_view to_string(PerturbationMethod method);
PerturbationMethod parse_perturbation_method(std::string_view text);

Aspect target_aspect(PerturbationKind kind);
PerturbationMethod method_of(PerturbationKind kind);

struct ValidationCheck {
    std::string name;
    bool passed = true;
    std::string note;

    bool operator==(const ValidationCheck&) const = default;
};

struct ValidationReport {
    bool passed = true;
    std::vector<ValidationCheck> checks;

    void add(std::string name, bool ok, std::string note = {});
    bool operator==(const ValidationReport&) const = default;
};

struct PerturbedText {
    std::string sample_id;
    PerturbationKind kind = PerturbationKind::Repetition;
    PerturbationMethod method = PerturbationMethod::Rule;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> generator_model;
    std::string text;
    ValidationReport validation;

    bool operator==(const PerturbedText&) const = default;
};

/// Per-output seed, a stable hash of (global seed, sample id, kind).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view sample_id, PerturbationKind kind);

/// Swaps two distinct sentences picked uniformly from all pairs.
std::string sentence_exchange(std::string_view text, std::uint64_t seed);
/// Swaps sentences at 0-based positions i and j.
std::string sentence_exchange_at(std::string_view text, std::size_t i, std::size_t j);

/// Swaps max(1, round(rate * words)) disjoint adjacent word pairs.
std::string word_exchange(std::string_view text, std::uint64_t seed, double rate = 0.1);
/// Swaps the words at 0-based positions p and p + 1 for each given p.
std::string word_exchange_at(std::string_view text, const std::vector<std::size_t>& positions);

enum class SpellingEdit { Duplicate, Delete, Transpose };

/// Applies one edit to the letter at `pos` of `word` (Transpose swaps pos and pos + 1).
std::string apply_spelling_edit(std::string_view word, SpellingEdit edit, std::size_t pos);

/// Gives max(1, round(rate * words)) distinct eligible words one seeded edit each.
/// Eligible: alphabetic core of at least 3 letters once surrounding punctuation is removed.
std::string spelling_mistake(std::string_view text, std::uint64_t seed, double rate = 0.1);

/// Drops the final sentence, keeping the rest verbatim.
std::string sentence_deletion(std::string_view text);

/// Applies a rule-tagged kind.
std::string apply_rule(PerturbationKind kind, std::string_view text, std::uint64_t seed, double rate = 0.1);

struct Demonstration {
    std::string original;
    std::string perturbed;
};

struct DemoSet {
    PerturbationKind kind = PerturbationKind::Repetition;
    std::string instruction;
    std::vector<Demonstration> pairs;
};

inline constexpr std::size_t kDemosPerKind = 10;

/// The generator demonstrations, one set per LLM-tagged kind.
class DemoLibrary {
public:
    static DemoLibrary parse(std::string_view json_text);
    static DemoLibrary load(const std::filesystem::path& path);

    const DemoSet& at(PerturbationKind kind) const;
    bool contains(PerturbationKind kind) const { return sets_.contains(kind); }
    std::size_t size() const { return sets_.size(); }

private:
    std::map<PerturbationKind, DemoSet> sets_;
};

std::string build_perturbation_prompt(PerturbationKind kind, const Sample& sample, const DemoSet& demos);

/// Heuristic checks; failures are reported, never raised.
ValidationReport validate_perturbation(PerturbationKind kind, std::string_view original, std::string_view perturbed);

struct PerturbOptions {
    double rate = 0.1;
    /// Generation attempts per LLM-tagged output before giving up.
    int max_attempts = 3;
    double temperature = 0.7;
    std::size_t parallelism = 8;
};

/// One output per (sample, kind), in sample-major order. LLM outputs that fail
/// validation are regenerated up to max_attempts; the last attempt is kept with
/// its failing report.
std::vector<PerturbedText> perturb_all(const std::vector<Sample>& samples, const std::vector<PerturbationKind>& kinds,
                                       std::uint64_t rule_seed, LlmBackend* llm = nullptr,
                                       const DemoLibrary* demos = nullptr, const PerturbOptions& options = {});

std::string perturbed_to_jsonl(const std::vector<PerturbedText>& items);
std::vector<PerturbedText> parse_perturbed(std::string_view jsonl, std::string_view origin = "<memory>");
std::vector<PerturbedText> load_perturbed(const std::filesystem::path& path);

}  // namespace aspectcheck
