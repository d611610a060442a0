#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aspectcheck/backend.hpp"
#include "aspectcheck/corpus.hpp"
#include "aspectcheck/criteria.hpp"
#include "aspectcheck/perturb.hpp"

namespace aspectcheck {

enum class EvalMode { ScoreOnly, RateExplain, AnalyzeRate };
enum class PromptStrategy { Plain, ExplicitInstruction, IdentifyThenRate, SelfCheck, FullAspectContext };
/// Standard is the GPT-style template; Prometheus uses its rubric/[RESULT] layout.
enum class PromptTemplate { Standard, Prometheus };

std::string_view to_string(EvalMode mode);
std::string_view to_string(PromptStrategy strategy);
std::string_view to_string(PromptTemplate tmpl);
EvalMode parse_eval_mode(std::string_view text);
PromptStrategy parse_prompt_strategy(std::string_view text);
PromptTemplate parse_prompt_template(std::string_view text);

struct EvaluationForm {
    EvalMode mode = EvalMode::AnalyzeRate;
    int shots = 0;
    double temperature = 1.0;
    int n_samples = 10;
    PromptStrategy strategy = PromptStrategy::Plain;
    PromptTemplate prompt_template = PromptTemplate::Standard;
    /// Extra completions allowed per sample whose rating cannot be parsed.
    int retry_budget = 3;

    void validate() const;
    /// Compact label, e.g. "analyze_rate/plain/t1/n10/s0".
    std::string label() const;

    bool operator==(const EvaluationForm&) const = default;
};

void to_json(nlohmann::json& j, const EvaluationForm& form);
void from_json(const nlohmann::json& j, EvaluationForm& form);

/// A scored example shown before the target in few-shot prompts.
struct FewShotDemo {
    std::string source;
    std::string target;
    int rating = 3;
    std::string analysis;  // used by AnalyzeRate and RateExplain
};

std::vector<FewShotDemo> load_fewshot_demos(const std::filesystem::path& path);

/// Picks `shots` demos whose ratings cycle through 1..5, so labels are as
/// uniform as the count allows. Within a label the pick is seeded.
std::vector<FewShotDemo> select_fewshot_demos(const std::vector<FewShotDemo>& pool, int shots, std::uint64_t seed);

struct PromptExtras {
    /// Needed by FullAspectContext (the Default definition of every aspect).
    const CriteriaCatalog* catalog = nullptr;
    std::vector<FewShotDemo> demos;
    /// Reference answer for the Prometheus template.
    std::string reference;
};

std::string build_eval_prompt(std::string_view task_description, const Criterion& criterion, std::string_view source,
                              std::string_view target, const EvaluationForm& form, const PromptExtras& extras = {});

/// Stage two of SelfCheck: review `first_response` to `first_prompt` and give an improved evaluation.
std::string build_self_check_prompt(std::string_view first_prompt, std::string_view first_response);

/// First number after the last "Rating:" or "[RESULT]". Throws ParseError when
/// absent, non-numeric, or outside [1, 5].
double parse_rating(std::string_view response);

/// Which text a score belongs to: the sample's original reference or one perturbation of it.
struct TextRef {
    std::string sample_id;
    std::optional<PerturbationKind> kind;  // empty for the original

    std::string variant() const { return kind ? std::string(to_string(*kind)) : std::string("original"); }
    auto operator<=>(const TextRef&) const = default;
};

struct ScoreRecord {
    TextRef text_ref;
    CriterionKey criterion;
    std::vector<double> samples;
    double mean = 0.0;
    EvaluationForm form;

    bool operator==(const ScoreRecord&) const = default;
};

struct ScoreStats {
    std::size_t completions = 0;  // backend requests issued, including SelfCheck stage two
    std::size_t retries = 0;
};

/// Samples n ratings. Sample k uses sample_index k; its a-th retry uses n * a + k.
ScoreRecord score_text(LlmBackend& backend, const Sample& sample, const TextRef& ref, std::string_view text,
                       const Criterion& criterion, const EvaluationForm& form, const PromptExtras& extras = {},
                       ScoreStats* stats = nullptr);

struct ItemError {
    TextRef text_ref;
    CriterionKey criterion;
    std::string message;
    bool backend_failure = false;
};

struct ScoreMatrixOptions {
    std::size_t parallelism = 8;
    /// Leave out perturbed texts whose validation failed.
    bool skip_failed_perturbations = true;
    PromptExtras extras;
    /// Called after each item with (done, total); may run on worker threads.
    std::function<void(std::size_t, std::size_t)> progress;
};

struct ScoreMatrixResult {
    std::vector<ScoreRecord> records;  // deterministic order, independent of completion order
    std::vector<ItemError> errors;
    ScoreStats stats;
};

/// Scores every (original or perturbed text, criterion) pair. Per-item failures
/// are collected in `errors` instead of aborting the run.
ScoreMatrixResult score_matrix(LlmBackend& backend, const std::vector<Sample>& samples,
                               const std::vector<PerturbedText>& perturbed, const std::vector<Criterion>& criteria,
                               const EvaluationForm& form, const ScoreMatrixOptions& options = {});

std::string score_record_to_json(const ScoreRecord& record);
std::string scores_to_jsonl(const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> parse_scores(std::string_view jsonl, std::string_view origin = "<memory>");
std::vector<ScoreRecord> load_scores(const std::filesystem::path& path);

}  // namespace aspectcheck
