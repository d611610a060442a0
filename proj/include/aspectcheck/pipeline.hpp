#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aspectcheck/annotation.hpp"
#include "aspectcheck/backend.hpp"
#include "aspectcheck/criteria.hpp"
#include "aspectcheck/evaluator.hpp"
#include "aspectcheck/perturb.hpp"
#include "aspectcheck/stats.hpp"
#include "aspectcheck/testkit.hpp"

namespace aspectcheck {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitBackend = 2, kExitPartial = 3 };

struct BackendSettings {
    std::string type = "http";  // "http" or "constant"
    double constant = 5.0;      // rating returned by the constant backend
    HttpBackendConfig http;
};

struct AnnotateSettings {
    std::vector<std::string> annotators;  // explicit ids; generated from `annotator_count` when empty
    std::size_t annotator_count = 40;
    std::size_t groups = 4;
    std::size_t pairs_per_kind = 4;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::string> operator_token;
    std::optional<std::filesystem::path> static_dir;
    std::optional<std::filesystem::path> journal;  // default <out_dir>/annotation/judgments.jsonl
    std::optional<std::size_t> expected_annotators;  // enforce counts in stats when set
    std::optional<std::size_t> expected_pairs;
    std::vector<DescriptionKind> description_kinds;  // empty means every catalog description

    std::vector<std::string> annotator_ids() const;
};

struct RunConfig {
    // Inputs shipped with the tool.
    std::filesystem::path corpus;
    std::filesystem::path criteria = "data/criteria.json";
    std::filesystem::path expectations = "data/expectations.json";
    std::filesystem::path demos = "data/demos.json";
    std::optional<std::filesystem::path> fewshot;

    std::filesystem::path cache_dir = "cache";
    std::filesystem::path out_dir = "runs";
    /// Existing or new run directory to write into; a fresh timestamped one under out_dir otherwise.
    std::optional<std::filesystem::path> run_dir;

    // Stage inputs; default to the file of that name inside run_dir.
    std::optional<std::filesystem::path> perturbed;
    std::optional<std::filesystem::path> scores;
    std::optional<std::filesystem::path> deltas;
    std::optional<std::filesystem::path> verdicts;
    std::optional<std::filesystem::path> judgments;

    BackendSettings backend;
    std::optional<std::string> generator_model;  // model for LLM perturbations; backend model when unset
    bool offline = false;

    EvaluationForm form;
    Thresholds thresholds;
    std::uint64_t seed = 0;
    int bootstrap_iterations = 0;

    std::vector<PerturbationKind> kinds{kAllPerturbationKinds.begin(), kAllPerturbationKinds.end()};
    std::vector<Aspect> aspects{kAllAspects.begin(), kAllAspects.end()};
    std::vector<DescriptionKind> description_kinds{DescriptionKind::detailed()};
    std::optional<std::size_t> limit;

    PerturbOptions perturb;
    std::size_t parallelism = 8;
    bool skip_failed_perturbations = true;
    GroupBy group_by = GroupBy::Aspect;
    AnnotateSettings annotate;

    /// Relative paths in the file resolve against the file's directory.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    void validate() const;
};

struct CommandResult {
    int exit_code = kExitOk;
    std::filesystem::path run_dir;
    std::vector<std::filesystem::path> outputs;
    std::string summary;  // one human-readable paragraph
};

/// Backend used by perturb/evaluate: `inner` (or the configured one) behind the response cache.
/// Offline mode drops the inner backend so any cache miss fails.
std::shared_ptr<CachingBackend> make_backend(const RunConfig& config, std::shared_ptr<LlmBackend> inner = nullptr,
                                             std::optional<std::string> model_override = std::nullopt);

CommandResult cmd_perturb(const RunConfig& config, std::shared_ptr<LlmBackend> backend = nullptr);
CommandResult cmd_evaluate(const RunConfig& config, std::shared_ptr<LlmBackend> backend = nullptr);
CommandResult cmd_test(const RunConfig& config);
CommandResult cmd_correlate(const RunConfig& config);
CommandResult cmd_report(const RunConfig& config);
CommandResult cmd_annotate_plan(const RunConfig& config);
CommandResult cmd_annotate_stats(const RunConfig& config);
/// Serves until `should_stop` returns true (polled every 100 ms). `on_ready` gets the bound port.
CommandResult cmd_annotate_serve(const RunConfig& config, const std::function<bool()>& should_stop,
                                 const std::function<void(int)>& on_ready = {});

/// Markdown variance table plus long-form heatmap rows; exposed for tests.
std::string render_report(const std::vector<DeltaCell>& deltas, const std::vector<Verdict>& verdicts,
                          const ExpectationMatrix& matrix, const Thresholds& thresholds);
std::string render_heatmap_csv(const std::vector<DeltaCell>& deltas, const ExpectationMatrix& matrix,
                               const std::vector<Verdict>& verdicts);

}  // namespace aspectcheck
