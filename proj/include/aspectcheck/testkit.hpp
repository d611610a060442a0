#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aspectcheck/criteria.hpp"
#include "aspectcheck/evaluator.hpp"
#include "aspectcheck/perturb.hpp"

namespace aspectcheck {

enum class CellClass { Affected, Unaffected, Excluded };
std::string_view to_string(CellClass c);

struct ExpectationCell {
    PerturbationKind kind = PerturbationKind::Repetition;
    Aspect aspect = Aspect::Overall;
    bool human = false;        // annotators judged the aspect affected
    bool expectation = false;  // the taxonomy predicts the aspect affected

    CellClass classification() const {
        if (human && expectation) return CellClass::Affected;
        if (!human && !expectation) return CellClass::Unaffected;
        return CellClass::Excluded;
    }
};

/// expectation[kind][aspect], indexed by index_of().
using ExpectationColumn = std::array<std::array<bool, kAspectCount>, kPerturbationCount>;

struct ExpectationOverrides {
    std::vector<std::pair<PerturbationKind, Aspect>> add;
    std::vector<std::pair<PerturbationKind, Aspect>> remove;
};

/// The 18 x 11 grid of perturbation/aspect cells with both provenance marks.
class ExpectationMatrix {
public:
    static ExpectationMatrix parse(std::string_view json_text);
    static ExpectationMatrix load(const std::filesystem::path& path);
    static ExpectationMatrix from_columns(const ExpectationColumn& human, const ExpectationColumn& expectation);

    const ExpectationCell& cell(PerturbationKind kind, Aspect aspect) const {
        return cells_[index_of(kind)][index_of(aspect)];
    }
    CellClass at(PerturbationKind kind, Aspect aspect) const { return cell(kind, aspect).classification(); }

    /// Aspects in the Affected / Unaffected class for one perturbation kind.
    std::vector<Aspect> affected(PerturbationKind kind) const;
    std::vector<Aspect> unaffected(PerturbationKind kind) const;

    ExpectationColumn expectation_column() const;
    ExpectationColumn human_column() const;
    /// Override set shipped alongside the matrix (empty when the file has none).
    const ExpectationOverrides& overrides() const { return overrides_; }

private:
    std::array<std::array<ExpectationCell, kAspectCount>, kPerturbationCount> cells_{};
    ExpectationOverrides overrides_;
};

inline ExpectationMatrix load_expectation_matrix(const std::filesystem::path& path) {
    return ExpectationMatrix::load(path);
}

/// Affected iff the aspect is the kind's target, one of its ancestors, or added
/// by an override, and not removed by one.
ExpectationColumn derive_expectations(const AspectTaxonomy& taxonomy, const ExpectationOverrides& overrides);

struct DeltaCell {
    std::string form;  // EvaluationForm::label() of the scores
    DescriptionKind description_kind;
    PerturbationKind kind = PerturbationKind::Repetition;
    Aspect aspect = Aspect::Overall;
    /// Mean over samples of (original mean score - perturbed mean score).
    double delta = 0.0;
    std::size_t n = 0;
    /// Per-sample differences in sample order; empty when loaded from CSV.
    std::vector<double> differences;
};

/// Groups records by (form, description kind, kind, aspect). Every perturbed record
/// needs the original record for the same sample, criterion and form.
std::vector<DeltaCell> compute_deltas(const std::vector<ScoreRecord>& records);

enum class TestKind { DirectionalExpectation, Invariance };
std::string_view to_string(TestKind test);

struct Thresholds {
    double tau_t = 1.0;
    double tau_f = 0.2;
    void validate() const;
};

struct ConfidenceInterval {
    double low = 0.0;
    double high = 0.0;
};

struct Verdict {
    std::string form;
    DescriptionKind description_kind;
    PerturbationKind kind = PerturbationKind::Repetition;
    Aspect aspect = Aspect::Overall;
    TestKind test = TestKind::DirectionalExpectation;
    bool pass = false;
    double threshold = 0.0;
    double delta = 0.0;
    std::size_t n = 0;
    std::optional<ConfidenceInterval> ci;

    /// How far the delta sits on the wrong side of the threshold (0 when passing).
    double violation() const;
};

struct BootstrapOptions {
    int iterations = 0;  // 0 disables
    double level = 0.95;
    std::uint64_t seed = 0;
};

/// Percentile bootstrap of the mean.
ConfidenceInterval bootstrap_mean_ci(const std::vector<double>& values, int iterations, double level,
                                     std::uint64_t seed);

/// Directional test on Affected cells (pass iff delta >= tau_t), invariance on
/// Unaffected cells (pass iff |delta| <= tau_f); Excluded cells get no verdict.
std::vector<Verdict> run_tests(const std::vector<DeltaCell>& deltas, const ExpectationMatrix& matrix,
                               const Thresholds& thresholds = {}, const BootstrapOptions& bootstrap = {});

struct PassRate {
    std::size_t total = 0;
    std::size_t passed = 0;
    /// Absent when there are no verdicts of this kind.
    std::optional<double> rate() const {
        if (total == 0) return std::nullopt;
        return static_cast<double>(passed) / static_cast<double>(total);
    }
};

struct TestRates {
    PassRate directional;
    PassRate invariance;
};

struct VerdictSummary {
    TestRates overall;
    std::map<Aspect, TestRates> per_aspect;
    std::map<PerturbationKind, TestRates> per_kind;
    std::map<DescriptionKind, TestRates> per_description_kind;
    /// Failing verdicts, largest violation first.
    std::vector<Verdict> directional_offenders;
    std::vector<Verdict> invariance_offenders;
};

VerdictSummary summarize(const std::vector<Verdict>& verdicts, std::size_t max_offenders = 20);

/// Rows per (description kind, perturbation kind), columns in report order.
std::string deltas_to_csv(const std::vector<DeltaCell>& deltas);
std::vector<DeltaCell> parse_deltas_csv(std::string_view csv, std::string_view origin = "<memory>");
std::vector<DeltaCell> load_deltas_csv(const std::filesystem::path& path);

std::string verdicts_to_json(const std::vector<Verdict>& verdicts, const VerdictSummary& summary,
                             const Thresholds& thresholds);
std::vector<Verdict> parse_verdicts_json(std::string_view json_text);
std::vector<Verdict> load_verdicts(const std::filesystem::path& path);

/// Two-decimal fixed rendering used by CSV and reports ("-0.00" becomes "0.00").
std::string format_delta(double value);

}  // namespace aspectcheck
