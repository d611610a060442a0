#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "aspectcheck/criteria.hpp"
#include "aspectcheck/evaluator.hpp"
#include "aspectcheck/perturb.hpp"
#include "aspectcheck/testkit.hpp"

namespace aspectcheck {

/// Throws ValidationError on length mismatch, fewer than 2 points, or a constant input.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

enum class GroupBy { Aspect, DescriptionKind };
std::string_view to_string(GroupBy g);
GroupBy parse_group_by(std::string_view text);

struct CorrelationMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;  // NaN where one column is constant over the aligned texts
    std::vector<std::vector<std::size_t>> support;  // aligned points behind each entry

    std::size_t size() const { return labels.size(); }
};

/// Pairwise Pearson over record means. Groups are aligned on (form, text, the other
/// criterion dimension); fewer than 2 shared points between two groups is an error.
CorrelationMatrix correlation_matrix(const std::vector<ScoreRecord>& records, GroupBy group_by);

std::string correlations_to_csv(const CorrelationMatrix& matrix);

// Orientation-free choices: the first text is the original, the second the perturbed one.
enum class Choice { A, B, C, D };  // better than, worse than, as well as, uncertain
std::string_view to_string(Choice c);
Choice parse_choice(std::string_view text);
std::optional<Choice> try_parse_choice(std::string_view text);

struct PairId {
    std::string sample_id;
    PerturbationKind kind = PerturbationKind::Repetition;

    std::string str() const { return sample_id + "/" + std::string(to_string(kind)); }
    auto operator<=>(const PairId&) const = default;
};

struct AnnotationRecord {
    std::string task_id;
    PairId pair;
    CriterionKey criterion;
    std::string annotator_id;
    Choice raw_choice = Choice::D;  // as clicked, in the served orientation
    Choice choice = Choice::D;      // canonical
    std::string timestamp;

    bool operator==(const AnnotationRecord&) const = default;
};

std::string annotation_record_to_json(const AnnotationRecord& record);
std::string annotations_to_jsonl(const std::vector<AnnotationRecord>& records);
AnnotationRecord parse_annotation_record(std::string_view line);
std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl, std::string_view origin = "<memory>");
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

/// Share of the most frequent non-D option among all votes of one item. 0 when all are D.
double item_consistency(const std::vector<Choice>& votes);
/// Mean item_consistency over pair x criterion groups.
double annotation_consistency(const std::vector<AnnotationRecord>& records);

enum class Outcome { A, B, C, Tied, Uncertain };
std::string_view to_string(Outcome o);

/// Unique most frequent non-D option; Uncertain when D is strictly most frequent;
/// Tied when non-D options share the top count.
Outcome plurality_of(const std::vector<Choice>& votes);

enum class Judgment { Affected, Unaffected, Tied, Uncertain };
std::string_view to_string(Judgment j);
/// A (original better) means the aspect was hurt; B and C mean it was not.
Judgment judgment_of(Outcome o);

enum class VoteScheme { VoteVote, VoteAll };
std::string_view to_string(VoteScheme s);

using CellKey = std::tuple<PerturbationKind, Aspect, DescriptionKind>;

struct PluralityOptions {
    std::optional<std::size_t> annotators_per_pair;  // enforced when set
    std::optional<std::size_t> pairs_per_cell;
};

/// One judgment per (kind, aspect, description kind) cell.
std::map<CellKey, Judgment> plurality(const std::vector<AnnotationRecord>& records, VoteScheme scheme,
                                      const PluralityOptions& options = {});

/// Fraction of judged cells whose Affected/Unaffected matches the expectation column.
/// Tied and Uncertain never match. Throws on an empty set.
double match_rate(const std::map<CellKey, Judgment>& judgments, const ExpectationColumn& expectation);

struct AnnotationStats {
    struct PerKind {
        double consistency = 0.0;
        std::size_t items = 0;
        std::size_t cells = 0;
        double match_vote_vote = 0.0;
        double match_vote_all = 0.0;
    };
    double consistency = 0.0;
    std::size_t items = 0;
    std::size_t records = 0;
    std::map<std::string, PerKind> per_description_kind;
};

AnnotationStats annotation_stats(const std::vector<AnnotationRecord>& records, const ExpectationColumn& expectation,
                                 const PluralityOptions& options = {});
std::string annotation_stats_to_json(const AnnotationStats& stats);

}  // namespace aspectcheck
