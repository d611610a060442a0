#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "aspectcheck/corpus.hpp"
#include "aspectcheck/criteria.hpp"
#include "aspectcheck/error.hpp"
#include "aspectcheck/perturb.hpp"
#include "aspectcheck/stats.hpp"

namespace aspectcheck {

/// One original/perturbed comparison shown to annotators.
struct AnnotationPair {
    PairId id;
    std::string source;
    std::string original;
    std::string perturbed;
};

/// Picks, per perturbation kind, the first `per_kind` samples whose perturbation passed validation.
std::vector<AnnotationPair> select_pairs(const std::vector<Sample>& samples, const std::vector<PerturbedText>& perturbed,
                                         std::size_t per_kind,
                                         const std::vector<PerturbationKind>& kinds = {kAllPerturbationKinds.begin(),
                                                                                       kAllPerturbationKinds.end()});

enum class Orientation { OriginalLeft, OriginalRight };
std::string_view to_string(Orientation o);
Orientation parse_orientation(std::string_view text);

/// A choice made on screen ("left is better than right") mapped to original-vs-perturbed.
/// The map is its own inverse.
Choice canonicalize(Choice raw, Orientation orientation);

struct Assignment {
    std::string task_id;
    std::string annotator_id;
    std::size_t group = 0;
    std::size_t pair = 0;       // index into the plan's pairs
    std::size_t criterion = 0;  // index into the plan's criteria
    Orientation orientation = Orientation::OriginalLeft;
};

struct PlanOptions {
    std::size_t groups = 4;  // annotators per pair x criterion; each group covers all items once
    std::uint64_t seed = 0;
};

struct AssignmentPlan {
    std::vector<AnnotationPair> pairs;
    std::vector<Criterion> criteria;
    std::vector<std::vector<std::string>> groups;
    std::vector<Assignment> assignments;

    std::size_t size() const { return assignments.size(); }
};

/// Every pair x criterion goes to one annotator of each group. Within a group the
/// descriptions of one aspect land on distinct annotators, and criteria are dealt
/// round-robin so per-annotator loads differ by at most one criterion.
/// Throws ValidationError naming the binding constraint when infeasible.
AssignmentPlan build_plan(std::vector<AnnotationPair> pairs, std::vector<Criterion> criteria,
                          std::vector<std::string> annotators, const PlanOptions& options = {});

/// Number of (annotator, aspect) slots that see more than one description kind. Always 0
/// for build_plan output.
std::size_t count_plan_violations(const AssignmentPlan& plan);

std::string plan_to_jsonl(const AssignmentPlan& plan);

/// Rejections from the service, carrying a machine code and the HTTP status to send.
class ServiceError : public Error {
public:
    ServiceError(std::string code, int status, const std::string& message)
        : Error(message), code_(std::move(code)), status_(status) {}
    const std::string& code() const { return code_; }
    int status() const { return status_; }

private:
    std::string code_;
    int status_;
};

/// Task as served to the client; orientation stays on the server.
struct AnnotationTask {
    std::string task_id;
    PairId pair;
    Criterion criterion;
    std::string source;
    std::string left;
    std::string right;
    std::size_t done = 0;
    std::size_t total = 0;
};

std::string task_to_json(const AnnotationTask& task);

struct ServiceProgress {
    std::size_t submitted = 0;
    std::size_t remaining = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_annotator;  // done, total
};

/// Assignment bookkeeping with an append-only journal. The journal is replayed at
/// construction, so restarting on the same file resumes where it stopped.
class AnnotationService {
public:
    using Clock = std::function<std::string()>;

    AnnotationService(AssignmentPlan plan, std::filesystem::path journal, Clock clock = {});
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// First unanswered task in plan order; nullopt once the annotator is done.
    std::optional<AnnotationTask> next_task(const std::string& annotator_id) const;
    AnnotationRecord submit(const std::string& task_id, const std::string& annotator_id, std::string_view raw_choice);
    std::vector<AnnotationRecord> export_judgments() const;
    ServiceProgress progress() const;

    const AssignmentPlan& plan() const { return plan_; }

private:
    void apply(const AnnotationRecord& record);

    AssignmentPlan plan_;
    std::filesystem::path journal_path_;
    Clock clock_;
    std::map<std::string, std::size_t> task_index_;
    std::map<std::string, std::vector<std::size_t>> by_annotator_;
    std::vector<bool> answered_;
    std::vector<AnnotationRecord> records_;
    mutable std::shared_mutex mutex_;
    std::FILE* journal_ = nullptr;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port
    std::optional<std::string> operator_token;  // guards /api/export when set
    std::optional<std::filesystem::path> static_dir;
};

/// HTTP front end over an AnnotationService.
class AnnotationServer {
public:
    AnnotationServer(AnnotationService& service, ServerOptions options = {});
    ~AnnotationServer();
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds and starts serving on a background thread; returns the bound port.
    int start();
    void stop();
    bool running() const;
    int port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    ServerOptions options_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace aspectcheck
