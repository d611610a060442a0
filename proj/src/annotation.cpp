#include "aspectcheck/annotation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rng.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<AnnotationPair> select_pairs(const std::vector<Sample>& samples, const std::vector<PerturbedText>& perturbed,
                                         std::size_t per_kind, const std::vector<PerturbationKind>& kinds) {
    std::map<std::pair<std::string, PerturbationKind>, const PerturbedText*> index;
    for (const auto& p : perturbed)
        if (p.validation.passed) index[{p.sample_id, p.kind}] = &p;
    std::vector<AnnotationPair> out;
    for (auto kind : kinds) {
        std::size_t taken = 0;
        for (const auto& s : samples) {
            if (taken == per_kind) break;
            auto it = index.find({s.id, kind});
            if (it == index.end()) continue;
            out.push_back({{s.id, kind}, s.source, s.reference, it->second->text});
            ++taken;
        }
        if (taken < per_kind)
            throw ValidationError("only " + std::to_string(taken) + " valid " + std::string(to_string(kind)) +
                                  " perturbations; need " + std::to_string(per_kind));
    }
    return out;
}

std::string_view to_string(Orientation o) {
    return o == Orientation::OriginalLeft ? "original_left" : "original_right";
}

Orientation parse_orientation(std::string_view text) {
    if (text == "original_left") return Orientation::OriginalLeft;
    if (text == "original_right") return Orientation::OriginalRight;
    throw ValidationError("unknown orientation '" + std::string(text) + "'");
}

Choice canonicalize(Choice raw, Orientation orientation) {
    if (orientation == Orientation::OriginalLeft) return raw;
    if (raw == Choice::A) return Choice::B;
    if (raw == Choice::B) return Choice::A;
    return raw;
}

AssignmentPlan build_plan(std::vector<AnnotationPair> pairs, std::vector<Criterion> criteria,
                          std::vector<std::string> annotators, const PlanOptions& options) {
    if (pairs.empty()) throw ValidationError("plan needs at least one pair");
    if (criteria.empty()) throw ValidationError("plan needs at least one criterion");
    if (options.groups == 0) throw ValidationError("plan needs at least one group");
    if (annotators.empty() || annotators.size() % options.groups != 0)
        throw ValidationError(std::to_string(annotators.size()) + " annotators cannot be split into " +
                              std::to_string(options.groups) + " equal groups");
    std::set<std::string> unique(annotators.begin(), annotators.end());
    if (unique.size() != annotators.size()) throw ValidationError("duplicate annotator id");
    std::set<CriterionKey> keys;
    for (const auto& c : criteria)
        if (!keys.insert({c.aspect, c.kind}).second)
            throw ValidationError("duplicate criterion " + std::string(code(c.aspect)) + "/" + to_string(c.kind));

    const std::size_t group_size = annotators.size() / options.groups;
    std::map<Aspect, std::size_t> per_aspect;
    for (const auto& c : criteria) ++per_aspect[c.aspect];
    for (const auto& [aspect, n] : per_aspect)
        if (n > group_size)
            throw ValidationError("aspect " + std::string(code(aspect)) + " has " + std::to_string(n) +
                                  " descriptions but each group has only " + std::to_string(group_size) +
                                  " annotators; nobody may see two descriptions of one aspect");

    // Deal criteria aspect by aspect so the descriptions of one aspect take consecutive
    // (hence distinct) slots.
    std::stable_sort(criteria.begin(), criteria.end(),
                     [](const Criterion& a, const Criterion& b) { return index_of(a.aspect) < index_of(b.aspect); });

    detail::Rng rng(detail::mix64(options.seed));
    rng.shuffle(annotators);

    AssignmentPlan plan;
    for (std::size_t g = 0; g < options.groups; ++g)
        plan.groups.emplace_back(annotators.begin() + g * group_size, annotators.begin() + (g + 1) * group_size);

    char id[32];
    for (std::size_t g = 0; g < options.groups; ++g) {
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            for (std::size_t c = 0; c < criteria.size(); ++c) {
                Assignment a;
                std::snprintf(id, sizeof id, "t%06zu", plan.assignments.size());
                a.task_id = id;
                a.group = g;
                a.pair = p;
                a.criterion = c;
                a.annotator_id = plan.groups[g][c % group_size];
                a.orientation = rng.below(2) == 0 ? Orientation::OriginalLeft : Orientation::OriginalRight;
                plan.assignments.push_back(std::move(a));
            }
        }
    }
    plan.pairs = std::move(pairs);
    plan.criteria = std::move(criteria);
    return plan;
}

std::size_t count_plan_violations(const AssignmentPlan& plan) {
    std::map<std::pair<std::string, Aspect>, std::set<DescriptionKind>> seen;
    for (const auto& a : plan.assignments) {
        const auto& c = plan.criteria[a.criterion];
        seen[{a.annotator_id, c.aspect}].insert(c.kind);
    }
    std::size_t violations = 0;
    for (const auto& [key, kinds] : seen) violations += kinds.size() > 1;
    return violations;
}

std::string plan_to_jsonl(const AssignmentPlan& plan) {
    std::string out;
    for (const auto& a : plan.assignments) {
        const auto& pair = plan.pairs[a.pair];
        const auto& c = plan.criteria[a.criterion];
        ordered_json obj;
        obj["task_id"] = a.task_id;
        obj["annotator_id"] = a.annotator_id;
        obj["group"] = a.group;
        obj["sample_id"] = pair.id.sample_id;
        obj["perturbation"] = to_string(pair.id.kind);
        obj["aspect"] = code(c.aspect);
        obj["description_kind"] = to_string(c.kind);
        obj["orientation"] = to_string(a.orientation);
        out += obj.dump();
        out += '\n';
    }
    return out;
}

std::string task_to_json(const AnnotationTask& t) {
    ordered_json obj;
    obj["task_id"] = t.task_id;
    obj["pair_id"] = t.pair.str();
    obj["criterion"] = {{"aspect", code(t.criterion.aspect)},
                        {"aspect_name", name(t.criterion.aspect)},
                        {"description_kind", to_string(t.criterion.kind)},
                        {"term", t.criterion.term},
                        {"definition", t.criterion.definition}};
    obj["source"] = t.source;
    obj["left"] = t.left;
    obj["right"] = t.right;
    obj["progress"] = {{"done", t.done}, {"total", t.total}};
    return obj.dump();
}

namespace {

std::string utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

AnnotationService::AnnotationService(AssignmentPlan plan, std::filesystem::path journal, Clock clock)
    : plan_(std::move(plan)), journal_path_(std::move(journal)), clock_(clock ? std::move(clock) : Clock(utc_now)) {
    answered_.assign(plan_.assignments.size(), false);
    for (std::size_t i = 0; i < plan_.assignments.size(); ++i) {
        const auto& a = plan_.assignments[i];
        task_index_[a.task_id] = i;
        by_annotator_[a.annotator_id].push_back(i);
    }

    if (journal_path_.has_parent_path()) std::filesystem::create_directories(journal_path_.parent_path());
    if (std::filesystem::exists(journal_path_)) {
        std::ifstream in(journal_path_, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string content = buf.str();
        // A torn final line from an interrupted append is dropped; everything before it is kept.
        std::size_t complete = content.rfind('\n');
        complete = complete == std::string::npos ? 0 : complete + 1;
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos < complete) {
            std::size_t nl = content.find('\n', pos);
            std::string_view line(content.data() + pos, nl - pos);
            pos = nl + 1;
            ++line_no;
            if (detail::trim(line).empty()) continue;
            try {
                apply(parse_annotation_record(line));
            } catch (const Error& e) {
                throw ValidationError(journal_path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (complete < content.size()) std::filesystem::resize_file(journal_path_, complete);
    }
    journal_ = std::fopen(journal_path_.c_str(), "ab");
    if (!journal_) throw ValidationError("cannot open journal " + journal_path_.string());
}

AnnotationService::~AnnotationService() {
    if (journal_) std::fclose(journal_);
}

void AnnotationService::apply(const AnnotationRecord& r) {
    auto it = task_index_.find(r.task_id);
    if (it == task_index_.end()) throw ServiceError("unknown_task", 404, "unknown task '" + r.task_id + "'");
    const auto& a = plan_.assignments[it->second];
    if (a.annotator_id != r.annotator_id)
        throw ServiceError("not_assigned", 403, "task " + r.task_id + " is not assigned to " + r.annotator_id);
    if (answered_[it->second])
        throw ServiceError("already_answered", 409, "task " + r.task_id + " was already answered");
    const auto& pair = plan_.pairs[a.pair];
    const auto& c = plan_.criteria[a.criterion];
    if (r.pair != pair.id || r.criterion != CriterionKey{c.aspect, c.kind} ||
        r.choice != canonicalize(r.raw_choice, a.orientation))
        throw ValidationError("judgment for " + r.task_id + " does not match the plan");
    answered_[it->second] = true;
    records_.push_back(r);
}

std::optional<AnnotationTask> AnnotationService::next_task(const std::string& annotator_id) const {
    std::shared_lock lock(mutex_);
    auto it = by_annotator_.find(annotator_id);
    if (it == by_annotator_.end())
        throw ServiceError("unknown_annotator", 404, "unknown annotator '" + annotator_id + "'");
    const auto& tasks = it->second;
    std::size_t done = std::count_if(tasks.begin(), tasks.end(), [&](std::size_t i) { return answered_[i]; });
    for (std::size_t i : tasks) {
        if (answered_[i]) continue;
        const auto& a = plan_.assignments[i];
        const auto& pair = plan_.pairs[a.pair];
        AnnotationTask t;
        t.task_id = a.task_id;
        t.pair = pair.id;
        t.criterion = plan_.criteria[a.criterion];
        t.source = pair.source;
        bool left_original = a.orientation == Orientation::OriginalLeft;
        t.left = left_original ? pair.original : pair.perturbed;
        t.right = left_original ? pair.perturbed : pair.original;
        t.done = done;
        t.total = tasks.size();
        return t;
    }
    return std::nullopt;
}

AnnotationRecord AnnotationService::submit(const std::string& task_id, const std::string& annotator_id,
                                           std::string_view raw_choice) {
    std::unique_lock lock(mutex_);
    auto it = task_index_.find(task_id);
    if (it == task_index_.end()) throw ServiceError("unknown_task", 404, "unknown task '" + task_id + "'");
    const auto& a = plan_.assignments[it->second];
    if (a.annotator_id != annotator_id)
        throw ServiceError("not_assigned", 403, "task " + task_id + " is not assigned to " + annotator_id);
    auto raw = try_parse_choice(raw_choice);
    if (!raw)
        throw ServiceError("invalid_choice", 400,
                           "invalid choice '" + std::string(raw_choice) + "'; expected A, B, C or D");
    if (answered_[it->second])
        throw ServiceError("already_answered", 409, "task " + task_id + " was already answered");

    const auto& pair = plan_.pairs[a.pair];
    const auto& c = plan_.criteria[a.criterion];
    AnnotationRecord r;
    r.task_id = task_id;
    r.pair = pair.id;
    r.criterion = {c.aspect, c.kind};
    r.annotator_id = annotator_id;
    r.raw_choice = *raw;
    r.choice = canonicalize(*raw, a.orientation);
    r.timestamp = clock_();

    std::string line = annotation_record_to_json(r) + "\n";
    if (std::fwrite(line.data(), 1, line.size(), journal_) != line.size() || std::fflush(journal_) != 0 ||
        ::fsync(fileno(journal_)) != 0)
        throw Error("failed to append to journal " + journal_path_.string());
    answered_[it->second] = true;
    records_.push_back(r);
    return r;
}

std::vector<AnnotationRecord> AnnotationService::export_judgments() const {
    std::shared_lock lock(mutex_);
    return records_;
}

ServiceProgress AnnotationService::progress() const {
    std::shared_lock lock(mutex_);
    ServiceProgress p;
    p.submitted = records_.size();
    p.remaining = plan_.assignments.size() - records_.size();
    for (const auto& [annotator, tasks] : by_annotator_) {
        std::size_t done = std::count_if(tasks.begin(), tasks.end(), [&](std::size_t i) { return answered_[i]; });
        p.per_annotator[annotator] = {done, tasks.size()};
    }
    return p;
}

struct AnnotationServer::Impl {
    httplib::Server server;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
}

bool authorized(const httplib::Request& req, const std::optional<std::string>& token) {
    if (!token) return true;
    if (req.get_header_value("Authorization") == "Bearer " + *token) return true;
    return req.has_param("token") && req.get_param_value("token") == *token;
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>()), options_(std::move(options)) {
    auto& srv = impl_->server;

    srv.Get(R"(/api/annotators/([^/]+)/next)", [&service](const httplib::Request& req, httplib::Response& res) {
        try {
            auto task = service.next_task(req.matches[1]);
            res.set_content(task ? task_to_json(*task) : json{{"done", true}}.dump(), "application/json");
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.code(), e.what());
        }
    });

    srv.Post("/api/judgments", [&service](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            return send_error(res, 400, "invalid_request", "body is not JSON");
        }
        if (!body.is_object())
            return send_error(res, 400, "invalid_request", "body must be an object");
        for (const char* field : {"task_id", "annotator_id", "choice"})
            if (!body.contains(field) || !body[field].is_string())
                return send_error(res, 400, "invalid_request", std::string("missing string field '") + field + "'");
        try {
            service.submit(body["task_id"], body["annotator_id"], body["choice"].get<std::string>());
            res.set_content(json{{"ok", true}}.dump(), "application/json");
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.code(), e.what());
        } catch (const Error& e) {
            send_error(res, 500, "internal", e.what());
        }
    });

    srv.Get("/api/stats", [&service](const httplib::Request&, httplib::Response& res) {
        auto p = service.progress();
        ordered_json per = ordered_json::object();
        for (const auto& [id, dt] : p.per_annotator) per[id] = {{"done", dt.first}, {"total", dt.second}};
        ordered_json obj = {{"submitted", p.submitted}, {"remaining", p.remaining}, {"annotators", per}};
        res.set_content(obj.dump(), "application/json");
    });

    srv.Get("/api/export", [&service, token = options_.operator_token](const httplib::Request& req,
                                                                        httplib::Response& res) {
        if (!authorized(req, token)) return send_error(res, 401, "unauthorized", "operator token required");
        res.set_content(annotations_to_jsonl(service.export_judgments()), "application/x-ndjson");
    });

    if (options_.static_dir && !srv.set_mount_point("/", options_.static_dir->string()))
        throw ValidationError("static directory " + options_.static_dir->string() + " does not exist");
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start() {
    auto& srv = impl_->server;
    port_ = options_.port == 0 ? srv.bind_to_any_port(options_.host)
                               : (srv.bind_to_port(options_.host, options_.port) ? options_.port : -1);
    if (port_ < 0) throw ValidationError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    thread_ = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return port_;
}

void AnnotationServer::stop() {
    if (thread_.joinable()) {
        impl_->server.stop();
        thread_.join();
    }
}

bool AnnotationServer::running() const { return impl_->server.is_running(); }

}  // namespace aspectcheck
