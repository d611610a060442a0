#include "aspectcheck/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "aspectcheck/corpus.hpp"
#include "aspectcheck/error.hpp"

namespace aspectcheck {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

std::string utc_stamp(const char* format) {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

void require_file(const fs::path& path, std::string_view what) {
    if (path.empty()) throw ValidationError(std::string(what) + " path is not set");
    if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " not found: " + path.string());
}

fs::path prepare_run_dir(const RunConfig& config) {
    if (config.run_dir) {
        fs::create_directories(*config.run_dir);
        return *config.run_dir;
    }
    fs::create_directories(config.out_dir);
    std::string stamp = utc_stamp("%Y%m%d-%H%M%S");
    fs::path dir = config.out_dir / stamp;
    for (int n = 2; fs::exists(dir); ++n) dir = config.out_dir / (stamp + "-" + std::to_string(n));
    fs::create_directories(dir);
    return dir;
}

/// Outputs are never overwritten; a second write of the same file in one run directory is refused.
fs::path write_new(const fs::path& dir, const std::string& name, const std::string& content) {
    fs::path target = dir / name;
    if (fs::exists(target)) throw ValidationError("refusing to overwrite " + target.string());
    fs::path tmp = dir / (name + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw ValidationError("cannot write " + tmp.string());
    }
    fs::rename(tmp, target);
    return target;
}

fs::path stage_input(const std::optional<fs::path>& explicit_path, const RunConfig& config, const std::string& name) {
    if (explicit_path) {
        require_file(*explicit_path, name);
        return *explicit_path;
    }
    if (config.run_dir && fs::is_regular_file(*config.run_dir / name)) return *config.run_dir / name;
    throw ValidationError("no " + name + " input: pass it explicitly or point --run at a directory containing it");
}

std::string file_digest(const fs::path& path) { return sha256_hex(read_text(path)); }

/// First JSONL line of every output: provenance without timestamps, so reruns stay byte-identical.
std::string meta_line(std::string_view command, const RunConfig& config, ordered_json extra) {
    ordered_json meta;
    meta["tool"] = "aspectcheck";
    meta["version"] = kToolVersion;
    meta["command"] = command;
    meta["seed"] = config.seed;
    for (auto& [k, v] : extra.items()) meta[k] = v;
    return ordered_json{{"_meta", meta}}.dump() + "\n";
}

void write_manifest(const fs::path& dir, std::string_view command, const std::string& started, const CommandResult& r,
                    ordered_json details = ordered_json::object()) {
    ordered_json m;
    m["command"] = command;
    m["version"] = kToolVersion;
    m["started"] = started;
    m["finished"] = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    m["exit_code"] = r.exit_code;
    m["outputs"] = json::array();
    for (const auto& o : r.outputs) m["outputs"].push_back(o.filename().string());
    m["summary"] = r.summary;
    m["details"] = std::move(details);
    fs::path path = dir / (std::string(command) + ".manifest.json");
    for (int n = 2; fs::exists(path); ++n)
        path = dir / (std::string(command) + ".manifest." + std::to_string(n) + ".json");
    std::ofstream(path, std::ios::binary) << m.dump(2) << "\n";
}

std::vector<Sample> load_scoped_samples(const RunConfig& config) {
    require_file(config.corpus, "corpus");
    auto samples = load_samples(config.corpus);
    if (config.limit && samples.size() > *config.limit) samples.resize(*config.limit);
    if (samples.empty()) throw ValidationError("corpus scope is empty");
    return samples;
}

bool in_scope(const RunConfig& config, PerturbationKind k) {
    return std::find(config.kinds.begin(), config.kinds.end(), k) != config.kinds.end();
}
bool in_scope(const RunConfig& config, Aspect a) {
    return std::find(config.aspects.begin(), config.aspects.end(), a) != config.aspects.end();
}
bool in_scope(const RunConfig& config, const DescriptionKind& d) {
    return std::find(config.description_kinds.begin(), config.description_kinds.end(), d) !=
           config.description_kinds.end();
}

std::vector<Criterion> scoped_criteria(const RunConfig& config, const CriteriaCatalog& catalog) {
    std::vector<Criterion> out;
    for (const auto& c : catalog.entries())
        if (in_scope(config, c.aspect) && in_scope(config, c.kind)) out.push_back(c);
    if (out.empty()) throw ValidationError("no criteria match the configured aspects and description kinds");
    return out;
}

std::vector<ScoreRecord> scoped_scores(const RunConfig& config, const fs::path& path) {
    std::vector<ScoreRecord> out;
    for (auto& r : load_scores(path)) {
        if (r.text_ref.kind && !in_scope(config, *r.text_ref.kind)) continue;
        if (!in_scope(config, r.criterion.aspect) || !in_scope(config, r.criterion.kind)) continue;
        out.push_back(std::move(r));
    }
    if (out.empty()) throw ValidationError("no scores in scope in " + path.string());
    return out;
}

std::string format_rate(const PassRate& p) {
    auto r = p.rate();
    if (!r) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f%% (%zu/%zu)", *r * 100.0, p.passed, p.total);
    return buf;
}

std::string pad_id(std::size_t i, std::size_t count) {
    std::string n = std::to_string(i + 1);
    std::size_t width = std::to_string(count).size();
    return "ann" + std::string(width > n.size() ? width - n.size() : 0, '0') + n;
}

AssignmentPlan plan_from_config(const RunConfig& config, ordered_json* details = nullptr) {
    auto samples = load_scoped_samples(config);
    auto perturbed = load_perturbed(stage_input(config.perturbed, config, "perturbed.jsonl"));
    auto catalog = CriteriaCatalog::load(config.criteria);
    std::vector<Criterion> criteria;
    for (const auto& c : catalog.entries()) {
        if (!in_scope(config, c.aspect)) continue;
        const auto& dk = config.annotate.description_kinds;
        if (!dk.empty() && std::find(dk.begin(), dk.end(), c.kind) == dk.end()) continue;
        criteria.push_back(c);
    }
    auto pairs = select_pairs(samples, perturbed, config.annotate.pairs_per_kind, config.kinds);
    if (details) {
        (*details)["pairs"] = pairs.size();
        (*details)["criteria"] = criteria.size();
    }
    return build_plan(std::move(pairs), std::move(criteria), config.annotate.annotator_ids(),
                      {config.annotate.groups, config.seed});
}

fs::path journal_path(const RunConfig& config) {
    return config.annotate.journal ? *config.annotate.journal : config.out_dir / "annotation" / "judgments.jsonl";
}

template <typename T, typename Parse>
std::vector<T> parse_list(const json& j, const char* key, Parse parse, std::vector<T> fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    const auto& v = j[key];
    if (v.is_string() && v.get<std::string>() == "all") return fallback;
    if (!v.is_array()) throw ValidationError(std::string("config '") + key + "' must be a list or \"all\"");
    std::vector<T> out;
    for (const auto& item : v) out.push_back(parse(item.get<std::string>()));
    return out;
}

std::optional<fs::path> opt_path(const json& j, const char* key, const fs::path& base) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return resolve(base, j[key].get<std::string>());
}

}  // namespace

std::vector<std::string> AnnotateSettings::annotator_ids() const {
    if (!annotators.empty()) return annotators;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < annotator_count; ++i) out.push_back(pad_id(i, annotator_count));
    return out;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
    RunConfig c;
    try {
        if (!j.is_object()) throw ValidationError("config must be a JSON object");
        json paths = j.value("paths", json::object());
        if (auto p = opt_path(paths, "corpus", base)) c.corpus = *p;
        if (auto p = opt_path(paths, "criteria", base)) c.criteria = *p;
        if (auto p = opt_path(paths, "expectations", base)) c.expectations = *p;
        if (auto p = opt_path(paths, "demos", base)) c.demos = *p;
        c.fewshot = opt_path(paths, "fewshot", base);
        if (auto p = opt_path(paths, "cache_dir", base)) c.cache_dir = *p;
        if (auto p = opt_path(paths, "out_dir", base)) c.out_dir = *p;
        c.run_dir = opt_path(paths, "run_dir", base);
        c.perturbed = opt_path(paths, "perturbed", base);
        c.scores = opt_path(paths, "scores", base);
        c.deltas = opt_path(paths, "deltas", base);
        c.verdicts = opt_path(paths, "verdicts", base);
        c.judgments = opt_path(paths, "judgments", base);

        json b = j.value("backend", json::object());
        c.backend.type = b.value("type", c.backend.type);
        c.backend.constant = b.value("constant", c.backend.constant);
        auto& h = c.backend.http;
        h.base_url = b.value("base_url", h.base_url);
        h.path = b.value("path", h.path);
        h.model = b.value("model", h.model);
        h.api_key_env = b.value("api_key_env", h.api_key_env);
        h.system_prompt = b.value("system_prompt", h.system_prompt);
        h.max_retries = b.value("max_retries", h.max_retries);
        h.initial_backoff = std::chrono::milliseconds(b.value("initial_backoff_ms", h.initial_backoff.count()));
        h.max_backoff = std::chrono::milliseconds(b.value("max_backoff_ms", h.max_backoff.count()));
        h.timeout = std::chrono::seconds(b.value("timeout_s", h.timeout.count()));
        h.max_tokens = b.value("max_tokens", h.max_tokens);
        if (j.contains("generator_model") && !j["generator_model"].is_null())
            c.generator_model = j["generator_model"].get<std::string>();
        c.offline = j.value("offline", false);

        if (j.contains("form")) c.form = j["form"].get<EvaluationForm>();
        json t = j.value("thresholds", json::object());
        c.thresholds.tau_t = t.value("tau_t", c.thresholds.tau_t);
        c.thresholds.tau_f = t.value("tau_f", c.thresholds.tau_f);
        c.seed = j.value("seed", c.seed);
        c.bootstrap_iterations = j.value("bootstrap_iterations", 0);

        json s = j.value("scope", json::object());
        c.kinds = parse_list(s, "kinds", [](const std::string& x) { return parse_perturbation_kind(x); }, c.kinds);
        c.aspects = parse_list(s, "aspects", [](const std::string& x) { return parse_aspect(x); }, c.aspects);
        c.description_kinds = parse_list(
            s, "description_kinds", [](const std::string& x) { return parse_description_kind(x); }, c.description_kinds);
        if (s.contains("limit") && !s["limit"].is_null()) c.limit = s["limit"].get<std::size_t>();

        json p = j.value("perturb", json::object());
        c.perturb.rate = p.value("rate", c.perturb.rate);
        c.perturb.max_attempts = p.value("max_attempts", c.perturb.max_attempts);
        c.perturb.temperature = p.value("temperature", c.perturb.temperature);
        c.parallelism = j.value("parallelism", c.parallelism);
        c.perturb.parallelism = c.parallelism;
        c.skip_failed_perturbations = j.value("skip_failed_perturbations", true);
        c.group_by = parse_group_by(j.value("group_by", std::string("aspect")));

        json a = j.value("annotate", json::object());
        auto& an = c.annotate;
        an.annotators = a.value("annotators", an.annotators);
        an.annotator_count = a.value("annotator_count", an.annotator_count);
        an.groups = a.value("groups", an.groups);
        an.pairs_per_kind = a.value("pairs_per_kind", an.pairs_per_kind);
        an.host = a.value("host", an.host);
        an.port = a.value("port", an.port);
        if (a.contains("operator_token") && !a["operator_token"].is_null())
            an.operator_token = a["operator_token"].get<std::string>();
        an.static_dir = opt_path(a, "static_dir", base);
        an.journal = opt_path(a, "journal", base);
        if (a.contains("expected_annotators") && !a["expected_annotators"].is_null())
            an.expected_annotators = a["expected_annotators"].get<std::size_t>();
        if (a.contains("expected_pairs") && !a["expected_pairs"].is_null())
            an.expected_pairs = a["expected_pairs"].get<std::size_t>();
        an.description_kinds = parse_list(
            a, "description_kinds", [](const std::string& x) { return parse_description_kind(x); },
            std::vector<DescriptionKind>{});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
    thresholds.validate();
    form.validate();
    if (kinds.empty()) throw ValidationError("scope has no perturbation kinds");
    if (aspects.empty()) throw ValidationError("scope has no aspects");
    if (description_kinds.empty()) throw ValidationError("scope has no description kinds");
    if (parallelism == 0) throw ValidationError("parallelism must be positive");
    if (limit && *limit == 0) throw ValidationError("limit must be positive");
    if (backend.type != "http" && backend.type != "constant")
        throw ValidationError("unknown backend type '" + backend.type + "'");
    if (backend.type == "constant" && (backend.constant < 1.0 || backend.constant > 5.0))
        throw ValidationError("constant backend rating must be within [1, 5]");
}

std::shared_ptr<CachingBackend> make_backend(const RunConfig& config, std::shared_ptr<LlmBackend> inner,
                                             std::optional<std::string> model_override) {
    std::string identity;
    if (inner) {
        identity = inner->identity();
    } else if (config.backend.type == "constant") {
        char buf[48];
        std::snprintf(buf, sizeof buf, "constant:%g", config.backend.constant);
        identity = buf;
        std::string reply = "Rating: " + std::string(buf + 9);
        if (!config.offline)
            inner = std::make_shared<ScriptedBackend>([reply](const std::string&, double, int) { return reply; },
                                                      identity);
    } else {
        auto http = config.backend.http;
        if (model_override) http.model = *model_override;
        identity = HttpBackend::identity_for(http);
        if (!config.offline) inner = std::make_shared<HttpBackend>(http);
    }
    if (config.offline) inner = nullptr;
    return std::make_shared<CachingBackend>(identity, config.cache_dir, std::move(inner));
}

CommandResult cmd_perturb(const RunConfig& config, std::shared_ptr<LlmBackend> backend) {
    config.validate();
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    auto samples = load_scoped_samples(config);

    bool needs_llm = std::any_of(config.kinds.begin(), config.kinds.end(),
                                 [](PerturbationKind k) { return method_of(k) == PerturbationMethod::Llm; });
    std::shared_ptr<CachingBackend> llm;
    std::optional<DemoLibrary> demos;
    if (needs_llm) {
        if (!backend && config.backend.type == "constant")
            throw ValidationError("the constant backend cannot generate perturbations; restrict --kinds to rule "
                                  "kinds or use an http backend");
        require_file(config.demos, "demos");
        demos = DemoLibrary::load(config.demos);
        llm = make_backend(config, backend, config.generator_model);
    }

    auto items = perturb_all(samples, config.kinds, config.seed, llm.get(), demos ? &*demos : nullptr, config.perturb);

    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    ordered_json meta;
    meta["generator"] = llm ? json(llm->identity()) : json(nullptr);
    meta["rate"] = config.perturb.rate;
    meta["inputs"] = {{"corpus", file_digest(config.corpus)}};
    r.outputs.push_back(write_new(r.run_dir, "perturbed.jsonl",
                                  meta_line("perturb", config, meta) + perturbed_to_jsonl(items)));

    std::string errors;
    std::size_t failed = 0;
    for (const auto& p : items) {
        if (p.validation.passed) continue;
        ++failed;
        ordered_json e = {{"sample_id", p.sample_id}, {"kind", to_string(p.kind)}};
        for (const auto& c : p.validation.checks)
            if (!c.passed) e["failed_checks"].push_back(c.name + (c.note.empty() ? "" : ": " + c.note));
        errors += e.dump() + "\n";
    }
    if (failed) {
        r.outputs.push_back(write_new(r.run_dir, "perturb.errors.jsonl", errors));
        r.exit_code = kExitPartial;
    }
    r.summary = std::to_string(items.size()) + " perturbed texts for " + std::to_string(samples.size()) +
                " samples; " + std::to_string(failed) + " failed validation";
    ordered_json details = {{"items", items.size()}, {"failed", failed}};
    if (llm) details["cache"] = {{"hits", llm->hits()}, {"misses", llm->misses()}};
    write_manifest(r.run_dir, "perturb", started, r, details);
    return r;
}

CommandResult cmd_evaluate(const RunConfig& config, std::shared_ptr<LlmBackend> backend) {
    config.validate();
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    auto samples = load_scoped_samples(config);
    fs::path perturbed_path = stage_input(config.perturbed, config, "perturbed.jsonl");
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.id);
    std::vector<PerturbedText> perturbed;
    for (auto& p : load_perturbed(perturbed_path))
        if (ids.contains(p.sample_id) && in_scope(config, p.kind)) perturbed.push_back(std::move(p));

    require_file(config.criteria, "criteria catalog");
    auto catalog = CriteriaCatalog::load(config.criteria);
    auto criteria = scoped_criteria(config, catalog);

    ScoreMatrixOptions options;
    options.parallelism = config.parallelism;
    options.skip_failed_perturbations = config.skip_failed_perturbations;
    options.extras.catalog = &catalog;
    if (config.form.shots > 0) {
        if (!config.fewshot) throw ValidationError("form asks for few-shot demos but paths.fewshot is not set");
        require_file(*config.fewshot, "few-shot demos");
        options.extras.demos = select_fewshot_demos(load_fewshot_demos(*config.fewshot), config.form.shots, config.seed);
    }

    auto cached = make_backend(config, backend);
    auto result = score_matrix(*cached, samples, perturbed, criteria, config.form, options);

    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    ordered_json meta;
    meta["backend"] = cached->identity();
    meta["form"] = ordered_json::parse(json(config.form).dump());
    meta["inputs"] = {{"corpus", file_digest(config.corpus)},
                      {"perturbed", file_digest(perturbed_path)},
                      {"criteria", file_digest(config.criteria)}};
    r.outputs.push_back(
        write_new(r.run_dir, "scores.jsonl", meta_line("evaluate", config, meta) + scores_to_jsonl(result.records)));
    if (!result.errors.empty()) {
        std::string errors;
        for (const auto& e : result.errors) {
            ordered_json obj = {{"sample_id", e.text_ref.sample_id},
                                {"variant", e.text_ref.variant()},
                                {"aspect", code(e.criterion.aspect)},
                                {"description_kind", to_string(e.criterion.kind)},
                                {"message", e.message}};
            errors += obj.dump() + "\n";
        }
        r.outputs.push_back(write_new(r.run_dir, "evaluate.errors.jsonl", errors));
        r.exit_code = kExitPartial;
    }
    r.summary = std::to_string(result.records.size()) + " score records, " + std::to_string(result.errors.size()) +
                " failed items, " + std::to_string(result.stats.completions) + " completions (" +
                std::to_string(cached->hits()) + " cached, " + std::to_string(cached->misses()) + " fetched)";
    write_manifest(r.run_dir, "evaluate", started, r,
                   {{"records", result.records.size()},
                    {"errors", result.errors.size()},
                    {"completions", result.stats.completions},
                    {"retries", result.stats.retries},
                    {"cache", {{"hits", cached->hits()}, {"misses", cached->misses()}}}});
    return r;
}

CommandResult cmd_test(const RunConfig& config) {
    config.validate();
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    fs::path scores_path = stage_input(config.scores, config, "scores.jsonl");
    require_file(config.expectations, "expectation matrix");
    auto matrix = ExpectationMatrix::load(config.expectations);
    auto deltas = compute_deltas(scoped_scores(config, scores_path));
    if (deltas.empty()) throw ValidationError("no perturbed scores in scope");
    auto verdicts = run_tests(deltas, matrix, config.thresholds, {config.bootstrap_iterations, 0.95, config.seed});
    if (verdicts.empty()) throw ValidationError("every cell in scope is excluded; nothing to test");
    auto summary = summarize(verdicts);

    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    std::string header = "# aspectcheck " + std::string(kToolVersion) + " test; scores sha256 " +
                         file_digest(scores_path) + "\n";
    r.outputs.push_back(write_new(r.run_dir, "deltas.csv", header + deltas_to_csv(deltas)));
    r.outputs.push_back(write_new(r.run_dir, "verdicts.json", verdicts_to_json(verdicts, summary, config.thresholds)));
    r.summary = "directional " + format_rate(summary.overall.directional) + ", invariance " +
                format_rate(summary.overall.invariance);
    write_manifest(r.run_dir, "test", started, r, {{"cells", deltas.size()}, {"verdicts", verdicts.size()}});
    return r;
}

CommandResult cmd_correlate(const RunConfig& config) {
    config.validate();
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    fs::path scores_path = stage_input(config.scores, config, "scores.jsonl");
    auto m = correlation_matrix(scoped_scores(config, scores_path), config.group_by);
    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    r.outputs.push_back(write_new(r.run_dir, "correlations.csv", correlations_to_csv(m)));
    r.summary = std::to_string(m.size()) + "x" + std::to_string(m.size()) + " correlation matrix by " +
                std::string(to_string(config.group_by));
    write_manifest(r.run_dir, "correlate", started, r);
    return r;
}

std::string render_report(const std::vector<DeltaCell>& deltas, const std::vector<Verdict>& verdicts,
                          const ExpectationMatrix& matrix, const Thresholds& thresholds) {
    using VKey = std::tuple<DescriptionKind, PerturbationKind, Aspect>;
    std::map<VKey, const Verdict*> by_cell;
    for (const auto& v : verdicts) by_cell[{v.description_kind, v.kind, v.aspect}] = &v;
    std::map<DescriptionKind, std::map<std::pair<PerturbationKind, Aspect>, double>> tables;
    for (const auto& d : deltas) tables[d.description_kind][{d.kind, d.aspect}] = d.delta;

    std::ostringstream out;
    char buf[128];
    out << "# Aspect test report\n\n";
    std::snprintf(buf, sizeof buf, "Thresholds: tau_T = %g (directional), tau_F = %g (invariance).\n\n",
                  thresholds.tau_t, thresholds.tau_f);
    out << buf;
    out << "Cell markers: `T` expected to drop (directional test), `F` expected unchanged (invariance test), "
           "`-` excluded. Failing cells are bold and marked `x`.\n\n";
    if (!verdicts.empty()) {
        auto s = summarize(verdicts);
        out << "| Test | Pass rate |\n|---|---|\n";
        out << "| Directional expectation | " << format_rate(s.overall.directional) << " |\n";
        out << "| Invariance | " << format_rate(s.overall.invariance) << " |\n\n";
    }

    for (const auto& [dk, cells] : tables) {
        out << "## " << to_string(dk) << "\n\n| Perturbation |";
        for (auto a : kReportAspectOrder) out << " " << code(a) << " |";
        out << "\n|---|";
        for (std::size_t i = 0; i < kReportAspectOrder.size(); ++i) out << "---:|";
        out << "\n";
        for (auto k : kAllPerturbationKinds) {
            bool any = std::any_of(kReportAspectOrder.begin(), kReportAspectOrder.end(),
                                   [&](Aspect a) { return cells.contains({k, a}); });
            if (!any) continue;
            out << "| " << display_name(k) << " |";
            for (auto a : kReportAspectOrder) {
                auto it = cells.find({k, a});
                if (it == cells.end()) {
                    out << " |";
                    continue;
                }
                std::string value = format_delta(it->second);
                auto cls = matrix.at(k, a);
                if (cls == CellClass::Excluded) {
                    out << " " << value << " - |";
                    continue;
                }
                std::string mark = cls == CellClass::Affected ? "T" : "F";
                auto v = by_cell.find({dk, k, a});
                if (v != by_cell.end() && !v->second->pass)
                    out << " **" << value << " " << mark << " x** |";
                else
                    out << " " << value << " " << mark << " |";
            }
            out << "\n";
        }
        out << "\n";
    }

    if (!verdicts.empty()) {
        auto s = summarize(verdicts, 10);
        auto list = [&](const char* title, const std::vector<Verdict>& vs) {
            if (vs.empty()) return;
            out << "### " << title << "\n\n";
            for (const auto& v : vs) {
                std::snprintf(buf, sizeof buf, " delta %s, off by %.2f\n", format_delta(v.delta).c_str(),
                              v.violation());
                out << "- " << to_string(v.description_kind) << " / " << display_name(v.kind) << " / "
                    << name(v.aspect) << ":" << buf;
            }
            out << "\n";
        };
        list("Largest directional failures", s.directional_offenders);
        list("Largest invariance failures", s.invariance_offenders);
    }
    return out.str();
}

std::string render_heatmap_csv(const std::vector<DeltaCell>& deltas, const ExpectationMatrix& matrix,
                               const std::vector<Verdict>& verdicts) {
    using VKey = std::tuple<DescriptionKind, PerturbationKind, Aspect>;
    std::map<VKey, const Verdict*> by_cell;
    for (const auto& v : verdicts) by_cell[{v.description_kind, v.kind, v.aspect}] = &v;
    std::string out = "description_kind,perturbation,aspect,delta,class,test,pass\n";
    for (const auto& d : deltas) {
        out += to_string(d.description_kind) + "," + std::string(to_string(d.kind)) + "," +
               std::string(code(d.aspect)) + "," + format_delta(d.delta) + "," +
               std::string(to_string(matrix.at(d.kind, d.aspect))) + ",";
        auto v = by_cell.find({d.description_kind, d.kind, d.aspect});
        if (v == by_cell.end())
            out += ",\n";
        else
            out += std::string(to_string(v->second->test)) + "," + (v->second->pass ? "true" : "false") + "\n";
    }
    return out;
}

CommandResult cmd_report(const RunConfig& config) {
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    fs::path verdicts_path = stage_input(config.verdicts, config, "verdicts.json");
    fs::path deltas_path = stage_input(config.deltas, config, "deltas.csv");
    require_file(config.expectations, "expectation matrix");
    auto matrix = ExpectationMatrix::load(config.expectations);
    auto verdicts = load_verdicts(verdicts_path);
    auto deltas = load_deltas_csv(deltas_path);
    Thresholds thresholds = config.thresholds;
    try {
        auto j = json::parse(read_text(verdicts_path));
        if (j.contains("thresholds")) {
            thresholds.tau_t = j["thresholds"].value("tau_t", thresholds.tau_t);
            thresholds.tau_f = j["thresholds"].value("tau_f", thresholds.tau_f);
        }
    } catch (const json::exception& e) {
        throw ValidationError("bad verdicts file: " + std::string(e.what()));
    }

    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    r.outputs.push_back(write_new(r.run_dir, "report.md", render_report(deltas, verdicts, matrix, thresholds)));
    r.outputs.push_back(write_new(r.run_dir, "heatmap.csv", render_heatmap_csv(deltas, matrix, verdicts)));
    r.summary = "report over " + std::to_string(deltas.size()) + " cells";
    write_manifest(r.run_dir, "report", started, r);
    return r;
}

CommandResult cmd_annotate_plan(const RunConfig& config) {
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    ordered_json details;
    auto plan = plan_from_config(config, &details);
    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    r.outputs.push_back(write_new(r.run_dir, "plan.jsonl", plan_to_jsonl(plan)));
    std::size_t violations = count_plan_violations(plan);
    r.summary = std::to_string(plan.size()) + " assignments over " + std::to_string(plan.pairs.size()) + " pairs x " +
                std::to_string(plan.criteria.size()) + " criteria x " + std::to_string(plan.groups.size()) +
                " groups; " + std::to_string(violations) + " constraint violations";
    details["assignments"] = plan.size();
    details["violations"] = violations;
    write_manifest(r.run_dir, "annotate-plan", started, r, details);
    return r;
}

CommandResult cmd_annotate_serve(const RunConfig& config, const std::function<bool()>& should_stop,
                                 const std::function<void(int)>& on_ready) {
    auto plan = plan_from_config(config);
    AnnotationService service(std::move(plan), journal_path(config));
    ServerOptions options;
    options.host = config.annotate.host;
    options.port = config.annotate.port;
    options.operator_token = config.annotate.operator_token;
    options.static_dir = config.annotate.static_dir;
    AnnotationServer server(service, options);
    int port = server.start();
    if (on_ready) on_ready(port);
    while (!should_stop()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    auto p = service.progress();
    CommandResult r;
    r.summary = "served on port " + std::to_string(port) + "; " + std::to_string(p.submitted) + " judgments stored, " +
                std::to_string(p.remaining) + " remaining";
    return r;
}

CommandResult cmd_annotate_stats(const RunConfig& config) {
    std::string started = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    fs::path path = config.judgments ? *config.judgments : journal_path(config);
    require_file(path, "judgments");
    require_file(config.expectations, "expectation matrix");
    auto records = load_annotations(path);
    if (records.empty()) throw ValidationError("no judgments in " + path.string());
    auto matrix = ExpectationMatrix::load(config.expectations);
    PluralityOptions options{config.annotate.expected_annotators, config.annotate.expected_pairs};
    auto stats = annotation_stats(records, matrix.expectation_column(), options);
    CommandResult r;
    r.run_dir = prepare_run_dir(config);
    r.outputs.push_back(write_new(r.run_dir, "annotation_stats.json", annotation_stats_to_json(stats)));
    char buf[96];
    std::snprintf(buf, sizeof buf, "consistency %.4f over %zu items", stats.consistency, stats.items);
    r.summary = buf;
    write_manifest(r.run_dir, "annotate-stats", started, r);
    return r;
}

}  // namespace aspectcheck
