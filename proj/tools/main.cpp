#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aspectcheck/error.hpp"
#include "aspectcheck/pipeline.hpp"

using namespace aspectcheck;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

struct Flags {
    std::string config;
    std::string corpus;
    std::vector<std::string> kinds, aspects, desc_kinds;
    std::optional<std::size_t> limit;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau_t, tau_f;
    std::string backend;
    bool offline = false;
    std::string out, run;
    std::string perturbed, scores, deltas, verdicts, judgments;
    std::string group_by;
    std::optional<int> port;
    std::optional<std::size_t> parallelism;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run configuration");
    cmd->add_option("--corpus", f.corpus, "corpus JSONL");
    cmd->add_option("--kinds", f.kinds, "perturbation kinds to include")->delimiter(',');
    cmd->add_option("--aspects", f.aspects, "aspects to include (codes or names)")->delimiter(',');
    cmd->add_option("--desc-kinds", f.desc_kinds, "description kinds to include")->delimiter(',');
    cmd->add_option("--limit", f.limit, "use only the first N samples");
    cmd->add_option("--seed", f.seed, "root seed");
    cmd->add_option("--tau-t", f.tau_t, "directional threshold");
    cmd->add_option("--tau-f", f.tau_f, "invariance threshold");
    cmd->add_option("--backend", f.backend, "http | constant:K");
    cmd->add_flag("--offline", f.offline, "answer from the response cache only");
    cmd->add_option("--out", f.out, "parent directory for timestamped run directories");
    cmd->add_option("--run", f.run, "write into (and read stage inputs from) this run directory");
    cmd->add_option("--perturbed", f.perturbed, "perturbed.jsonl input");
    cmd->add_option("--scores", f.scores, "scores.jsonl input");
    cmd->add_option("--deltas", f.deltas, "deltas.csv input");
    cmd->add_option("--verdicts", f.verdicts, "verdicts.json input");
    cmd->add_option("--judgments", f.judgments, "judgments.jsonl input");
    cmd->add_option("--group-by", f.group_by, "aspect | description_kind");
    cmd->add_option("--port", f.port, "annotation server port (0 picks one)");
    cmd->add_option("--parallelism", f.parallelism, "concurrent backend requests");
}

RunConfig build_config(const Flags& f) {
    RunConfig c = f.config.empty() ? RunConfig::from_json(nlohmann::json::object()) : RunConfig::load(f.config);
    if (!f.corpus.empty()) c.corpus = f.corpus;
    if (!f.kinds.empty()) {
        c.kinds.clear();
        for (const auto& k : f.kinds) c.kinds.push_back(parse_perturbation_kind(k));
    }
    if (!f.aspects.empty()) {
        c.aspects.clear();
        for (const auto& a : f.aspects) c.aspects.push_back(parse_aspect(a));
    }
    if (!f.desc_kinds.empty()) {
        c.description_kinds.clear();
        for (const auto& d : f.desc_kinds) c.description_kinds.push_back(parse_description_kind(d));
    }
    if (f.limit) c.limit = *f.limit;
    if (f.seed) c.seed = *f.seed;
    if (f.tau_t) c.thresholds.tau_t = *f.tau_t;
    if (f.tau_f) c.thresholds.tau_f = *f.tau_f;
    if (!f.backend.empty()) {
        if (f.backend == "http") {
            c.backend.type = "http";
        } else if (f.backend.rfind("constant:", 0) == 0) {
            c.backend.type = "constant";
            try {
                c.backend.constant = std::stod(f.backend.substr(9));
            } catch (const std::exception&) {
                throw ValidationError("bad --backend value '" + f.backend + "'");
            }
        } else {
            throw ValidationError("unknown --backend '" + f.backend + "'; expected http or constant:K");
        }
    }
    if (f.offline) c.offline = true;
    if (!f.out.empty()) c.out_dir = f.out;
    if (!f.run.empty()) c.run_dir = f.run;
    if (!f.perturbed.empty()) c.perturbed = f.perturbed;
    if (!f.scores.empty()) c.scores = f.scores;
    if (!f.deltas.empty()) c.deltas = f.deltas;
    if (!f.verdicts.empty()) c.verdicts = f.verdicts;
    if (!f.judgments.empty()) c.judgments = f.judgments;
    if (!f.group_by.empty()) c.group_by = parse_group_by(f.group_by);
    if (f.port) c.annotate.port = *f.port;
    if (f.parallelism) {
        c.parallelism = *f.parallelism;
        c.perturb.parallelism = *f.parallelism;
    }
    return c;
}

void print(const CommandResult& r) {
    if (!r.run_dir.empty()) std::cout << "run directory: " << r.run_dir.string() << "\n";
    for (const auto& o : r.outputs) std::cout << "wrote " << o.string() << "\n";
    std::cout << r.summary << "\n";
    if (r.exit_code == kExitPartial) std::cerr << "some items failed; see the errors file in the run directory\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aspectcheck: behavioral tests for LLM-based text evaluators"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));
    Flags f;
    std::string annotate_action;

    auto* perturb = app.add_subcommand("perturb", "generate perturbed texts");
    auto* evaluate = app.add_subcommand("evaluate", "score originals and perturbations");
    auto* test = app.add_subcommand("test", "directional and invariance verdicts from scores");
    auto* correlate = app.add_subcommand("correlate", "correlation matrix of scores");
    auto* report = app.add_subcommand("report", "markdown report and heatmap data");
    auto* annotate = app.add_subcommand("annotate", "human annotation: plan | serve | stats");
    annotate->add_option("action", annotate_action, "plan, serve or stats")
        ->required()
        ->check(CLI::IsMember({"plan", "serve", "stats"}));
    for (auto* cmd : {perturb, evaluate, test, correlate, report, annotate}) add_common(cmd, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        RunConfig config = build_config(f);
        CommandResult r;
        if (*perturb) r = cmd_perturb(config);
        else if (*evaluate) r = cmd_evaluate(config);
        else if (*test) r = cmd_test(config);
        else if (*correlate) r = cmd_correlate(config);
        else if (*report) r = cmd_report(config);
        else if (annotate_action == "plan") r = cmd_annotate_plan(config);
        else if (annotate_action == "stats") r = cmd_annotate_stats(config);
        else {
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            r = cmd_annotate_serve(
                config, [] { return g_stop != 0; },
                [&](int port) {
                    std::cout << "annotation service listening on http://" << config.annotate.host << ":" << port
                              << " (Ctrl-C to stop)" << std::endl;
                });
        }
        print(r);
        return r.exit_code;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
