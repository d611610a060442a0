#include "aspectcheck/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aspectcheck/error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<E, N>& all, std::string_view what) {
    for (auto e : all)
        if (to_string(e) == text) return e;
    throw ValidationError("unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::array kModes = {EvalMode::ScoreOnly, EvalMode::RateExplain, EvalMode::AnalyzeRate};
constexpr std::array kStrategies = {PromptStrategy::Plain, PromptStrategy::ExplicitInstruction,
                                    PromptStrategy::IdentifyThenRate, PromptStrategy::SelfCheck,
                                    PromptStrategy::FullAspectContext};
constexpr std::array kTemplates = {PromptTemplate::Standard, PromptTemplate::Prometheus};

constexpr std::string_view kIntro =
    "You will be given an example of the source content and target text. The target text is generated from the "
    "source content according to the corresponding task type.\n"
    "Your task is to rate the target text according to the evaluation criterion on a Likert scale from 1 to 5. "
    "Please make sure you read and understand these instructions carefully.\n";

constexpr std::string_view kExplicitInstruction =
    "Make sure your evaluation relies solely on the given evaluation criterion and does not take any other aspect "
    "of quality into account.\n";

constexpr std::string_view kFormAnalyzeRate =
    "Answer by starting with \"Analysis:\" to analyze the given example regarding the evaluation criterion as "
    "concisely as possible, and then give the numeric rating on the next line by \"Rating:\".";
constexpr std::string_view kFormScoreOnly =
    "Answer only with the numeric rating on a single line by \"Rating:\".";
constexpr std::string_view kFormRateExplain =
    "Answer by giving the numeric rating on the first line by \"Rating:\", and then explain the rating regarding "
    "the evaluation criterion as concisely as possible on the next line by \"Rationale:\".";
constexpr std::string_view kFormIdentifyThenRate =
    "Answer by starting with \"Issues:\" and list every issue in the target text that is relevant to the "
    "evaluation criterion, one per line, each with a severity of minor, major, or critical (write \"None\" if "
    "there is no such issue). Then give the numeric rating on the next line by \"Rating:\", based only on the "
    "identified issues and their severity.";

std::string_view form_paragraph(const EvaluationForm& form) {
    if (form.strategy == PromptStrategy::IdentifyThenRate) return kFormIdentifyThenRate;
    switch (form.mode) {
    case EvalMode::ScoreOnly: return kFormScoreOnly;
    case EvalMode::RateExplain: return kFormRateExplain;
    case EvalMode::AnalyzeRate: return kFormAnalyzeRate;
    }
    return kFormAnalyzeRate;
}

std::string demo_answer(const FewShotDemo& demo, const EvaluationForm& form) {
    const auto rating = std::to_string(demo.rating);
    switch (form.mode) {
    case EvalMode::ScoreOnly: return "Rating: " + rating;
    case EvalMode::RateExplain: return "Rating: " + rating + "\nRationale: " + demo.analysis;
    case EvalMode::AnalyzeRate: return "Analysis: " + demo.analysis + "\nRating: " + rating;
    }
    return "Rating: " + rating;
}

std::string build_prometheus(std::string_view task_description, const Criterion& criterion, std::string_view source,
                             std::string_view target, const PromptExtras& extras) {
    std::string out =
        "###Task Description:\n"
        "An instruction (might include an Input inside it), a response to evaluate, a reference answer that gets a "
        "score of 5, and a score rubric representing a evaluation criteria are given.\n"
        "1. Write a detailed feedback that assess the quality of the response strictly based on the given score "
        "rubric, not evaluating in general.\n"
        "2. After writing a feedback, write a score that is an integer between 1 and 5. You should refer to the "
        "score rubric.\n"
        "3. The output format should look as follows: \"Feedback: (write a feedback for criteria) [RESULT] (an "
        "integer number between 1 and 5)\"\n"
        "4. Please do not generate any other opening, closing, and explanations.\n\n";
    out += "###The instruction to evaluate:\n";
    out += task_description;
    out += "\n";
    out += source;
    out += "\n\n###Response to evaluate:\n";
    out += target;
    out += "\n\n###Reference Answer (Score 5):\n";
    out += extras.reference;
    out += "\n\n###Score Rubrics:\n";
    out += criterion.render();
    out += "\n\n###Feedback: ";
    return out;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(EvalMode mode) {
    switch (mode) {
    case EvalMode::ScoreOnly: return "score_only";
    case EvalMode::RateExplain: return "rate_explain";
    case EvalMode::AnalyzeRate: return "analyze_rate";
    }
    return "unknown";
}

std::string_view to_string(PromptStrategy strategy) {
    switch (strategy) {
    case PromptStrategy::Plain: return "plain";
    case PromptStrategy::ExplicitInstruction: return "explicit_instruction";
    case PromptStrategy::IdentifyThenRate: return "identify_then_rate";
    case PromptStrategy::SelfCheck: return "self_check";
    case PromptStrategy::FullAspectContext: return "full_aspect_context";
    }
    return "unknown";
}

std::string_view to_string(PromptTemplate tmpl) {
    return tmpl == PromptTemplate::Standard ? "standard" : "prometheus";
}

EvalMode parse_eval_mode(std::string_view text) { return parse_enum(text, kModes, "evaluation mode"); }
PromptStrategy parse_prompt_strategy(std::string_view text) {
    return parse_enum(text, kStrategies, "prompt strategy");
}
PromptTemplate parse_prompt_template(std::string_view text) {
    return parse_enum(text, kTemplates, "prompt template");
}

void EvaluationForm::validate() const {
    if (shots < 0) throw ValidationError("shots must be >= 0");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be >= 0");
    if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
    if (retry_budget < 0) throw ValidationError("retry_budget must be >= 0");
    if (prompt_template == PromptTemplate::Prometheus && strategy != PromptStrategy::Plain)
        throw ValidationError("the prometheus template only supports the plain strategy");
    if (prompt_template == PromptTemplate::Prometheus && shots > 0)
        throw ValidationError("the prometheus template does not take few-shot demonstrations");
}

std::string EvaluationForm::label() const {
    std::ostringstream t;
    t << temperature;
    std::string out = std::string(to_string(mode)) + "/" + std::string(to_string(strategy)) + "/t" + t.str() + "/n" +
                      std::to_string(n_samples) + "/s" + std::to_string(shots);
    if (prompt_template != PromptTemplate::Standard) out += "/" + std::string(to_string(prompt_template));
    return out;
}

void to_json(json& j, const EvaluationForm& f) {
    j = json{{"mode", to_string(f.mode)},         {"shots", f.shots},
             {"temperature", f.temperature},      {"n_samples", f.n_samples},
             {"strategy", to_string(f.strategy)}, {"template", to_string(f.prompt_template)},
             {"retry_budget", f.retry_budget}};
}

void from_json(const json& j, EvaluationForm& f) {
    f = EvaluationForm{};
    if (j.contains("mode")) f.mode = parse_eval_mode(j["mode"].get<std::string>());
    if (j.contains("shots")) f.shots = j["shots"].get<int>();
    if (j.contains("temperature")) f.temperature = j["temperature"].get<double>();
    if (j.contains("n_samples")) f.n_samples = j["n_samples"].get<int>();
    if (j.contains("strategy")) f.strategy = parse_prompt_strategy(j["strategy"].get<std::string>());
    if (j.contains("template")) f.prompt_template = parse_prompt_template(j["template"].get<std::string>());
    if (j.contains("retry_budget")) f.retry_budget = j["retry_budget"].get<int>();
}

namespace {
ordered_json form_to_ordered(const EvaluationForm& f) {
    ordered_json j;
    j["mode"] = to_string(f.mode);
    j["shots"] = f.shots;
    j["temperature"] = f.temperature;
    j["n_samples"] = f.n_samples;
    j["strategy"] = to_string(f.strategy);
    j["template"] = to_string(f.prompt_template);
    j["retry_budget"] = f.retry_budget;
    return j;
}
}  // namespace

std::vector<FewShotDemo> load_fewshot_demos(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open few-shot demo file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    std::vector<FewShotDemo> out;
    try {
        for (const auto& d : doc) {
            FewShotDemo demo{d.at("source").get<std::string>(), d.at("target").get<std::string>(),
                             d.at("rating").get<int>(), d.value("analysis", "")};
            if (demo.rating < 1 || demo.rating > 5)
                throw ValidationError(path.string() + ": demo rating outside 1..5");
            out.push_back(std::move(demo));
        }
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return out;
}

std::vector<FewShotDemo> select_fewshot_demos(const std::vector<FewShotDemo>& pool, int shots, std::uint64_t seed) {
    if (shots <= 0) return {};
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < pool.size(); ++i) by_label[pool[i].rating].push_back(i);
    detail::Rng rng(seed);
    for (auto& [_, idx] : by_label) rng.shuffle(idx);
    std::map<int, std::size_t> taken;
    std::vector<FewShotDemo> out;
    // Cycle labels 1..5, skipping labels whose pool is used up.
    for (int round = 0; static_cast<int>(out.size()) < shots; ++round) {
        bool progressed = false;
        for (int label = 1; label <= 5 && static_cast<int>(out.size()) < shots; ++label) {
            auto it = by_label.find(label);
            if (it == by_label.end() || taken[label] >= it->second.size()) continue;
            out.push_back(pool[it->second[taken[label]++]]);
            progressed = true;
        }
        if (!progressed)
            throw ValidationError("few-shot pool has " + std::to_string(pool.size()) + " demos, " +
                                  std::to_string(shots) + " requested");
    }
    return out;
}

std::string build_eval_prompt(std::string_view task_description, const Criterion& criterion, std::string_view source,
                              std::string_view target, const EvaluationForm& form, const PromptExtras& extras) {
    form.validate();
    if (form.prompt_template == PromptTemplate::Prometheus)
        return build_prometheus(task_description, criterion, source, target, extras);

    std::string out(kIntro);
    if (form.strategy == PromptStrategy::ExplicitInstruction) out += kExplicitInstruction;
    out += "\nTask Type Description:\n";
    out += task_description;
    out += "\n\nEvaluation Criterion:\n";
    out += criterion.render();
    out += "\n\n";
    if (form.strategy == PromptStrategy::FullAspectContext) {
        if (extras.catalog == nullptr)
            throw ValidationError("full_aspect_context needs the criteria catalog");
        out += "Definitions of All Aspects (for reference only; rate the target text solely on the evaluation "
               "criterion above):\n";
        for (auto a : kAllAspects) out += extras.catalog->at(a, DescriptionKind::default_()).render() + "\n";
        out += "\n";
    }
    if (form.shots > 0) {
        if (static_cast<int>(extras.demos.size()) != form.shots)
            throw ValidationError("form asks for " + std::to_string(form.shots) + " shots but " +
                                  std::to_string(extras.demos.size()) + " demos were given");
        for (std::size_t i = 0; i < extras.demos.size(); ++i) {
            const auto& d = extras.demos[i];
            if (form.mode != EvalMode::ScoreOnly && d.analysis.empty())
                throw ValidationError("few-shot demo " + std::to_string(i + 1) + " has no analysis");
            out += "Demonstration " + std::to_string(i + 1) + ":\n\nSource Content:\n" + d.source +
                   "\n\nTarget Text:\n" + d.target + "\n\nAnswer:\n" + demo_answer(d, form) + "\n\n";
        }
    }
    out += "Example:\n\nSource Content:\n";
    out += source;
    out += "\n\nTarget Text:\n";
    out += target;
    out += "\n\nEvaluation Form:\n";
    out += form_paragraph(form);
    out += "\n\nYour Answer:\n";
    return out;
}

std::string build_self_check_prompt(std::string_view first_prompt, std::string_view first_response) {
    std::string out =
        "Below is an evaluation task followed by a preliminary evaluation.\n\n"
        "=== Evaluation Task ===\n";
    out += first_prompt;
    out += "\n=== Preliminary Evaluation ===\n";
    out += first_response;
    out +=
        "\n\nCheck whether the preliminary evaluation strictly adheres to the given evaluation criterion and "
        "ignores every other aspect of quality. Then give an improved evaluation: start with \"Analysis:\" and give "
        "the final numeric rating on the next line by \"Rating:\".\n\nYour Answer:\n";
    return out;
}

double parse_rating(std::string_view response) {
    constexpr std::string_view kRating = "Rating:";
    constexpr std::string_view kResult = "[RESULT]";
    auto r1 = response.rfind(kRating);
    auto r2 = response.rfind(kResult);
    std::size_t pos;
    if (r1 == std::string_view::npos && r2 == std::string_view::npos)
        throw ParseError("no \"Rating:\" or \"[RESULT]\" token in response");
    if (r2 == std::string_view::npos || (r1 != std::string_view::npos && r1 > r2))
        pos = r1 + kRating.size();
    else
        pos = r2 + kResult.size();

    // Tolerate markdown emphasis and brackets between the token and the number.
    while (pos < response.size() &&
           (detail::is_space(response[pos]) || response[pos] == '*' || response[pos] == '_' || response[pos] == '(' ||
            response[pos] == '[' || response[pos] == '"' || response[pos] == '\''))
        ++pos;
    std::size_t end = pos;
    while (end < response.size() && std::isdigit(static_cast<unsigned char>(response[end]))) ++end;
    if (end == pos) throw ParseError("no number after the rating token");
    if (end + 1 < response.size() && response[end] == '.' &&
        std::isdigit(static_cast<unsigned char>(response[end + 1]))) {
        ++end;
        while (end < response.size() && std::isdigit(static_cast<unsigned char>(response[end]))) ++end;
    }
    double value = 0.0;
    auto [p, ec] = std::from_chars(response.data() + pos, response.data() + end, value);
    if (ec != std::errc()) throw ParseError("unreadable rating number");
    if (value < 1.0 || value > 5.0) throw ParseError("rating " + std::string(response.substr(pos, end - pos)) +
                                                     " is outside [1, 5]");
    return value;
}

ScoreRecord score_text(LlmBackend& backend, const Sample& sample, const TextRef& ref, std::string_view text,
                       const Criterion& criterion, const EvaluationForm& form, const PromptExtras& extras,
                       ScoreStats* stats) {
    form.validate();
    PromptExtras local = extras;
    if (form.prompt_template == PromptTemplate::Prometheus && local.reference.empty()) local.reference = sample.reference;
    const auto prompt = build_eval_prompt(task_description(sample.task), criterion, sample.source, text, form, local);

    ScoreRecord record;
    record.text_ref = ref;
    record.criterion = criterion.key();
    record.form = form;
    record.samples.reserve(static_cast<std::size_t>(form.n_samples));
    for (int k = 0; k < form.n_samples; ++k) {
        std::string last_error;
        bool ok = false;
        for (int attempt = 0; attempt <= form.retry_budget && !ok; ++attempt) {
            const int index = form.n_samples * attempt + k;
            std::string response = backend.complete(prompt, form.temperature, index);
            if (stats) ++stats->completions;
            if (form.strategy == PromptStrategy::SelfCheck) {
                response = backend.complete(build_self_check_prompt(prompt, response), form.temperature, index);
                if (stats) ++stats->completions;
            }
            if (attempt > 0 && stats) ++stats->retries;
            try {
                record.samples.push_back(parse_rating(response));
                ok = true;
            } catch (const ParseError& e) {
                last_error = e.what();
            }
        }
        if (!ok)
            throw BackendError("no parseable rating for sample " + std::to_string(k) + " after " +
                               std::to_string(form.retry_budget + 1) + " attempts: " + last_error);
    }
    record.mean = mean_of(record.samples);
    return record;
}

ScoreMatrixResult score_matrix(LlmBackend& backend, const std::vector<Sample>& samples,
                               const std::vector<PerturbedText>& perturbed, const std::vector<Criterion>& criteria,
                               const EvaluationForm& form, const ScoreMatrixOptions& options) {
    form.validate();
    std::map<std::string, std::size_t> sample_index;
    for (std::size_t i = 0; i < samples.size(); ++i) sample_index.emplace(samples[i].id, i);
    std::vector<std::vector<const PerturbedText*>> by_sample(samples.size());
    for (const auto& p : perturbed) {
        auto it = sample_index.find(p.sample_id);
        if (it == sample_index.end())
            throw ValidationError("perturbed text refers to unknown sample '" + p.sample_id + "'");
        if (options.skip_failed_perturbations && !p.validation.passed) continue;
        by_sample[it->second].push_back(&p);
    }

    struct Item {
        const Sample* sample;
        TextRef ref;
        std::string_view text;
        const Criterion* criterion;
    };
    std::vector<Item> items;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& sample = samples[s];
        for (const auto& c : criteria) items.push_back({&sample, {sample.id, std::nullopt}, sample.reference, &c});
        for (const auto* p : by_sample[s])
            for (const auto& c : criteria) items.push_back({&sample, {sample.id, p->kind}, p->text, &c});
    }

    std::vector<std::optional<ScoreRecord>> slots(items.size());
    std::vector<std::optional<ItemError>> failures(items.size());
    std::vector<ScoreStats> item_stats(items.size());
    std::atomic<std::size_t> done{0};
    detail::parallel_for(items.size(), options.parallelism, [&](std::size_t i) {
        const auto& item = items[i];
        try {
            slots[i] = score_text(backend, *item.sample, item.ref, item.text, *item.criterion, form, options.extras,
                                  &item_stats[i]);
        } catch (const BackendError& e) {
            failures[i] = ItemError{item.ref, item.criterion->key(), e.what(), true};
        } catch (const std::exception& e) {
            failures[i] = ItemError{item.ref, item.criterion->key(), e.what(), false};
        }
        auto n = ++done;
        if (options.progress) options.progress(n, items.size());
    });

    ScoreMatrixResult result;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (slots[i]) result.records.push_back(std::move(*slots[i]));
        if (failures[i]) result.errors.push_back(std::move(*failures[i]));
        result.stats.completions += item_stats[i].completions;
        result.stats.retries += item_stats[i].retries;
    }
    return result;
}

std::string score_record_to_json(const ScoreRecord& r) {
    ordered_json obj;
    obj["text_ref"] = {{"sample_id", r.text_ref.sample_id}, {"variant", r.text_ref.variant()}};
    obj["criterion"] = {{"aspect", code(r.criterion.aspect)}, {"kind", to_string(r.criterion.kind)}};
    obj["samples"] = r.samples;
    obj["mean"] = r.mean;
    obj["form"] = form_to_ordered(r.form);
    return obj.dump();
}

std::string scores_to_jsonl(const std::vector<ScoreRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += score_record_to_json(r);
        out += '\n';
    }
    return out;
}

std::vector<ScoreRecord> parse_scores(std::string_view jsonl, std::string_view origin) {
    std::vector<ScoreRecord> out;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
        try {
            auto obj = json::parse(line);
            if (obj.contains("_meta")) continue;
            ScoreRecord r;
            const auto& ref = obj.at("text_ref");
            r.text_ref.sample_id = ref.at("sample_id").get<std::string>();
            auto variant = ref.at("variant").get<std::string>();
            if (variant != "original") r.text_ref.kind = parse_perturbation_kind(variant);
            const auto& c = obj.at("criterion");
            r.criterion.aspect = parse_aspect(c.at("aspect").get<std::string>());
            r.criterion.kind = parse_description_kind(c.at("kind").get<std::string>());
            r.samples = obj.at("samples").get<std::vector<double>>();
            r.mean = obj.at("mean").get<double>();
            if (obj.contains("form")) r.form = obj["form"].get<EvaluationForm>();
            for (double s : r.samples)
                if (s < 1.0 || s > 5.0) throw ValidationError("score sample outside [1, 5]");
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ValidationError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    return out;
}

std::vector<ScoreRecord> load_scores(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open scores file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scores(buf.str(), path.string());
}

}  // namespace aspectcheck
