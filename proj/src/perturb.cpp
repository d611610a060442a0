#include "aspectcheck/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
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

struct KindInfo {
    PerturbationKind kind;
    std::string_view code;
    std::string_view display;
    Aspect target;
    PerturbationMethod method;
};

constexpr std::array<KindInfo, kPerturbationCount> kKinds = {{
    {PerturbationKind::Repetition, "repetition", "Repetition", Aspect::Fluency, PerturbationMethod::Llm},
    {PerturbationKind::PassiveVoice, "passive_voice", "Passive Voice", Aspect::Fluency, PerturbationMethod::Llm},
    {PerturbationKind::Inversion, "inversion", "Inversion", Aspect::Fluency, PerturbationMethod::Llm},
    {PerturbationKind::ImproperConnective, "improper_connective", "Improper Connective", Aspect::Coherence,
     PerturbationMethod::Llm},
    {PerturbationKind::SentenceExchange, "sentence_exchange", "Sentence Exchange", Aspect::Coherence,
     PerturbationMethod::Rule},
    {PerturbationKind::IncorrectVerbForm, "incorrect_verb_form", "Incorrect Verb Form", Aspect::Grammaticality,
     PerturbationMethod::Llm},
    {PerturbationKind::WordExchange, "word_exchange", "Word Exchange", Aspect::Grammaticality,
     PerturbationMethod::Rule},
    {PerturbationKind::SpellingMistake, "spelling_mistake", "Spelling Mistake", Aspect::Grammaticality,
     PerturbationMethod::Rule},
    {PerturbationKind::UncommonPhrase, "uncommon_phrase", "Uncommon Phrase", Aspect::Simplicity,
     PerturbationMethod::Llm},
    {PerturbationKind::ComplexSentence, "complex_sentence", "Complex Sentence", Aspect::Simplicity,
     PerturbationMethod::Llm},
    {PerturbationKind::Abbreviation, "abbreviation", "Abbreviation", Aspect::Informativeness,
     PerturbationMethod::Llm},
    {PerturbationKind::Hypernym, "hypernym", "Hypernym", Aspect::Informativeness, PerturbationMethod::Llm},
    {PerturbationKind::SentenceDeletion, "sentence_deletion", "Sentence Deletion", Aspect::Informativeness,
     PerturbationMethod::Rule},
    {PerturbationKind::Complement, "complement", "Complement", Aspect::NonHallucination, PerturbationMethod::Llm},
    {PerturbationKind::Continuation, "continuation", "Continuation", Aspect::NonHallucination,
     PerturbationMethod::Llm},
    {PerturbationKind::DifferentEntity, "different_entity", "Different Entity", Aspect::NonContradiction,
     PerturbationMethod::Llm},
    {PerturbationKind::ConflictingFact, "conflicting_fact", "Conflicting Fact", Aspect::NonContradiction,
     PerturbationMethod::Llm},
    {PerturbationKind::Negation, "negation", "Negation", Aspect::NonContradiction, PerturbationMethod::Llm},
}};

struct Token {
    std::size_t lead = 0;  // characters before the alphabetic core
    std::size_t core = 0;  // core length
};

// Splits a token into leading punctuation, core, trailing punctuation.
// The core must be purely alphabetic to count.
std::optional<Token> alpha_core(std::string_view tok) {
    std::size_t b = 0, e = tok.size();
    while (b < e && !detail::is_alpha(tok[b])) ++b;
    while (e > b && !detail::is_alpha(tok[e - 1])) --e;
    if (e == b) return std::nullopt;
    for (std::size_t i = b; i < e; ++i)
        if (!detail::is_alpha(tok[i])) return std::nullopt;
    return Token{b, e - b};
}

// Lowercased words with surrounding punctuation removed; empty results dropped.
std::vector<std::string> content_words(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& w : detail::split_words(text)) {
        std::size_t b = 0, e = w.size();
        auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
        while (b < e && !keep(w[b])) ++b;
        while (e > b && !keep(w[e - 1])) --e;
        if (e > b) out.push_back(detail::to_lower(w.substr(b, e - b)));
    }
    return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

bool is_subsequence(const std::vector<std::string>& needle, const std::vector<std::string>& hay) {
    std::size_t i = 0;
    for (std::size_t j = 0; j < hay.size() && i < needle.size(); ++j)
        if (hay[j] == needle[i]) ++i;
    return i == needle.size();
}

std::size_t edit_count(double rate, std::size_t words) {
    if (!(rate >= 0.0) || rate > 1.0) throw ValidationError("perturbation rate must be in [0, 1]");
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rate * static_cast<double>(words))));
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::fixed << v;
    return os.str();
}

}  // namespace

std::string_view to_string(PerturbationKind kind) { return kKinds[index_of(kind)].code; }
std::string_view display_name(PerturbationKind kind) { return kKinds[index_of(kind)].display; }
Aspect target_aspect(PerturbationKind kind) { return kKinds[index_of(kind)].target; }
PerturbationMethod method_of(PerturbationKind kind) { return kKinds[index_of(kind)].method; }

PerturbationKind parse_perturbation_kind(std::string_view text) {
    for (const auto& k : kKinds)
        if (k.code == text || k.display == text) return k.kind;
    throw ValidationError("unknown perturbation kind '" + std::string(text) + "'");
}

std::string_view to_string(PerturbationMethod method) {
    return method == PerturbationMethod::Rule ? "rule" : "llm";
}

PerturbationMethod parse_perturbation_method(std::string_view text) {
    if (text == "rule") return PerturbationMethod::Rule;
    if (text == "llm") return PerturbationMethod::Llm;
    throw ValidationError("unknown perturbation method '" + std::string(text) + "'");
}

void ValidationReport::add(std::string name, bool ok, std::string note) {
    checks.push_back({std::move(name), ok, std::move(note)});
    passed = passed && ok;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view sample_id, PerturbationKind kind) {
    std::uint64_t h = detail::mix64(global_seed);
    h = detail::fnv1a(sample_id, h);
    h = detail::fnv1a(to_string(kind), h ^ 0xFF);
    return detail::mix64(h);
}

std::string sentence_exchange_at(std::string_view text, std::size_t i, std::size_t j) {
    auto sentences = split_sentences(text);
    if (sentences.size() < 2) throw ValidationError("sentence_exchange needs at least 2 sentences");
    if (i == j || i >= sentences.size() || j >= sentences.size())
        throw ValidationError("sentence_exchange positions out of range");
    std::swap(sentences[i], sentences[j]);
    return detail::join(sentences, " ");
}

std::string sentence_exchange(std::string_view text, std::uint64_t seed) {
    const auto n = split_sentences(text).size();
    if (n < 2) throw ValidationError("sentence_exchange needs at least 2 sentences");
    detail::Rng rng(seed);
    // Index into the n(n-1)/2 unordered pairs.
    auto r = rng.below(n * (n - 1) / 2);
    std::size_t i = 0;
    while (r >= n - 1 - i) {
        r -= n - 1 - i;
        ++i;
    }
    return sentence_exchange_at(text, i, i + 1 + r);
}

std::string word_exchange_at(std::string_view text, const std::vector<std::size_t>& positions) {
    auto words = detail::split_words(text);
    std::vector<bool> used(words.size(), false);
    for (auto p : positions) {
        if (p + 1 >= words.size()) throw ValidationError("word_exchange position out of range");
        if (used[p] || used[p + 1]) throw ValidationError("word_exchange pairs must be disjoint");
        used[p] = used[p + 1] = true;
        std::swap(words[p], words[p + 1]);
    }
    return detail::join(words, " ");
}

std::string word_exchange(std::string_view text, std::uint64_t seed, double rate) {
    auto words = detail::split_words(text);
    const auto n = words.size();
    if (n < 2) throw ValidationError("word_exchange needs at least 2 words");
    const auto k = std::min(edit_count(rate, n), n / 2);

    // Preference tiers: pairs inside one sentence with distinct words, then
    // distinct words across a sentence end, then identical words.
    std::vector<std::size_t> order(n - 1);
    for (std::size_t p = 0; p + 1 < n; ++p) order[p] = p;
    detail::Rng rng(seed);
    rng.shuffle(order);
    const auto& splitter = SentenceSplitter::standard();
    auto tier = [&](std::size_t p) {
        if (words[p] == words[p + 1]) return 2;
        auto core = words[p];
        while (!core.empty() && (core.back() == '"' || core.back() == '\'' || core.back() == ')')) core.pop_back();
        bool ends = !core.empty() && (core.back() == '!' || core.back() == '?' ||
                                      (core.back() == '.' && !splitter.is_abbreviation(words[p])));
        return ends ? 1 : 0;
    };
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return tier(a) < tier(b); });

    std::vector<bool> used(n, false);
    std::vector<std::size_t> chosen;
    for (auto p : order) {
        if (chosen.size() == k) break;
        if (used[p] || used[p + 1]) continue;
        used[p] = used[p + 1] = true;
        chosen.push_back(p);
    }
    std::sort(chosen.begin(), chosen.end());
    return word_exchange_at(text, chosen);
}

std::string apply_spelling_edit(std::string_view word, SpellingEdit edit, std::size_t pos) {
    std::string w(word);
    switch (edit) {
    case SpellingEdit::Duplicate:
        if (pos >= w.size()) throw ValidationError("spelling edit position out of range");
        w.insert(w.begin() + static_cast<std::ptrdiff_t>(pos), w[pos]);
        break;
    case SpellingEdit::Delete:
        if (pos >= w.size()) throw ValidationError("spelling edit position out of range");
        w.erase(pos, 1);
        break;
    case SpellingEdit::Transpose:
        if (pos + 1 >= w.size()) throw ValidationError("spelling edit position out of range");
        std::swap(w[pos], w[pos + 1]);
        break;
    }
    return w;
}

std::string spelling_mistake(std::string_view text, std::uint64_t seed, double rate) {
    auto words = detail::split_words(text);
    const auto& splitter = SentenceSplitter::standard();
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < words.size(); ++i) {
        auto core = alpha_core(words[i]);
        if (core && core->core >= 3 && !splitter.is_abbreviation(words[i])) eligible.push_back(i);
    }
    if (eligible.empty()) throw ValidationError("spelling_mistake needs a word of at least 3 letters");
    const auto k = std::min(edit_count(rate, words.size()), eligible.size());

    detail::Rng rng(seed);
    rng.shuffle(eligible);
    eligible.resize(k);
    std::sort(eligible.begin(), eligible.end());

    for (auto idx : eligible) {
        auto& tok = words[idx];
        const auto t = *alpha_core(tok);
        const std::string core = tok.substr(t.lead, t.core);
        std::vector<std::size_t> swappable;
        for (std::size_t p = 0; p + 1 < core.size(); ++p)
            if (core[p] != core[p + 1]) swappable.push_back(p);

        // Seeded first choice, then every other edit in a fixed order, so the
        // result never turns the token into an abbreviation.
        std::vector<std::pair<SpellingEdit, std::size_t>> candidates;
        auto first = static_cast<SpellingEdit>(rng.below(swappable.empty() ? 2 : 3));
        if (first == SpellingEdit::Transpose)
            candidates.push_back({first, swappable[rng.below(swappable.size())]});
        else
            candidates.push_back({first, rng.below(core.size())});
        for (std::size_t p = 0; p < core.size(); ++p) candidates.push_back({SpellingEdit::Duplicate, p});
        for (std::size_t p = 0; p < core.size(); ++p) candidates.push_back({SpellingEdit::Delete, p});
        for (auto p : swappable) candidates.push_back({SpellingEdit::Transpose, p});

        for (const auto& [edit, pos] : candidates) {
            auto next = tok.substr(0, t.lead) + apply_spelling_edit(core, edit, pos) + tok.substr(t.lead + t.core);
            if (!splitter.is_abbreviation(next)) {
                tok = std::move(next);
                break;
            }
        }
    }
    return detail::join(words, " ");
}

std::string sentence_deletion(std::string_view text) {
    auto spans = SentenceSplitter::standard().spans(text);
    if (spans.size() < 2) throw ValidationError("sentence_deletion needs at least 2 sentences");
    const auto& keep_end = spans[spans.size() - 2].end;
    return std::string(text.substr(spans.front().begin, keep_end - spans.front().begin));
}

std::string apply_rule(PerturbationKind kind, std::string_view text, std::uint64_t seed, double rate) {
    switch (kind) {
    case PerturbationKind::SentenceExchange: return sentence_exchange(text, seed);
    case PerturbationKind::WordExchange: return word_exchange(text, seed, rate);
    case PerturbationKind::SpellingMistake: return spelling_mistake(text, seed, rate);
    case PerturbationKind::SentenceDeletion: return sentence_deletion(text);
    default: break;
    }
    throw ValidationError(std::string(to_string(kind)) + " is not rule-based");
}

DemoLibrary DemoLibrary::parse(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("demos: malformed JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ValidationError("demos: expected a JSON array");
    DemoLibrary lib;
    for (const auto& item : doc) {
        DemoSet set;
        try {
            set.kind = parse_perturbation_kind(item.at("kind").get<std::string>());
            set.instruction = item.at("instruction").get<std::string>();
            for (const auto& p : item.at("pairs"))
                set.pairs.push_back({p.at("original").get<std::string>(), p.at("perturbed").get<std::string>()});
        } catch (const json::exception& e) {
            throw ValidationError(std::string("demos: ") + e.what());
        }
        auto code = std::string(to_string(set.kind));
        if (method_of(set.kind) != PerturbationMethod::Llm)
            throw ValidationError("demos: " + code + " is rule-based and takes no demonstrations");
        if (set.instruction.empty()) throw ValidationError("demos: empty instruction for " + code);
        if (set.pairs.size() != kDemosPerKind)
            throw ValidationError("demos: " + code + " has " + std::to_string(set.pairs.size()) +
                                  " demonstrations, expected " + std::to_string(kDemosPerKind));
        if (!lib.sets_.emplace(set.kind, std::move(set)).second)
            throw ValidationError("demos: duplicate entry for " + code);
    }
    return lib;
}

DemoLibrary DemoLibrary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open demos file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const DemoSet& DemoLibrary::at(PerturbationKind kind) const {
    auto it = sets_.find(kind);
    if (it == sets_.end()) throw NotFoundError("no demonstrations for " + std::string(to_string(kind)));
    return it->second;
}

std::string build_perturbation_prompt(PerturbationKind kind, const Sample& sample, const DemoSet& demos) {
    if (method_of(kind) != PerturbationMethod::Llm)
        throw ValidationError(std::string(to_string(kind)) + " is rule-based; no prompt is built");
    if (demos.kind != kind)
        throw ValidationError("demonstrations are for " + std::string(to_string(demos.kind)) + ", not " +
                              std::string(to_string(kind)));
    if (demos.pairs.size() != kDemosPerKind)
        throw ValidationError("expected " + std::to_string(kDemosPerKind) + " demonstrations, got " +
                              std::to_string(demos.pairs.size()));
    std::string out = demos.instruction;
    out += "\nOnly output the perturbed text.\n\n";
    for (std::size_t i = 0; i < demos.pairs.size(); ++i) {
        out += "Example " + std::to_string(i + 1) + ":\nOriginal Text:\n" + demos.pairs[i].original +
               "\nPerturbed Text:\n" + demos.pairs[i].perturbed + "\n\n";
    }
    out += "Original Text:\n" + sample.reference + "\nPerturbed Text:\n";
    return out;
}

ValidationReport validate_perturbation(PerturbationKind kind, std::string_view original, std::string_view perturbed) {
    ValidationReport report;
    const auto norm_orig = detail::normalize_space(original);
    const auto norm_pert = detail::normalize_space(perturbed);
    report.add("non_identity", !norm_pert.empty() && norm_orig != norm_pert,
               norm_orig == norm_pert ? "perturbed text equals the original" : "");

    const double ratio =
        norm_orig.empty() ? 0.0 : static_cast<double>(norm_pert.size()) / static_cast<double>(norm_orig.size());
    report.add("length_ratio", ratio >= 0.3 && ratio <= 3.0, "ratio " + format_double(ratio));

    switch (kind) {
    case PerturbationKind::Continuation: {
        bool prefix = detail::starts_with(norm_pert, norm_orig) && norm_pert.size() > norm_orig.size();
        report.add("original_prefix", prefix, prefix ? "" : "original text is not a prefix of the output");
        break;
    }
    case PerturbationKind::Complement: {
        auto ow = content_words(original);
        auto pw = content_words(perturbed);
        bool kept = is_subsequence(ow, pw) && pw.size() > ow.size();
        report.add("original_preserved", kept, kept ? "" : "original words are not kept in order");
        break;
    }
    case PerturbationKind::Negation:
    case PerturbationKind::ConflictingFact:
    case PerturbationKind::DifferentEntity: {
        auto ow = content_words(original);
        auto pw = content_words(perturbed);
        auto diff = std::max(ow.size(), pw.size()) - lcs_length(ow, pw);
        report.add("word_difference", diff >= 1, std::to_string(diff) + " words differ");
        break;
    }
    case PerturbationKind::Abbreviation: {
        bool shorter = norm_pert.size() < norm_orig.size();
        report.add("shorter", shorter, shorter ? "" : "output is not shorter than the original");
        break;
    }
    default: break;
    }
    return report;
}

std::vector<PerturbedText> perturb_all(const std::vector<Sample>& samples, const std::vector<PerturbationKind>& kinds,
                                       std::uint64_t rule_seed, LlmBackend* llm, const DemoLibrary* demos,
                                       const PerturbOptions& options) {
    for (auto k : kinds) {
        if (method_of(k) != PerturbationMethod::Llm) continue;
        if (llm == nullptr)
            throw ValidationError(std::string(to_string(k)) + " needs an LLM backend, none configured");
        if (demos == nullptr || !demos->contains(k))
            throw ValidationError("no demonstrations loaded for " + std::string(to_string(k)));
    }
    if (options.max_attempts < 1) throw ValidationError("max_attempts must be at least 1");

    std::vector<PerturbedText> out(samples.size() * kinds.size());
    std::vector<std::size_t> llm_items;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            auto& item = out[s * kinds.size() + k];
            item.sample_id = samples[s].id;
            item.kind = kinds[k];
            item.method = method_of(kinds[k]);
            if (item.method == PerturbationMethod::Llm) {
                llm_items.push_back(s * kinds.size() + k);
                continue;
            }
            item.seed = derive_seed(rule_seed, samples[s].id, kinds[k]);
            try {
                item.text = apply_rule(kinds[k], samples[s].reference, *item.seed, options.rate);
                item.validation = validate_perturbation(kinds[k], samples[s].reference, item.text);
            } catch (const ValidationError& e) {
                // Preconditions such as "needs 2 sentences" are reported, not fatal.
                item.text = samples[s].reference;
                item.validation.add("precondition", false, e.what());
            }
        }
    }

    std::mutex error_mutex;
    std::exception_ptr first_error;
    detail::parallel_for(llm_items.size(), options.parallelism, [&](std::size_t n) {
        auto& item = out[llm_items[n]];
        const auto& sample = samples[llm_items[n] / kinds.size()];
        try {
            const auto prompt = build_perturbation_prompt(item.kind, sample, demos->at(item.kind));
            item.generator_model = llm->identity();
            for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
                item.text = std::string(detail::trim(llm->complete(prompt, options.temperature, attempt)));
                item.validation = validate_perturbation(item.kind, sample.reference, item.text);
                if (item.validation.passed) break;
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

std::string perturbed_to_jsonl(const std::vector<PerturbedText>& items) {
    std::string out;
    for (const auto& p : items) {
        ordered_json obj;
        obj["sample_id"] = p.sample_id;
        obj["kind"] = to_string(p.kind);
        obj["method"] = to_string(p.method);
        if (p.seed) obj["seed"] = *p.seed;
        if (p.generator_model) obj["generator_model"] = *p.generator_model;
        obj["text"] = p.text;
        ordered_json checks = ordered_json::array();
        for (const auto& c : p.validation.checks)
            checks.push_back({{"name", c.name}, {"passed", c.passed}, {"note", c.note}});
        obj["validation"] = {{"passed", p.validation.passed}, {"checks", checks}};
        out += obj.dump();
        out += '\n';
    }
    return out;
}

std::vector<PerturbedText> parse_perturbed(std::string_view jsonl, std::string_view origin) {
    std::vector<PerturbedText> out;
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
            PerturbedText p;
            p.sample_id = obj.at("sample_id").get<std::string>();
            p.kind = parse_perturbation_kind(obj.at("kind").get<std::string>());
            p.method = parse_perturbation_method(obj.at("method").get<std::string>());
            if (obj.contains("seed")) p.seed = obj["seed"].get<std::uint64_t>();
            if (obj.contains("generator_model")) p.generator_model = obj["generator_model"].get<std::string>();
            p.text = obj.at("text").get<std::string>();
            const auto& v = obj.at("validation");
            p.validation.passed = v.at("passed").get<bool>();
            for (const auto& c : v.at("checks"))
                p.validation.checks.push_back(
                    {c.at("name").get<std::string>(), c.at("passed").get<bool>(), c.value("note", "")});
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw ValidationError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    return out;
}

std::vector<PerturbedText> load_perturbed(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open perturbed file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_perturbed(buf.str(), path.string());
}

}  // namespace aspectcheck
