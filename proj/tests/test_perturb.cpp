#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "aspectcheck/error.hpp"
#include "aspectcheck/perturb.hpp"
#include "test_support.hpp"
#include "random_text.hpp"
#include "text_oracles.hpp"

using namespace aspectcheck;

namespace {

std::string original() { return test_support::table2_original(); }

std::vector<std::string> words(const std::string& s) { return oracle::whitespace_words(s); }

}  // namespace

TEST(PerturbationKind, EighteenKindsFourRules) {
    std::set<std::string> codes;
    int rules = 0;
    for (auto k : kAllPerturbationKinds) {
        codes.insert(std::string(to_string(k)));
        EXPECT_EQ(parse_perturbation_kind(to_string(k)), k);
        EXPECT_EQ(parse_perturbation_kind(display_name(k)), k);
        rules += method_of(k) == PerturbationMethod::Rule;
    }
    EXPECT_EQ(codes.size(), 18u);
    EXPECT_EQ(rules, 4);
    EXPECT_EQ(method_of(PerturbationKind::SentenceExchange), PerturbationMethod::Rule);
    EXPECT_EQ(method_of(PerturbationKind::WordExchange), PerturbationMethod::Rule);
    EXPECT_EQ(method_of(PerturbationKind::SpellingMistake), PerturbationMethod::Rule);
    EXPECT_EQ(method_of(PerturbationKind::SentenceDeletion), PerturbationMethod::Rule);
    EXPECT_EQ(target_aspect(PerturbationKind::Negation), Aspect::NonContradiction);
    EXPECT_EQ(target_aspect(PerturbationKind::Hypernym), Aspect::Informativeness);
    EXPECT_THROW(parse_perturbation_kind("shouting"), ValidationError);
}

TEST(SentenceExchange, TableTwoSwap) {
    EXPECT_EQ(sentence_exchange_at(original(), 0, 2), test_support::table2_perturbed().at("sentence_exchange"));
}

TEST(SentenceExchange, TwoSentencesAlwaysSwap) {
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        EXPECT_EQ(sentence_exchange("First one. Second one.", seed), "Second one. First one.");
    EXPECT_THROW(sentence_exchange("Only one.", 1), ValidationError);
}

TEST(SentenceExchange, Deterministic) {
    EXPECT_EQ(sentence_exchange(original(), 42), sentence_exchange(original(), 42));
}

TEST(SentenceExchange, PairsCoveredUniformly) {
    std::string text = "A one. B two. C three. D four.";
    std::map<std::string, int> seen;
    for (std::uint64_t seed = 0; seed < 600; ++seed) ++seen[sentence_exchange(text, seed)];
    EXPECT_EQ(seen.size(), 6u);
    for (const auto& [_, count] : seen) EXPECT_GT(count, 60);
}

TEST(WordExchange, TableTwoPairs) {
    auto w = words(original());
    auto pos = [&](const std::string& a, const std::string& b) {
        for (std::size_t i = 0; i + 1 < w.size(); ++i)
            if (w[i] == a && w[i + 1] == b) return i;
        throw std::runtime_error("pair not found");
    };
    auto out = word_exchange_at(original(), {pos("tablet", "and"), pos("other", "brands"), pos("after", "work")});
    EXPECT_EQ(out, test_support::table2_perturbed().at("word_exchange"));
}

TEST(WordExchange, TwoWords) {
    EXPECT_EQ(word_exchange("hello world", 3), "world hello");
    EXPECT_THROW(word_exchange("alone", 3), ValidationError);
}

TEST(WordExchange, EditCountFollowsRate) {
    auto text = original();
    auto n = words(text).size();
    auto out = words(word_exchange(text, 9, 0.1));
    std::size_t changed = 0;
    auto in = words(text);
    for (std::size_t i = 0; i < n; ++i) changed += in[i] != out[i];
    EXPECT_EQ(changed, 2 * static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
}

TEST(SpellingMistake, EditPrimitives) {
    EXPECT_EQ(apply_spelling_edit("will", SpellingEdit::Duplicate, 0), "wwill");
    EXPECT_EQ(apply_spelling_edit("after", SpellingEdit::Transpose, 1), "atfer");
    EXPECT_EQ(apply_spelling_edit("know", SpellingEdit::Delete, 3), "kno");
    EXPECT_THROW(apply_spelling_edit("ab", SpellingEdit::Transpose, 1), ValidationError);
}

TEST(SpellingMistake, CountsAndDistance) {
    auto text = original();
    auto out = spelling_mistake(text, 5);
    auto a = words(text), b = words(out);
    ASSERT_EQ(a.size(), b.size());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LE(oracle::levenshtein(a[i], b[i]), 2u);
        changed += a[i] != b[i];
    }
    EXPECT_GE(changed, 1u);
    EXPECT_LE(changed, 4u);
    EXPECT_EQ(split_sentences(out).size(), 3u);
    EXPECT_THROW(spelling_mistake("an ox", 1), ValidationError);
}

TEST(SpellingMistake, NeverCreatesAbbreviation) {
    // "Now." minus its w would read "No." and merge two sentences.
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto out = spelling_mistake("Come here now. Then go.", seed, 1.0);
        EXPECT_EQ(split_sentences(out).size(), 2u) << out;
    }
}

TEST(SentenceDeletion, TableTwo) {
    EXPECT_EQ(sentence_deletion(original()), test_support::table2_perturbed().at("sentence_deletion"));
    EXPECT_EQ(sentence_deletion("One.  Two."), "One.");
    EXPECT_THROW(sentence_deletion("One."), ValidationError);
}

TEST(Validation, TableTwoRowsPass) {
    for (const auto& [code, text] : test_support::table2_perturbed()) {
        auto report = validate_perturbation(parse_perturbation_kind(code), original(), text);
        EXPECT_TRUE(report.passed) << code;
    }
}

TEST(Validation, Failures) {
    auto x = original();
    auto r = validate_perturbation(PerturbationKind::Negation, x, x);
    EXPECT_FALSE(r.passed);
    EXPECT_FALSE(r.checks.front().passed);
    EXPECT_EQ(r.checks.front().name, "non_identity");

    EXPECT_FALSE(validate_perturbation(PerturbationKind::Continuation, x, "Something else entirely. " + x).passed);
    EXPECT_FALSE(validate_perturbation(PerturbationKind::Abbreviation, x, x + " Extra.").passed);
    EXPECT_FALSE(validate_perturbation(PerturbationKind::Hypernym, x, "Short.").passed);
    EXPECT_FALSE(validate_perturbation(PerturbationKind::Complement, x, "Josh buys nothing at all today.").passed);
}

TEST(Demos, ShippedLibraryLoads) {
    auto lib = DemoLibrary::load(test_support::data_path("demos.json"));
    EXPECT_EQ(lib.size(), 14u);
    for (auto k : kAllPerturbationKinds) {
        EXPECT_EQ(lib.contains(k), method_of(k) == PerturbationMethod::Llm);
    }
    // The shipped demonstrations should themselves pass validation.
    for (auto k : kAllPerturbationKinds) {
        if (!lib.contains(k)) continue;
        for (const auto& p : lib.at(k).pairs)
            EXPECT_TRUE(validate_perturbation(k, p.original, p.perturbed).passed)
                << to_string(k) << ": " << p.perturbed;
    }
}

TEST(Demos, PromptShape) {
    auto lib = DemoLibrary::load(test_support::data_path("demos.json"));
    Sample s{"s1", TaskKind::DialogueSummarization, "dialogue", original()};
    auto prompt = build_perturbation_prompt(PerturbationKind::Negation, s, lib.at(PerturbationKind::Negation));
    EXPECT_EQ(prompt, build_perturbation_prompt(PerturbationKind::Negation, s, lib.at(PerturbationKind::Negation)));
    EXPECT_NE(prompt.find(lib.at(PerturbationKind::Negation).instruction), std::string::npos);
    for (const auto& p : lib.at(PerturbationKind::Negation).pairs) EXPECT_NE(prompt.find(p.perturbed), std::string::npos);
    EXPECT_TRUE(prompt.ends_with(original() + "\nPerturbed Text:\n"));
    EXPECT_THROW(build_perturbation_prompt(PerturbationKind::SentenceExchange, s, lib.at(PerturbationKind::Negation)),
                 ValidationError);
    auto short_set = lib.at(PerturbationKind::Negation);
    short_set.pairs.pop_back();
    EXPECT_THROW(build_perturbation_prompt(PerturbationKind::Negation, s, short_set), ValidationError);
}

TEST(PerturbAll, RuleOnlyNeedsNoBackend) {
    std::vector<Sample> samples = {{"a", TaskKind::Paraphrase, "src", original()}};
    auto out = perturb_all(samples, {PerturbationKind::SentenceDeletion}, 1);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_TRUE(out[0].validation.passed);
    EXPECT_TRUE(out[0].seed.has_value());
    EXPECT_THROW(perturb_all(samples, {PerturbationKind::Negation}, 1), ValidationError);
}

TEST(PerturbAll, SeedsArePerItemAndStable) {
    std::vector<Sample> samples;
    for (int i = 0; i < 5; ++i) samples.push_back({"s" + std::to_string(i), TaskKind::Paraphrase, "src", original()});
    std::vector<PerturbationKind> kinds = {PerturbationKind::WordExchange, PerturbationKind::SpellingMistake,
                                           PerturbationKind::SentenceExchange};
    auto a = perturb_all(samples, kinds, 77);
    auto b = perturb_all(samples, kinds, 77);
    EXPECT_EQ(perturbed_to_jsonl(a), perturbed_to_jsonl(b));
    // Regenerating a subset gives the same text for the same (sample, kind).
    auto part = perturb_all({samples[3]}, {PerturbationKind::SpellingMistake}, 77);
    EXPECT_EQ(part[0].text, a[3 * 3 + 1].text);
    EXPECT_NE(derive_seed(77, "s1", PerturbationKind::WordExchange), derive_seed(77, "s2", PerturbationKind::WordExchange));
}

TEST(PerturbAll, SingleSentenceReportedNotThrown) {
    std::vector<Sample> samples = {{"a", TaskKind::Paraphrase, "src", "Only one sentence here."}};
    auto out = perturb_all(samples, {PerturbationKind::SentenceDeletion}, 1);
    EXPECT_FALSE(out[0].validation.passed);
    EXPECT_EQ(out[0].text, samples[0].reference);
}

TEST(PerturbAll, LlmKindsRetryUntilValid) {
    auto lib = DemoLibrary::load(test_support::data_path("demos.json"));
    ScriptedBackend backend([](const std::string&, double, int attempt) {
        // First attempt echoes the original (fails non-identity), then a real edit.
        return attempt == 0 ? std::string("ORIGINAL") : std::string("Negated text that differs.");
    });
    ScriptedBackend echo([](const std::string& prompt, double, int attempt) {
        auto marker = std::string("Original Text:\n");
        auto start = prompt.rfind(marker) + marker.size();
        auto text = prompt.substr(start, prompt.rfind("\nPerturbed Text:") - start);
        return attempt < 2 ? text : text + " Not.";
    });
    std::vector<Sample> samples = {{"a", TaskKind::Paraphrase, "src", "The sky is blue."}};
    auto out = perturb_all(samples, {PerturbationKind::Negation}, 1, &echo, &lib);
    EXPECT_EQ(echo.calls(), 3u);
    EXPECT_TRUE(out[0].validation.passed);
    EXPECT_EQ(out[0].generator_model, "scripted");

    PerturbOptions one;
    one.max_attempts = 1;
    auto failed = perturb_all(samples, {PerturbationKind::Negation}, 1, &echo, &lib, one);
    EXPECT_FALSE(failed[0].validation.passed);
    (void)backend;
}

TEST(PerturbAll, BackendFailurePropagates) {
    auto lib = DemoLibrary::load(test_support::data_path("demos.json"));
    ScriptedBackend broken([](const std::string&, double, int) -> std::string { throw BackendError("down"); });
    std::vector<Sample> samples = {{"a", TaskKind::Paraphrase, "src", "The sky is blue."}};
    EXPECT_THROW(perturb_all(samples, {PerturbationKind::Hypernym}, 1, &broken, &lib), BackendError);
}

TEST(PerturbedJsonl, RoundTrip) {
    std::vector<Sample> samples = {{"a", TaskKind::Paraphrase, "src", original()}};
    auto out = perturb_all(samples, {PerturbationKind::SentenceExchange, PerturbationKind::SentenceDeletion}, 3);
    out[0].generator_model = "m";
    auto text = perturbed_to_jsonl(out);
    auto back = parse_perturbed(R"({"_meta":{"seed":3}})" "\n" + text);
    EXPECT_EQ(back, out);
    EXPECT_EQ(perturbed_to_jsonl(back), text);
    EXPECT_THROW(parse_perturbed("{\"sample_id\":1}"), ValidationError);
}

TEST(RuleProperties, RandomTexts) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto rt = oracle::random_text(seed);
        auto ex = sentence_exchange(rt.text, seed);
        EXPECT_EQ(oracle::sorted(oracle::known_sentences(ex)), oracle::sorted(rt.sentences));
        auto we = word_exchange(rt.text, seed);
        EXPECT_EQ(oracle::sorted(words(we)), oracle::sorted(words(rt.text)));
        auto del = sentence_deletion(rt.text);
        auto expect = rt.sentences;
        expect.pop_back();
        EXPECT_EQ(oracle::known_sentences(del), expect);
        auto sp = spelling_mistake(rt.text, seed);
        auto a = words(rt.text), b = words(sp);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(oracle::levenshtein(a[i], b[i]), 2u);
        EXPECT_EQ(oracle::known_sentences(sp).size(), rt.sentences.size());
    }
}
