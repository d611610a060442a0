#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "aspectcheck/corpus.hpp"
#include "aspectcheck/error.hpp"
#include "test_support.hpp"

using namespace aspectcheck;

namespace {

struct GoldBlock {
    std::vector<std::string> sentences;
};

std::vector<GoldBlock> load_gold() {
    std::ifstream in(std::string(ASPECTCHECK_TESTS_DIR) + "/fixtures/splitter_gold.txt");
    std::vector<GoldBlock> blocks(1);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') continue;
        if (line.empty()) {
            if (!blocks.back().sentences.empty()) blocks.emplace_back();
            continue;
        }
        blocks.back().sentences.push_back(line);
    }
    if (blocks.back().sentences.empty()) blocks.pop_back();
    return blocks;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
    return out;
}

}  // namespace

TEST(SplitSentences, HandLabeledFixture) {
    auto blocks = load_gold();
    std::size_t total = 0;
    for (const auto& b : blocks) {
        total += b.sentences.size();
        EXPECT_EQ(split_sentences(join(b.sentences)), b.sentences) << join(b.sentences);
    }
    EXPECT_EQ(total, 50u);
}

TEST(SplitSentences, Basics) {
    EXPECT_EQ(split_sentences("Hello."), std::vector<std::string>{"Hello."});
    EXPECT_EQ(split_sentences("Dr. Smith left. He returned.").size(), 2u);
    EXPECT_EQ(split_sentences("no terminal punctuation").size(), 1u);
    EXPECT_EQ(split_sentences("  One.\n\nTwo!  ").size(), 2u);
}

TEST(SplitSentences, TableTwoOriginal) {
    EXPECT_EQ(split_sentences(test_support::table2_original()).size(), 3u);
}

TEST(SplitSentences, TableTwoExamplesHaveThreeSentences) {
    // Rows that change sentence structure by design are excluded.
    for (const auto& [kind, text] : test_support::table2_perturbed()) {
        if (kind == "sentence_deletion" || kind == "continuation" || kind == "complement" ||
            kind == "complex_sentence")
            continue;
        EXPECT_EQ(split_sentences(text).size(), 3u) << kind << ": " << text;
    }
}

TEST(SplitSentences, JoinReproducesTextUpToWhitespace) {
    std::mt19937 rng(7);
    const std::vector<std::string> words = {"alpha", "Dr.", "beta.", "gamma!", "e.g.", "delta?", "x", "U.S."};
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        int n = 1 + static_cast<int>(rng() % 20);
        for (int i = 0; i < n; ++i) {
            text += words[rng() % words.size()];
            text += (rng() % 3 == 0) ? "  " : " ";
        }
        auto parts = split_sentences(text);
        ASSERT_FALSE(parts.empty());
        std::string joined;
        for (const auto& p : parts) joined += (joined.empty() ? "" : " ") + p;
        auto squash = [](const std::string& s) {
            std::string o;
            for (char c : s)
                if (c != ' ') o += c;
            return o;
        };
        EXPECT_EQ(squash(joined), squash(text));
    }
}

TEST(SentenceSplitter, CustomBlocklist) {
    SentenceSplitter s({"approx."});
    EXPECT_EQ(s.split("It weighs approx. ten kilos. Heavy.").size(), 2u);
    EXPECT_EQ(s.split("Dr. Who.").size(), 2u);
    EXPECT_TRUE(s.is_abbreviation("A."));
    EXPECT_FALSE(s.is_abbreviation("done."));
}

TEST(Samples, ParseAndRoundTrip) {
    std::string jsonl =
        R"({"id":"a","task":"news_summarization","source":"S1","reference":"R1."})"
        "\n"
        R"({"id":"b","task":"paraphrase","source":"S2 \"q\"","reference":"R2 é."})"
        "\n";
    auto samples = parse_samples(jsonl);
    ASSERT_EQ(samples.size(), 2u);
    EXPECT_EQ(samples[0].id, "a");
    EXPECT_EQ(samples[1].task, TaskKind::Paraphrase);
    EXPECT_EQ(samples_to_jsonl(samples), jsonl);
    test_support::TempDir dir;
    auto path = dir.path() / "s.jsonl";
    save_samples(path, samples);
    EXPECT_EQ(load_samples(path), samples);
}

TEST(Samples, ErrorsNameTheLine) {
    auto expect_error = [](const std::string& jsonl, const std::string& needle) {
        try {
            parse_samples(jsonl, "f.jsonl");
            ADD_FAILURE() << "no error for " << jsonl;
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    std::string good = R"({"id":"a","task":"paraphrase","source":"s","reference":"r"})";
    expect_error(good + "\n" + R"({"id":"b","task":"paraphrase","source":"s","reference":""})", "f.jsonl:2");
    expect_error(good + "\n" + good, "duplicate");
    expect_error(R"({"id":"a","task":"poetry","source":"s","reference":"r"})", "poetry");
    expect_error("{not json", "f.jsonl:1");
    EXPECT_THROW(load_samples("/nonexistent/samples.jsonl"), ValidationError);
}

TEST(Samples, ThousandLineCorpus) {
    std::string jsonl;
    for (int i = 0; i < 1000; ++i)
        jsonl += R"({"id":"s)" + std::to_string(i) + R"(","task":"table_to_text","source":"t","reference":"r."})" + "\n";
    auto samples = parse_samples(jsonl);
    ASSERT_EQ(samples.size(), 1000u);
    EXPECT_EQ(samples[999].id, "s999");
}

TEST(TaskKind, NamesAndDescriptions) {
    for (auto k : kAllTaskKinds) {
        EXPECT_EQ(parse_task_kind(to_string(k)), k);
        EXPECT_FALSE(task_description(k).empty());
    }
    EXPECT_THROW(parse_task_kind("poetry"), ValidationError);
}

TEST(ReferenceImprovement, Templates) {
    Sample news{"n", TaskKind::NewsSummarization, "ARTICLE", "ref"};
    auto p = build_reference_improvement_prompt(news);
    ASSERT_TRUE(p);
    EXPECT_EQ(p->rfind("Please summarize the following news article in three to four sentences.", 0), 0u);
    EXPECT_NE(p->find("ARTICLE"), std::string::npos);

    Sample para{"p", TaskKind::Paraphrase, "SRC", "ref"};
    EXPECT_NE(build_reference_improvement_prompt(para)->find("maintaining exactly the same meanings"),
              std::string::npos);

    Sample table{"t", TaskKind::TableToText, "TABLE", "OLD DESC"};
    auto t = build_reference_improvement_prompt(table);
    EXPECT_NE(t->find("TABLE"), std::string::npos);
    EXPECT_NE(t->find("OLD DESC"), std::string::npos);

    Sample dia{"d", TaskKind::DialogueSummarization, "A: hi", "ref"};
    EXPECT_FALSE(build_reference_improvement_prompt(dia).has_value());
}
