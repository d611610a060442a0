#pragma once

// Seeded random multi-sentence texts whose sentence boundaries are known by
// construction, so checks do not depend on the library's splitter.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace oracle {

struct RandomText {
    std::vector<std::string> sentences;
    std::string text;
};

inline RandomText random_text(std::uint64_t seed) {
    static const char* vocab[] = {"river",  "market", "yellow", "quickly", "garden", "teacher", "bright",
                                  "window", "seven",  "under",  "station", "quiet",  "planned", "report",
                                  "city",   "old",    "new",    "with",    "near",   "small",   "people",
                                  "road",   "cheap",  "houses", "because", "early",  "winter",  "strong"};
    static const char* ends[] = {".", ".", ".", "!", "?"};
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
    RandomText out;
    std::size_t n_sentences = 2 + pick(5);
    for (std::size_t s = 0; s < n_sentences; ++s) {
        std::size_t n_words = 4 + pick(9);
        std::string sentence;
        for (std::size_t w = 0; w < n_words; ++w) {
            std::string word = vocab[pick(std::size(vocab))];
            if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
            if (w > 0) sentence += ' ';
            sentence += word;
            if (w + 1 < n_words && pick(8) == 0) sentence += ',';
        }
        sentence += ends[pick(std::size(ends))];
        out.sentences.push_back(sentence);
        if (s > 0) out.text += ' ';
        out.text += sentence;
    }
    return out;
}

/// Splits a text produced from RandomText pieces: a sentence ends at a word ending in . ! or ?
inline std::vector<std::string> known_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = text.find(' ', i);
        if (j == std::string::npos) j = text.size();
        std::string word = text.substr(i, j - i);
        if (!cur.empty()) cur += ' ';
        cur += word;
        char last = word.empty() ? '\0' : word.back();
        if (last == '.' || last == '!' || last == '?') {
            out.push_back(cur);
            cur.clear();
        }
        i = j + 1;
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace oracle
