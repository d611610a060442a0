#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aspectcheck {

enum class TaskKind { NewsSummarization, DialogueSummarization, Paraphrase, TableToText };

inline constexpr std::array<TaskKind, 4> kAllTaskKinds = {
    TaskKind::NewsSummarization, TaskKind::DialogueSummarization, TaskKind::Paraphrase,
    TaskKind::TableToText};

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Text shown to the evaluator as "Task Type Description".
std::string_view task_description(TaskKind kind);

struct Sample {
    std::string id;
    TaskKind task = TaskKind::NewsSummarization;
    std::string source;
    std::string reference;

    bool operator==(const Sample&) const = default;
};

/// Reads samples.jsonl. Errors name the offending line number.
std::vector<Sample> load_samples(const std::filesystem::path& path);
std::vector<Sample> parse_samples(std::string_view jsonl, std::string_view origin = "<memory>");
void save_samples(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::string samples_to_jsonl(const std::vector<Sample>& samples);

/// Rule-based sentence splitter: terminal punctuation plus an abbreviation blocklist.
class SentenceSplitter {
public:
    /// Uses the blocklist compiled in from data/abbreviations.txt.
    SentenceSplitter();
    explicit SentenceSplitter(std::vector<std::string> abbreviations);

    static SentenceSplitter from_file(const std::filesystem::path& path);
    static const SentenceSplitter& standard();

    struct Span {
        std::size_t begin = 0;
        std::size_t end = 0;  // one past the sentence's last character
    };

    std::vector<std::string> split(std::string_view text) const;
    /// Byte ranges of the sentences within `text`, in order.
    std::vector<Span> spans(std::string_view text) const;

    /// True when `token` (one whitespace-delimited word) ends with "." but
    /// does not end a sentence.
    bool is_abbreviation(std::string_view token) const;

private:
    std::vector<std::string> abbreviations_;
};

std::vector<std::string> split_sentences(std::string_view text);

/// Reference-improvement prompt for the data-preparation step. Dialogue
/// summarization keeps its human-written references, so it has no prompt.
std::optional<std::string> build_reference_improvement_prompt(const Sample& sample);

}  // namespace aspectcheck
