#include "aspectcheck/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aspectcheck/abbreviations_data.hpp"
#include "aspectcheck/error.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;

namespace {

struct TaskInfo {
    TaskKind kind;
    std::string_view name;
    std::string_view description;
};

constexpr std::array<TaskInfo, 4> kTasks = {{
    {TaskKind::NewsSummarization, "news_summarization",
     "News summarization: the target text is a short summary of the source news article that "
     "should cover its key points in a few sentences."},
    {TaskKind::DialogueSummarization, "dialogue_summarization",
     "Dialogue summarization: the target text is a short summary of the source dialogue that "
     "should describe what the speakers talked about and decided."},
    {TaskKind::Paraphrase, "paraphrase",
     "Paraphrase generation: the target text is a rephrasing of the source text that should keep "
     "exactly the same meaning."},
    {TaskKind::TableToText, "table_to_text",
     "Table-to-text generation: the target text is a description of the source table that should "
     "express all of the information in the table and nothing else."},
}};

std::vector<std::string> parse_blocklist(std::string_view content) {
    std::vector<std::string> out;
    std::istringstream in{std::string(content)};
    std::string line;
    while (std::getline(in, line)) {
        auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        out.push_back(detail::to_lower(t));
    }
    return out;
}

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

// Strips closing quotes/brackets, including the UTF-8 right quotes.
std::string_view strip_closers(std::string_view token) {
    for (;;) {
        if (!token.empty() && is_closer(token.back())) {
            token.remove_suffix(1);
        } else if (token.size() >= 3 && (token.ends_with("\xE2\x80\x9D") || token.ends_with("\xE2\x80\x99"))) {
            token.remove_suffix(3);
        } else {
            return token;
        }
    }
}

bool looks_like_initialism(std::string_view t) {
    // "J." or "U.S." style: single letters each followed by a period.
    if (t.size() < 2 || t.size() % 2 != 0) return false;
    for (std::size_t i = 0; i < t.size(); i += 2) {
        if (!detail::is_alpha(t[i]) || t[i + 1] != '.') return false;
    }
    return true;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
    for (const auto& t : kTasks)
        if (t.kind == kind) return t.name;
    return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
    for (const auto& t : kTasks)
        if (t.name == name) return t.kind;
    throw ValidationError("unknown task kind '" + std::string(name) + "'");
}

std::string_view task_description(TaskKind kind) {
    for (const auto& t : kTasks)
        if (t.kind == kind) return t.description;
    return {};
}

std::vector<Sample> parse_samples(std::string_view jsonl, std::string_view origin) {
    std::vector<Sample> samples;
    std::set<std::string> ids;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw ValidationError(std::string(origin) + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) fail("expected a JSON object");
        if (obj.contains("_meta")) continue;
        Sample s;
        for (const char* field : {"id", "task", "source", "reference"}) {
            if (!obj.contains(field) || !obj[field].is_string())
                fail(std::string("missing or non-string field '") + field + "'");
        }
        s.id = obj["id"].get<std::string>();
        try {
            s.task = parse_task_kind(obj["task"].get<std::string>());
        } catch (const ValidationError& e) {
            fail(e.what());
        }
        s.source = obj["source"].get<std::string>();
        s.reference = obj["reference"].get<std::string>();
        if (s.id.empty()) fail("empty 'id'");
        if (detail::trim(s.source).empty()) fail("empty 'source'");
        if (detail::trim(s.reference).empty()) fail("empty 'reference'");
        if (!ids.insert(s.id).second) fail("duplicate id '" + s.id + "'");
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<Sample> load_samples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open corpus file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_samples(buf.str(), path.string());
}

std::string samples_to_jsonl(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json obj = {{"id", s.id}, {"task", to_string(s.task)}, {"source", s.source},
                    {"reference", s.reference}};
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_samples(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << samples_to_jsonl(samples);
}

SentenceSplitter::SentenceSplitter() : abbreviations_(parse_blocklist(detail::kAbbreviationsData)) {}

SentenceSplitter::SentenceSplitter(std::vector<std::string> abbreviations) {
    for (auto& a : abbreviations) abbreviations_.push_back(detail::to_lower(a));
}

SentenceSplitter SentenceSplitter::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open abbreviation list " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return SentenceSplitter(parse_blocklist(buf.str()));
}

const SentenceSplitter& SentenceSplitter::standard() {
    static const SentenceSplitter splitter;
    return splitter;
}

bool SentenceSplitter::is_abbreviation(std::string_view token) const {
    while (!token.empty() && is_opener(token.front())) token.remove_prefix(1);
    token = strip_closers(token);
    if (token.empty() || token.back() != '.') return false;
    if (looks_like_initialism(token)) return true;
    auto lower = detail::to_lower(token);
    return std::find(abbreviations_.begin(), abbreviations_.end(), lower) != abbreviations_.end();
}

std::vector<SentenceSplitter::Span> SentenceSplitter::spans(std::string_view text) const {
    std::vector<Span> out;
    std::size_t i = 0;
    std::size_t sentence_start = std::string_view::npos;
    std::size_t last_end = 0;
    while (i < text.size()) {
        while (i < text.size() && detail::is_space(text[i])) ++i;
        if (i >= text.size()) break;
        std::size_t start = i;
        while (i < text.size() && !detail::is_space(text[i])) ++i;
        std::string_view token = text.substr(start, i - start);
        if (sentence_start == std::string_view::npos) sentence_start = start;
        last_end = i;

        std::string_view core = strip_closers(token);
        bool terminal = !core.empty() && (core.back() == '.' || core.back() == '!' || core.back() == '?');
        if (terminal && core.back() == '.' && is_abbreviation(token)) terminal = false;
        if (terminal) {
            out.push_back({sentence_start, i});
            sentence_start = std::string_view::npos;
        }
    }
    if (sentence_start != std::string_view::npos) out.push_back({sentence_start, last_end});
    return out;
}

std::vector<std::string> SentenceSplitter::split(std::string_view text) const {
    std::vector<std::string> sentences;
    for (const auto& s : spans(text)) sentences.emplace_back(text.substr(s.begin, s.end - s.begin));
    return sentences;
}

std::vector<std::string> split_sentences(std::string_view text) {
    return SentenceSplitter::standard().split(text);
}

std::optional<std::string> build_reference_improvement_prompt(const Sample& sample) {
    switch (sample.task) {
    case TaskKind::NewsSummarization:
        return "Please summarize the following news article in three to four sentences.\n"
               "Note that you should use simple and short sentences, avoiding uncommon words and "
               "complex sentences.\n\n"
               "News Article:\n" +
               sample.source + "\nSummary:\n";
    case TaskKind::Paraphrase:
        return "Please rephrase the following original text, maintaining exactly the same meanings. "
               "Note that you should use simple and short sentences, avoiding uncommon words and "
               "complex sentences.\n"
               "Note that you must not add any additional information and not delete or lose any "
               "information of the original text.\n\n"
               "Original Text:\n" +
               sample.source + "\nRephrasing:\n";
    case TaskKind::TableToText:
        return "Please modify the original description to contain exactly the same meanings as the "
               "table, and make the new description fluent and coherent.\n"
               "Note that you should use simple and short sentences, avoiding unnatural passive "
               "voices or intransitive verbs, uncommon words, and complex sentences.\n"
               "Note that you must not add any additional information and not delete or lose any "
               "information of the table.\n\n"
               "Table:\n" +
               sample.source + "\nOriginal Description:\n" + sample.reference +
               "\nNew Description:\n";
    case TaskKind::DialogueSummarization:
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace aspectcheck
