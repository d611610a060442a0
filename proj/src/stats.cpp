#include "aspectcheck/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aspectcheck/error.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;
using nlohmann::ordered_json;

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ValidationError("pearson: length mismatch (" + std::to_string(xs.size()) + " vs " +
                              std::to_string(ys.size()) + ")");
    if (xs.size() < 2) throw ValidationError("pearson: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: constant input has no variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string_view to_string(GroupBy g) { return g == GroupBy::Aspect ? "aspect" : "description_kind"; }

GroupBy parse_group_by(std::string_view text) {
    if (text == "aspect") return GroupBy::Aspect;
    if (text == "description_kind") return GroupBy::DescriptionKind;
    throw ValidationError("unknown grouping '" + std::string(text) + "'");
}

namespace {

bool is_constant(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

CorrelationMatrix correlation_matrix(const std::vector<ScoreRecord>& records, GroupBy group_by) {
    // group label -> alignment key -> mean
    using AlignKey = std::tuple<std::string, TextRef, std::string>;
    std::map<std::string, std::map<AlignKey, double>> groups;
    std::vector<std::string> order;

    std::vector<Aspect> aspects;
    std::set<DescriptionKind> kinds;
    for (const auto& r : records) {
        if (group_by == GroupBy::Aspect) {
            if (std::find(aspects.begin(), aspects.end(), r.criterion.aspect) == aspects.end())
                aspects.push_back(r.criterion.aspect);
        } else {
            kinds.insert(r.criterion.kind);
        }
        std::string label = group_by == GroupBy::Aspect ? std::string(code(r.criterion.aspect))
                                                        : to_string(r.criterion.kind);
        std::string other = group_by == GroupBy::Aspect ? to_string(r.criterion.kind)
                                                        : std::string(code(r.criterion.aspect));
        AlignKey key{r.form.label(), r.text_ref, other};
        if (!groups[label].emplace(key, r.mean).second)
            throw ValidationError("duplicate score for " + r.text_ref.sample_id + "/" + r.text_ref.variant() +
                                  " under " + label + "/" + other);
    }
    if (group_by == GroupBy::Aspect) {
        for (auto a : kReportAspectOrder)
            if (std::find(aspects.begin(), aspects.end(), a) != aspects.end()) order.emplace_back(code(a));
    } else {
        for (const auto& k : kinds) order.push_back(to_string(k));
    }

    CorrelationMatrix m;
    m.labels = order;
    const std::size_t n = order.size();
    m.values.assign(n, std::vector<double>(n, 1.0));
    m.support.assign(n, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        m.support[i][i] = groups[order[i]].size();
        for (std::size_t j = i + 1; j < n; ++j) {
            std::vector<double> xs, ys;
            const auto& gj = groups[order[j]];
            for (const auto& [key, value] : groups[order[i]]) {
                auto it = gj.find(key);
                if (it == gj.end()) continue;
                xs.push_back(value);
                ys.push_back(it->second);
            }
            if (xs.size() < 2)
                throw ValidationError("groups " + order[i] + " and " + order[j] + " share " +
                                      std::to_string(xs.size()) + " scored texts; need at least 2");
            double r = (is_constant(xs) || is_constant(ys)) ? std::numeric_limits<double>::quiet_NaN()
                                                            : pearson(xs, ys);
            m.values[i][j] = m.values[j][i] = r;
            m.support[i][j] = m.support[j][i] = xs.size();
        }
    }
    return m;
}

std::string correlations_to_csv(const CorrelationMatrix& m) {
    std::string out = "group";
    for (const auto& l : m.labels) out += "," + l;
    out += '\n';
    char buf[32];
    for (std::size_t i = 0; i < m.size(); ++i) {
        out += m.labels[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (std::isnan(m.values[i][j])) {
                out += ",NA";
            } else {
                std::snprintf(buf, sizeof buf, ",%.4f", m.values[i][j]);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

std::string_view to_string(Choice c) {
    switch (c) {
    case Choice::A: return "A";
    case Choice::B: return "B";
    case Choice::C: return "C";
    case Choice::D: return "D";
    }
    return "?";
}

std::optional<Choice> try_parse_choice(std::string_view text) {
    if (text == "A") return Choice::A;
    if (text == "B") return Choice::B;
    if (text == "C") return Choice::C;
    if (text == "D") return Choice::D;
    return std::nullopt;
}

Choice parse_choice(std::string_view text) {
    if (auto c = try_parse_choice(text)) return *c;
    throw ValidationError("invalid choice '" + std::string(text) + "'; expected A, B, C or D");
}

std::string annotation_record_to_json(const AnnotationRecord& r) {
    ordered_json obj;
    obj["task_id"] = r.task_id;
    obj["sample_id"] = r.pair.sample_id;
    obj["perturbation"] = to_string(r.pair.kind);
    obj["aspect"] = code(r.criterion.aspect);
    obj["description_kind"] = to_string(r.criterion.kind);
    obj["annotator_id"] = r.annotator_id;
    obj["raw_choice"] = to_string(r.raw_choice);
    obj["choice"] = to_string(r.choice);
    obj["timestamp"] = r.timestamp;
    return obj.dump();
}

std::string annotations_to_jsonl(const std::vector<AnnotationRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += annotation_record_to_json(r);
        out += '\n';
    }
    return out;
}

AnnotationRecord parse_annotation_record(std::string_view line) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
    try {
        AnnotationRecord r;
        r.task_id = obj.at("task_id").get<std::string>();
        r.pair.sample_id = obj.at("sample_id").get<std::string>();
        r.pair.kind = parse_perturbation_kind(obj.at("perturbation").get<std::string>());
        r.criterion.aspect = parse_aspect(obj.at("aspect").get<std::string>());
        r.criterion.kind = parse_description_kind(obj.at("description_kind").get<std::string>());
        r.annotator_id = obj.at("annotator_id").get<std::string>();
        r.raw_choice = parse_choice(obj.at("raw_choice").get<std::string>());
        r.choice = parse_choice(obj.at("choice").get<std::string>());
        r.timestamp = obj.value("timestamp", "");
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad annotation record: ") + e.what());
    }
}

std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl, std::string_view origin) {
    std::vector<AnnotationRecord> out;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty() || line.find("\"_meta\"") != std::string::npos) continue;
        try {
            out.push_back(parse_annotation_record(line));
        } catch (const ValidationError& e) {
            throw ValidationError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open annotations file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str(), path.string());
}

namespace {

std::array<std::size_t, 4> tally(const std::vector<Choice>& votes) {
    std::array<std::size_t, 4> counts{};
    for (auto c : votes) ++counts[static_cast<std::size_t>(c)];
    return counts;
}

using ItemKey = std::pair<PairId, CriterionKey>;

std::map<ItemKey, std::vector<Choice>> group_items(const std::vector<AnnotationRecord>& records) {
    std::map<ItemKey, std::vector<Choice>> items;
    for (const auto& r : records) items[{r.pair, r.criterion}].push_back(r.choice);
    return items;
}

std::string cell_name(const CellKey& cell) {
    return std::string(to_string(std::get<0>(cell))) + "/" + std::string(code(std::get<1>(cell))) + "/" +
           to_string(std::get<2>(cell));
}

}  // namespace

double item_consistency(const std::vector<Choice>& votes) {
    if (votes.empty()) throw ValidationError("consistency of an empty vote set");
    auto counts = tally(votes);
    std::size_t top = std::max({counts[0], counts[1], counts[2]});
    return static_cast<double>(top) / static_cast<double>(votes.size());
}

double annotation_consistency(const std::vector<AnnotationRecord>& records) {
    auto items = group_items(records);
    if (items.empty()) throw ValidationError("no annotation records");
    double sum = 0.0;
    for (const auto& [key, votes] : items) sum += item_consistency(votes);
    return sum / static_cast<double>(items.size());
}

std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::A: return "A";
    case Outcome::B: return "B";
    case Outcome::C: return "C";
    case Outcome::Tied: return "tied";
    case Outcome::Uncertain: return "uncertain";
    }
    return "?";
}

Outcome plurality_of(const std::vector<Choice>& votes) {
    if (votes.empty()) throw ValidationError("plurality of an empty vote set");
    auto counts = tally(votes);
    std::size_t top = std::max({counts[0], counts[1], counts[2]});
    if (counts[3] > top) return Outcome::Uncertain;
    int winners = 0;
    Outcome winner = Outcome::Tied;
    for (std::size_t i = 0; i < 3; ++i) {
        if (counts[i] == top) {
            ++winners;
            winner = static_cast<Outcome>(i);
        }
    }
    return winners == 1 ? winner : Outcome::Tied;
}

std::string_view to_string(Judgment j) {
    switch (j) {
    case Judgment::Affected: return "affected";
    case Judgment::Unaffected: return "unaffected";
    case Judgment::Tied: return "tied";
    case Judgment::Uncertain: return "uncertain";
    }
    return "?";
}

Judgment judgment_of(Outcome o) {
    switch (o) {
    case Outcome::A: return Judgment::Affected;
    case Outcome::B:
    case Outcome::C: return Judgment::Unaffected;
    case Outcome::Tied: return Judgment::Tied;
    case Outcome::Uncertain: return Judgment::Uncertain;
    }
    return Judgment::Uncertain;
}

std::string_view to_string(VoteScheme s) { return s == VoteScheme::VoteVote ? "vote_vote" : "vote_all"; }

std::map<CellKey, Judgment> plurality(const std::vector<AnnotationRecord>& records, VoteScheme scheme,
                                      const PluralityOptions& options) {
    // cell -> pair -> votes
    std::map<CellKey, std::map<PairId, std::vector<Choice>>> cells;
    for (const auto& r : records)
        cells[{r.pair.kind, r.criterion.aspect, r.criterion.kind}][r.pair].push_back(r.choice);

    std::map<CellKey, Judgment> out;
    for (const auto& [cell, pairs] : cells) {
        if (options.pairs_per_cell && pairs.size() != *options.pairs_per_cell)
            throw ValidationError("cell " + cell_name(cell) + " has " + std::to_string(pairs.size()) +
                                  " annotated pairs, expected " + std::to_string(*options.pairs_per_cell));
        std::vector<Choice> votes;
        for (const auto& [pair, pv] : pairs) {
            if (options.annotators_per_pair && pv.size() != *options.annotators_per_pair)
                throw ValidationError("cell " + cell_name(cell) + " pair " + pair.str() + " has " +
                                      std::to_string(pv.size()) + " annotations, expected " +
                                      std::to_string(*options.annotators_per_pair));
            if (scheme == VoteScheme::VoteAll) {
                votes.insert(votes.end(), pv.begin(), pv.end());
            } else {
                // A tied or uncertain pair carries no directional vote upward.
                auto o = plurality_of(pv);
                votes.push_back(o == Outcome::Tied || o == Outcome::Uncertain ? Choice::D : static_cast<Choice>(o));
            }
        }
        out[cell] = judgment_of(plurality_of(votes));
    }
    return out;
}

double match_rate(const std::map<CellKey, Judgment>& judgments, const ExpectationColumn& expectation) {
    if (judgments.empty()) throw ValidationError("match rate of an empty judgment set");
    std::size_t hits = 0;
    for (const auto& [cell, j] : judgments) {
        bool expected = expectation[index_of(std::get<0>(cell))][index_of(std::get<1>(cell))];
        if ((j == Judgment::Affected && expected) || (j == Judgment::Unaffected && !expected)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(judgments.size());
}

AnnotationStats annotation_stats(const std::vector<AnnotationRecord>& records, const ExpectationColumn& expectation,
                                 const PluralityOptions& options) {
    AnnotationStats s;
    s.records = records.size();
    s.consistency = annotation_consistency(records);
    s.items = group_items(records).size();

    std::map<DescriptionKind, std::vector<AnnotationRecord>> by_kind;
    for (const auto& r : records) by_kind[r.criterion.kind].push_back(r);
    for (const auto& [kind, subset] : by_kind) {
        AnnotationStats::PerKind pk;
        pk.consistency = annotation_consistency(subset);
        pk.items = group_items(subset).size();
        auto vv = plurality(subset, VoteScheme::VoteVote, options);
        auto va = plurality(subset, VoteScheme::VoteAll, options);
        pk.cells = vv.size();
        pk.match_vote_vote = match_rate(vv, expectation);
        pk.match_vote_all = match_rate(va, expectation);
        s.per_description_kind[to_string(kind)] = pk;
    }
    return s;
}

std::string annotation_stats_to_json(const AnnotationStats& s) {
    ordered_json obj;
    obj["consistency"] = s.consistency;
    obj["items"] = s.items;
    obj["records"] = s.records;
    ordered_json per = ordered_json::object();
    for (const auto& [kind, pk] : s.per_description_kind) {
        per[kind] = {{"consistency", pk.consistency},
                     {"items", pk.items},
                     {"cells", pk.cells},
                     {"match_rate", {{"vote_vote", pk.match_vote_vote}, {"vote_all", pk.match_vote_all}}}};
    }
    obj["by_description_kind"] = per;
    return obj.dump(2) + "\n";
}

}  // namespace aspectcheck
