#include "aspectcheck/testkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "aspectcheck/error.hpp"
#include "rng.hpp"
#include "text_util.hpp"

namespace aspectcheck {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_all(const std::filesystem::path& path, std::string_view what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + std::string(what) + " " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::pair<PerturbationKind, Aspect>> parse_pairs(const json& arr) {
    std::vector<std::pair<PerturbationKind, Aspect>> out;
    for (const auto& item : arr)
        out.emplace_back(parse_perturbation_kind(item.at("kind").get<std::string>()),
                         parse_aspect(item.at("aspect").get<std::string>()));
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::string(detail::trim(field)));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::string(detail::trim(field)));
    return out;
}

ordered_json verdict_to_json(const Verdict& v) {
    ordered_json j;
    j["form"] = v.form;
    j["description_kind"] = to_string(v.description_kind);
    j["perturbation"] = to_string(v.kind);
    j["aspect"] = code(v.aspect);
    j["test"] = to_string(v.test);
    j["pass"] = v.pass;
    j["threshold"] = v.threshold;
    j["delta"] = v.delta;
    j["n"] = v.n;
    if (v.ci) j["ci"] = {{"low", v.ci->low}, {"high", v.ci->high}};
    return j;
}

ordered_json rates_to_json(const TestRates& r) {
    auto one = [](const PassRate& p) {
        ordered_json j;
        j["total"] = p.total;
        j["passed"] = p.passed;
        j["rate"] = p.rate() ? ordered_json(*p.rate()) : ordered_json(nullptr);
        return j;
    };
    ordered_json j;
    j["directional"] = one(r.directional);
    j["invariance"] = one(r.invariance);
    return j;
}

}  // namespace

std::string_view to_string(CellClass c) {
    switch (c) {
    case CellClass::Affected: return "affected";
    case CellClass::Unaffected: return "unaffected";
    case CellClass::Excluded: return "excluded";
    }
    return "unknown";
}

std::string_view to_string(TestKind test) {
    return test == TestKind::DirectionalExpectation ? "directional" : "invariance";
}

ExpectationMatrix ExpectationMatrix::parse(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("expectation matrix: malformed JSON: ") + e.what());
    }
    ExpectationMatrix m;
    std::array<std::array<bool, kAspectCount>, kPerturbationCount> seen{};
    try {
        for (const auto& c : doc.at("cells")) {
            ExpectationCell cell;
            cell.kind = parse_perturbation_kind(c.at("kind").get<std::string>());
            cell.aspect = parse_aspect(c.at("aspect").get<std::string>());
            cell.human = c.at("human").get<bool>();
            cell.expectation = c.at("expectation").get<bool>();
            auto& flag = seen[index_of(cell.kind)][index_of(cell.aspect)];
            if (flag)
                throw ValidationError("expectation matrix: duplicate cell (" + std::string(to_string(cell.kind)) +
                                      ", " + std::string(code(cell.aspect)) + ")");
            flag = true;
            m.cells_[index_of(cell.kind)][index_of(cell.aspect)] = cell;
        }
        if (doc.contains("overrides")) {
            const auto& o = doc["overrides"];
            if (o.contains("add")) m.overrides_.add = parse_pairs(o["add"]);
            if (o.contains("remove")) m.overrides_.remove = parse_pairs(o["remove"]);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("expectation matrix: ") + e.what());
    }
    for (auto k : kAllPerturbationKinds)
        for (auto a : kAllAspects)
            if (!seen[index_of(k)][index_of(a)])
                throw ValidationError("expectation matrix: missing cell (" + std::string(to_string(k)) + ", " +
                                      std::string(code(a)) + ")");
    return m;
}

ExpectationMatrix ExpectationMatrix::load(const std::filesystem::path& path) {
    return parse(read_all(path, "expectation matrix"));
}

ExpectationMatrix ExpectationMatrix::from_columns(const ExpectationColumn& human, const ExpectationColumn& expectation) {
    ExpectationMatrix m;
    for (auto k : kAllPerturbationKinds)
        for (auto a : kAllAspects)
            m.cells_[index_of(k)][index_of(a)] = {k, a, human[index_of(k)][index_of(a)],
                                                  expectation[index_of(k)][index_of(a)]};
    return m;
}

std::vector<Aspect> ExpectationMatrix::affected(PerturbationKind kind) const {
    std::vector<Aspect> out;
    for (auto a : kAllAspects)
        if (at(kind, a) == CellClass::Affected) out.push_back(a);
    return out;
}

std::vector<Aspect> ExpectationMatrix::unaffected(PerturbationKind kind) const {
    std::vector<Aspect> out;
    for (auto a : kAllAspects)
        if (at(kind, a) == CellClass::Unaffected) out.push_back(a);
    return out;
}

ExpectationColumn ExpectationMatrix::expectation_column() const {
    ExpectationColumn out{};
    for (auto k : kAllPerturbationKinds)
        for (auto a : kAllAspects) out[index_of(k)][index_of(a)] = cell(k, a).expectation;
    return out;
}

ExpectationColumn ExpectationMatrix::human_column() const {
    ExpectationColumn out{};
    for (auto k : kAllPerturbationKinds)
        for (auto a : kAllAspects) out[index_of(k)][index_of(a)] = cell(k, a).human;
    return out;
}

ExpectationColumn derive_expectations(const AspectTaxonomy& taxonomy, const ExpectationOverrides& overrides) {
    ExpectationColumn out{};
    for (auto k : kAllPerturbationKinds) {
        auto target = target_aspect(k);
        out[index_of(k)][index_of(target)] = true;
        for (auto a : taxonomy.ancestors(target)) out[index_of(k)][index_of(a)] = true;
    }
    for (const auto& [k, a] : overrides.add) out[index_of(k)][index_of(a)] = true;
    for (const auto& [k, a] : overrides.remove) out[index_of(k)][index_of(a)] = false;
    return out;
}

std::vector<DeltaCell> compute_deltas(const std::vector<ScoreRecord>& records) {
    using OrigKey = std::tuple<std::string, std::string, CriterionKey>;  // form, sample, criterion
    std::map<OrigKey, double> originals;
    for (const auto& r : records) {
        if (r.text_ref.kind) continue;
        if (!originals.emplace(OrigKey{r.form.label(), r.text_ref.sample_id, r.criterion}, r.mean).second)
            throw ValidationError("duplicate original score for sample '" + r.text_ref.sample_id + "' (" +
                                  std::string(code(r.criterion.aspect)) + ", " + to_string(r.criterion.kind) + ")");
    }

    using CellKey = std::tuple<std::string, DescriptionKind, PerturbationKind, Aspect>;
    std::map<CellKey, DeltaCell> cells;
    std::set<std::tuple<std::string, std::string, CriterionKey, PerturbationKind>> seen;
    for (const auto& r : records) {
        if (!r.text_ref.kind) continue;
        const auto form = r.form.label();
        if (!seen.emplace(form, r.text_ref.sample_id, r.criterion, *r.text_ref.kind).second)
            throw ValidationError("duplicate " + r.text_ref.variant() + " score for sample '" + r.text_ref.sample_id +
                                  "' (" + std::string(code(r.criterion.aspect)) + ", " +
                                  to_string(r.criterion.kind) + ")");
        auto it = originals.find({form, r.text_ref.sample_id, r.criterion});
        if (it == originals.end())
            throw ValidationError("no original score for sample '" + r.text_ref.sample_id + "' under (" +
                                  std::string(code(r.criterion.aspect)) + ", " + to_string(r.criterion.kind) +
                                  ") and form " + form + ", needed by its " + r.text_ref.variant() + " score");
        CellKey key{form, r.criterion.kind, *r.text_ref.kind, r.criterion.aspect};
        auto& cell = cells[key];
        if (cell.n == 0) {
            cell.form = form;
            cell.description_kind = r.criterion.kind;
            cell.kind = *r.text_ref.kind;
            cell.aspect = r.criterion.aspect;
        }
        cell.differences.push_back(it->second - r.mean);
        ++cell.n;
    }
    std::vector<DeltaCell> out;
    out.reserve(cells.size());
    for (auto& [_, cell] : cells) {
        double sum = 0.0;
        for (double d : cell.differences) sum += d;
        cell.delta = sum / static_cast<double>(cell.n);
        out.push_back(std::move(cell));
    }
    return out;
}

void Thresholds::validate() const {
    if (!(tau_f >= 0.0) || !(tau_t > tau_f) || !std::isfinite(tau_t))
        throw ValidationError("thresholds need tau_t > tau_f >= 0");
}

double Verdict::violation() const {
    if (test == TestKind::DirectionalExpectation) return std::max(0.0, threshold - delta);
    return std::max(0.0, std::abs(delta) - threshold);
}

ConfidenceInterval bootstrap_mean_ci(const std::vector<double>& values, int iterations, double level,
                                     std::uint64_t seed) {
    if (values.empty()) throw ValidationError("bootstrap needs at least one value");
    if (iterations < 1 || !(level > 0.0 && level < 1.0))
        throw ValidationError("bootstrap needs iterations >= 1 and level in (0, 1)");
    detail::Rng rng(seed);
    std::vector<double> means(static_cast<std::size_t>(iterations));
    for (auto& m : means) {
        double sum = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) sum += values[rng.below(values.size())];
        m = sum / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - level) / 2.0;
    auto pick = [&](double q) {
        auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1) + 0.5));
        return means[std::min(idx, means.size() - 1)];
    };
    return {pick(tail), pick(1.0 - tail)};
}

std::vector<Verdict> run_tests(const std::vector<DeltaCell>& deltas, const ExpectationMatrix& matrix,
                               const Thresholds& thresholds, const BootstrapOptions& bootstrap) {
    thresholds.validate();
    std::vector<Verdict> out;
    for (const auto& d : deltas) {
        const auto cls = matrix.at(d.kind, d.aspect);
        if (cls == CellClass::Excluded) continue;
        Verdict v;
        v.form = d.form;
        v.description_kind = d.description_kind;
        v.kind = d.kind;
        v.aspect = d.aspect;
        v.delta = d.delta;
        v.n = d.n;
        if (cls == CellClass::Affected) {
            v.test = TestKind::DirectionalExpectation;
            v.threshold = thresholds.tau_t;
            v.pass = d.delta >= thresholds.tau_t;
        } else {
            v.test = TestKind::Invariance;
            v.threshold = thresholds.tau_f;
            v.pass = std::abs(d.delta) <= thresholds.tau_f;
        }
        if (bootstrap.iterations > 0 && !d.differences.empty()) {
            auto seed = detail::mix64(bootstrap.seed ^ (index_of(d.kind) * 64 + index_of(d.aspect)));
            v.ci = bootstrap_mean_ci(d.differences, bootstrap.iterations, bootstrap.level, seed);
        }
        out.push_back(std::move(v));
    }
    return out;
}

VerdictSummary summarize(const std::vector<Verdict>& verdicts, std::size_t max_offenders) {
    if (verdicts.empty()) throw ValidationError("no verdicts to summarize");
    VerdictSummary s;
    auto bump = [](TestRates& r, const Verdict& v) {
        auto& p = v.test == TestKind::DirectionalExpectation ? r.directional : r.invariance;
        ++p.total;
        p.passed += v.pass;
    };
    for (const auto& v : verdicts) {
        bump(s.overall, v);
        bump(s.per_aspect[v.aspect], v);
        bump(s.per_kind[v.kind], v);
        bump(s.per_description_kind[v.description_kind], v);
        if (!v.pass)
            (v.test == TestKind::DirectionalExpectation ? s.directional_offenders : s.invariance_offenders).push_back(v);
    }
    for (auto* list : {&s.directional_offenders, &s.invariance_offenders}) {
        std::stable_sort(list->begin(), list->end(),
                         [](const Verdict& a, const Verdict& b) { return a.violation() > b.violation(); });
        if (list->size() > max_offenders) list->resize(max_offenders);
    }
    return s;
}

std::string format_delta(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    std::string out(buf);
    if (out == "-0.00") out = "0.00";
    return out;
}

std::string deltas_to_csv(const std::vector<DeltaCell>& deltas) {
    std::set<std::string> forms;
    for (const auto& d : deltas) forms.insert(d.form);
    if (forms.size() > 1) throw ValidationError("deltas.csv holds one evaluation form; got " + std::to_string(forms.size()));

    std::map<std::pair<DescriptionKind, PerturbationKind>, std::array<std::optional<double>, kAspectCount>> rows;
    for (const auto& d : deltas) rows[{d.description_kind, d.kind}][index_of(d.aspect)] = d.delta;
    std::string out = "description_kind,perturbation";
    for (auto a : kReportAspectOrder) out += "," + std::string(code(a));
    out += "\n";
    for (const auto& [key, values] : rows) {
        out += to_string(key.first) + "," + std::string(to_string(key.second));
        for (auto a : kReportAspectOrder) {
            out += ",";
            if (values[index_of(a)]) out += format_delta(*values[index_of(a)]);
        }
        out += "\n";
    }
    return out;
}

std::vector<DeltaCell> parse_deltas_csv(std::string_view csv, std::string_view origin) {
    std::istringstream in{std::string(csv)};
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::optional<Aspect>> columns;
    bool have_header = false;
    std::vector<DeltaCell> out;
    while (std::getline(in, line)) {
        ++line_no;
        auto where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
        if (detail::trim(line).empty() || line[0] == '#') continue;
        auto fields = split_csv_line(line);
        if (!have_header) {
            if (fields.size() < 3 || fields[0] != "description_kind" || fields[1] != "perturbation")
                throw ValidationError(where + "expected header 'description_kind,perturbation,<aspects>'");
            for (std::size_t i = 2; i < fields.size(); ++i) columns.push_back(parse_aspect(fields[i]));
            have_header = true;
            continue;
        }
        if (fields.size() != columns.size() + 2)
            throw ValidationError(where + "expected " + std::to_string(columns.size() + 2) + " fields");
        try {
            auto dk = parse_description_kind(fields[0]);
            auto kind = parse_perturbation_kind(fields[1]);
            for (std::size_t i = 0; i < columns.size(); ++i) {
                const auto& f = fields[i + 2];
                if (f.empty()) continue;
                DeltaCell d;
                d.description_kind = dk;
                d.kind = kind;
                d.aspect = *columns[i];
                std::size_t used = 0;
                d.delta = std::stod(f, &used);
                if (used != f.size()) throw ValidationError("bad number '" + f + "'");
                out.push_back(std::move(d));
            }
        } catch (const std::invalid_argument&) {
            throw ValidationError(where + "bad number");
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    if (!have_header) throw ValidationError(std::string(origin) + ": empty deltas file");
    return out;
}

std::vector<DeltaCell> load_deltas_csv(const std::filesystem::path& path) {
    return parse_deltas_csv(read_all(path, "deltas file"), path.string());
}

std::string verdicts_to_json(const std::vector<Verdict>& verdicts, const VerdictSummary& summary,
                             const Thresholds& thresholds) {
    ordered_json doc;
    doc["thresholds"] = {{"tau_t", thresholds.tau_t}, {"tau_f", thresholds.tau_f}};
    ordered_json s;
    s["overall"] = rates_to_json(summary.overall);
    ordered_json per_aspect;
    for (auto a : kReportAspectOrder)
        if (auto it = summary.per_aspect.find(a); it != summary.per_aspect.end())
            per_aspect[std::string(code(a))] = rates_to_json(it->second);
    s["per_aspect"] = per_aspect;
    ordered_json per_kind;
    for (const auto& [k, r] : summary.per_kind) per_kind[std::string(to_string(k))] = rates_to_json(r);
    s["per_kind"] = per_kind;
    ordered_json per_dk;
    for (const auto& [k, r] : summary.per_description_kind) per_dk[to_string(k)] = rates_to_json(r);
    s["per_description_kind"] = per_dk;
    ordered_json dir = ordered_json::array(), inv = ordered_json::array();
    for (const auto& v : summary.directional_offenders) dir.push_back(verdict_to_json(v));
    for (const auto& v : summary.invariance_offenders) inv.push_back(verdict_to_json(v));
    s["directional_offenders"] = dir;
    s["invariance_offenders"] = inv;
    doc["summary"] = s;
    ordered_json list = ordered_json::array();
    for (const auto& v : verdicts) list.push_back(verdict_to_json(v));
    doc["verdicts"] = list;
    return doc.dump(2) + "\n";
}

std::vector<Verdict> parse_verdicts_json(std::string_view json_text) {
    std::vector<Verdict> out;
    try {
        auto doc = json::parse(json_text);
        for (const auto& j : doc.at("verdicts")) {
            Verdict v;
            v.form = j.value("form", "");
            v.description_kind = parse_description_kind(j.at("description_kind").get<std::string>());
            v.kind = parse_perturbation_kind(j.at("perturbation").get<std::string>());
            v.aspect = parse_aspect(j.at("aspect").get<std::string>());
            auto test = j.at("test").get<std::string>();
            if (test == "directional") v.test = TestKind::DirectionalExpectation;
            else if (test == "invariance") v.test = TestKind::Invariance;
            else throw ValidationError("unknown test '" + test + "'");
            v.pass = j.at("pass").get<bool>();
            v.threshold = j.at("threshold").get<double>();
            v.delta = j.at("delta").get<double>();
            v.n = j.value("n", std::size_t{0});
            if (j.contains("ci")) v.ci = ConfidenceInterval{j["ci"].at("low").get<double>(), j["ci"].at("high").get<double>()};
            out.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("verdicts: ") + e.what());
    }
    return out;
}

std::vector<Verdict> load_verdicts(const std::filesystem::path& path) {
    return parse_verdicts_json(read_all(path, "verdicts file"));
}

}  // namespace aspectcheck
