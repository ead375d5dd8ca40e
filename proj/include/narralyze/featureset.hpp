#pragma once

// Layer-tagged feature matrix: assembly, zero-fill policy, demographic
// encoding, the seven feature combinations and CSV persistence.

#include "narralyze/coherence.hpp"
#include "narralyze/corpus.hpp"
#include "narralyze/error.hpp"
#include "narralyze/evaluator.hpp"
#include "narralyze/lexicon.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace narralyze::features {

enum class Layer { B, L1, L2, L3 };
inline constexpr std::array<Layer, 4> kLayers = {Layer::B, Layer::L1, Layer::L2, Layer::L3};

inline std::string_view to_string(Layer l) {
    switch (l) {
    case Layer::B: return "B";
    case Layer::L1: return "L1";
    case Layer::L2: return "L2";
    case Layer::L3: return "L3";
    }
    return "?";
}

inline std::optional<Layer> parse_layer(std::string_view s) {
    for (auto l : kLayers)
        if (to_string(l) == s) return l;
    return std::nullopt;
}

enum class Combo { B, L1, L2, L3, B_L1, B_L1_L2, B_L1_L2_L3 };
inline constexpr std::array<Combo, 7> kCombos = {Combo::B,    Combo::L1,      Combo::L2,        Combo::L3,
                                                 Combo::B_L1, Combo::B_L1_L2, Combo::B_L1_L2_L3};

inline std::string_view to_string(Combo c) {
    switch (c) {
    case Combo::B: return "B";
    case Combo::L1: return "L1";
    case Combo::L2: return "L2";
    case Combo::L3: return "L3";
    case Combo::B_L1: return "B+L1";
    case Combo::B_L1_L2: return "B+L1+L2";
    case Combo::B_L1_L2_L3: return "B+L1+L2+L3";
    }
    return "?";
}

/// Accepts "B+L1" as well as the identifier spelling "B_L1".
inline std::optional<Combo> parse_combo(std::string s) {
    std::replace(s.begin(), s.end(), '_', '+');
    for (auto c : kCombos)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

inline std::vector<Layer> layers_of(Combo c) {
    switch (c) {
    case Combo::B: return {Layer::B};
    case Combo::L1: return {Layer::L1};
    case Combo::L2: return {Layer::L2};
    case Combo::L3: return {Layer::L3};
    case Combo::B_L1: return {Layer::B, Layer::L1};
    case Combo::B_L1_L2: return {Layer::B, Layer::L1, Layer::L2};
    case Combo::B_L1_L2_L3: return {Layer::B, Layer::L1, Layer::L2, Layer::L3};
    }
    return {};
}

struct Column {
    std::string name;
    Layer layer = Layer::B;
    bool flag = false;  // missingness / degeneracy indicator
    friend bool operator==(const Column&, const Column&) = default;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Per-condition targets; NaN score and level -1 where the instrument is absent.
struct Targets {
    std::array<std::vector<double>, 3> score;
    std::array<std::vector<int>, 3> level;

    const std::vector<double>& scores(Condition c) const { return score[static_cast<std::size_t>(c)]; }
    const std::vector<int>& levels(Condition c) const { return level[static_cast<std::size_t>(c)]; }
    friend bool operator==(const Targets&, const Targets&) = default;
};

class FeatureMatrix {
public:
    std::vector<std::string> sample_ids;
    std::vector<Column> columns;
    std::vector<double> values;         // row-major
    std::vector<std::uint8_t> missing;  // same shape; 1 = cell was missing before zero-fill
    Targets targets;

    std::size_t rows() const { return sample_ids.size(); }
    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }

    std::size_t count(Layer l) const {
        return static_cast<std::size_t>(
            std::count_if(columns.begin(), columns.end(), [&](const Column& c) { return c.layer == l; }));
    }
    bool has_layer(Layer l) const { return count(l) > 0; }

    std::optional<std::size_t> column_index(std::string_view name) const {
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (columns[c].name == name) return c;
        return std::nullopt;
    }

    std::vector<double> row(std::size_t r) const {
        return {values.begin() + static_cast<std::ptrdiff_t>(r * cols()),
                values.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols())};
    }

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

struct AssembleOptions {
    bool include_flags = true;
    SeverityConfig severity;
};

/// Per-layer inputs keyed by sample id. A layer left empty (nullopt) is
/// omitted from the matrix; a sample absent from a present L2/L3 map is
/// treated as missing for that layer.
struct LayerInputs {
    std::optional<std::map<std::string, lexicon::LexicalProfile>> lexical;
    std::optional<std::map<std::string, std::optional<coherence::CoherenceProfile>>> coherence;
    std::optional<std::map<std::string, evaluator::L3Features>> l3;
};

inline double gender_code(Gender g) {
    switch (g) {
    case Gender::female: return 1.0;
    case Gender::male: return 0.0;
    case Gender::unspecified: return 0.5;
    }
    return 0.5;
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const auto n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline FeatureMatrix assemble(const Corpus& corpus, const LayerInputs& inputs, const AssembleOptions& opt = {}) {
    std::set<std::string> ids;
    for (const auto& s : corpus) ids.insert(s.id);
    auto check_keys = [&](const auto& map, std::string_view layer) {
        for (const auto& [id, _] : map)
            if (!ids.count(id))
                throw ValidationError("sample '" + id + "' has " + std::string(layer) + " features but is not in the corpus");
    };
    if (inputs.lexical) check_keys(*inputs.lexical, "L1");
    if (inputs.coherence) check_keys(*inputs.coherence, "L2");
    if (inputs.l3) check_keys(*inputs.l3, "L3");

    FeatureMatrix m;
    m.columns.push_back({"age", Layer::B, false});
    m.columns.push_back({"gender_code", Layer::B, false});
    if (inputs.lexical)
        for (auto n : lexicon::kCategoryNames) m.columns.push_back({std::string(n), Layer::L1, false});
    if (inputs.coherence) {
        for (auto n : coherence::CoherenceProfile::kFeatureNames) m.columns.push_back({std::string(n), Layer::L2, false});
        if (opt.include_flags) m.columns.push_back({"l2_missing", Layer::L2, true});
    }
    if (inputs.l3) {
        for (const auto& n : evaluator::l3_feature_names()) m.columns.push_back({n, Layer::L3, false});
        if (opt.include_flags) m.columns.push_back({"l3_missing", Layer::L3, true});
    }

    std::vector<double> ages;
    for (const auto& s : corpus)
        if (s.age) ages.push_back(*s.age);
    const double age_fill = median(ages);

    const auto cols = m.columns.size();
    m.values.assign(corpus.size() * cols, 0.0);
    m.missing.assign(corpus.size() * cols, 0);
    for (auto& v : m.targets.score) v.assign(corpus.size(), kNaN);
    for (auto& v : m.targets.level) v.assign(corpus.size(), -1);

    for (std::size_t r = 0; r < corpus.size(); ++r) {
        const auto& s = corpus[r];
        m.sample_ids.push_back(s.id);
        double* row = &m.values[r * cols];
        std::uint8_t* miss = &m.missing[r * cols];
        std::size_t c = 0;
        row[c++] = s.age.value_or(age_fill);
        row[c++] = gender_code(s.gender);
        if (inputs.lexical) {
            auto it = inputs.lexical->find(s.id);
            if (it == inputs.lexical->end()) throw ValidationError("sample '" + s.id + "' has no L1 features");
            for (double f : it->second.frequency) row[c++] = f;
        }
        if (inputs.coherence) {
            auto it = inputs.coherence->find(s.id);
            const bool present = it != inputs.coherence->end() && it->second.has_value();
            if (present) {
                const auto& p = *it->second;
                for (double v : p.values()) row[c++] = v;
                // Degenerate profiles carry zero-filled s2s cells.
                if (p.degenerate)
                    for (std::size_t k = 0; k < 3; ++k) miss[c - 7 + k] = 1;
            } else {
                for (std::size_t k = 0; k < 7; ++k) miss[c++] = 1;
            }
            if (opt.include_flags) row[c++] = (!present || (*it->second).degenerate) ? 1.0 : 0.0;
        }
        if (inputs.l3) {
            auto it = inputs.l3->find(s.id);
            evaluator::L3Features f;
            if (it != inputs.l3->end()) {
                f = it->second;
            } else {
                f.protocol_missing = {true, true, true};
                f.missing.fill(true);
            }
            for (std::size_t k = 0; k < evaluator::kL3FeatureCount; ++k) {
                row[c] = f.missing[k] ? 0.0 : f.values[k];
                miss[c++] = f.missing[k] ? 1 : 0;
            }
            if (opt.include_flags) row[c++] = f.any_missing() ? 1.0 : 0.0;
        }
        for (auto cond : kConditions) {
            if (auto o = outcome(s, cond, opt.severity)) {
                m.targets.score[static_cast<std::size_t>(cond)][r] = o->normalized;
                m.targets.level[static_cast<std::size_t>(cond)][r] = o->severity;
            }
        }
    }
    for (double v : m.values)
        if (!std::isfinite(v)) throw Error("assembled feature matrix contains a non-finite value");
    return m;
}

struct ZeroFillReport {
    std::size_t cells_filled = 0;
    double l2_missing_fraction = 0.0;  // mean of the l2_missing flag
    double l3_missing_fraction = 0.0;  // mean of the l3_missing flag
};

/// Sets every cell marked missing to 0; flag columns are kept.
inline FeatureMatrix apply_zero_fill(FeatureMatrix m, ZeroFillReport* report = nullptr) {
    ZeroFillReport rep;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (m.missing[i] && m.values[i] != 0.0) ++rep.cells_filled;
        if (m.missing[i]) m.values[i] = 0.0;
    }
    auto flag_mean = [&](std::string_view name) {
        auto c = m.column_index(name);
        if (!c || m.rows() == 0) return 0.0;
        double s = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) s += m.at(r, *c);
        return s / static_cast<double>(m.rows());
    };
    rep.l2_missing_fraction = flag_mean("l2_missing");
    rep.l3_missing_fraction = flag_mean("l3_missing");
    if (report) *report = rep;
    return m;
}

/// Restricts to the columns whose layer belongs to the combo; row order preserved.
inline FeatureMatrix select_combo(const FeatureMatrix& m, Combo combo) {
    const auto layers = layers_of(combo);
    for (auto l : layers)
        if (!m.has_layer(l))
            throw ValidationError("feature combination " + std::string(to_string(combo)) + " needs layer " +
                                  std::string(to_string(l)) + ", which is absent from the matrix" +
                                  (l == Layer::L3 ? " (run `narralyze evaluate`)" : " (run `narralyze extract`)"));
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < m.cols(); ++c)
        if (std::find(layers.begin(), layers.end(), m.columns[c].layer) != layers.end()) keep.push_back(c);
    FeatureMatrix out;
    out.sample_ids = m.sample_ids;
    out.targets = m.targets;
    for (auto c : keep) out.columns.push_back(m.columns[c]);
    out.values.reserve(m.rows() * keep.size());
    out.missing.reserve(m.rows() * keep.size());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (auto c : keep) {
            out.values.push_back(m.at(r, c));
            out.missing.push_back(m.missing[r * m.cols() + c]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// CSV + sidecar schema

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline constexpr std::array<std::string_view, 3> kTargetPrefixes = {"depression", "anxiety", "trauma"};

inline nlohmann::ordered_json schema_json(const FeatureMatrix& m) {
    nlohmann::ordered_json j;
    j["format"] = "narralyze-feature-matrix";
    j["version"] = 1;
    j["rows"] = m.rows();
    auto cols = nlohmann::ordered_json::array();
    for (const auto& c : m.columns) cols.push_back({{"name", c.name}, {"layer", to_string(c.layer)}, {"flag", c.flag}});
    j["columns"] = cols;
    auto targets = nlohmann::ordered_json::array();
    for (auto p : kTargetPrefixes) {
        targets.push_back(std::string(p) + "_score");
        targets.push_back(std::string(p) + "_level");
    }
    j["targets"] = targets;
    auto missing = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            if (m.is_missing(r, c)) missing.push_back({r, c});
    j["missing_cells"] = missing;
    return j;
}

inline void write_csv(const FeatureMatrix& m, std::ostream& out) {
    out << "id";
    for (const auto& c : m.columns) out << ',' << csv_quote(c.name);
    for (auto p : kTargetPrefixes) out << ',' << p << "_score," << p << "_level";
    out << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out << csv_quote(m.sample_ids[r]);
        for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << format_double(m.at(r, c));
        for (std::size_t k = 0; k < 3; ++k) {
            out << ',' << format_double(m.targets.score[k][r]) << ',';
            if (m.targets.level[k][r] >= 0) out << m.targets.level[k][r];
        }
        out << '\n';
    }
}

/// Writes `<stem>.csv` and `<stem>.schema.json`.
inline void save(const FeatureMatrix& m, const std::filesystem::path& csv_path) {
    {
        std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + csv_path.string());
        write_csv(m, out);
    }
    auto schema_path = csv_path;
    schema_path.replace_extension(".schema.json");
    std::ofstream out(schema_path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + schema_path.string());
    out << schema_json(m).dump(2) << '\n';
}

inline double parse_double(const std::string& s, const std::string& where) {
    if (s.empty()) return kNaN;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError(where + ": not a number: '" + s + "'");
    return v;
}

inline FeatureMatrix load(const std::filesystem::path& csv_path) {
    auto schema_path = csv_path;
    schema_path.replace_extension(".schema.json");
    std::ifstream sin(schema_path, std::ios::binary);
    if (!sin) throw ValidationError("missing feature schema " + schema_path.string() + " (run `narralyze extract`)");
    const auto schema = nlohmann::json::parse(sin);
    FeatureMatrix m;
    for (const auto& c : schema.at("columns")) {
        auto layer = parse_layer(c.at("layer").get<std::string>());
        if (!layer) throw ValidationError(schema_path.string() + ": unknown layer tag");
        m.columns.push_back({c.at("name").get<std::string>(), *layer, c.value("flag", false)});
    }
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw ValidationError("missing feature matrix " + csv_path.string() + " (run `narralyze extract`)");
    std::string line;
    std::getline(in, line);
    const auto header = csv_split(line);
    if (header.size() != 1 + m.cols() + 6) throw ValidationError(csv_path.string() + ": header does not match schema");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = csv_split(line);
        const auto where = csv_path.string() + ":" + std::to_string(line_no);
        if (cells.size() != header.size()) throw ValidationError(where + ": wrong number of cells");
        m.sample_ids.push_back(cells[0]);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double v = parse_double(cells[1 + c], where);
            if (!std::isfinite(v)) throw ValidationError(where + ": non-finite feature value");
            m.values.push_back(v);
        }
        for (std::size_t k = 0; k < 3; ++k) {
            m.targets.score[k].push_back(parse_double(cells[1 + m.cols() + 2 * k], where));
            const auto& lv = cells[2 + m.cols() + 2 * k];
            m.targets.level[k].push_back(lv.empty() ? -1 : static_cast<int>(parse_double(lv, where)));
        }
    }
    m.missing.assign(m.values.size(), 0);
    for (const auto& cell : schema.value("missing_cells", nlohmann::json::array())) {
        const auto r = cell.at(0).get<std::size_t>(), c = cell.at(1).get<std::size_t>();
        if (r >= m.rows() || c >= m.cols()) throw ValidationError(schema_path.string() + ": missing cell out of range");
        m.missing[r * m.cols() + c] = 1;
    }
    return m;
}

} // namespace narralyze::features
