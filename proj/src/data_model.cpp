#include "ioulmm/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace ioulmm {

Index Dataset::total_observations() const {
    Index total = 0;
    for (const auto& s : subjects) total += s.size();
    return total;
}

Index Dataset::max_points() const {
    Index m = 0;
    for (const auto& s : subjects) m = std::max(m, s.size());
    return m;
}

Dataset make_dataset(std::vector<Subject> subjects, double horizon) {
    Dataset d;
    if (!subjects.empty()) {
        d.p_beta = subjects.front().x.cols();
        d.p_b = subjects.front().z.cols();
    }
    double latest = 0.0;
    for (const auto& s : subjects) {
        if (s.times.size() > 0) latest = std::max(latest, s.times.maxCoeff());
    }
    d.horizon = horizon > 0.0 ? horizon : latest;
    d.subjects = std::move(subjects);
    return d;
}

std::vector<Violation> validate(const Dataset& dataset, const ValidationOptions& options) {
    std::vector<Violation> out;
    auto flag = [&out](const std::string& id, const std::string& field, const std::string& msg) {
        out.push_back({id, field, msg});
    };

    if (dataset.subjects.empty()) flag("", "subjects", "dataset has no subjects (N >= 1 required)");
    if (!(dataset.horizon > 0.0) || !std::isfinite(dataset.horizon)) {
        flag("", "horizon", "horizon must be positive and finite");
    }

    for (const auto& s : dataset.subjects) {
        const Index n = s.times.size();
        if (n < 1) flag(s.id, "times", "subject has no observations");
        if (n > options.max_points_per_subject) {
            flag(s.id, "times", "number of observations exceeds the configured cap");
        }
        if (s.y.size() != n || s.x.rows() != n || s.z.rows() != n) {
            flag(s.id, "rows", "row count mismatch between times, y, x_design and z_design");
        }
        if (s.x.cols() != dataset.p_beta) flag(s.id, "x_design", "column count differs from p_beta");
        if (s.z.cols() != dataset.p_b) flag(s.id, "z_design", "column count differs from p_b");

        for (Index j = 0; j < n; ++j) {
            const double t = s.times[j];
            if (!std::isfinite(t)) {
                flag(s.id, "times", "non-finite observation time");
                continue;
            }
            const bool low_ok = options.allow_zero_time ? t >= 0.0 : t > 0.0;
            if (!low_ok) flag(s.id, "times", "observation time outside (0, T]");
            if (t > dataset.horizon) flag(s.id, "times", "observation time exceeds horizon T");
            if (j > 0) {
                const double prev = s.times[j - 1];
                const bool ordered = options.allow_ties ? t >= prev : t > prev;
                if (!ordered) flag(s.id, "times", "times not strictly increasing");
            }
        }
        if (!s.y.allFinite()) flag(s.id, "y", "non-finite response");
        auto check_design = [&](const Matrix& m, const char* field) {
            if (!m.allFinite()) {
                flag(s.id, field, "non-finite covariate entry");
            } else if (m.size() > 0 && m.cwiseAbs().maxCoeff() > options.max_abs_covariate) {
                flag(s.id, field, "covariate magnitude exceeds configured bound");
            }
        };
        check_design(s.x, "x_design");
        check_design(s.z, "z_design");
    }
    return out;
}

std::vector<std::string> split_csv_record(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "null";
}

double parse_number(const std::string& cell, const std::string& column, std::size_t line,
                    const std::string& source) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || cell.empty()) {
        throw DataError(source + ":" + std::to_string(line) + ": non-numeric cell '" + cell +
                        "' in column '" + column + "'");
    }
    return value;
}

struct Row {
    double t;
    double y;
    std::vector<double> x;
    std::vector<double> z;
};

} // namespace

CsvReadResult read_csv(std::istream& in, const SchemaConfig& schema, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty file (header required)");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

    const auto header = split_csv_record(line);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col.emplace(trim(header[i]), i);

    auto locate = [&](const std::string& name, const char* role) {
        auto it = col.find(name);
        if (it == col.end()) {
            throw DataError(source + ": missing column '" + name + "' named by " + role);
        }
        return it->second;
    };
    const std::size_t id_idx = locate(schema.id_col, "id_col");
    const std::size_t t_idx = locate(schema.time_col, "time_col");
    const std::size_t y_idx = locate(schema.y_col, "y_col");
    std::vector<std::size_t> x_idx, z_idx;
    for (const auto& c : schema.x_cols) x_idx.push_back(locate(c, "x_cols"));
    for (const auto& c : schema.z_cols) z_idx.push_back(locate(c, "z_cols"));

    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> groups;
    CsvReadResult result;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_record(line);
        if (cells.size() != header.size()) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(cells.size()));
        }
        const std::string id = trim(cells[id_idx]);
        const std::string y_cell = trim(cells[y_idx]);
        if (is_missing(y_cell)) {
            ++result.dropped_missing_response;
            continue;
        }
        Row row;
        row.t = parse_number(trim(cells[t_idx]), schema.time_col, line_no, source);
        row.y = parse_number(y_cell, schema.y_col, line_no, source);
        for (std::size_t k = 0; k < x_idx.size(); ++k) {
            row.x.push_back(parse_number(trim(cells[x_idx[k]]), schema.x_cols[k], line_no, source));
        }
        for (std::size_t k = 0; k < z_idx.size(); ++k) {
            row.z.push_back(parse_number(trim(cells[z_idx[k]]), schema.z_cols[k], line_no, source));
        }
        auto [it, inserted] = groups.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(std::move(row));
    }

    std::vector<Subject> subjects;
    subjects.reserve(order.size());
    for (const auto& id : order) {
        auto& rows = groups[id];
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.t < b.t; });
        for (std::size_t j = 1; j < rows.size(); ++j) {
            if (rows[j].t == rows[j - 1].t && !schema.validation.allow_ties) {
                throw DataError(source + ": duplicate (subject, time) pair for subject '" + id +
                                "' at time " + std::to_string(rows[j].t));
            }
        }
        const auto n = static_cast<Index>(rows.size());
        Subject s;
        s.id = id;
        s.times.resize(n);
        s.y.resize(n);
        s.x.resize(n, static_cast<Index>(x_idx.size()));
        s.z.resize(n, static_cast<Index>(z_idx.size()));
        for (Index j = 0; j < n; ++j) {
            const auto& r = rows[static_cast<std::size_t>(j)];
            s.times[j] = r.t;
            s.y[j] = r.y;
            for (Index k = 0; k < s.x.cols(); ++k) s.x(j, k) = r.x[static_cast<std::size_t>(k)];
            for (Index k = 0; k < s.z.cols(); ++k) s.z(j, k) = r.z[static_cast<std::size_t>(k)];
        }
        subjects.push_back(std::move(s));
    }
    if (subjects.empty()) throw DataError(source + ": no observations with a response value");

    result.dataset = make_dataset(std::move(subjects));
    result.dataset.p_beta = static_cast<Index>(x_idx.size());
    result.dataset.p_b = static_cast<Index>(z_idx.size());
    return result;
}

CsvReadResult read_csv(const std::string& path, const SchemaConfig& schema) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open file for reading");
    return read_csv(in, schema, path);
}

namespace {

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q.push_back('"');
        q.push_back(c);
    }
    q.push_back('"');
    return q;
}

void put_number(std::ostream& out, double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, ptr - buf);
}

} // namespace

void write_csv(std::ostream& out, const Dataset& dataset, const SchemaConfig& schema) {
    if (static_cast<Index>(schema.x_cols.size()) != dataset.p_beta ||
        static_cast<Index>(schema.z_cols.size()) != dataset.p_b) {
        throw DataError("write_csv: schema column lists do not match dataset dimensions");
    }
    // Columns shared between x and z (e.g. an intercept) are written once.
    std::vector<std::string> columns = {schema.id_col, schema.time_col, schema.y_col};
    for (const auto& c : schema.x_cols) {
        if (std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);
    }
    for (const auto& c : schema.z_cols) {
        if (std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);
    }
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out << ',';
        out << quote_if_needed(columns[i]);
    }
    out << '\n';

    for (const auto& s : dataset.subjects) {
        for (Index j = 0; j < s.size(); ++j) {
            out << quote_if_needed(s.id) << ',';
            put_number(out, s.times[j]);
            out << ',';
            put_number(out, s.y[j]);
            for (std::size_t c = 3; c < columns.size(); ++c) {
                out << ',';
                auto xit = std::find(schema.x_cols.begin(), schema.x_cols.end(), columns[c]);
                if (xit != schema.x_cols.end()) {
                    put_number(out, s.x(j, xit - schema.x_cols.begin()));
                } else {
                    auto zit = std::find(schema.z_cols.begin(), schema.z_cols.end(), columns[c]);
                    put_number(out, s.z(j, zit - schema.z_cols.begin()));
                }
            }
            out << '\n';
        }
    }
}

void write_csv(const std::string& path, const Dataset& dataset, const SchemaConfig& schema) {
    std::ofstream out(path);
    if (!out) throw DataError(path + ": cannot open file for writing");
    write_csv(out, dataset, schema);
}

SchemaConfig default_schema(Index p_beta, Index p_b) {
    SchemaConfig s;
    s.id_col = "id";
    s.time_col = "t";
    s.y_col = "y";
    for (Index k = 0; k < p_beta; ++k) s.x_cols.push_back("x" + std::to_string(k + 1));
    for (Index k = 0; k < p_b; ++k) s.z_cols.push_back("z" + std::to_string(k + 1));
    return s;
}

} // namespace ioulmm
