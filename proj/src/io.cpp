#include "ioulmm/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace ioulmm::io {

namespace {

// Typed access to one JSON object that remembers which keys were read.
class Fields {
public:
    Fields(const json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j.is_object()) throw ConfigError(context_ + ": expected a JSON object");
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

    [[nodiscard]] const json& at(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError(context_ + ": missing required key '" + key + "'");
        used_.insert(key);
        return j_.at(key);
    }

    template <typename T>
    [[nodiscard]] T get(const std::string& key) {
        const json& v = at(key);
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(context_ + "." + key + ": wrong type");
        }
    }

    template <typename T>
    [[nodiscard]] T get(const std::string& key, T fallback) {
        return has(key) ? get<T>(key) : fallback;
    }

    [[nodiscard]] std::string path(const std::string& key) const { return context_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!used_.count(item.key())) throw ConfigError(context_ + ": unknown key '" + item.key() + "'");
        }
    }

private:
    const json& j_;
    std::string context_;
    std::set<std::string> used_;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& text, const std::array<std::pair<const char*, E>, N>& table, const std::string& where) {
    for (const auto& [name, value] : table) {
        if (text == name) return value;
    }
    std::string allowed;
    for (const auto& [name, value] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    throw ConfigError(where + ": '" + text + "' is not one of " + allowed);
}

template <typename E, std::size_t N>
std::string enum_name(E value, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, v] : table) {
        if (v == value) return name;
    }
    return "?";
}

constexpr std::array<std::pair<const char*, KernelKind>, 2> kKernels{{{"iou", KernelKind::IOU},
                                                                      {"fbm", KernelKind::FBM}}};
constexpr std::array<std::pair<const char*, GParam>, 2> kGParams{{{"bivariate", GParam::PaperBivariate},
                                                                  {"cholesky", GParam::CholeskyFactor}}};
constexpr std::array<std::pair<const char*, SecondDerivativeMode>, 2> kSecond{
    {{"analytic", SecondDerivativeMode::Analytic}, {"finite_difference", SecondDerivativeMode::FiniteDifference}}};
constexpr std::array<std::pair<const char*, Optimizer>, 3> kOptimizers{
    {{"nelder_mead", Optimizer::NelderMead},
     {"newton_trust_region", Optimizer::NewtonTrustRegion},
     {"hybrid", Optimizer::Hybrid}}};
constexpr std::array<std::pair<const char*, PositivityTransform>, 2> kTransforms{
    {{"log_scale", PositivityTransform::LogScale}, {"raw", PositivityTransform::Raw}}};
constexpr std::array<std::pair<const char*, DesignKind>, 2> kDesigns{
    {{"balanced", DesignKind::Balanced}, {"unbalanced", DesignKind::Unbalanced}}};
constexpr std::array<std::pair<const char*, X2Mode>, 2> kX2{
    {{"per_observation", X2Mode::PerObservation}, {"per_subject", X2Mode::PerSubject}}};

Vector vector_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(where + ": expected an array of numbers");
        v[static_cast<Index>(i)] = j[i].get<double>();
    }
    return v;
}

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json named(const std::vector<std::string>& names, const Vector& v) {
    json out = json::object();
    for (std::size_t k = 0; k < names.size(); ++k) out[names[k]] = number(v[static_cast<Index>(k)]);
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    return out;
}

} // namespace

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
    auto out = open_out(path);
    out << value.dump(2) << '\n';
}

void reject_unknown_keys(const json& j, const std::string& context, const std::vector<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError(context + ": unknown key '" + item.key() + "'");
        }
    }
}

std::string format_double(double x) {
    if (std::isnan(x)) return "NA";
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

KernelSpec kernel_spec_from_json(const json& j) {
    Fields f(j, "model");
    KernelSpec s;
    if (f.has("kernel")) s.kind = parse_enum(f.get<std::string>("kernel"), kKernels, f.path("kernel"));
    if (f.has("g_param")) s.g_param = parse_enum(f.get<std::string>("g_param"), kGParams, f.path("g_param"));
    if (f.has("second_derivatives")) {
        s.second_derivatives = parse_enum(f.get<std::string>("second_derivatives"), kSecond, f.path("second_derivatives"));
    }
    f.finish();
    return s;
}

json to_json(const KernelSpec& s) {
    return {{"kernel", enum_name(s.kind, kKernels)},
            {"g_param", enum_name(s.g_param, kGParams)},
            {"second_derivatives", enum_name(s.second_derivatives, kSecond)}};
}

ParamVector theta_from_json(const json& j, KernelKind kind) {
    Fields f(j, "theta");
    ParamVector t;
    t.beta = vector_from_json(f.at("beta"), f.path("beta"));
    t.cov.gamma = vector_from_json(f.at("gamma"), f.path("gamma"));
    t.cov.alpha = f.get<double>(kind == KernelKind::IOU ? "alpha" : "hurst");
    t.cov.tau = f.get<double>("tau");
    if (f.has("sigma2") == f.has("sigma")) throw ConfigError("theta: give exactly one of 'sigma2' and 'sigma'");
    if (f.has("sigma2")) {
        t.cov.sigma2 = f.get<double>("sigma2");
    } else {
        const double s = f.get<double>("sigma");
        t.cov.sigma2 = s * s;
    }
    f.finish();
    return t;
}

json to_json(const ParamVector& t, KernelKind kind) {
    json out;
    out["beta"] = to_json(t.beta);
    out["gamma"] = to_json(t.cov.gamma);
    out[kind == KernelKind::IOU ? "alpha" : "hurst"] = t.cov.alpha;
    out["tau"] = t.cov.tau;
    out["sigma2"] = t.cov.sigma2;
    return out;
}

SchemaConfig schema_from_json(const json& j) {
    Fields f(j, "schema");
    SchemaConfig s;
    s.id_col = f.get<std::string>("id_col");
    s.time_col = f.get<std::string>("time_col");
    s.y_col = f.get<std::string>("y_col");
    s.x_cols = f.get<std::vector<std::string>>("x_cols");
    s.z_cols = f.get<std::vector<std::string>>("z_cols");
    if (f.has("validation")) {
        Fields v(f.at("validation"), "schema.validation");
        s.validation.max_abs_covariate = v.get("max_abs_covariate", s.validation.max_abs_covariate);
        s.validation.max_points_per_subject = v.get("max_points_per_subject", s.validation.max_points_per_subject);
        s.validation.allow_ties = v.get("allow_ties", s.validation.allow_ties);
        s.validation.allow_zero_time = v.get("allow_zero_time", s.validation.allow_zero_time);
        v.finish();
    }
    f.finish();
    return s;
}

json to_json(const SchemaConfig& s) {
    return {{"id_col", s.id_col},
            {"time_col", s.time_col},
            {"y_col", s.y_col},
            {"x_cols", s.x_cols},
            {"z_cols", s.z_cols},
            {"validation",
             {{"max_abs_covariate", s.validation.max_abs_covariate},
              {"max_points_per_subject", s.validation.max_points_per_subject},
              {"allow_ties", s.validation.allow_ties},
              {"allow_zero_time", s.validation.allow_zero_time}}}};
}

FitConfig fit_config_from_json(const json& j, KernelKind kind) {
    Fields f(j, "fit");
    FitConfig c;
    if (f.has("optimizer")) c.optimizer = parse_enum(f.get<std::string>("optimizer"), kOptimizers, f.path("optimizer"));
    if (f.has("initial")) {
        const json& init = f.at("initial");
        if (init.is_string()) {
            if (init.get<std::string>() != "all-ones") throw ConfigError("fit.initial: expected \"all-ones\" or a theta object");
        } else {
            c.initial = theta_from_json(init, kind);
        }
    }
    if (f.has("positivity_transform")) {
        c.positivity_transform =
            parse_enum(f.get<std::string>("positivity_transform"), kTransforms, f.path("positivity_transform"));
    }
    c.max_iters = f.get("max_iters", c.max_iters);
    c.f_tol = f.get("f_tol", c.f_tol);
    if (f.has("x_tol")) {
        const json& x = f.at("x_tol");
        c.x_tol = x.is_null() ? std::numeric_limits<double>::infinity() : f.get<double>("x_tol");
    }
    c.penalty_value = f.get("penalty_value", c.penalty_value);
    c.polish_iters = f.get("polish_iters", c.polish_iters);
    f.finish();
    try {
        check_fit_config(c);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

json to_json(const FitConfig& c, KernelKind kind) {
    json out;
    out["optimizer"] = enum_name(c.optimizer, kOptimizers);
    out["initial"] = c.initial ? to_json(*c.initial, kind) : json("all-ones");
    out["positivity_transform"] = enum_name(c.positivity_transform, kTransforms);
    out["max_iters"] = c.max_iters;
    out["f_tol"] = c.f_tol;
    out["x_tol"] = number(c.x_tol);
    out["penalty_value"] = c.penalty_value;
    out["polish_iters"] = c.polish_iters;
    return out;
}

DesignConfig design_from_json(const json& j) {
    Fields f(j, "design");
    DesignConfig d;
    if (f.has("kind")) d.kind = parse_enum(f.get<std::string>("kind"), kDesigns, f.path("kind"));
    d.n_subjects = f.get("n_subjects", d.n_subjects);
    d.n_points = f.get("n_points", d.n_points);
    d.n_lower = f.get("n_lower", d.n_lower);
    d.n_upper = f.get("n_upper", d.n_upper);
    d.grid_max = f.get("grid_max", d.grid_max);
    if (f.has("x2_mode")) d.x2_mode = parse_enum(f.get<std::string>("x2_mode"), kX2, f.path("x2_mode"));
    d.x2_probability = f.get("x2_probability", d.x2_probability);
    d.design_seed = f.get("design_seed", d.design_seed);
    f.finish();
    try {
        check_design_config(d);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return d;
}

json to_json(const DesignConfig& d) {
    return {{"kind", enum_name(d.kind, kDesigns)},
            {"n_subjects", d.n_subjects},
            {"n_points", d.n_points},
            {"n_lower", d.n_lower},
            {"n_upper", d.n_upper},
            {"grid_max", d.grid_max},
            {"x2_mode", enum_name(d.x2_mode, kX2)},
            {"x2_probability", d.x2_probability},
            {"design_seed", d.design_seed}};
}

json to_json(const FitResult& r, const Dataset& dataset, KernelKind kind) {
    const auto names = parameter_names(r.theta_hat.beta.size(), r.theta_hat.cov.gamma.size(), kind);
    const Estimate sigma = sigma_estimate(r);
    const Estimate omega = omega_estimate(r, dataset.n_subjects());
    json out;
    out["theta_hat"] = named(names, r.theta_hat.flatten());
    out["se"] = named(names, r.se);
    out["sigma"] = {{"value", number(sigma.value)}, {"se", number(sigma.se)}};
    out["omega"] = {{"value", number(omega.value)}, {"se", number(omega.se)}};
    out["loglik"] = number(r.loglik_at_max);
    out["converged"] = r.converged;
    out["reason"] = r.reason;
    out["iterations"] = r.iterations;
    out["evaluations"] = r.evaluations;
    out["n_subjects"] = dataset.n_subjects();
    out["n_observations"] = dataset.total_observations();
    out["a_hat"] = to_json(r.a_hat);
    out["u_hat"] = to_json(r.u_hat);
    out["wall_time_ms"] = r.wall_time_ms;
    return out;
}

json to_json(const McReport& r) {
    json out;
    out["replications"] = r.converged.size();
    out["failures"] = r.failures;
    json summary = json::array();
    for (const auto& s : table_rows(r)) {
        summary.push_back({{"parameter", s.name},
                           {"truth", number(s.truth)},
                           {"mean", number(s.mean)},
                           {"sd", number(s.sd)},
                           {"bias", number(s.bias)},
                           {"mcse", number(s.mcse)}});
    }
    out["summary"] = summary;
    json reasons = json::object();
    for (const auto& reason : r.reasons) reasons[reason.empty() ? "(none)" : reason] = reasons.value(reason.empty() ? "(none)" : reason, 0) + 1;
    out["reasons"] = reasons;
    double total = 0.0;
    for (double t : r.wall_time_ms) total += t;
    out["wall_time_ms_per_replication"] = r.wall_time_ms.empty() ? json(nullptr) : json(total / static_cast<double>(r.wall_time_ms.size()));
    return out;
}

void write_mc_table(const std::filesystem::path& path, const McReport& r) {
    auto out = open_out(path);
    out << "parameter,bias,mcse\n";
    for (const auto& s : table_rows(r)) out << s.name << ',' << format_double(s.bias) << ',' << format_double(s.mcse) << '\n';
}

void write_mc_raw(const std::filesystem::path& path, const McReport& r) {
    auto out = open_out(path);
    out << "replication,converged,loglik";
    for (const auto& n : r.names) out << ',' << n;
    out << '\n';
    for (Index i = 0; i < r.estimates.rows(); ++i) {
        const auto rep = static_cast<std::size_t>(i);
        out << i << ',' << (r.converged[rep] ? 1 : 0) << ',' << format_double(r.loglik[rep]);
        for (Index k = 0; k < r.estimates.cols(); ++k) out << ',' << format_double(r.estimates(i, k));
        out << '\n';
    }
}

void write_mc_studentized(const std::filesystem::path& path, const McReport& r) {
    auto out = open_out(path);
    out << "replication";
    for (Index k = 0; k < r.studentized.cols(); ++k) out << ',' << r.names[static_cast<std::size_t>(k)];
    out << '\n';
    for (Index i = 0; i < r.studentized.rows(); ++i) {
        out << i;
        const bool ok = r.converged[static_cast<std::size_t>(i)];
        for (Index k = 0; k < r.studentized.cols(); ++k) out << ',' << format_double(ok ? r.studentized(i, k) : std::nan(""));
        out << '\n';
    }
}

Matrix read_studentized(const std::filesystem::path& path, std::vector<std::string>& names) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
    auto header = split_csv_record(line);
    if (header.size() < 2 || header.front() != "replication") {
        throw ConfigError(path.string() + ": expected a header starting with 'replication'");
    }
    names.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_record(line);
        if (cells.size() != header.size()) throw ConfigError(path.string() + ": wrong field count on line " + std::to_string(line_no));
        std::vector<double> row;
        for (std::size_t k = 1; k < cells.size(); ++k) {
            if (cells[k] == "NA" || cells[k].empty()) {
                row.push_back(std::nan(""));
                continue;
            }
            double v = 0.0;
            const auto res = std::from_chars(cells[k].data(), cells[k].data() + cells[k].size(), v);
            if (res.ec != std::errc() || res.ptr != cells[k].data() + cells[k].size()) {
                throw ConfigError(path.string() + ": non-numeric cell on line " + std::to_string(line_no));
            }
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < names.size(); ++k) m(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
    }
    return m;
}

json to_json(const LanCheckReport& r) {
    json out;
    out["n_values"] = r.n_values;
    json dirs = json::array();
    for (const auto& d : r.directions) dirs.push_back(to_json(d));
    out["directions"] = dirs;
    json cells = json::array();
    for (const auto& c : r.cells) {
        json residual = json::array();
        for (double x : c.residual) residual.push_back(number(x));
        cells.push_back({{"n", c.n},
                         {"direction", c.direction},
                         {"skipped", c.skipped},
                         {"mean_abs", number(c.mean_abs)},
                         {"mcse_abs", number(c.mcse_abs)},
                         {"mean_abs_observed", number(c.mean_abs_observed)},
                         {"mean_abs_difference", number(c.mean_abs_difference)},
                         {"rounding_floor", number(c.rounding_floor)},
                         {"residual", residual}});
    }
    out["cells"] = cells;
    json trend = json::array();
    for (std::size_t d = 0; d < r.directions.size(); ++d) trend.push_back(lan_trend_decreasing(r, d));
    out["decreasing"] = trend;
    return out;
}

json to_json(const ScoreCltReport& r) {
    return {{"n", r.n},
            {"replications", r.replications},
            {"mean", to_json(r.mean)},
            {"mean_mcse", to_json(r.mean_mcse)},
            {"empirical_cov", to_json(r.empirical_cov)},
            {"cov_mcse", to_json(r.cov_mcse)},
            {"information", to_json(r.information)},
            {"max_z", number(r.max_z)},
            {"max_z_cross", number(r.max_z_cross)},
            {"max_abs_deviation", number(r.max_abs_deviation)}};
}

json to_json(const std::vector<InformationLimitRow>& rows) {
    json out = json::array();
    for (const auto& row : rows) {
        out.push_back({{"n", row.n},
                       {"a_hat", to_json(row.a_hat)},
                       {"u_hat", to_json(row.u_hat)},
                       {"change_a", number(row.change_a)},
                       {"change_u", number(row.change_u)},
                       {"min_eig_a", number(row.min_eig_a)},
                       {"min_eig_u", number(row.min_eig_u)},
                       {"asymmetry_u", number(row.asymmetry_u)}});
    }
    return out;
}

json to_json(const NormalityReport& r) {
    json comps = json::array();
    for (const auto& c : r.components) {
        comps.push_back({{"parameter", c.name},
                         {"qq_correlation", number(c.qq_correlation)},
                         {"exempt", c.exempt},
                         {"bin_edges", c.bin_edges},
                         {"counts", c.counts},
                         {"expected", c.expected}});
    }
    return {{"low_power", r.low_power}, {"components", comps}};
}

json to_json(const ThirdDerivativeReport& r) {
    return {{"n", r.n},
            {"radius", r.radius},
            {"points_evaluated", r.points_evaluated},
            {"points_skipped", r.points_skipped},
            {"max_norm", number(r.max_norm)},
            {"max_scaled_norm", number(r.max_scaled_norm)},
            {"beta_block_max", number(r.beta_block_max)}};
}

json to_json(const Matrix& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index k = 0; k < m.cols(); ++k) row.push_back(number(m(i, k)));
        out.push_back(row);
    }
    return out;
}

json to_json(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256: digest initialization failed");
    }
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md.data(), &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    static constexpr char digits[] = "0123456789abcdef";
    for (unsigned int i = 0; i < len; ++i) hex << digits[md[i] >> 4] << digits[md[i] & 15];
    return hex.str();
}

} // namespace ioulmm::io
