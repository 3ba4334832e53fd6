// ioulmm command-line driver: fit, simulate, mcstudy, surface, diagnose.

#include "ioulmm/io.hpp"
#include "ioulmm/parallel.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifndef IOULMM_VERSION
#define IOULMM_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace ioulmm;
using io::ConfigError;
using io::json;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNotConverged = 2;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::size_t threads = default_thread_count();
};

// Collects what the manifest records while a subcommand runs.
class Run {
public:
    Run(std::string subcommand, const Globals& g) : subcommand_(std::move(subcommand)), globals_(g) {
        out_ = fs::path(g.out);
        fs::create_directories(out_);
    }

    [[nodiscard]] fs::path output(const std::string& name) {
        outputs_.push_back(name);
        return out_ / name;
    }

    json read_input(const std::string& path) {
        note_input(path);
        return io::read_json_file(path);
    }

    void note_input(const std::string& path) {
        if (!fs::exists(path)) throw ConfigError("input file '" + path + "' does not exist");
        inputs_.push_back({{"path", fs::absolute(path).lexically_normal().string()}, {"sha256", io::sha256_file(path)}});
    }

    json config = json::object();
    json seeds = json::object();
    json extra = json::object();

    int finish(int code) const {
        json m;
        m["subcommand"] = subcommand_;
        m["artifact_version"] = IOULMM_VERSION;
        m["config"] = config;
        m["seeds"] = seeds;
        m["threads"] = globals_.threads;
        m["inputs"] = inputs_;
        m["outputs"] = outputs_;
        for (const auto& item : extra.items()) m[item.key()] = item.value();
        m["wall_time_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        m["exit_code"] = code;
        io::write_json_file(out_ / "manifest.json", m);
        return code;
    }

private:
    std::string subcommand_;
    const Globals& globals_;
    fs::path out_;
    json inputs_ = json::array();
    std::vector<std::string> outputs_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

KernelSpec model_of(const json& cfg) {
    return cfg.contains("model") ? io::kernel_spec_from_json(cfg.at("model")) : KernelSpec{};
}

std::uint64_t seed_of(const json& cfg, const char* key, const Globals& g, std::uint64_t fallback = 1) {
    if (g.seed) return *g.seed;
    if (!cfg.contains(key)) return fallback;
    if (!cfg.at(key).is_number_unsigned()) throw ConfigError(std::string(key) + ": expected a non-negative integer");
    return cfg.at(key).get<std::uint64_t>();
}

template <typename T>
T value_of(const json& cfg, const char* key, T fallback) {
    if (!cfg.contains(key)) return fallback;
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type");
    }
}

// Simulated designs always carry x = (t, x2) and z = (1, t).
void check_theta_shape(const ParamVector& theta, const KernelSpec& spec) {
    if (theta.beta.size() != 2) throw ConfigError("theta.beta: simulated designs have 2 fixed effects");
    if (theta.cov.gamma.size() != gamma_size(spec.g_param, 2)) {
        throw ConfigError("theta.gamma: expected " + std::to_string(gamma_size(spec.g_param, 2)) + " entries");
    }
}

ParamVector theta_of(const json& cfg, const KernelSpec& spec, bool simulated) {
    if (!cfg.contains("theta")) throw ConfigError("missing required key 'theta'");
    ParamVector theta = io::theta_from_json(cfg.at("theta"), spec.kind);
    if (simulated) check_theta_shape(theta, spec);
    return theta;
}

DesignConfig design_of(const json& cfg) {
    return cfg.contains("design") ? io::design_from_json(cfg.at("design")) : DesignConfig{};
}

// ---------------------------------------------------------------- fit

int cmd_fit(const Globals& g, const std::string& data, const std::string& schema_path, const std::string& config_path) {
    Run run("fit", g);
    const json schema_json = run.read_input(schema_path);
    SchemaConfig schema;
    try {
        schema = io::schema_from_json(schema_json);
    } catch (const ConfigError& e) {
        throw ConfigError(schema_path + ": " + e.what());
    }
    json cfg = json::object();
    if (!config_path.empty()) cfg = run.read_input(config_path);
    KernelSpec spec;
    FitConfig fc;
    try {
        io::reject_unknown_keys(cfg, "fit config", {"model", "fit"});
        spec = model_of(cfg);
        if (cfg.contains("fit")) fc = io::fit_config_from_json(cfg.at("fit"), spec.kind);
    } catch (const ConfigError& e) {
        throw ConfigError(config_path + ": " + e.what());
    }
    fc.likelihood.threads = g.threads;
    run.note_input(data);
    const CsvReadResult read = read_csv(data, schema);

    run.config = {{"data", fs::absolute(data).lexically_normal().string()},
                  {"schema", io::to_json(schema)},
                  {"model", io::to_json(spec)},
                  {"fit", io::to_json(fc, spec.kind)}};
    run.extra["dropped_missing_response"] = read.dropped_missing_response;

    const FitResult result = fit(read.dataset, spec, fc);
    io::write_json_file(run.output("fit_result.json"), io::to_json(result, read.dataset, spec.kind));
    if (!result.converged) std::cerr << "not converged: " << result.reason << '\n';
    return run.finish(result.converged ? kOk : kNotConverged);
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const Globals& g, const std::string& config_path) {
    Run run("simulate", g);
    const json cfg = run.read_input(config_path);
    io::reject_unknown_keys(cfg, "simulate config", {"model", "design", "theta", "noise_seed", "replication", "draw_mode"});
    const KernelSpec spec = model_of(cfg);
    const DesignConfig design = design_of(cfg);
    const ParamVector theta = theta_of(cfg, spec, true);
    const std::uint64_t noise_seed = seed_of(cfg, "noise_seed", g);
    const auto replication = value_of<std::uint32_t>(cfg, "replication", 0);
    const auto mode_name = value_of<std::string>(cfg, "draw_mode", "joint");
    if (mode_name != "joint" && mode_name != "decomposed") throw ConfigError("draw_mode: expected joint or decomposed");
    const DrawMode mode = mode_name == "joint" ? DrawMode::Joint : DrawMode::Decomposed;

    run.config = {{"model", io::to_json(spec)},
                  {"design", io::to_json(design)},
                  {"theta", io::to_json(theta, spec.kind)},
                  {"noise_seed", noise_seed},
                  {"replication", replication},
                  {"draw_mode", mode_name}};
    run.seeds = {{"design_seed", design.design_seed}, {"noise_seed", noise_seed}};

    const Dataset skeleton = generate_design(design);
    const Dataset data = simulate_responses(skeleton, theta, spec, noise_seed, replication, mode);
    const SchemaConfig schema = default_schema(data.p_beta, data.p_b);
    write_csv(run.output("data.csv").string(), data, schema);
    io::write_json_file(run.output("schema.json"), io::to_json(schema));
    run.extra["rows"] = data.total_observations();
    return run.finish(kOk);
}

// ---------------------------------------------------------------- mcstudy

int cmd_mcstudy(const Globals& g, const std::string& config_path) {
    Run run("mcstudy", g);
    const json cfg = run.read_input(config_path);
    io::reject_unknown_keys(cfg, "mcstudy config",
                            {"model", "design", "theta", "fit", "replications", "noise_seed", "frozen_design"});
    const KernelSpec spec = model_of(cfg);
    McConfig mc;
    mc.true_theta = theta_of(cfg, spec, true);
    mc.n_replications = value_of<std::size_t>(cfg, "replications", mc.n_replications);
    mc.noise_seed = seed_of(cfg, "noise_seed", g);
    mc.frozen_design = value_of<bool>(cfg, "frozen_design", mc.frozen_design);
    if (cfg.contains("fit")) mc.fit_config = io::fit_config_from_json(cfg.at("fit"), spec.kind);
    mc.threads = g.threads;
    const DesignConfig design = design_of(cfg);
    try {
        check_mc_config(mc);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    run.config = {{"model", io::to_json(spec)},
                  {"design", io::to_json(design)},
                  {"theta", io::to_json(mc.true_theta, spec.kind)},
                  {"fit", io::to_json(mc.fit_config, spec.kind)},
                  {"replications", mc.n_replications},
                  {"noise_seed", mc.noise_seed},
                  {"frozen_design", mc.frozen_design}};
    run.seeds = {{"design_seed", design.design_seed}, {"noise_seed", mc.noise_seed}};

    const McReport report = run_mc_study(mc, design, spec);
    io::write_json_file(run.output("report.json"), io::to_json(report));
    io::write_mc_table(run.output("table.csv"), report);
    io::write_mc_raw(run.output("raw.csv"), report);
    io::write_mc_studentized(run.output("studentized.csv"), report);
    return run.finish(kOk);
}

// ---------------------------------------------------------------- surface

Vector grid_of(const json& spec, const std::string& name) {
    if (spec.is_array()) {
        Vector v(static_cast<Index>(spec.size()));
        for (std::size_t i = 0; i < spec.size(); ++i) v[static_cast<Index>(i)] = spec[i].get<double>();
        return v;
    }
    io::reject_unknown_keys(spec, "grid." + name, {"min", "max", "points"});
    const double lo = value_of<double>(spec, "min", 0.0);
    const double hi = value_of<double>(spec, "max", 0.0);
    const auto n = value_of<Index>(spec, "points", 0);
    if (n <= 0) throw ConfigError("grid." + name + ": empty grid");
    if (n == 1) return Vector::Constant(1, lo);
    return Vector::LinSpaced(n, lo, hi);
}

int cmd_surface(const Globals& g, const std::string& config_path, const std::string& data, const std::string& schema_path,
                const std::vector<double>& alpha_flag, const std::vector<double>& tau_flag) {
    Run run("surface", g);
    const json cfg = run.read_input(config_path);
    io::reject_unknown_keys(cfg, "surface config", {"model", "design", "theta", "noise_seed", "grid"});
    const KernelSpec spec = model_of(cfg);
    const bool simulated = data.empty();
    const ParamVector theta = theta_of(cfg, spec, simulated);

    json grid = value_of<json>(cfg, "grid", json::object());
    io::reject_unknown_keys(grid, "grid", {"alpha", "tau"});
    auto flag_grid = [](const std::vector<double>& f) {
        return json{{"min", f[0]}, {"max", f[1]}, {"points", static_cast<Index>(f[2])}};
    };
    if (!alpha_flag.empty()) grid["alpha"] = flag_grid(alpha_flag);
    if (!tau_flag.empty()) grid["tau"] = flag_grid(tau_flag);
    if (!grid.contains("alpha") || !grid.contains("tau")) throw ConfigError("grid: both 'alpha' and 'tau' are required");
    const Vector ga = grid_of(grid.at("alpha"), "alpha");
    const Vector gt = grid_of(grid.at("tau"), "tau");

    Dataset dataset;
    run.config = {{"model", io::to_json(spec)}, {"theta", io::to_json(theta, spec.kind)}, {"grid", grid}};
    if (simulated) {
        const DesignConfig design = design_of(cfg);
        const std::uint64_t noise_seed = seed_of(cfg, "noise_seed", g);
        dataset = simulate_responses(generate_design(design), theta, spec, noise_seed);
        run.config["design"] = io::to_json(design);
        run.config["noise_seed"] = noise_seed;
        run.seeds = {{"design_seed", design.design_seed}, {"noise_seed", noise_seed}};
    } else {
        if (schema_path.empty()) throw ConfigError("--schema is required with --data");
        const SchemaConfig schema = io::schema_from_json(run.read_input(schema_path));
        run.note_input(data);
        dataset = read_csv(data, schema).dataset;
        run.config["data"] = fs::absolute(data).lexically_normal().string();
        run.config["schema"] = io::to_json(schema);
    }

    const Matrix surface = profile_surface(dataset, spec, theta, ga, gt, LikelihoodOptions{g.threads});
    std::ofstream out(run.output("surface.csv"), std::ios::binary);
    out << "alpha,tau,loglik\n";
    std::size_t feasible = 0;
    double best = -std::numeric_limits<double>::infinity();
    json argmax = nullptr;
    for (Index i = 0; i < ga.size(); ++i) {
        for (Index k = 0; k < gt.size(); ++k) {
            const double v = surface(i, k);
            out << io::format_double(ga[i]) << ',' << io::format_double(gt[k]) << ',' << io::format_double(v) << '\n';
            if (std::isnan(v)) continue;
            ++feasible;
            if (v > best) {
                best = v;
                argmax = {{"alpha", ga[i]}, {"tau", gt[k]}, {"loglik", v}};
            }
        }
    }
    out.close();
    run.extra["cells"] = surface.size();
    run.extra["feasible_cells"] = feasible;
    run.extra["grid_max"] = argmax;
    return run.finish(kOk);
}

// ---------------------------------------------------------------- diagnose

std::vector<std::size_t> sizes_of(const json& section, const char* where) {
    if (!section.contains("n_values")) throw ConfigError(std::string(where) + ": missing required key 'n_values'");
    auto n = value_of<std::vector<std::size_t>>(section, "n_values", {});
    if (n.empty()) throw ConfigError(std::string(where) + ".n_values: must not be empty");
    return n;
}

int cmd_diagnose(const Globals& g, const std::string& config_path) {
    Run run("diagnose", g);
    const json cfg = run.read_input(config_path);
    io::reject_unknown_keys(cfg, "diagnose config",
                            {"model", "design", "theta", "replications", "noise_seed", "fresh_design", "lan", "clt",
                             "information", "normality", "third_derivative"});
    const KernelSpec spec = model_of(cfg);
    const DesignConfig design = design_of(cfg);
    const bool needs_theta = cfg.contains("lan") || cfg.contains("clt") || cfg.contains("information") ||
                             cfg.contains("third_derivative");
    const ParamVector theta = needs_theta ? theta_of(cfg, spec, true) : ParamVector{};
    DiagnosticRun dr;
    dr.replications = value_of<std::size_t>(cfg, "replications", dr.replications);
    dr.noise_seed = seed_of(cfg, "noise_seed", g);
    dr.fresh_design = value_of<bool>(cfg, "fresh_design", dr.fresh_design);
    dr.threads = g.threads;

    run.config = {{"model", io::to_json(spec)},
                  {"design", io::to_json(design)},
                  {"replications", dr.replications},
                  {"noise_seed", dr.noise_seed},
                  {"fresh_design", dr.fresh_design}};
    if (needs_theta) run.config["theta"] = io::to_json(theta, spec.kind);
    run.seeds = {{"design_seed", design.design_seed}, {"noise_seed", dr.noise_seed}};
    json summary = json::object();

    if (cfg.contains("lan")) {
        const json& s = cfg.at("lan");
        io::reject_unknown_keys(s, "lan", {"n_values", "random_directions", "direction_seed", "include_zero"});
        const auto n_values = sizes_of(s, "lan");
        const auto n_random = value_of<std::size_t>(s, "random_directions", 3);
        const auto dir_seed = value_of<std::uint64_t>(s, "direction_seed", 1);
        const bool include_zero = value_of<bool>(s, "include_zero", false);
        auto directions = default_directions(theta.size(), n_random, dir_seed);
        if (include_zero) directions.push_back(Vector::Zero(theta.size()));
        const auto report = lan_expansion_check(theta, spec, design, n_values, directions, dr);
        io::write_json_file(run.output("lan.json"), io::to_json(report));
        run.config["lan"] = {{"n_values", n_values},
                             {"random_directions", n_random},
                             {"direction_seed", dir_seed},
                             {"include_zero", include_zero}};
        std::size_t decreasing = 0;
        for (std::size_t d = 0; d < directions.size(); ++d) decreasing += lan_trend_decreasing(report, d) ? 1 : 0;
        summary["lan_directions_decreasing"] = decreasing;
        summary["lan_directions"] = directions.size();
    }
    if (cfg.contains("clt")) {
        io::reject_unknown_keys(cfg.at("clt"), "clt", {});
        const auto report = score_clt_check(theta, spec, design, dr);
        io::write_json_file(run.output("clt.json"), io::to_json(report));
        run.config["clt"] = json::object();
        summary["clt_max_z"] = report.max_z;
        summary["clt_max_z_cross"] = report.max_z_cross;
    }
    if (cfg.contains("information")) {
        const json& s = cfg.at("information");
        io::reject_unknown_keys(s, "information", {"n_values"});
        const auto n_values = sizes_of(s, "information");
        const auto rows = information_limit_check(spec, design, theta.cov, n_values);
        io::write_json_file(run.output("information.json"), io::to_json(rows));
        run.config["information"] = {{"n_values", n_values}};
    }
    if (cfg.contains("third_derivative")) {
        const json& s = cfg.at("third_derivative");
        io::reject_unknown_keys(s, "third_derivative", {"n_values", "radius", "points", "seed"});
        const auto n_values = sizes_of(s, "third_derivative");
        const auto radius = value_of<double>(s, "radius", 1.0);
        const auto points = value_of<std::size_t>(s, "points", 10);
        const auto seed = value_of<std::uint64_t>(s, "seed", 1);
        json rows = json::array();
        for (std::size_t n : n_values) {
            DesignConfig d = design;
            d.n_subjects = n;
            const Dataset data = simulate_responses(generate_design(d), theta, spec, dr.noise_seed);
            rows.push_back(io::to_json(third_derivative_bound_check(data, theta, spec, radius, points, seed)));
        }
        io::write_json_file(run.output("third_derivative.json"), rows);
        run.config["third_derivative"] = {{"n_values", n_values}, {"radius", radius}, {"points", points}, {"seed", seed}};
    }
    if (cfg.contains("normality")) {
        const json& s = cfg.at("normality");
        io::reject_unknown_keys(s, "normality", {"studentized_csv", "exempt", "bins"});
        if (!s.contains("studentized_csv")) throw ConfigError("normality: missing required key 'studentized_csv'");
        const auto path = value_of<std::string>(s, "studentized_csv", "");
        const auto exempt = value_of<std::vector<std::string>>(s, "exempt", {"sigma2"});
        const auto bins = value_of<std::size_t>(s, "bins", 30);
        run.note_input(path);
        std::vector<std::string> names;
        const Matrix studentized = io::read_studentized(path, names);
        const NormalityReport report = studentized_normality(studentized, names, exempt, bins);
        io::write_json_file(run.output("normality.json"), io::to_json(report));
        std::ofstream out(run.output("normality.csv"), std::ios::binary);
        out << "parameter,value\n";
        for (const auto& c : report.components) {
            for (double v : c.values) out << c.name << ',' << io::format_double(v) << '\n';
        }
        run.config["normality"] = {{"studentized_csv", fs::absolute(path).lexically_normal().string()},
                                   {"exempt", exempt},
                                   {"bins", bins}};
        summary["normality_low_power"] = report.low_power;
    }
    run.extra["summary"] = summary;
    return run.finish(kOk);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-effects models with integrated Ornstein-Uhlenbeck noise"};
    app.set_version_flag("--version", IOULMM_VERSION);
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Override the noise seed")->check(CLI::NonNegativeNumber);
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.fallthrough();

    std::string data, schema, config;
    std::vector<double> alpha_grid, tau_grid;

    auto* fit_cmd = app.add_subcommand("fit", "Fit the model to a CSV dataset");
    fit_cmd->add_option("--data", data, "Observations CSV")->required();
    fit_cmd->add_option("--schema", schema, "Schema JSON")->required();
    fit_cmd->add_option("--config", config, "Model and fit JSON");

    auto* sim_cmd = app.add_subcommand("simulate", "Simulate a dataset from a design");
    sim_cmd->add_option("--config", config, "Simulation JSON")->required();

    auto* mc_cmd = app.add_subcommand("mcstudy", "Run a Monte Carlo bias study");
    mc_cmd->add_option("--config", config, "Study JSON")->required();

    auto* surf_cmd = app.add_subcommand("surface", "Log-likelihood over an (alpha, tau) grid");
    surf_cmd->add_option("--config", config, "Surface JSON")->required();
    surf_cmd->add_option("--data", data, "Observations CSV (otherwise simulated)");
    surf_cmd->add_option("--schema", schema, "Schema JSON for --data");
    surf_cmd->add_option("--alpha", alpha_grid, "min max points")->expected(3);
    surf_cmd->add_option("--tau", tau_grid, "min max points")->expected(3);

    auto* diag_cmd = app.add_subcommand("diagnose", "LAN, score CLT, information and normality checks");
    diag_cmd->add_option("--config", config, "Diagnostics JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kError;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*fit_cmd) return cmd_fit(g, data, schema, config);
        if (*sim_cmd) return cmd_simulate(g, config);
        if (*mc_cmd) return cmd_mcstudy(g, config);
        if (*surf_cmd) return cmd_surface(g, config, data, schema, alpha_grid, tau_grid);
        if (*diag_cmd) return cmd_diagnose(g, config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kError;
    }
    return kError;
}
