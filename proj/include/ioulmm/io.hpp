#pragma once

#include "ioulmm/diagnostics.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioulmm::io {

using json = nlohmann::ordered_json;

/// Malformed or inconsistent configuration; the message names the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

/// Shortest round-trip decimal; "NA" for NaN.
[[nodiscard]] std::string format_double(double x);

/// Throws ConfigError naming the first key of object `j` outside `allowed`.
void reject_unknown_keys(const json& j, const std::string& context, const std::vector<std::string>& allowed);

// Each parser rejects unknown keys, so a typo cannot silently fall back to a default.
[[nodiscard]] KernelSpec kernel_spec_from_json(const json& j);
[[nodiscard]] json to_json(const KernelSpec& spec);

/// {"beta": [...], "gamma": [...], "alpha"|"hurst": x, "tau": x, "sigma2"|"sigma": x}
[[nodiscard]] ParamVector theta_from_json(const json& j, KernelKind kind);
[[nodiscard]] json to_json(const ParamVector& theta, KernelKind kind);

[[nodiscard]] SchemaConfig schema_from_json(const json& j);
[[nodiscard]] json to_json(const SchemaConfig& schema);

[[nodiscard]] FitConfig fit_config_from_json(const json& j, KernelKind kind);
[[nodiscard]] json to_json(const FitConfig& config, KernelKind kind);

[[nodiscard]] DesignConfig design_from_json(const json& j);
[[nodiscard]] json to_json(const DesignConfig& design);

[[nodiscard]] json to_json(const FitResult& result, const Dataset& dataset, KernelKind kind);
[[nodiscard]] json to_json(const McReport& report);

/// parameter,truth,mean,sd,bias,mcse in table order.
void write_mc_table(const std::filesystem::path& path, const McReport& report);
/// One row per replication: replication,converged,loglik,<estimates>.
void write_mc_raw(const std::filesystem::path& path, const McReport& report);
/// One row per replication: replication,<studentized values>.
void write_mc_studentized(const std::filesystem::path& path, const McReport& report);
/// Reads the studentized table back; returns the matrix and column names.
[[nodiscard]] Matrix read_studentized(const std::filesystem::path& path, std::vector<std::string>& names);

[[nodiscard]] json to_json(const LanCheckReport& report);
[[nodiscard]] json to_json(const ScoreCltReport& report);
[[nodiscard]] json to_json(const std::vector<InformationLimitRow>& rows);
[[nodiscard]] json to_json(const NormalityReport& report);
[[nodiscard]] json to_json(const ThirdDerivativeReport& report);

[[nodiscard]] json to_json(const Matrix& m);
[[nodiscard]] json to_json(const Vector& v);

/// Lower-case hex SHA-256 of a file's bytes.
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

} // namespace ioulmm::io
