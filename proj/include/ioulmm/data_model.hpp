#pragma once

#include "ioulmm/types.hpp"

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioulmm {

/// One individual's observations: times t_i1 < ... < t_in, responses and the
/// fixed/random-effect design rows evaluated at those times.
struct Subject {
    std::string id;
    Vector times;
    Vector y;
    Matrix x; // n_i x p_beta
    Matrix z; // n_i x p_b

    [[nodiscard]] Index size() const { return times.size(); }
};

struct Dataset {
    std::vector<Subject> subjects;
    double horizon = 0.0;
    Index p_beta = 0;
    Index p_b = 0;

    [[nodiscard]] std::size_t n_subjects() const { return subjects.size(); }
    [[nodiscard]] Index total_observations() const;
    [[nodiscard]] Index max_points() const;
};

/// Builds a Dataset from subjects, inferring p_beta/p_b from the first subject
/// and the horizon from the latest observation time when horizon <= 0.
[[nodiscard]] Dataset make_dataset(std::vector<Subject> subjects, double horizon = 0.0);

struct ValidationOptions {
    double max_abs_covariate = 1e6;
    Index max_points_per_subject = 10000;
    bool allow_ties = false;
    bool allow_zero_time = false;
};

struct Violation {
    std::string subject_id;
    std::string field;
    std::string message;
};

[[nodiscard]] std::vector<Violation> validate(const Dataset& dataset,
                                              const ValidationOptions& options = {});

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SchemaConfig {
    std::string id_col;
    std::string time_col;
    std::string y_col;
    std::vector<std::string> x_cols;
    std::vector<std::string> z_cols;
    ValidationOptions validation;
};

struct CsvReadResult {
    Dataset dataset;
    std::size_t dropped_missing_response = 0;
};

/// Reads one-row-per-observation CSV, grouping rows by subject (in order of
/// first appearance) and sorting each subject's rows by time.
[[nodiscard]] CsvReadResult read_csv(const std::string& path, const SchemaConfig& schema);
[[nodiscard]] CsvReadResult read_csv(std::istream& in, const SchemaConfig& schema,
                                     const std::string& source_name = "<stream>");

void write_csv(std::ostream& out, const Dataset& dataset, const SchemaConfig& schema);
void write_csv(const std::string& path, const Dataset& dataset, const SchemaConfig& schema);

/// Default column naming used by the simulator: id,t,y,x1..,z1..
[[nodiscard]] SchemaConfig default_schema(Index p_beta, Index p_b);

/// Splits one RFC-4180 record. Quoted fields may contain commas and doubled quotes.
[[nodiscard]] std::vector<std::string> split_csv_record(const std::string& line);

} // namespace ioulmm
