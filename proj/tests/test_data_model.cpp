#include <doctest.h>

#include "ioulmm/data_model.hpp"

#include <random>
#include <sstream>

using namespace ioulmm;

namespace {

Subject make_subject(std::string id, std::vector<double> times, Index p_beta = 2, Index p_b = 2) {
    Subject s;
    s.id = std::move(id);
    const auto n = static_cast<Index>(times.size());
    s.times = Eigen::Map<Vector>(times.data(), n);
    s.y = Vector::LinSpaced(n, 0.5, 1.5);
    s.x = Matrix::Ones(n, p_beta);
    s.z = Matrix::Ones(n, p_b);
    return s;
}

bool has_message(const std::vector<Violation>& v, const std::string& needle) {
    for (const auto& x : v) {
        if (x.message.find(needle) != std::string::npos) return true;
    }
    return false;
}

SchemaConfig simulator_schema() {
    SchemaConfig s;
    s.id_col = "id";
    s.time_col = "t";
    s.y_col = "y";
    s.x_cols = {"x1", "x2"};
    s.z_cols = {"z1", "z2"};
    return s;
}

} // namespace

TEST_CASE("validate accepts a well-formed dataset") {
    const Dataset d = make_dataset({make_subject("a", {1, 2, 3})});
    CHECK(validate(d).empty());
}

TEST_CASE("validate reports ordering violations") {
    const Dataset d = make_dataset({make_subject("a", {2, 1})});
    const auto v = validate(d);
    REQUIRE_FALSE(v.empty());
    CHECK(v.front().subject_id == "a");
    CHECK(has_message(v, "times not strictly increasing"));
}

TEST_CASE("validate reports row count mismatch") {
    Subject s = make_subject("a", {1, 2, 3});
    s.x = Matrix::Ones(2, 2);
    const auto v = validate(make_dataset({s}));
    CHECK(has_message(v, "row count mismatch"));
}

TEST_CASE("validate enforces positivity, covariate bound and point cap") {
    Dataset d = make_dataset({make_subject("a", {0.0, 1.0})});
    CHECK(has_message(validate(d), "outside (0, T]"));
    ValidationOptions allow_zero;
    allow_zero.allow_zero_time = true;
    CHECK(validate(d, allow_zero).empty());

    Subject big = make_subject("b", {1, 2});
    big.x(0, 0) = 2e6;
    CHECK(has_message(validate(make_dataset({big})), "magnitude"));

    ValidationOptions cap;
    cap.max_points_per_subject = 1;
    CHECK(has_message(validate(make_dataset({make_subject("c", {1, 2})}), cap), "cap"));

    ValidationOptions ties;
    ties.allow_ties = true;
    CHECK(validate(make_dataset({make_subject("d", {1, 1})}), ties).empty());
    CHECK_FALSE(validate(make_dataset({make_subject("d", {1, 1})})).empty());
}

TEST_CASE("read_csv parses and groups subjects") {
    std::istringstream one("id,t,y,x1,x2,z1,z2\n"
                           "s1,1,0.5,1,0,1,1\n"
                           "s1,3,0.7,3,1,1,3\n"
                           "s1,2,0.6,2,0,1,2\n");
    const auto r = read_csv(one, simulator_schema());
    REQUIRE(r.dataset.n_subjects() == 1);
    const auto& s = r.dataset.subjects.front();
    CHECK(s.size() == 3);
    CHECK(s.times[1] == 2.0);
    CHECK(s.y[1] == doctest::Approx(0.6));
    CHECK(s.z(2, 1) == 3.0);
    CHECK(validate(r.dataset).empty());

    std::istringstream two("id,t,y,x1,x2,z1,z2\n"
                           "a,1,0.5,1,0,1,1\n"
                           "b,1,0.1,1,1,1,1\n"
                           "a,2,0.5,2,0,1,2\n"
                           "b,2,0.2,2,1,1,2\n"
                           "b,3,0.3,3,1,1,3\n");
    const auto r2 = read_csv(two, simulator_schema());
    REQUIRE(r2.dataset.n_subjects() == 2);
    CHECK(r2.dataset.subjects[0].size() == 2);
    CHECK(r2.dataset.subjects[1].size() == 3);
}

TEST_CASE("read_csv errors") {
    std::istringstream bad("id,t,y,x1,x2,z1,z2\ns1,abc,0.5,1,0,1,1\n");
    CHECK_THROWS_WITH_AS((void)read_csv(bad, simulator_schema()), doctest::Contains("non-numeric cell"),
                         DataError);

    std::istringstream missing("id,t,x1,x2,z1,z2\ns1,1,1,0,1,1\n");
    CHECK_THROWS_WITH_AS((void)read_csv(missing, simulator_schema()), doctest::Contains("y"), DataError);

    std::istringstream dup("id,t,y,x1,x2,z1,z2\ns1,1,0.5,1,0,1,1\ns1,1,0.6,1,0,1,1\n");
    CHECK_THROWS_WITH_AS((void)read_csv(dup, simulator_schema()), doctest::Contains("duplicate"), DataError);

    CHECK_THROWS_AS((void)read_csv(std::string("/nonexistent/file.csv"), simulator_schema()), DataError);
}

TEST_CASE("read_csv drops missing responses and honours quoting") {
    std::istringstream in("id,t,y,x1,x2,z1,z2\n"
                          "\"s,1\",1,NA,1,0,1,1\n"
                          "\"s,1\",2,0.25,2,0,1,2\n");
    const auto r = read_csv(in, simulator_schema());
    CHECK(r.dropped_missing_response == 1);
    REQUIRE(r.dataset.n_subjects() == 1);
    CHECK(r.dataset.subjects[0].id == "s,1");
}

TEST_CASE("write then read is the identity on numeric fields") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    std::vector<Subject> subjects;
    for (int i = 0; i < 6; ++i) {
        const int n = 1 + i % 4;
        std::vector<double> t;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) t.push_back(acc += 0.1 + std::abs(u(gen)) * 1e-3);
        Subject s = make_subject("subj" + std::to_string(i), t);
        for (Index j = 0; j < s.size(); ++j) {
            s.y[j] = u(gen) / 7.0;
            s.x.row(j) << u(gen), u(gen) * 1e-9;
            s.z.row(j) << 1.0, s.times[j];
        }
        subjects.push_back(s);
    }
    const Dataset d = make_dataset(subjects);
    const auto schema = default_schema(2, 2);
    std::stringstream buf;
    write_csv(buf, d, schema);
    const auto back = read_csv(buf, schema).dataset;
    REQUIRE(back.n_subjects() == d.n_subjects());
    for (std::size_t i = 0; i < d.n_subjects(); ++i) {
        const auto& a = d.subjects[i];
        const auto& b = back.subjects[i];
        CHECK(a.id == b.id);
        CHECK((a.times - b.times).cwiseAbs().maxCoeff() <= 1e-12 * a.times.cwiseAbs().maxCoeff());
        CHECK((a.y - b.y).norm() <= 1e-12 * a.y.norm());
        CHECK((a.x - b.x).norm() <= 1e-12 * a.x.norm());
        CHECK((a.z - b.z).norm() <= 1e-12 * a.z.norm());
    }
    CHECK(validate(back).empty());
}
