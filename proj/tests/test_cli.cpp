// Runs the ioulmm executable end to end.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = fs::path(IOULMM_TEST_WORKDIR) / "cli";

int run(const std::string& args) {
    const std::string cmd = std::string(IOULMM_CLI) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

fs::path write(const std::string& name, const std::string& content) {
    fs::create_directories(kWork);
    const auto p = kWork / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
}

const std::string kTheta = R"("theta":{"beta":[-0.25,0.5],"gamma":[1.25,1.0,1.5],"alpha":1.3,"tau":0.4,"sigma":1.25})";

std::string out(const std::string& dir) { return "--out " + (kWork / dir).string(); }

} // namespace

TEST_CASE("simulate then fit") {
    const auto sim = write("sim.json", R"({"design":{"n_subjects":250},)" + kTheta + R"(,"noise_seed":3})");
    REQUIRE(run(out("sim") + " simulate --config " + sim.string()) == 0);
    CHECK(lines(kWork / "sim/data.csv") == 5001);
    CHECK(fs::exists(kWork / "sim/schema.json"));
    REQUIRE(run(out("sim2") + " simulate --config " + sim.string()) == 0);
    CHECK(slurp(kWork / "sim/data.csv") == slurp(kWork / "sim2/data.csv"));

    const auto fitcfg = write("fit.json", R"({"model":{"kernel":"iou"},"fit":{"optimizer":"hybrid"}})");
    REQUIRE(run(out("fit") + " fit --data " + (kWork / "sim/data.csv").string() + " --schema " +
                (kWork / "sim/schema.json").string() + " --config " + fitcfg.string()) == 0);
    const json r = json::parse(slurp(kWork / "fit/fit_result.json"));
    CHECK(r["theta_hat"].size() == 8);
    CHECK(r["converged"] == true);
    CHECK(std::abs(r["theta_hat"]["beta2"].get<double>() - 0.5) < 0.1);
    const json m = json::parse(slurp(kWork / "fit/manifest.json"));
    CHECK(m["subcommand"] == "fit");
    CHECK(m["inputs"].size() == 3);
    CHECK(m["inputs"][0]["sha256"].get<std::string>().size() == 64);
    CHECK(m["config"]["fit"]["optimizer"] == "hybrid");
    CHECK(m["exit_code"] == 0);
}

TEST_CASE("unbalanced simulate row count") {
    const auto sim = write("unbal.json", R"({"design":{"kind":"unbalanced","n_subjects":10},)" + kTheta + "}");
    REQUIRE(run(out("unbal") + " simulate --config " + sim.string()) == 0);
    const auto rows = lines(kWork / "unbal/data.csv") - 1;
    CHECK(rows >= 150);
    CHECK(rows <= 190);
}

TEST_CASE("fit errors and exit codes") {
    write("tiny.csv", "id,t,y,x1,x2,z1,z2\n1,1,0.3,1,0,1,1\n");
    write("schema.json", R"({"id_col":"id","time_col":"t","y_col":"y","x_cols":["x1","x2"],"z_cols":["z1","z2"]})");
    write("noy.json", R"({"id_col":"id","time_col":"t","x_cols":["x1","x2"],"z_cols":["z1","z2"]})");
    CHECK(run(out("ui") + " fit --data " + (kWork / "tiny.csv").string() + " --schema " + (kWork / "schema.json").string()) ==
          2);
    CHECK(json::parse(slurp(kWork / "ui/fit_result.json"))["reason"] == "under-identified");

    CHECK(run(out("noy") + " fit --data " + (kWork / "tiny.csv").string() + " --schema " + (kWork / "noy.json").string()) ==
          1);
    CHECK(slurp(kWork / "last.log").find("y_col") != std::string::npos);

    CHECK(run(out("nofile") + " fit --data missing.csv --schema " + (kWork / "schema.json").string()) == 1);
    CHECK(run("fit --bogus") == 1);
    CHECK(slurp(kWork / "last.log").find("Usage") != std::string::npos);
    CHECK(run("") == 1);
    CHECK(run("--help") == 0);
}

TEST_CASE("simulate rejects an infeasible theta") {
    const auto bad = write("bad.json", R"({"theta":{"beta":[0,0],"gamma":[1,5,1],"alpha":1,"tau":1,"sigma2":1}})");
    CHECK(run(out("bad") + " simulate --config " + bad.string()) == 1);
    const auto typo = write("typo.json", R"({"desing":{},)" + kTheta + "}");
    CHECK(run(out("typo") + " simulate --config " + typo.string()) == 1);
    CHECK(slurp(kWork / "last.log").find("desing") != std::string::npos);
}

TEST_CASE("mcstudy outputs and determinism across thread counts") {
    const auto mc = write("mc.json", R"({"design":{"n_subjects":20,"n_points":8},)" + kTheta +
                                         R"(,"fit":{"max_iters":800},"replications":3,"noise_seed":5})");
    REQUIRE(run(out("mc1") + " --threads 1 mcstudy --config " + mc.string()) == 0);
    REQUIRE(run(out("mc3") + " --threads 3 mcstudy --config " + mc.string()) == 0);
    CHECK(slurp(kWork / "mc1/raw.csv") == slurp(kWork / "mc3/raw.csv"));
    CHECK(lines(kWork / "mc1/raw.csv") == 4);
    CHECK(slurp(kWork / "mc1/table.csv").rfind("parameter,bias,mcse\nbeta1,", 0) == 0);
    CHECK(lines(kWork / "mc1/table.csv") == 11);
    const json m = json::parse(slurp(kWork / "mc1/manifest.json"));
    CHECK(m["inputs"][0]["sha256"].get<std::string>().size() == 64);
    CHECK(m["seeds"]["noise_seed"] == 5);

    REQUIRE(run(out("mc_seed") + " --seed 6 mcstudy --config " + mc.string()) == 0);
    CHECK(slurp(kWork / "mc1/raw.csv") != slurp(kWork / "mc_seed/raw.csv"));
    CHECK(json::parse(slurp(kWork / "mc_seed/manifest.json"))["config"]["noise_seed"] == 6);
}

TEST_CASE("surface grid") {
    const auto cfg = write("surface.json", R"({"design":{"n_subjects":30},)" + kTheta +
                                               R"(,"grid":{"alpha":{"min":0.3,"max":2.3,"points":41},"tau":{"min":0.1,"max":0.7,"points":41}}})");
    REQUIRE(run(out("surf") + " surface --config " + cfg.string()) == 0);
    CHECK(lines(kWork / "surf/surface.csv") == 1682);
    const json m = json::parse(slurp(kWork / "surf/manifest.json"));
    CHECK(m["feasible_cells"] == 1681);
    CHECK(run(out("surf0") + " surface --config " + cfg.string() + " --alpha 1 2 0") == 1);
}

TEST_CASE("diagnose writes every requested report") {
    const auto cfg = write("diag.json", R"({"design":{"n_subjects":40,"n_points":6},)" + kTheta +
                                            R"(,"replications":20,"lan":{"n_values":[10,40],"include_zero":true},"clt":{},)"
                                            R"("information":{"n_values":[10,40]},"third_derivative":{"n_values":[10],"points":2}})");
    REQUIRE(run(out("diag") + " diagnose --config " + cfg.string()) == 0);
    const json lan = json::parse(slurp(kWork / "diag/lan.json"));
    bool zero_row = false;
    for (const auto& c : lan["cells"]) zero_row = zero_row || (c["direction"] == 11 && c["mean_abs"] == 0.0);
    CHECK(zero_row);
    for (auto f : {"clt.json", "information.json", "third_derivative.json", "manifest.json"}) CHECK(fs::exists(kWork / "diag" / f));

    const auto mc = write("mcn.json", R"({"design":{"n_subjects":30},)" + kTheta +
                                          R"(,"fit":{"optimizer":"hybrid","max_iters":3000},"replications":4})");
    REQUIRE(run(out("mcn") + " mcstudy --config " + mc.string()) == 0);
    const auto norm = write("norm.json", R"({"normality":{"studentized_csv":")" +
                                             (kWork / "mcn/studentized.csv").string() + R"("}})");
    REQUIRE(run(out("norm") + " diagnose --config " + norm.string()) == 0);
    const auto rows = lines(kWork / "norm/normality.csv") - 1;
    CHECK(rows > 0);
    CHECK(rows % 8 == 0);
    CHECK(json::parse(slurp(kWork / "norm/normality.json"))["low_power"] == true);
}
