#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "nndp/experiment.hpp"

using namespace nndp;
namespace fs = std::filesystem;

namespace {

// Small but complete config: lq problem, hybrid-now, riccati oracle.
nlohmann::json minimal_config(const std::string& out_dir) {
    return nlohmann::json{
        {"problem", {{"name", "lq_scalar"}, {"params", {{"horizon", 2}}}}},
        {"solver",
         {{"algorithm", "hybrid_now"},
          {"sample_size", 256},
          {"hidden_units", 6},
          {"gamma", 50.0},
          {"eta", 5.0},
          {"policy_gd",
           {{"variant", "minibatch"},
            {"iterations", 20},
            {"minibatch_count", 4},
            {"schedule", {{"kind", "constant"}, {"c", 0.1}}}}},
          {"value_gd",
           {{"variant", "minibatch"},
            {"iterations", 20},
            {"minibatch_count", 4},
            {"schedule", {{"kind", "constant"}, {"c", 0.2}}}}},
          {"training", {{"kind", "uniform"}, {"lo", {-2.0}}, {"hi", {2.0}}}},
          {"stage_cost_bound", 20.0},
          {"terminal_cost_bound", 20.0},
          {"seed", 7}}},
        {"oracle", "riccati"},
        {"evaluation",
         {{"test_states", {{1.0}}}, {"num_samples", 2000}, {"seed", 11}}},
        {"output_dir", out_dir}};
}

std::string write_config(const nlohmann::json& j, const std::string& name) {
    fs::path path = fs::temp_directory_path() / name;
    std::ofstream out(path);
    out << j.dump(2);
    return path.string();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("minimal valid config produces an empty violation list", "[experiment]") {
    auto path = write_config(minimal_config("/tmp/nndp_exp_valid"), "nndp_cfg_valid.json");
    auto report = validate_config(path);
    for (const auto& v : report.violations) UNSCOPED_INFO(v.field << ": " << v.message);
    REQUIRE(report.ok());
}

TEST_CASE("minibatch divisibility violations name both fields", "[experiment]") {
    auto config = minimal_config("/tmp/nndp_exp_mb");
    config["solver"]["sample_size"] = 250;  // not divisible by 4
    auto path = write_config(config, "nndp_cfg_mb.json");
    auto report = validate_config(path);
    REQUIRE_FALSE(report.ok());
    bool found = false;
    for (const auto& v : report.violations) {
        if (v.field.find("minibatch_count") != std::string::npos &&
            v.message.find("sample_size") != std::string::npos)
            found = true;
    }
    REQUIRE(found);
}

TEST_CASE("oversized finite control sets are reported with the documented limit",
          "[experiment]") {
    auto config = minimal_config("/tmp/nndp_exp_limit");
    config["problem"] = {{"name", "walk1d"}};
    config["solver"]["algorithm"] = "classification_pi";
    config["solver"]["max_finite_controls"] = 2;  // walk1d has 3 actions
    config["oracle"] = "grid_dp";
    auto path = write_config(config, "nndp_cfg_limit.json");
    auto report = validate_config(path);
    REQUIRE_FALSE(report.ok());
    bool found = false;
    for (const auto& v : report.violations)
        if (v.field == "solver.max_finite_controls" &&
            v.message.find("documented limit") != std::string::npos)
            found = true;
    REQUIRE(found);
}

TEST_CASE("unknown problems and missing seeds are rejected", "[experiment]") {
    auto config = minimal_config("/tmp/nndp_exp_bad");
    config["problem"]["name"] = "no_such_problem";
    config["solver"].erase("seed");
    auto path = write_config(config, "nndp_cfg_bad.json");
    auto report = validate_config(path);
    REQUIRE_FALSE(report.ok());
    bool unknown = false, seed = false;
    for (const auto& v : report.violations) {
        if (v.field == "problem" && v.message.find("no_such_problem") != std::string::npos)
            unknown = true;
        if (v.field == "solver.seed") seed = true;
    }
    REQUIRE(unknown);
    REQUIRE(seed);
}

TEST_CASE("run writes the artifact directory with pinned headers", "[experiment]") {
    fs::path dir = "/tmp/nndp_exp_run";
    fs::remove_all(dir);
    auto path = write_config(minimal_config(dir.string()), "nndp_cfg_run.json");
    REQUIRE(run_experiment(path) == 0);

    REQUIRE(fs::exists(dir / "manifest.json"));
    REQUIRE(fs::exists(dir / "solution" / "policy_000.json"));
    REQUIRE(fs::exists(dir / "solution" / "policy_001.json"));
    REQUIRE(fs::exists(dir / "solution" / "value_000.json"));
    REQUIRE(fs::exists(dir / "solution" / "metadata.json"));

    std::string estimates = slurp(dir / "value_estimates.csv");
    REQUIRE(estimates.rfind("state,mean,stderr,oracle\n", 0) == 0);
    // Oracle column filled for the riccati run.
    auto line = estimates.substr(estimates.find('\n') + 1);
    REQUIRE(line.back() == '\n');
    REQUIRE(line[line.size() - 2] != ',');

    std::string losses = slurp(dir / "losses.csv");
    REQUIRE(losses.rfind("time_step,phase,iteration,loss,gradient_norm\n", 0) == 0);
}

TEST_CASE("reruns with identical configs produce byte-identical csv outputs", "[experiment]") {
    fs::path dir_a = "/tmp/nndp_exp_rerun_a";
    fs::path dir_b = "/tmp/nndp_exp_rerun_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    auto path_a = write_config(minimal_config(dir_a.string()), "nndp_cfg_rerun_a.json");
    auto path_b = write_config(minimal_config(dir_b.string()), "nndp_cfg_rerun_b.json");
    REQUIRE(run_experiment(path_a) == 0);
    REQUIRE(run_experiment(path_b) == 0);
    for (const char* name : {"value_estimates.csv", "losses.csv"})
        REQUIRE(slurp(dir_a / name) == slurp(dir_b / name));
    REQUIRE(slurp(dir_a / "solution" / "metadata.json") ==
            slurp(dir_b / "solution" / "metadata.json"));
}

TEST_CASE("m-ladder runs emit one convergence row per (M, seed) pair", "[experiment]") {
    fs::path dir = "/tmp/nndp_exp_ladder";
    fs::remove_all(dir);
    auto config = minimal_config(dir.string());
    config["evaluation"]["m_ladder"] = {64, 128};
    config["evaluation"]["ladder_seeds"] = {1, 2, 3};
    config["evaluation"]["ladder_num_samples"] = 500;
    auto path = write_config(config, "nndp_cfg_ladder.json");
    REQUIRE(run_experiment(path) == 0);

    std::string convergence = slurp(dir / "convergence.csv");
    REQUIRE(convergence.rfind("sample_size,seed,value_error\n", 0) == 0);
    int rows = -1;  // discount the header
    for (char c : convergence)
        if (c == '\n') ++rows;
    REQUIRE(rows == 6);
}

TEST_CASE("laterq runs report the quantizer distortion", "[experiment]") {
    fs::path dir = "/tmp/nndp_exp_laterq";
    fs::remove_all(dir);
    auto config = minimal_config(dir.string());
    config["solver"]["algorithm"] = "hybrid_laterq";
    config["solver"]["quantizer_size"] = 4;
    config["solver"]["quantizer_training"] = {{"steps", 20000}, {"weight_samples", 5000}};
    auto path = write_config(config, "nndp_cfg_laterq.json");
    REQUIRE(run_experiment(path) == 0);
    std::string csv = slurp(dir / "quantizer_distortion.csv");
    REQUIRE(csv.rfind("grid_size,distortion,num_samples,seed\n", 0) == 0);
    REQUIRE(fs::exists(dir / "solution" / "quantizer.json"));
}

TEST_CASE("failed runs leave a machine-readable error record", "[experiment]") {
    fs::path dir = "/tmp/nndp_exp_fail";
    fs::remove_all(dir);
    auto config = minimal_config(dir.string());
    config["solver"]["sample_size"] = -3;
    auto path = write_config(config, "nndp_cfg_fail.json");
    REQUIRE(run_experiment(path) != 0);
    REQUIRE(fs::exists(dir / "error.json"));
    auto error = nlohmann::json::parse(slurp(dir / "error.json"));
    REQUIRE(error.at("error_type") == "validation");
}

TEST_CASE("oracle and quantize runs write their tables", "[experiment]") {
    fs::path dir = "/tmp/nndp_exp_oracle";
    fs::remove_all(dir);
    auto config = minimal_config(dir.string());
    auto path = write_config(config, "nndp_cfg_oracle.json");
    REQUIRE(run_oracle(path) == 0);
    std::string oracle = slurp(dir / "oracle_tables.csv");
    REQUIRE(oracle.rfind("time_step,gain,value_matrix,constant\n", 0) == 0);

    fs::path qdir = "/tmp/nndp_exp_quant";
    fs::remove_all(qdir);
    auto qconfig = minimal_config(qdir.string());
    qconfig["solver"]["quantizer_training"] = {{"steps", 20000}, {"weight_samples", 5000}};
    qconfig["quantize"] = {{"sizes", {2, 4}}};
    auto qpath = write_config(qconfig, "nndp_cfg_quant.json");
    REQUIRE(run_quantize(qpath) == 0);
    REQUIRE(fs::exists(qdir / "quantizer_002.json"));
    REQUIRE(fs::exists(qdir / "quantizer_004.json"));
    std::string csv = slurp(qdir / "quantizer_distortion.csv");
    int rows = -1;
    for (char c : csv)
        if (c == '\n') ++rows;
    REQUIRE(rows == 2);
}

TEST_CASE("output root env var prefixes relative output directories", "[experiment]") {
    fs::path root = "/tmp/nndp_exp_root";
    fs::remove_all(root);
    setenv("NNDP_OUTPUT_ROOT", root.c_str(), 1);
    auto config = minimal_config("nested/run");
    auto path = write_config(config, "nndp_cfg_root.json");
    int code = run_experiment(path);
    unsetenv("NNDP_OUTPUT_ROOT");
    REQUIRE(code == 0);
    REQUIRE(fs::exists(root / "nested/run/manifest.json"));
}
