#pragma once

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nndp/errors.hpp"
#include "nndp/oracles.hpp"
#include "nndp/problems.hpp"
#include "nndp/solvers.hpp"
#include "nndp/version.hpp"

namespace nndp {

struct Violation {
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

enum class OracleKind { none, riccati, grid_dp };

struct EvaluationSpec {
    std::vector<Eigen::VectorXd> test_states;
    int num_samples = 10000;
    std::uint64_t seed = 0;
    std::vector<int> m_ladder;
    std::vector<std::uint64_t> ladder_seeds;
    int ladder_num_samples = 0;  // 0: reuse num_samples
};

struct ExperimentConfig {
    nlohmann::json raw;
    std::string problem_name;
    nlohmann::json problem_params;
    SolverConfig solver;
    bool explore_then_exploit = false;
    BoxBounds explore_box;
    OracleKind oracle = OracleKind::none;
    EvaluationSpec evaluation;
    std::string output_dir;
    std::vector<int> quantize_sizes;  // `quantize` verb
};

namespace detail {

inline void check(ValidationReport& report, bool condition, const std::string& field,
                  const std::string& message) {
    if (!condition) report.violations.push_back({field, message});
}

inline GdConfig parse_gd(const nlohmann::json& j, const std::string& field,
                         ValidationReport& report) {
    GdConfig gd;
    if (j.is_null()) return gd;
    try {
        if (j.contains("variant")) gd.variant = gd_variant_from_string(j.at("variant"));
    } catch (const ConfigError& e) {
        report.violations.push_back({field + ".variant", e.what()});
    }
    gd.iterations = j.value("iterations", gd.iterations);
    check(report, gd.iterations >= 1, field + ".iterations", "must be >= 1");
    gd.minibatch_count = j.value("minibatch_count", gd.minibatch_count);
    check(report, gd.minibatch_count >= 1, field + ".minibatch_count", "must be >= 1");
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        std::string kind = s.value("kind", "constant");
        double c = s.value("c", 0.1);
        double k0 = s.value("k0", 1.0);
        check(report, c > 0.0, field + ".schedule.c", "must be positive");
        check(report, k0 > 0.0, field + ".schedule.k0", "must be positive");
        if (c > 0.0 && k0 > 0.0) {
            if (kind == "constant") {
                gd.schedule = LearningSchedule::constant(c);
            } else if (kind == "inverse_time") {
                gd.schedule = LearningSchedule::inverse_time(c, k0);
            } else {
                report.violations.push_back(
                    {field + ".schedule.kind", "unknown schedule: " + kind});
            }
        }
    }
    gd.early_stop = j.value("early_stop", false);
    return gd;
}

inline TrainingDistribution parse_training(const nlohmann::json& j, int state_dim,
                                           ValidationReport& report, bool& explore_exploit,
                                           BoxBounds& explore_box) {
    explore_exploit = false;
    auto read_vector = [](const nlohmann::json& arr) {
        Eigen::VectorXd v(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) v(i) = arr.at(i).get<double>();
        return v;
    };
    try {
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "gaussian") {
            std::vector<Eigen::VectorXd> means;
            for (const auto& m : j.at("means")) means.push_back(read_vector(m));
            std::vector<double> radii = j.at("radii").get<std::vector<double>>();
            auto dist = TrainingDistribution::gaussian(means, radii);
            check(report, dist.dim() == state_dim, "solver.training.means",
                  "dimension must match the problem state");
            return dist;
        }
        if (kind == "uniform" || kind == "explore_then_exploit") {
            BoxBounds box{read_vector(j.at("lo")), read_vector(j.at("hi"))};
            auto dist = TrainingDistribution::uniform(box);
            check(report, dist.dim() == state_dim, "solver.training.lo",
                  "dimension must match the problem state");
            if (kind == "explore_then_exploit") {
                explore_exploit = true;
                explore_box = box;
            }
            return dist;
        }
        report.violations.push_back({"solver.training.kind", "unknown kind: " + kind});
    } catch (const std::exception& e) {
        report.violations.push_back({"solver.training", e.what()});
    }
    return {};
}

inline const char* oracle_name(OracleKind kind) {
    switch (kind) {
        case OracleKind::none: return "none";
        case OracleKind::riccati: return "riccati";
        case OracleKind::grid_dp: return "grid_dp";
    }
    return "none";
}

// Stable float formatting shared by every CSV writer.
inline std::string csv_number(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.12g", v);
    return buffer;
}

inline std::string csv_state(const Eigen::VectorXd& x) {
    std::string out;
    for (int i = 0; i < x.size(); ++i) {
        if (i) out += ';';
        out += csv_number(x(i));
    }
    return out;
}

}  // namespace detail

// Parses and cross-validates the experiment JSON without running anything.
// Every violation found is reported; the config is usable only when the
// report is clean.
inline std::pair<ExperimentConfig, ValidationReport> parse_experiment(const nlohmann::json& j) {
    ExperimentConfig config;
    ValidationReport report;
    config.raw = j;

    // problem
    std::optional<BuiltProblem> built;
    if (!j.contains("problem") || !j.at("problem").contains("name")) {
        report.violations.push_back({"problem.name", "required"});
    } else {
        config.problem_name = j.at("problem").at("name").get<std::string>();
        config.problem_params = j.at("problem").value("params", nlohmann::json::object());
        try {
            built = make_problem(config.problem_name, config.problem_params);
        } catch (const std::exception& e) {
            report.violations.push_back({"problem", e.what()});
        }
    }

    // solver
    const nlohmann::json solver = j.value("solver", nlohmann::json::object());
    try {
        config.solver.algorithm =
            algorithm_from_string(solver.value("algorithm", "hybrid_now"));
    } catch (const ConfigError& e) {
        report.violations.push_back({"solver.algorithm", e.what()});
    }
    config.solver.sample_size = solver.value("sample_size", 4096);
    detail::check(report, config.solver.sample_size >= 1, "solver.sample_size", "must be >= 1");
    config.solver.shape.hidden_units = solver.value("hidden_units", 16);
    detail::check(report, config.solver.shape.hidden_units >= 1, "solver.hidden_units",
                  "must be >= 1");
    config.solver.shape.gamma = solver.value("gamma", 100.0);
    config.solver.shape.eta = solver.value("eta", 10.0);
    detail::check(report, config.solver.shape.gamma > 0.0, "solver.gamma", "must be positive");
    detail::check(report, config.solver.shape.eta > 0.0, "solver.eta", "must be positive");

    config.solver.policy_gd =
        detail::parse_gd(solver.value("policy_gd", nlohmann::json()), "solver.policy_gd", report);
    config.solver.value_gd =
        detail::parse_gd(solver.value("value_gd", nlohmann::json()), "solver.value_gd", report);

    auto check_divides = [&](const std::string& field, const GdConfig& gd, int m) {
        if (gd.variant == GdVariant::minibatch && gd.minibatch_count >= 1 && m >= 1)
            detail::check(report, m % gd.minibatch_count == 0, field,
                          "minibatch_count " + std::to_string(gd.minibatch_count) +
                              " must divide sample_size " + std::to_string(m));
    };
    check_divides("solver.policy_gd.minibatch_count", config.solver.policy_gd,
                  config.solver.sample_size);
    check_divides("solver.value_gd.minibatch_count", config.solver.value_gd,
                  config.solver.sample_size);

    try {
        if (solver.contains("policy_init"))
            config.solver.policy_init = init_scheme_from_string(solver.at("policy_init"));
        if (solver.contains("value_init"))
            config.solver.value_init = init_scheme_from_string(solver.at("value_init"));
    } catch (const ConfigError& e) {
        report.violations.push_back({"solver.init", e.what()});
    }

    config.solver.quantizer_size = solver.value("quantizer_size", 64);
    if (solver.contains("quantizer_training")) {
        const auto& q = solver.at("quantizer_training");
        config.solver.quantizer_training.steps =
            q.value("steps", config.solver.quantizer_training.steps);
        config.solver.quantizer_training.schedule_a =
            q.value("schedule_a", config.solver.quantizer_training.schedule_a);
        config.solver.quantizer_training.schedule_b =
            q.value("schedule_b", config.solver.quantizer_training.schedule_b);
        config.solver.quantizer_training.weight_samples =
            q.value("weight_samples", config.solver.quantizer_training.weight_samples);
        config.solver.quantizer_lloyd_refine = q.value("lloyd_refine", true);
    }
    if (config.solver.algorithm == Algorithm::hybrid_laterq)
        detail::check(report, config.solver.quantizer_size >= 1, "solver.quantizer_size",
                      "must be >= 1");

    config.solver.stage_cost_bound = solver.value("stage_cost_bound", 0.0);
    config.solver.terminal_cost_bound = solver.value("terminal_cost_bound", 0.0);
    if (config.solver.algorithm == Algorithm::hybrid_now ||
        config.solver.algorithm == Algorithm::hybrid_laterq) {
        detail::check(report,
                      config.solver.stage_cost_bound >= 0.0 &&
                          config.solver.terminal_cost_bound >= 0.0 &&
                          config.solver.stage_cost_bound + config.solver.terminal_cost_bound >
                              0.0,
                      "solver.stage_cost_bound",
                      "hybrid methods need nonnegative cost bounds with a positive sum");
    }
    if (solver.contains("localization_radius") && !solver.at("localization_radius").is_null()) {
        config.solver.localization_radius = solver.at("localization_radius").get<double>();
        detail::check(report, *config.solver.localization_radius > 0.0,
                      "solver.localization_radius", "must be positive");
    }
    config.solver.max_finite_controls = solver.value("max_finite_controls", 64);

    if (!solver.contains("seed")) {
        report.violations.push_back(
            {"solver.seed", "required; runs must be seeded explicitly"});
    } else {
        config.solver.seed = solver.at("seed").get<std::uint64_t>();
    }

    if (built) {
        if (solver.contains("training")) {
            config.solver.training =
                detail::parse_training(solver.at("training"), built->problem.state_dim, report,
                                       config.explore_then_exploit, config.explore_box);
        } else {
            report.violations.push_back({"solver.training", "required"});
        }
        if (config.solver.algorithm == Algorithm::classification_pi) {
            const auto* fin = std::get_if<FiniteControlSet>(&built->problem.control_bounds);
            if (!fin) {
                report.violations.push_back(
                    {"solver.algorithm", "classification_pi needs a finite control set"});
            } else {
                detail::check(report,
                              static_cast<int>(fin->elements.size()) <=
                                  config.solver.max_finite_controls,
                              "solver.max_finite_controls",
                              "the problem has " + std::to_string(fin->elements.size()) +
                                  " actions; the documented limit is " +
                                  std::to_string(config.solver.max_finite_controls));
            }
        }
    }

    // oracle
    std::string oracle = j.value("oracle", "none");
    if (oracle == "none") {
        config.oracle = OracleKind::none;
    } else if (oracle == "riccati") {
        config.oracle = OracleKind::riccati;
        if (built)
            detail::check(report, built->lq.has_value(), "oracle",
                          "problem '" + config.problem_name + "' has no lq specification");
    } else if (oracle == "grid_dp") {
        config.oracle = OracleKind::grid_dp;
        if (built)
            detail::check(report, built->grid.has_value(), "oracle",
                          "problem '" + config.problem_name + "' has no grid specification");
    } else {
        report.violations.push_back({"oracle", "unknown oracle: " + oracle});
    }

    // evaluation
    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        if (e.contains("test_states")) {
            for (const auto& row : e.at("test_states")) {
                Eigen::VectorXd x(row.size());
                for (std::size_t i = 0; i < row.size(); ++i) x(i) = row.at(i).get<double>();
                config.evaluation.test_states.push_back(std::move(x));
            }
        }
        config.evaluation.num_samples = e.value("num_samples", 10000);
        detail::check(report, config.evaluation.num_samples >= 1, "evaluation.num_samples",
                      "must be >= 1");
        if (!e.contains("seed")) {
            report.violations.push_back(
                {"evaluation.seed", "required; runs must be seeded explicitly"});
        } else {
            config.evaluation.seed = e.at("seed").get<std::uint64_t>();
        }
        if (e.contains("m_ladder")) {
            config.evaluation.m_ladder = e.at("m_ladder").get<std::vector<int>>();
            config.evaluation.ladder_seeds =
                e.value("ladder_seeds", std::vector<std::uint64_t>{});
            detail::check(report, !config.evaluation.ladder_seeds.empty(),
                          "evaluation.ladder_seeds", "required with m_ladder");
            detail::check(report, config.oracle != OracleKind::none, "evaluation.m_ladder",
                          "convergence errors need an oracle");
            for (int m : config.evaluation.m_ladder) {
                detail::check(report, m >= 1, "evaluation.m_ladder", "entries must be >= 1");
                check_divides("evaluation.m_ladder", config.solver.policy_gd, m);
                check_divides("evaluation.m_ladder", config.solver.value_gd, m);
            }
        }
        config.evaluation.ladder_num_samples = e.value("ladder_num_samples", 0);
    } else {
        report.violations.push_back({"evaluation", "required"});
    }
    if (built && config.evaluation.test_states.empty())
        report.violations.push_back({"evaluation.test_states", "need at least one state"});
    if (built)
        for (const auto& x : config.evaluation.test_states)
            detail::check(report, x.size() == built->problem.state_dim,
                          "evaluation.test_states", "state dimension mismatch");

    config.output_dir = j.value("output_dir", "");
    detail::check(report, !config.output_dir.empty(), "output_dir", "required");

    if (j.contains("quantize") && j.at("quantize").contains("sizes"))
        config.quantize_sizes = j.at("quantize").at("sizes").get<std::vector<int>>();

    return {std::move(config), std::move(report)};
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

inline ValidationReport validate_config(const std::string& path) {
    ValidationReport report;
    nlohmann::json j;
    try {
        j = load_json_file(path);
    } catch (const std::exception& e) {
        report.violations.push_back({"config", e.what()});
        return report;
    }
    return parse_experiment(j).second;
}

namespace detail {

inline std::filesystem::path resolve_output_dir(const std::string& configured) {
    std::filesystem::path dir(configured);
    if (dir.is_relative()) {
        if (const char* root = std::getenv("NNDP_OUTPUT_ROOT")) dir = std::filesystem::path(root) / dir;
    }
    return dir;
}

inline double oracle_value_at(const ExperimentConfig& config, const BuiltProblem& built,
                              const Eigen::VectorXd& x) {
    if (config.oracle == OracleKind::riccati) {
        auto sol = riccati_solve(*built.lq);
        return sol.value(0, x);
    }
    auto dp = grid_dp_solve(built.problem, *built.grid);
    return dp.value(0, built.grid->nearest_state(x));
}

inline SolvedPolicySequence run_solver(const ExperimentConfig& config,
                                       const BuiltProblem& built, const SolverConfig& solver) {
    if (config.explore_then_exploit)
        return solve_explore_then_exploit(built.problem, solver, config.explore_box,
                                          built.default_x0)
            .exploit;
    return solve(built.problem, solver);
}

inline void save_solution_dir(const SolvedPolicySequence& solved,
                              const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::filesystem::path& path, const nlohmann::json& j) {
        std::ofstream out(path);
        out << j.dump(2) << '\n';
    };
    char name[64];
    for (std::size_t n = 0; n < solved.policies.size(); ++n) {
        std::snprintf(name, sizeof(name), "policy_%03zu.json", n);
        write(dir / name, to_json(solved.policies[n]));
    }
    for (std::size_t n = 0; n < solved.softmax_policies.size(); ++n) {
        std::snprintf(name, sizeof(name), "policy_%03zu.json", n);
        write(dir / name, to_json(solved.softmax_policies[n]));
    }
    for (std::size_t n = 0; n < solved.value_nets.size(); ++n) {
        if (!solved.value_nets[n]) continue;
        std::snprintf(name, sizeof(name), "value_%03zu.json", n);
        nlohmann::json j = to_json(*solved.value_nets[n]);
        j["truncation_bound"] = solved.value_bounds[n];
        write(dir / name, j);
    }
    if (solved.quantizer) write(dir / "quantizer.json", to_json(*solved.quantizer));
    nlohmann::json solution = to_json(solved);
    solution.erase("policies");
    solution.erase("value_networks");
    solution.erase("quantizer");
    write(dir / "metadata.json", solution);
}

}  // namespace detail

// Runs the full experiment: solves, evaluates against the oracle, and
// writes the manifest, solved-policy directory and CSV tables. Returns the
// process exit code; failures leave a machine-readable error.json behind.
inline int run_experiment(const std::string& config_path) {
    nlohmann::json raw;
    ExperimentConfig config;
    std::filesystem::path dir;
    auto record_error = [&](const std::string& type, const std::string& message) {
        std::fprintf(stderr, "error (%s): %s\n", type.c_str(), message.c_str());
        if (!dir.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(dir, ec);
            if (!ec) {
                std::ofstream out(dir / "error.json");
                out << nlohmann::json{{"error_type", type}, {"message", message}}.dump(2)
                    << '\n';
            }
        }
        return 1;
    };

    try {
        raw = load_json_file(config_path);
    } catch (const std::exception& e) {
        return record_error("config", e.what());
    }
    auto [parsed, report] = parse_experiment(raw);
    config = std::move(parsed);
    if (!config.output_dir.empty()) dir = detail::resolve_output_dir(config.output_dir);
    if (!report.ok()) {
        std::string all;
        for (const auto& v : report.violations)
            all += v.field + ": " + v.message + "; ";
        return record_error("validation", all);
    }

    try {
        BuiltProblem built = make_problem(config.problem_name, config.problem_params);
        std::filesystem::create_directories(dir);

        SolverConfig solver = config.solver;
        solver.record_losses = true;
        SolvedPolicySequence solved = detail::run_solver(config, built, solver);
        detail::save_solution_dir(solved, dir / "solution");

        // value_estimates.csv
        {
            std::ofstream out(dir / "value_estimates.csv");
            out << "state,mean,stderr,oracle\n";
            for (const auto& x : config.evaluation.test_states) {
                auto estimate = estimate_value_pi(built.problem, solved, 0, x,
                                                  config.evaluation.num_samples,
                                                  config.evaluation.seed);
                out << detail::csv_state(x) << ',' << detail::csv_number(estimate.mean) << ','
                    << detail::csv_number(estimate.standard_error) << ',';
                if (config.oracle != OracleKind::none)
                    out << detail::csv_number(detail::oracle_value_at(config, built, x));
                out << '\n';
            }
        }

        // losses.csv
        {
            std::ofstream out(dir / "losses.csv");
            out << "time_step,phase,iteration,loss,gradient_norm\n";
            for (const auto& step : solved.metadata.steps) {
                for (const auto& row : step.policy_trace)
                    out << step.time_step << ",policy," << row.iteration << ','
                        << detail::csv_number(row.loss) << ','
                        << detail::csv_number(row.gradient_norm) << '\n';
                for (const auto& row : step.value_trace)
                    out << step.time_step << ",value," << row.iteration << ','
                        << detail::csv_number(row.loss) << ','
                        << detail::csv_number(row.gradient_norm) << '\n';
            }
        }

        // convergence.csv over the M-ladder
        if (!config.evaluation.m_ladder.empty()) {
            double oracle = detail::oracle_value_at(config, built,
                                                    config.evaluation.test_states.front());
            int eval_samples = config.evaluation.ladder_num_samples > 0
                                   ? config.evaluation.ladder_num_samples
                                   : config.evaluation.num_samples;
            std::ofstream out(dir / "convergence.csv");
            out << "sample_size,seed,value_error\n";
            for (int m : config.evaluation.m_ladder) {
                for (std::uint64_t seed : config.evaluation.ladder_seeds) {
                    SolverConfig ladder = config.solver;
                    ladder.sample_size = m;
                    ladder.seed = seed;
                    ladder.record_losses = false;
                    SolvedPolicySequence run = detail::run_solver(config, built, ladder);
                    auto estimate =
                        estimate_value_pi(built.problem, run, 0,
                                          config.evaluation.test_states.front(), eval_samples,
                                          config.evaluation.seed);
                    out << m << ',' << seed << ','
                        << detail::csv_number(estimate.mean - oracle) << '\n';
                }
            }
        }

        // quantizer_distortion.csv
        if (solved.quantizer) {
            std::ofstream out(dir / "quantizer_distortion.csv");
            out << "grid_size,distortion,num_samples,seed\n";
            const int samples = 100000;
            double d = distortion(*solved.quantizer, built.problem.noise, samples,
                                  config.evaluation.seed);
            out << solved.quantizer->size() << ',' << detail::csv_number(d) << ',' << samples
                << ',' << config.evaluation.seed << '\n';
        }

        // manifest.json: config echo + versions; created_at is the single
        // field excluded from reproducibility comparisons.
        {
            nlohmann::json manifest;
            manifest["config"] = config.raw;
            manifest["library_version"] = library_version();
            std::time_t now = std::time(nullptr);
            char stamp[32];
            std::strftime(stamp, sizeof(stamp), "%FT%TZ", std::gmtime(&now));
            manifest["created_at"] = stamp;
            std::ofstream out(dir / "manifest.json");
            out << manifest.dump(2) << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        return record_error("runtime", e.what());
    }
}

// Oracle-only run: writes the reference tables for the configured problem.
inline int run_oracle(const std::string& config_path) {
    try {
        auto [config, report] = parse_experiment(load_json_file(config_path));
        if (!report.ok()) {
            for (const auto& v : report.violations)
                std::fprintf(stderr, "%s: %s\n", v.field.c_str(), v.message.c_str());
            return 1;
        }
        if (config.oracle == OracleKind::none) {
            std::fprintf(stderr, "oracle run needs \"oracle\" set to riccati or grid_dp\n");
            return 1;
        }
        BuiltProblem built = make_problem(config.problem_name, config.problem_params);
        std::filesystem::path dir = detail::resolve_output_dir(config.output_dir);
        std::filesystem::create_directories(dir);
        if (config.oracle == OracleKind::grid_dp) {
            auto dp = grid_dp_solve(built.problem, *built.grid);
            export_grid_dp_csv(*built.grid, dp, (dir / "oracle_tables.csv").string());
        } else {
            auto sol = riccati_solve(*built.lq);
            std::ofstream out(dir / "oracle_tables.csv");
            out << "time_step,gain,value_matrix,constant\n";
            for (int n = 0; n <= built.lq->horizon; ++n) {
                out << n << ',';
                if (n < built.lq->horizon) {
                    std::string gain;
                    for (int i = 0; i < sol.gain[n].size(); ++i) {
                        if (i) gain += ';';
                        gain += detail::csv_number(sol.gain[n](i));
                    }
                    out << gain;
                }
                std::string pm;
                for (int i = 0; i < sol.value_matrix[n].size(); ++i) {
                    if (i) pm += ';';
                    pm += detail::csv_number(sol.value_matrix[n](i));
                }
                out << ',' << pm << ',' << detail::csv_number(sol.constant[n]) << '\n';
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

// Quantizer-only run: trains grids of the configured sizes on the problem
// noise and reports their distortions.
inline int run_quantize(const std::string& config_path) {
    try {
        auto [config, report] = parse_experiment(load_json_file(config_path));
        if (!report.ok()) {
            for (const auto& v : report.violations)
                std::fprintf(stderr, "%s: %s\n", v.field.c_str(), v.message.c_str());
            return 1;
        }
        BuiltProblem built = make_problem(config.problem_name, config.problem_params);
        std::filesystem::path dir = detail::resolve_output_dir(config.output_dir);
        std::filesystem::create_directories(dir);
        std::vector<int> sizes = config.quantize_sizes;
        if (sizes.empty()) sizes.push_back(config.solver.quantizer_size);

        std::ofstream out(dir / "quantizer_distortion.csv");
        out << "grid_size,distortion,num_samples,seed\n";
        const int samples = 100000;
        for (int k : sizes) {
            Quantizer q = clvq_train(built.problem.noise, k, config.solver.quantizer_training,
                                     config.solver.seed);
            if (config.solver.quantizer_lloyd_refine) {
                SeedStream stream(config.solver.seed, stream_domain::quantizer);
                Eigen::MatrixXd sample(config.solver.quantizer_training.weight_samples,
                                       built.problem.noise.dimension);
                for (int i = 0; i < sample.rows(); ++i)
                    sample.row(i) = built.problem.noise.draw(stream).transpose();
                q = lloyd_refine(q, sample);
            }
            double d = distortion(q, built.problem.noise, samples, config.evaluation.seed);
            out << k << ',' << detail::csv_number(d) << ',' << samples << ','
                << config.evaluation.seed << '\n';
            char name[64];
            std::snprintf(name, sizeof(name), "quantizer_%03d.json", k);
            std::ofstream qfile(dir / name);
            qfile << to_json(q, {{"grid_size", k}, {"seed", config.solver.seed}}).dump(2)
                  << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace nndp
