#include <catch2/catch_amalgamated.hpp>

#include "nndp/oracles.hpp"
#include "nndp/problems.hpp"
#include "nndp/solvers.hpp"

using namespace nndp;

namespace {

Vector scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

TrainingDistribution uniform1d(double lo, double hi) {
    BoxBounds box;
    box.lo = scalar(lo);
    box.hi = scalar(hi);
    return TrainingDistribution::uniform(box);
}

GdConfig quick_gd(int epochs, int minibatches, double rate) {
    GdConfig gd;
    gd.variant = GdVariant::minibatch;
    gd.iterations = epochs;
    gd.minibatch_count = minibatches;
    gd.schedule = LearningSchedule::constant(rate);
    return gd;
}

// Static state, pure control cost: the optimum a == 1 is pointwise.
ControlProblem static_target_problem(int horizon) {
    ControlProblem p;
    p.horizon = horizon;
    p.state_dim = p.control_dim = 1;
    p.dynamics = [](const Vector& x, const Vector&, const Vector&) { return x; };
    p.stage_cost = [](const Vector&, const Vector& a) {
        return (a(0) - 1.0) * (a(0) - 1.0);
    };
    p.terminal_cost = [](const Vector&) { return 0.0; };
    p.noise = NoiseSampler::standard_normal(1);
    ProblemDerivatives d;
    d.dynamics_dx = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Identity(1, 1);
    };
    d.dynamics_da = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Zero(1, 1);
    };
    d.stage_dx = [](const Vector&, const Vector&) { return Eigen::VectorXd::Zero(1); };
    d.stage_da = [](const Vector&, const Vector& a) -> Vector {
        return scalar(2.0 * (a(0) - 1.0));
    };
    d.terminal_dx = [](const Vector&) { return Eigen::VectorXd::Zero(1); };
    p.derivatives = std::move(d);
    return p;
}

}  // namespace

TEST_CASE("nncontpi learns a pointwise separable optimum", "[solvers]") {
    auto problem = static_target_problem(2);
    SolverConfig config;
    config.algorithm = Algorithm::nncontpi;
    config.sample_size = 512;
    config.shape = {8, 20.0, 5.0};
    config.policy_gd = quick_gd(300, 8, 0.4);
    config.training = uniform1d(-2.0, 2.0);
    config.seed = 3;
    auto solved = solve(problem, config);
    for (int n = 0; n < 2; ++n)
        for (double x = -2.0; x <= 2.0; x += 0.1)
            REQUIRE(std::abs(solved.control(n, scalar(x))(0) - 1.0) < 0.02);
}

TEST_CASE("one-step nncontpi recovers the riccati feedback", "[solvers]") {
    LqSpec spec = LqSpec::scalar(1.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1);
    auto riccati = riccati_solve(spec);
    auto problem = lq_control_problem(spec);
    SolverConfig config;
    config.algorithm = Algorithm::nncontpi;
    config.sample_size = 4096;
    config.shape = {12, 50.0, 5.0};
    config.policy_gd = quick_gd(150, 8, 0.1);
    config.training = uniform1d(-2.0, 2.0);
    config.seed = 11;
    auto solved = solve(problem, config);

    double abs_err = 0.0;
    int count = 0;
    for (double x = -1.5; x <= 1.5; x += 0.1) {
        abs_err += std::abs(solved.control(0, scalar(x))(0) - riccati.control(0, scalar(x))(0));
        ++count;
    }
    REQUIRE(abs_err / count < 0.05);
}

TEST_CASE("estimate_value_pi handles the terminal and deterministic cases", "[solvers]") {
    auto problem = static_target_problem(2);
    problem.noise = NoiseSampler::constant(scalar(0.0));
    SolverConfig config;
    config.algorithm = Algorithm::nncontpi;
    config.sample_size = 128;
    config.shape = {4, 10.0, 2.0};
    config.policy_gd = quick_gd(60, 4, 0.4);
    config.training = uniform1d(-1.0, 1.0);
    config.seed = 5;
    auto solved = solve(problem, config);

    // Empty-horizon convention.
    auto terminal = estimate_value_pi(problem, solved, 2, scalar(0.7), 100, 1);
    REQUIRE(terminal.mean == problem.terminal_cost(scalar(0.7)));
    REQUIRE(terminal.standard_error == 0.0);

    // Deterministic rollouts have zero spread and match simulate().
    auto estimate = estimate_value_pi(problem, solved, 0, scalar(0.3), 64, 2);
    REQUIRE(estimate.standard_error == 0.0);
    std::vector<FeedbackPolicy> policies;
    for (int n = 0; n < 2; ++n) policies.push_back(solved.policy_fn(n));
    auto traj = simulate(problem, policies, scalar(0.3), 1234);
    REQUIRE(estimate.mean == traj.realized_cost);
}

TEST_CASE("one-step hybrid-now and nncontpi agree on the lq problem", "[solvers]") {
    LqSpec spec = LqSpec::scalar(1.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1);
    auto problem = lq_control_problem(spec);
    SolverConfig config;
    config.algorithm = Algorithm::nncontpi;
    config.sample_size = 4096;
    config.shape = {12, 50.0, 5.0};
    config.policy_gd = quick_gd(150, 8, 0.1);
    config.value_gd = quick_gd(150, 8, 0.1);
    config.training = uniform1d(-2.0, 2.0);
    config.stage_cost_bound = 10.0;
    config.terminal_cost_bound = 10.0;
    config.seed = 21;
    auto pi = solve(problem, config);
    config.algorithm = Algorithm::hybrid_now;
    auto hybrid = solve(problem, config);

    auto v_pi = estimate_value_pi(problem, pi, 0, scalar(1.0), 50000, 77);
    auto v_hy = estimate_value_pi(problem, hybrid, 0, scalar(1.0), 50000, 77);
    REQUIRE(std::abs(v_pi.mean - v_hy.mean) < 0.05);
}

TEST_CASE("hybrid value networks respect the truncation bound everywhere", "[solvers]") {
    // f == 0 and |g| <= 2, so every fitted estimate must clamp into [-2, 2].
    ControlProblem p;
    p.horizon = 3;
    p.state_dim = p.control_dim = 1;
    p.dynamics = [](const Vector& x, const Vector& a, const Vector& e) -> Vector {
        return x + a + e;
    };
    p.stage_cost = [](const Vector&, const Vector&) { return 0.0; };
    p.terminal_cost = [](const Vector& x) { return 2.0 / (1.0 + x(0) * x(0)); };
    p.noise = NoiseSampler::standard_normal(1);
    ProblemDerivatives d;
    d.dynamics_dx = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Identity(1, 1);
    };
    d.dynamics_da = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Identity(1, 1);
    };
    d.stage_dx = [](const Vector&, const Vector&) { return Eigen::VectorXd::Zero(1); };
    d.stage_da = [](const Vector&, const Vector&) { return Eigen::VectorXd::Zero(1); };
    d.terminal_dx = [](const Vector& x) -> Vector {
        double den = 1.0 + x(0) * x(0);
        return scalar(-4.0 * x(0) / (den * den));
    };
    p.derivatives = std::move(d);

    SolverConfig config;
    config.algorithm = Algorithm::hybrid_now;
    config.sample_size = 256;
    config.shape = {8, 30.0, 5.0};
    config.policy_gd = quick_gd(40, 4, 0.1);
    config.value_gd = quick_gd(60, 4, 0.2);
    config.training = uniform1d(-3.0, 3.0);
    config.stage_cost_bound = 0.0;  // f identically zero
    config.terminal_cost_bound = 2.0;
    config.seed = 9;
    auto solved = solve(p, config);

    SeedStream stream(33);
    for (int n = 0; n < 3; ++n) {
        REQUIRE(solved.value_nets[n].has_value());
        REQUIRE(solved.value_bounds[n] == 2.0);
        for (int t = 0; t < 10000 / 3; ++t) {
            double v = solved.value_net_eval(n, scalar(stream.next_uniform(-8.0, 8.0)));
            REQUIRE(v >= -2.0);
            REQUIRE(v <= 2.0);
        }
    }
}

TEST_CASE("single-atom regress-later matches the exact expectation on linear structure",
          "[solvers]") {
    // Linear terminal value and additive dynamics: one quantization point at
    // the noise mean makes the quantized expectation exact.
    ControlProblem p;
    p.horizon = 1;
    p.state_dim = p.control_dim = 1;
    p.dynamics = [](const Vector& x, const Vector& a, const Vector& e) -> Vector {
        return x + a + e;
    };
    p.stage_cost = [](const Vector&, const Vector& a) {
        return (a(0) - 0.5) * (a(0) - 0.5);
    };
    p.terminal_cost = [](const Vector& x) { return 2.0 * x(0) + 1.0; };
    p.noise = NoiseSampler::standard_normal(1);
    ProblemDerivatives d;
    d.dynamics_dx = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Identity(1, 1);
    };
    d.dynamics_da = [](const Vector&, const Vector&, const Vector&) {
        return Eigen::MatrixXd::Identity(1, 1);
    };
    d.stage_dx = [](const Vector&, const Vector&) { return Eigen::VectorXd::Zero(1); };
    d.stage_da = [](const Vector&, const Vector& a) -> Vector {
        return scalar(2.0 * (a(0) - 0.5));
    };
    d.terminal_dx = [](const Vector&) { return scalar(2.0); };
    p.derivatives = std::move(d);

    SolverConfig config;
    config.algorithm = Algorithm::hybrid_laterq;
    config.sample_size = 2048;
    config.shape = {16, 60.0, 5.0};
    config.policy_gd = quick_gd(120, 8, 0.1);
    config.value_gd = quick_gd(600, 8, 0.3);
    config.value_init = InitScheme::spread;
    config.quantizer_size = 1;
    config.quantizer_training.steps = 200000;
    config.training = uniform1d(-2.0, 2.0);
    config.stage_cost_bound = 10.0;
    config.terminal_cost_bound = 30.0;
    config.seed = 13;
    auto solved = solve(p, config);

    REQUIRE(solved.quantizer.has_value());
    REQUIRE(solved.quantizer->size() == 1);
    REQUIRE(std::abs(solved.quantizer->grid(0, 0)) < 0.02);  // atom near E[eps] = 0

    // Exact one-step target under the trained policy: f + E g(x + a + eps)
    // = f + 2(x + a) + 1 by linearity.
    for (double x = -1.5; x <= 1.5; x += 0.25) {
        double a = solved.control(0, scalar(x))(0);
        double exact = (a - 0.5) * (a - 0.5) + 2.0 * (x + a) + 1.0;
        REQUIRE(std::abs(laterq_value(p, solved, 0, scalar(x)) - exact) < 0.05);
    }
}

TEST_CASE("regress-later closing step is the quantized-expectation composite", "[solvers]") {
    auto built = make_problem("lq_scalar", {{"horizon", 2}});
    SolverConfig config;
    config.algorithm = Algorithm::hybrid_laterq;
    config.sample_size = 512;
    config.shape = {8, 40.0, 5.0};
    config.policy_gd = quick_gd(60, 4, 0.1);
    config.value_gd = quick_gd(80, 4, 0.2);
    config.quantizer_size = 8;
    config.quantizer_training.steps = 100000;
    config.training = uniform1d(-2.0, 2.0);
    config.stage_cost_bound = 20.0;
    config.terminal_cost_bound = 30.0;
    config.seed = 17;
    auto solved = solve(built.problem, config);

    // Rebuild the composite by hand from the stored pieces.
    for (double x = -1.0; x <= 1.0; x += 0.5) {
        Vector xv = scalar(x);
        Vector a = solved.control(0, xv);
        auto interp = [&](const Vector& y) { return solved.value_net_eval(1, y); };
        double manual =
            built.problem.stage_cost(xv, a) +
            quantized_expectation(*solved.quantizer, interp, built.problem.dynamics, xv, a);
        REQUIRE(laterq_value(built.problem, solved, 0, xv) == manual);
    }
}

TEST_CASE("classification with one action plays it everywhere", "[solvers]") {
    auto built = make_problem("walk1d", {{"horizon", 2}});
    ControlProblem p = built.problem;
    p.control_bounds = FiniteControlSet{{scalar(0.2)}};
    SolverConfig config;
    config.algorithm = Algorithm::classification_pi;
    config.sample_size = 64;
    config.shape = {4, 10.0, 2.0};
    config.policy_gd = quick_gd(10, 2, 0.2);
    config.training = uniform1d(-2.0, 2.0);
    config.seed = 1;
    auto solved = solve(p, config);
    for (double x = -2.0; x <= 2.0; x += 0.4) {
        REQUIRE(solved.action_index(0, scalar(x)) == 0);
        REQUIRE(solved.control(1, scalar(x))(0) == 0.2);
    }
}

TEST_CASE("classification avoids a dominated action everywhere", "[solvers]") {
    // Two actions whose costs differ by 0.5 at every state.
    ControlProblem p;
    p.horizon = 2;
    p.state_dim = p.control_dim = 1;
    p.dynamics = [](const Vector& x, const Vector&, const Vector&) { return x; };
    p.stage_cost = [](const Vector&, const Vector& a) { return a(0); };
    p.terminal_cost = [](const Vector&) { return 0.0; };
    p.noise = NoiseSampler::standard_normal(1);
    p.control_bounds = FiniteControlSet{{scalar(0.0), scalar(0.5)}};

    SolverConfig config;
    config.algorithm = Algorithm::classification_pi;
    config.sample_size = 256;
    config.shape = {8, 10.0, 3.0};
    config.policy_gd = quick_gd(200, 4, 0.5);
    config.training = uniform1d(-2.0, 2.0);
    config.seed = 2;
    auto solved = solve(p, config);
    for (int n = 0; n < 2; ++n)
        for (double x = -2.0; x <= 2.0; x += 0.05)
            REQUIRE(solved.action_index(n, scalar(x)) == 0);
}

TEST_CASE("classification rejects oversized action sets", "[solvers]") {
    ControlProblem p = static_target_problem(1);
    FiniteControlSet set;
    for (int i = 0; i < 70; ++i) set.elements.push_back(scalar(0.01 * i));
    p.control_bounds = set;
    SolverConfig config;
    config.algorithm = Algorithm::classification_pi;
    config.sample_size = 16;
    config.training = uniform1d(-1.0, 1.0);
    REQUIRE_THROWS_AS(solve(p, config), ConfigError);
}

TEST_CASE("identical configs reproduce identical solutions", "[solvers]") {
    auto built = make_problem("lq_scalar", {{"horizon", 2}});
    SolverConfig config;
    config.algorithm = Algorithm::hybrid_now;
    config.sample_size = 256;
    config.shape = {8, 30.0, 5.0};
    config.policy_gd = quick_gd(40, 4, 0.1);
    config.value_gd = quick_gd(40, 4, 0.2);
    config.training = uniform1d(-2.0, 2.0);
    config.stage_cost_bound = 20.0;
    config.terminal_cost_bound = 20.0;
    config.seed = 99;
    auto a = solve(built.problem, config);
    auto b = solve(built.problem, config);
    REQUIRE(to_json(a).dump() == to_json(b).dump());

    config.seed = 100;
    auto c = solve(built.problem, config);
    REQUIRE(to_json(a).dump() != to_json(c).dump());
}

TEST_CASE("estimated values dominate the oracle value", "[solvers]") {
    auto built = make_problem("lq_scalar", {{"horizon", 2}});
    auto riccati = riccati_solve(*built.lq);
    SolverConfig config;
    config.algorithm = Algorithm::hybrid_now;
    config.sample_size = 1024;
    config.shape = {12, 60.0, 5.0};
    config.policy_gd = quick_gd(80, 8, 0.08);
    config.value_gd = quick_gd(120, 8, 0.2);
    config.value_init = InitScheme::spread;
    config.training = uniform1d(-2.5, 2.5);
    config.stage_cost_bound = 20.0;
    config.terminal_cost_bound = 20.0;
    config.seed = 31;
    auto solved = solve(built.problem, config);
    auto estimate = estimate_value_pi(built.problem, solved, 0, scalar(1.0), 20000, 5);
    double oracle = riccati.value(0, scalar(1.0));
    REQUIRE(estimate.mean >= oracle - 3.0 * estimate.standard_error);
}

TEST_CASE("martingale diagnostic validates grid-dp value and policy", "[solvers]") {
    auto built = make_problem("walk1d");
    auto dp = grid_dp_solve(built.problem, *built.grid);
    const auto& grid = *built.grid;
    const int N = built.problem.horizon;

    std::vector<FeedbackPolicy> policies;
    for (int n = 0; n < N; ++n)
        policies.push_back([&grid, &dp, n](const Vector& x) {
            return grid.controls[dp.action(n, grid.nearest_state(x))];
        });
    std::vector<ScalarField> values;
    for (int n = 0; n <= N; ++n)
        values.push_back([&grid, &dp, n](const Vector& x) {
            return dp.value(n, grid.nearest_state(x));
        });

    SeedStream pick(41);
    for (int trial = 0; trial < 10; ++trial) {
        int n = pick.next_index(N);
        int s = pick.next_index(static_cast<int>(grid.states.rows()));
        Vector x = grid.states.row(s).transpose();
        auto drift = martingale_drift(built.problem, policies, values, n, x, 4000, 50 + trial);
        REQUIRE(std::abs(drift.mean) <= 3.0 * drift.standard_error + 1e-12);
    }

    // A deliberately perturbed policy keeps the submartingale inequality.
    std::vector<FeedbackPolicy> perturbed = policies;
    perturbed[0] = [&grid](const Vector&) { return grid.controls[2]; };
    for (int trial = 0; trial < 5; ++trial) {
        int s = pick.next_index(static_cast<int>(grid.states.rows()));
        Vector x = grid.states.row(s).transpose();
        auto drift = martingale_drift(built.problem, perturbed, values, 0, x, 4000, 90 + trial);
        REQUIRE(drift.mean >= -3.0 * drift.standard_error);
    }
}

TEST_CASE("explore-then-exploit replays its phase-1 state clouds", "[solvers]") {
    auto built = make_problem("lq_scalar", {{"horizon", 2}});
    SolverConfig config;
    config.algorithm = Algorithm::hybrid_now;
    config.sample_size = 128;
    config.shape = {6, 30.0, 5.0};
    config.policy_gd = quick_gd(30, 4, 0.1);
    config.value_gd = quick_gd(30, 4, 0.2);
    config.stage_cost_bound = 20.0;
    config.terminal_cost_bound = 20.0;
    config.seed = 55;

    BoxBounds box;
    box.lo = scalar(-3.0);
    box.hi = scalar(3.0);
    config.training = TrainingDistribution::uniform(box);
    auto result = solve_explore_then_exploit(built.problem, config, box, scalar(1.0));

    // Replay the phase-1 policies with the recorded stream layout.
    SeedStream root = derive_stream(config.seed, stream_domain::explore_simulation);
    for (int m = 0; m < 16; ++m) {
        SeedStream path = root.substream(static_cast<std::uint64_t>(m));
        Vector x = scalar(1.0);
        for (int k = 0; k < 2; ++k) {
            REQUIRE(result.clouds[k].row(m).transpose() == x);
            x = built.problem.dynamics(x, result.explore.control(k, x),
                                       built.problem.noise.draw(path));
        }
    }
    REQUIRE(static_cast<int>(result.exploit.policies.size()) == 2);
}

TEST_CASE("rho diagnostic stays under its analytic bound", "[solvers]") {
    for (int m : {100, 1000}) {
        auto empirical = rho_empirical(1.0, 0.5, 1, m, 50, 7);
        REQUIRE(empirical.mean <= rho_bound(1.0, 0.5, 1, m));
    }
    // More samples push the supremum up.
    auto small = rho_empirical(0.0, 1.0, 2, 100, 50, 9);
    auto large = rho_empirical(0.0, 1.0, 2, 10000, 50, 9);
    REQUIRE(large.mean > small.mean);
}

TEST_CASE("solvers require analytic derivatives when gradients flow through F", "[solvers]") {
    auto problem = static_target_problem(1);
    problem.derivatives.reset();
    SolverConfig config;
    config.algorithm = Algorithm::nncontpi;
    config.sample_size = 16;
    config.training = uniform1d(-1.0, 1.0);
    REQUIRE_THROWS_AS(solve(problem, config), ConfigError);
}
