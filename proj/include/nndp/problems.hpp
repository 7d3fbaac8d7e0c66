#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nndp/errors.hpp"
#include "nndp/oracles.hpp"
#include "nndp/problem.hpp"

namespace nndp {

// A registered problem plus whatever oracle data it supports.
struct BuiltProblem {
    std::string name;
    ControlProblem problem;
    Eigen::VectorXd default_x0;
    std::optional<LqSpec> lq;
    std::optional<GridSpec> grid;
};

inline std::vector<std::string> registered_problems() { return {"lq_scalar", "walk1d"}; }

namespace detail {

inline double param(const nlohmann::json& params, const char* key, double fallback) {
    return params.contains(key) ? params.at(key).get<double>() : fallback;
}

inline int param_int(const nlohmann::json& params, const char* key, int fallback) {
    return params.contains(key) ? params.at(key).get<int>() : fallback;
}

// Scalar linear-quadratic benchmark with additive Gaussian noise.
inline BuiltProblem make_lq_scalar(const nlohmann::json& params) {
    LqSpec spec = LqSpec::scalar(
        param(params, "a", 1.0), param(params, "b", 1.0), param(params, "q", 0.1),
        param(params, "r", 1.0), param(params, "q_terminal", 1.0), param(params, "sigma", 1.0),
        param_int(params, "horizon", 3));
    BuiltProblem built;
    built.name = "lq_scalar";
    built.problem = lq_control_problem(spec);
    built.lq = spec;
    built.default_x0 = Eigen::VectorXd::Constant(1, param(params, "x0", 1.0));
    return built;
}

// 1-D controlled random walk on the lattice {-2, -1.8, ..., 2} with three
// shift actions, an 8-atom symmetric noise law and quadratic costs. Clamped
// dynamics keep the chain on the lattice, so the grid oracle solves the
// problem exactly.
inline BuiltProblem make_walk1d(const nlohmann::json& params) {
    const double span = 2.0;
    const double spacing = 0.2;
    const double kappa = param(params, "action_cost", 0.5);
    const int horizon = param_int(params, "horizon", 4);

    ControlProblem p;
    p.horizon = horizon;
    p.state_dim = 1;
    p.control_dim = 1;
    p.dynamics = [span](const Vector& x, const Vector& a, const Vector& e) -> Vector {
        Vector next(1);
        next(0) = std::clamp(x(0) + a(0) + e(0), -span, span);
        return next;
    };
    p.stage_cost = [kappa](const Vector& x, const Vector& a) {
        return x(0) * x(0) + kappa * a(0) * a(0);
    };
    p.terminal_cost = [](const Vector& x) { return x(0) * x(0); };

    FiniteControlSet controls;
    for (double shift : {-spacing, 0.0, spacing})
        controls.elements.push_back(Eigen::VectorXd::Constant(1, shift));
    p.control_bounds = controls;

    Eigen::MatrixXd atoms(8, 1);
    Eigen::VectorXd probs(8);
    const double magnitudes[4] = {0.2, 0.4, 0.6, 0.8};
    const double cell_probs[4] = {0.3, 0.125, 0.05, 0.025};
    for (int i = 0; i < 4; ++i) {
        atoms(2 * i, 0) = -magnitudes[i];
        atoms(2 * i + 1, 0) = magnitudes[i];
        probs(2 * i) = cell_probs[i];
        probs(2 * i + 1) = cell_probs[i];
    }
    p.noise = NoiseSampler::discrete(atoms, probs);

    ProblemDerivatives d;
    auto inside = [span](const Vector& x, const Vector& a, const Vector& e) {
        double raw = x(0) + a(0) + e(0);
        return raw > -span && raw < span;
    };
    d.dynamics_dx = [inside](const Vector& x, const Vector& a, const Vector& e) -> Matrix {
        return Eigen::MatrixXd::Constant(1, 1, inside(x, a, e) ? 1.0 : 0.0);
    };
    d.dynamics_da = [inside](const Vector& x, const Vector& a, const Vector& e) -> Matrix {
        return Eigen::MatrixXd::Constant(1, 1, inside(x, a, e) ? 1.0 : 0.0);
    };
    d.stage_dx = [](const Vector& x, const Vector&) -> Vector { return 2.0 * x; };
    d.stage_da = [kappa](const Vector&, const Vector& a) -> Vector { return 2.0 * kappa * a; };
    d.terminal_dx = [](const Vector& x) -> Vector { return 2.0 * x; };
    p.derivatives = std::move(d);

    GridSpec grid;
    grid.states.resize(21, 1);
    for (int i = 0; i < 21; ++i) grid.states(i, 0) = -span + spacing * i;
    grid.controls = controls.elements;
    grid.noise_atoms = atoms;
    grid.noise_probs = probs;

    BuiltProblem built;
    built.name = "walk1d";
    built.problem = std::move(p);
    built.grid = std::move(grid);
    built.default_x0 = Eigen::VectorXd::Zero(1);
    return built;
}

}  // namespace detail

inline BuiltProblem make_problem(const std::string& name, const nlohmann::json& params = {}) {
    if (name == "lq_scalar") return detail::make_lq_scalar(params);
    if (name == "walk1d") return detail::make_walk1d(params);
    std::string known;
    for (const auto& n : registered_problems()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown problem '" + name + "' (registered: " + known + ")");
}

}  // namespace nndp
