#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "nndp/errors.hpp"
#include "nndp/numeric.hpp"
#include "nndp/rng.hpp"

namespace nndp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using FeedbackPolicy = std::function<Vector(const Vector&)>;
using ScalarField = std::function<double(const Vector&)>;

// i.i.d. noise source. Draws depend only on the stream state, so a given
// (seed, stream) reproduces the same sequence bit for bit.
struct NoiseSampler {
    int dimension = 0;
    std::function<Vector(SeedStream&)> draw;

    static NoiseSampler standard_normal(int dim) {
        return {dim, [dim](SeedStream& s) { return s.next_normal_vector(dim); }};
    }

    static NoiseSampler constant(Vector value) {
        int dim = static_cast<int>(value.size());
        return {dim, [v = std::move(value)](SeedStream&) { return v; }};
    }

    // Finite-support law: atoms are matrix rows, sampled by inverse CDF.
    static NoiseSampler discrete(Matrix atoms, Vector probabilities) {
        if (atoms.rows() != probabilities.size() || atoms.rows() == 0)
            throw ConfigError("discrete noise: atom/probability size mismatch");
        if (std::abs(probabilities.sum() - 1.0) > 1e-12)
            throw ConfigError("discrete noise: probabilities must sum to 1");
        int dim = static_cast<int>(atoms.cols());
        return {dim, [a = std::move(atoms), p = std::move(probabilities)](SeedStream& s) {
                    double u = s.next_uniform();
                    double acc = 0.0;
                    int last = static_cast<int>(a.rows()) - 1;
                    for (int i = 0; i < last; ++i) {
                        acc += p(i);
                        if (u < acc) return Vector(a.row(i));
                    }
                    return Vector(a.row(last));
                }};
    }
};

struct UnboundedControls {};

struct BoxBounds {
    Vector lo;
    Vector hi;
};

struct FiniteControlSet {
    std::vector<Vector> elements;
};

using ControlBounds = std::variant<UnboundedControls, BoxBounds, FiniteControlSet>;

inline bool control_in_bounds(const ControlBounds& bounds, const Vector& a, double tol = 1e-9) {
    if (std::holds_alternative<UnboundedControls>(bounds)) return true;
    if (const auto* box = std::get_if<BoxBounds>(&bounds)) {
        for (int i = 0; i < a.size(); ++i)
            if (a(i) < box->lo(i) - tol || a(i) > box->hi(i) + tol) return false;
        return true;
    }
    const auto& fin = std::get<FiniteControlSet>(bounds);
    for (const auto& e : fin.elements)
        if ((a - e).norm() <= tol) return true;
    return false;
}

// Nearest element of a finite control set, ties to the smallest index.
inline int nearest_control_index(const FiniteControlSet& set, const Vector& a) {
    int best = 0;
    double best_d = (a - set.elements[0]).squaredNorm();
    for (int i = 1; i < static_cast<int>(set.elements.size()); ++i) {
        double d = (a - set.elements[i]).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Analytic derivatives of the model functions. Solvers that differentiate
// through the dynamics require these; problems without them can still be
// solved by the classification variant.
struct ProblemDerivatives {
    std::function<Matrix(const Vector&, const Vector&, const Vector&)> dynamics_dx;  // d x d
    std::function<Matrix(const Vector&, const Vector&, const Vector&)> dynamics_da;  // d x q
    std::function<Vector(const Vector&, const Vector&)> stage_dx;
    std::function<Vector(const Vector&, const Vector&)> stage_da;
    std::function<Vector(const Vector&)> terminal_dx;
};

// Finite-horizon MDP: X_{n+1} = F(X_n, a_n, eps_{n+1}) with stage cost f,
// terminal cost g and controls constrained to A.
struct ControlProblem {
    int horizon = 0;      // N
    int state_dim = 0;    // d
    int control_dim = 0;  // q
    std::function<Vector(const Vector&, const Vector&, const Vector&)> dynamics;  // F
    std::function<double(const Vector&, const Vector&)> stage_cost;               // f
    std::function<double(const Vector&)> terminal_cost;                           // g
    ControlBounds control_bounds = UnboundedControls{};
    NoiseSampler noise;
    std::optional<ProblemDerivatives> derivatives;

    void validate() const {
        if (horizon < 1) throw ConfigError("problem: horizon must be >= 1");
        if (state_dim < 1 || control_dim < 1)
            throw ConfigError("problem: state and control dimensions must be >= 1");
        if (!dynamics || !stage_cost || !terminal_cost)
            throw ConfigError("problem: dynamics and cost functions must all be set");
        if (noise.dimension < 1 || !noise.draw)
            throw ConfigError("problem: noise sampler not configured");
        if (const auto* fin = std::get_if<FiniteControlSet>(&control_bounds))
            if (fin->elements.empty())
                throw ConfigError("problem: finite control set must be non-empty");
    }
};

// One step of the dynamics with dimension checks.
inline Vector step(const ControlProblem& problem, const Vector& x, const Vector& a,
                   const Vector& e) {
    if (x.size() != problem.state_dim)
        throw ConfigError("step: state dimension mismatch");
    if (a.size() != problem.control_dim)
        throw ConfigError("step: control dimension mismatch");
    if (e.size() != problem.noise.dimension)
        throw ConfigError("step: noise dimension mismatch");
    return problem.dynamics(x, a, e);
}

struct Trajectory {
    std::vector<Vector> states;    // X_0 .. X_N
    std::vector<Vector> controls;  // a_0 .. a_{N-1}
    std::vector<Vector> noises;    // eps_1 .. eps_N
    double realized_cost = 0.0;
};

// Rolls the problem forward under feedback policies. The same seed
// reproduces the identical trajectory.
inline Trajectory simulate(const ControlProblem& problem,
                           const std::vector<FeedbackPolicy>& policies, const Vector& x0,
                           std::uint64_t seed) {
    problem.validate();
    if (static_cast<int>(policies.size()) != problem.horizon)
        throw ConfigError("simulate: need one policy per time step");
    if (x0.size() != problem.state_dim)
        throw ConfigError("simulate: initial state dimension mismatch");

    SeedStream stream(seed);
    Trajectory traj;
    traj.states.reserve(problem.horizon + 1);
    traj.states.push_back(x0);
    std::vector<double> costs;
    costs.reserve(problem.horizon + 1);
    for (int n = 0; n < problem.horizon; ++n) {
        Vector a = policies[n](traj.states.back());
        if (!control_in_bounds(problem.control_bounds, a))
            throw DomainViolationError("simulate: policy output outside control set at step " +
                                       std::to_string(n));
        Vector e = problem.noise.draw(stream);
        costs.push_back(problem.stage_cost(traj.states.back(), a));
        traj.states.push_back(problem.dynamics(traj.states.back(), a, e));
        traj.controls.push_back(std::move(a));
        traj.noises.push_back(std::move(e));
    }
    costs.push_back(problem.terminal_cost(traj.states.back()));
    traj.realized_cost = tree_sum(costs);
    return traj;
}

// Re-checks the trajectory invariants: states reproduce under the recorded
// noises exactly, and the realized cost matches a recomputation.
inline bool verify_trajectory(const ControlProblem& problem, const Trajectory& traj,
                              double cost_rel_tol = 1e-12) {
    if (static_cast<int>(traj.controls.size()) != problem.horizon) return false;
    std::vector<double> costs;
    for (int n = 0; n < problem.horizon; ++n) {
        Vector next = problem.dynamics(traj.states[n], traj.controls[n], traj.noises[n]);
        if (next != traj.states[n + 1]) return false;
        costs.push_back(problem.stage_cost(traj.states[n], traj.controls[n]));
    }
    costs.push_back(problem.terminal_cost(traj.states.back()));
    double recomputed = tree_sum(costs);
    double scale = std::max(1.0, std::abs(recomputed));
    return std::abs(recomputed - traj.realized_cost) <= cost_rel_tol * scale;
}

// Constraint relaxation: L(x,a) = sum_k mu_k |h_k|^2 over the equality
// constraints plus sum_k mu_k max(0, -h_k) over the inequality ones.
struct PenaltySpec {
    using Constraint = std::function<double(const Vector&, const Vector&)>;
    using ConstraintGrad = std::function<Vector(const Vector&, const Vector&)>;

    struct Term {
        Constraint h;
        double mu = 1.0;
        bool equality = true;
        // Optional gradients so the penalized problem keeps derivatives.
        ConstraintGrad h_dx;
        ConstraintGrad h_da;
    };

    std::vector<Term> terms;
    // Optional terminal penalty; g takes no control argument so any terminal
    // relaxation has to be state-only.
    std::function<double(const Vector&)> terminal_penalty;

    double value(const Vector& x, const Vector& a) const {
        double total = 0.0;
        for (const auto& t : terms) {
            double h = t.h(x, a);
            total += t.equality ? t.mu * h * h : t.mu * std::max(0.0, -h);
        }
        return total;
    }
};

// Returns a new problem with stage cost f + L (and terminal cost g + L_T
// when a terminal penalty is supplied).
inline ControlProblem penalized_costs(const ControlProblem& problem, const PenaltySpec& penalty) {
    for (const auto& t : penalty.terms)
        if (!(t.mu > 0.0)) throw ConfigError("penalized_costs: coefficients must be positive");

    ControlProblem out = problem;
    auto base_f = problem.stage_cost;
    out.stage_cost = [base_f, penalty](const Vector& x, const Vector& a) {
        return base_f(x, a) + penalty.value(x, a);
    };
    if (penalty.terminal_penalty) {
        auto base_g = problem.terminal_cost;
        auto lt = penalty.terminal_penalty;
        out.terminal_cost = [base_g, lt](const Vector& x) { return base_g(x) + lt(x); };
    }

    bool grads_available = problem.derivatives.has_value();
    for (const auto& t : penalty.terms)
        grads_available = grads_available && t.h_dx && t.h_da;
    if (grads_available && !penalty.terminal_penalty) {
        ProblemDerivatives d = *problem.derivatives;
        auto base_dx = d.stage_dx;
        auto base_da = d.stage_da;
        auto terms = penalty.terms;
        auto add_penalty_grad = [terms](const Vector& x, const Vector& a, bool wrt_x,
                                        Vector grad) {
            for (const auto& t : terms) {
                double h = t.h(x, a);
                Vector hg = wrt_x ? t.h_dx(x, a) : t.h_da(x, a);
                if (t.equality) {
                    grad += 2.0 * t.mu * h * hg;
                } else if (h < 0.0) {
                    grad -= t.mu * hg;
                }
            }
            return grad;
        };
        d.stage_dx = [base_dx, add_penalty_grad](const Vector& x, const Vector& a) {
            return add_penalty_grad(x, a, true, base_dx(x, a));
        };
        d.stage_da = [base_da, add_penalty_grad](const Vector& x, const Vector& a) {
            return add_penalty_grad(x, a, false, base_da(x, a));
        };
        out.derivatives = std::move(d);
    } else if (!grads_available) {
        out.derivatives.reset();
    }
    return out;
}

// Euclidean projection onto the ball of radius R; compactifies the state
// space when the problem lives on all of R^d.
struct LocalizationSpec {
    double radius = 0.0;
};

inline Vector localize(const LocalizationSpec& spec, const Vector& x) {
    Vector out = x;
    // Rescaling can overshoot the radius by an ulp; repeat until the bound
    // holds so the projection is exactly idempotent.
    for (double norm = out.norm(); norm > spec.radius; norm = out.norm())
        out *= spec.radius / norm;
    return out;
}

// Monte Carlo estimate of E[S_{n+1} - S_n | X_n = x] for the process
// S_n = V(X_n) + accumulated stage costs: zero under the exact value
// function with its optimal policy, nonnegative under any policy.
inline McEstimate martingale_drift(const ControlProblem& problem,
                                   const std::vector<FeedbackPolicy>& policies,
                                   const std::vector<ScalarField>& value_estimates, int n,
                                   const Vector& x, int num_samples, std::uint64_t seed) {
    problem.validate();
    if (n < 0 || n >= problem.horizon)
        throw ConfigError("martingale_drift: time index out of range");
    if (static_cast<int>(value_estimates.size()) != problem.horizon + 1)
        throw ConfigError("martingale_drift: need N+1 value estimates");
    if (static_cast<int>(policies.size()) != problem.horizon)
        throw ConfigError("martingale_drift: need one policy per time step");
    if (num_samples < 1) throw ConfigError("martingale_drift: need at least one sample");

    Vector a = policies[n](x);
    double here = problem.stage_cost(x, a) - value_estimates[n](x);
    SeedStream stream(seed);
    RunningStats stats;
    for (int m = 0; m < num_samples; ++m) {
        Vector e = problem.noise.draw(stream);
        Vector next = problem.dynamics(x, a, e);
        stats.add(here + value_estimates[n + 1](next));
    }
    return stats.estimate();
}

}  // namespace nndp
