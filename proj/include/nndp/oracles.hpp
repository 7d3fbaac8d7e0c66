#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "nndp/errors.hpp"
#include "nndp/problem.hpp"

namespace nndp {

// Finite discretization for the exact DP reference: a state lattice, a
// finite control set and a finite-support noise law. Successor states are
// snapped to the nearest lattice point, so the backward induction solves a
// true finite MDP.
struct GridSpec {
    Eigen::MatrixXd states;                 // S x d
    std::vector<Eigen::VectorXd> controls;  // finite subset of A
    Eigen::MatrixXd noise_atoms;            // J x d_E
    Eigen::VectorXd noise_probs;            // J

    void validate() const {
        if (states.rows() == 0) throw ConfigError("grid oracle: empty state grid");
        if (states.cols() > 3)
            throw ConfigError("grid oracle: only d <= 3 is supported");
        if (controls.empty()) throw ConfigError("grid oracle: empty control grid");
        if (noise_atoms.rows() == 0 || noise_atoms.rows() != noise_probs.size())
            throw ConfigError("grid oracle: noise atoms and probabilities must match");
        if (std::abs(noise_probs.sum() - 1.0) > 1e-12)
            throw ConfigError("grid oracle: noise probabilities must sum to 1");
    }

    int nearest_state(const Eigen::VectorXd& x) const {
        int best = 0;
        double best_d = (x.transpose() - states.row(0)).squaredNorm();
        for (int i = 1; i < states.rows(); ++i) {
            double d = (x.transpose() - states.row(i)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }
};

struct GridDpResult {
    Eigen::MatrixXd values;   // (N+1) x S
    Eigen::MatrixXi actions;  // N x S, control indices
    long clipped_successors = 0;

    double value(int n, int state_index) const { return values(n, state_index); }
    int action(int n, int state_index) const { return actions(n, state_index); }
};

// Exact backward induction over the discretized model. Ties in the argmin
// go to the smallest control index. Successors leaving the lattice hull are
// counted so callers can see when the grid fails to cover the reachable set.
inline GridDpResult grid_dp_solve(const ControlProblem& problem, const GridSpec& grid) {
    problem.validate();
    grid.validate();
    const int S = static_cast<int>(grid.states.rows());
    const int N = problem.horizon;
    const int J = static_cast<int>(grid.noise_atoms.rows());
    const int A = static_cast<int>(grid.controls.size());

    GridDpResult result;
    result.values.resize(N + 1, S);
    result.actions.resize(N, S);

    // Lattice hull half-diagonal: one nearest-neighbor cell radius.
    double cover_radius = 0.0;
    for (int s = 0; s < S; ++s) {
        double nearest = std::numeric_limits<double>::infinity();
        for (int t = 0; t < S; ++t) {
            if (t == s) continue;
            nearest = std::min(nearest, (grid.states.row(s) - grid.states.row(t)).norm());
        }
        if (S > 1) cover_radius = std::max(cover_radius, nearest);
    }

    for (int s = 0; s < S; ++s)
        result.values(N, s) = problem.terminal_cost(grid.states.row(s).transpose());

    // Successor index table: (s, a, j) -> nearest lattice state.
    std::vector<int> successor(static_cast<std::size_t>(S) * A * J);
    for (int s = 0; s < S; ++s) {
        Eigen::VectorXd x = grid.states.row(s).transpose();
        for (int a = 0; a < A; ++a) {
            for (int j = 0; j < J; ++j) {
                Eigen::VectorXd next =
                    problem.dynamics(x, grid.controls[a], grid.noise_atoms.row(j).transpose());
                int idx = grid.nearest_state(next);
                if ((next.transpose() - grid.states.row(idx)).norm() > cover_radius + 1e-12)
                    ++result.clipped_successors;
                successor[(static_cast<std::size_t>(s) * A + a) * J + j] = idx;
            }
        }
    }
    if (result.clipped_successors > 0)
        std::fprintf(stderr,
                     "grid_dp_solve: %ld successor states fell outside the lattice hull\n",
                     result.clipped_successors);

    for (int n = N - 1; n >= 0; --n) {
        for (int s = 0; s < S; ++s) {
            Eigen::VectorXd x = grid.states.row(s).transpose();
            double best = std::numeric_limits<double>::infinity();
            int best_a = 0;
            for (int a = 0; a < A; ++a) {
                double q = problem.stage_cost(x, grid.controls[a]);
                for (int j = 0; j < J; ++j)
                    q += grid.noise_probs(j) *
                         result.values(n + 1,
                                       successor[(static_cast<std::size_t>(s) * A + a) * J + j]);
                if (q < best) {
                    best = q;
                    best_a = a;
                }
            }
            result.values(n, s) = best;
            result.actions(n, s) = best_a;
        }
    }
    return result;
}

// Discrete-time linear-quadratic benchmark:
//   x' = A x + B a + Sigma eps,   eps ~ N(0, I),
//   cost x'Qx + a'Ra per stage, terminal x'Q_T x.
struct LqSpec {
    Eigen::MatrixXd a_dyn;
    Eigen::MatrixXd b;
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd q_cost;
    Eigen::MatrixXd r_cost;
    Eigen::MatrixXd q_terminal;
    int horizon = 1;

    static LqSpec scalar(double a, double b, double q, double r, double q_terminal, double sigma,
                         int horizon) {
        LqSpec spec;
        spec.a_dyn = Eigen::MatrixXd::Constant(1, 1, a);
        spec.b = Eigen::MatrixXd::Constant(1, 1, b);
        spec.sigma = Eigen::MatrixXd::Constant(1, 1, sigma);
        spec.q_cost = Eigen::MatrixXd::Constant(1, 1, q);
        spec.r_cost = Eigen::MatrixXd::Constant(1, 1, r);
        spec.q_terminal = Eigen::MatrixXd::Constant(1, 1, q_terminal);
        spec.horizon = horizon;
        return spec;
    }

    void validate() const {
        auto check_symmetric = [](const Eigen::MatrixXd& m, const char* name) {
            if (m.rows() != m.cols() || (m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm()))
                throw ConfigError(std::string("lq oracle: ") + name + " must be symmetric");
        };
        auto check_psd = [&](const Eigen::MatrixXd& m, const char* name) {
            check_symmetric(m, name);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
            if (eig.eigenvalues().minCoeff() < -1e-10)
                throw ConfigError(std::string("lq oracle: ") + name +
                                  " must be positive semidefinite");
        };
        check_psd(q_cost, "Q");
        check_psd(q_terminal, "Q_T");
        check_symmetric(r_cost, "R");
        Eigen::LLT<Eigen::MatrixXd> llt(r_cost);
        if (llt.info() != Eigen::Success)
            throw ConfigError("lq oracle: R must be positive definite");
        if (horizon < 1) throw ConfigError("lq oracle: horizon must be >= 1");
    }
};

struct RiccatiSolution {
    std::vector<Eigen::MatrixXd> gain;          // K_n, n = 0..N-1
    std::vector<Eigen::MatrixXd> value_matrix;  // P_n, n = 0..N
    std::vector<double> constant;               // c_n, n = 0..N

    double value(int n, const Eigen::VectorXd& x) const {
        return x.dot(value_matrix[n] * x) + constant[n];
    }

    Eigen::VectorXd control(int n, const Eigen::VectorXd& x) const { return -gain[n] * x; }
};

// Backward Riccati recursion with the additive-noise constant term
// c_n = c_{n+1} + tr(Sigma' P_{n+1} Sigma).
inline RiccatiSolution riccati_solve(const LqSpec& spec) {
    spec.validate();
    const int N = spec.horizon;
    RiccatiSolution sol;
    sol.value_matrix.resize(N + 1);
    sol.constant.resize(N + 1);
    sol.gain.resize(N);
    sol.value_matrix[N] = spec.q_terminal;
    sol.constant[N] = 0.0;
    for (int n = N - 1; n >= 0; --n) {
        const Eigen::MatrixXd& p_next = sol.value_matrix[n + 1];
        Eigen::MatrixXd inner = spec.r_cost + spec.b.transpose() * p_next * spec.b;
        Eigen::LLT<Eigen::MatrixXd> llt(inner);
        if (llt.info() != Eigen::Success)
            throw ConditioningError("riccati_solve: R + B'PB is not positive definite");
        sol.gain[n] = llt.solve(spec.b.transpose() * p_next * spec.a_dyn);
        Eigen::MatrixXd p = spec.q_cost + spec.a_dyn.transpose() * p_next * spec.a_dyn -
                            spec.a_dyn.transpose() * p_next * spec.b * sol.gain[n];
        sol.value_matrix[n] = 0.5 * (p + p.transpose());  // keep symmetric
        sol.constant[n] =
            sol.constant[n + 1] + (spec.sigma.transpose() * p_next * spec.sigma).trace();
    }
    return sol;
}

// Builds the ControlProblem matching an LqSpec, derivatives included.
inline ControlProblem lq_control_problem(const LqSpec& spec) {
    spec.validate();
    ControlProblem p;
    p.horizon = spec.horizon;
    p.state_dim = static_cast<int>(spec.a_dyn.rows());
    p.control_dim = static_cast<int>(spec.b.cols());
    p.dynamics = [a = spec.a_dyn, b = spec.b, s = spec.sigma](const Vector& x, const Vector& u,
                                                              const Vector& e) -> Vector {
        return a * x + b * u + s * e;
    };
    p.stage_cost = [q = spec.q_cost, r = spec.r_cost](const Vector& x, const Vector& u) {
        return x.dot(q * x) + u.dot(r * u);
    };
    p.terminal_cost = [qt = spec.q_terminal](const Vector& x) { return x.dot(qt * x); };
    p.noise = NoiseSampler::standard_normal(static_cast<int>(spec.sigma.cols()));
    ProblemDerivatives d;
    d.dynamics_dx = [a = spec.a_dyn](const Vector&, const Vector&, const Vector&) { return a; };
    d.dynamics_da = [b = spec.b](const Vector&, const Vector&, const Vector&) { return b; };
    d.stage_dx = [q = spec.q_cost](const Vector& x, const Vector&) -> Vector {
        return 2.0 * q * x;
    };
    d.stage_da = [r = spec.r_cost](const Vector&, const Vector& u) -> Vector {
        return 2.0 * r * u;
    };
    d.terminal_dx = [qt = spec.q_terminal](const Vector& x) -> Vector { return 2.0 * qt * x; };
    p.derivatives = std::move(d);
    return p;
}

// Oracle tables as CSV (state coordinates, value, action index) for
// inspection and plotting.
inline void export_grid_dp_csv(const GridSpec& grid, const GridDpResult& result,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("export_grid_dp_csv: cannot open " + path);
    const int d = static_cast<int>(grid.states.cols());
    out << "time_step";
    for (int c = 0; c < d; ++c) out << ",state_" << c;
    out << ",value,action_index\n";
    char buffer[64];
    for (int n = 0; n < result.actions.rows(); ++n) {
        for (int s = 0; s < grid.states.rows(); ++s) {
            out << n;
            for (int c = 0; c < d; ++c) {
                std::snprintf(buffer, sizeof(buffer), "%.12g", grid.states(s, c));
                out << ',' << buffer;
            }
            std::snprintf(buffer, sizeof(buffer), "%.12g", result.values(n, s));
            out << ',' << buffer << ',' << result.actions(n, s) << '\n';
        }
    }
}

}  // namespace nndp
