#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nndp/errors.hpp"
#include "nndp/gradient_descent.hpp"
#include "nndp/network.hpp"
#include "nndp/numeric.hpp"
#include "nndp/problem.hpp"
#include "nndp/quantizer.hpp"
#include "nndp/rng.hpp"
#include "nndp/training.hpp"

namespace nndp {

enum class Algorithm { nncontpi, hybrid_now, hybrid_laterq, classification_pi };

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::nncontpi: return "nncontpi";
        case Algorithm::hybrid_now: return "hybrid_now";
        case Algorithm::hybrid_laterq: return "hybrid_laterq";
        case Algorithm::classification_pi: return "classification_pi";
    }
    return "unknown";
}

inline Algorithm algorithm_from_string(const std::string& name) {
    if (name == "nncontpi") return Algorithm::nncontpi;
    if (name == "hybrid_now") return Algorithm::hybrid_now;
    if (name == "hybrid_laterq") return Algorithm::hybrid_laterq;
    if (name == "classification_pi") return Algorithm::classification_pi;
    throw ConfigError("unknown algorithm: " + name);
}

struct NetworkShape {
    int hidden_units = 16;
    double gamma = 100.0;  // total-variation bound on the output weights
    double eta = 10.0;     // kernel-row norm bound
};

struct SolverConfig {
    Algorithm algorithm = Algorithm::hybrid_now;
    int sample_size = 4096;  // M
    NetworkShape shape;
    GdConfig policy_gd;
    GdConfig value_gd;
    int quantizer_size = 64;  // L; hybrid_laterq only
    ClvqConfig quantizer_training;
    bool quantizer_lloyd_refine = true;
    TrainingDistribution training;
    double stage_cost_bound = 0.0;     // ||f||_inf, hybrid truncation
    double terminal_cost_bound = 0.0;  // ||g||_inf
    std::optional<double> localization_radius;
    InitScheme policy_init = InitScheme::standard;
    InitScheme value_init = InitScheme::standard;
    int max_finite_controls = 64;
    std::uint64_t seed = 0;
    bool record_losses = false;
};

struct StepReport {
    int time_step = 0;
    double policy_final_loss = std::numeric_limits<double>::quiet_NaN();
    double value_final_loss = std::numeric_limits<double>::quiet_NaN();
    int policy_gd_steps = 0;
    int value_gd_steps = 0;
    std::vector<GdTraceRow> policy_trace;
    std::vector<GdTraceRow> value_trace;
};

struct SolverMetadata {
    std::string algorithm;
    int horizon = 0;
    int sample_size = 0;
    NetworkShape shape;
    std::uint64_t seed = 0;
    double stage_cost_bound = 0.0;
    double terminal_cost_bound = 0.0;
    int quantizer_size = 0;
    std::vector<StepReport> steps;
    std::optional<double> localization_radius;
};

// Output of a solver run: per-step trained policies, any fitted value
// networks (stored with their truncation bounds), and the quantizer for the
// regress-later variant.
struct SolvedPolicySequence {
    std::vector<PolicyNetwork> policies;
    std::vector<SoftmaxPolicyNetwork> softmax_policies;
    std::vector<std::optional<ValueNetwork>> value_nets;  // indexed by time step
    std::vector<double> value_bounds;                     // truncation bound per time step
    std::optional<Quantizer> quantizer;
    std::vector<Eigen::VectorXd> finite_controls;  // non-empty: outputs snap to the set
    SolverMetadata metadata;

    int horizon() const { return metadata.horizon; }

    bool classification() const { return !softmax_policies.empty(); }

    int action_index(int n, const Eigen::VectorXd& x) const {
        if (classification()) return softmax_policies[n].argmax_action(x);
        if (finite_controls.empty())
            throw ConfigError("action_index: no finite control set attached");
        FiniteControlSet set{finite_controls};
        return nearest_control_index(set, policies[n].forward(x));
    }

    Eigen::VectorXd control(int n, const Eigen::VectorXd& x) const {
        if (n < 0 || n >= horizon()) throw ConfigError("control: time index out of range");
        if (classification() || !finite_controls.empty())
            return finite_controls[action_index(n, x)];
        return policies[n].forward(x);
    }

    FeedbackPolicy policy_fn(int n) const {
        return [this, n](const Eigen::VectorXd& x) { return control(n, x); };
    }

    // Truncated evaluation of the fitted value network at time step n.
    double value_net_eval(int n, const Eigen::VectorXd& x) const {
        if (n < 0 || n >= static_cast<int>(value_nets.size()) || !value_nets[n])
            throw ConfigError("value_net_eval: no value network at this time step");
        double bound = value_bounds[n];
        return std::clamp(value_nets[n]->forward(x), -bound, bound);
    }
};

namespace detail {

// Internal view of a frozen feedback rule: evaluation plus input Jacobian.
// Rounded and argmax policies are piecewise constant, so their Jacobian is
// identically zero.
struct PolicyHandle {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
};

inline PolicyHandle continuous_handle(PolicyNetwork net) {
    auto shared = std::make_shared<PolicyNetwork>(std::move(net));
    return {[shared](const Eigen::VectorXd& x) { return shared->forward(x); },
            [shared](const Eigen::VectorXd& x) { return shared->input_jacobian(x); }};
}

inline PolicyHandle rounded_handle(PolicyNetwork net, std::vector<Eigen::VectorXd> elements) {
    auto shared = std::make_shared<PolicyNetwork>(std::move(net));
    auto set = std::make_shared<FiniteControlSet>(FiniteControlSet{std::move(elements)});
    int q = static_cast<int>(set->elements.front().size());
    int d = shared->input_dim();
    return {[shared, set](const Eigen::VectorXd& x) {
                return set->elements[nearest_control_index(*set, shared->forward(x))];
            },
            [q, d](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(q, d); }};
}

inline PolicyHandle argmax_handle(SoftmaxPolicyNetwork net,
                                  std::vector<Eigen::VectorXd> elements) {
    auto shared = std::make_shared<SoftmaxPolicyNetwork>(std::move(net));
    auto set = std::make_shared<std::vector<Eigen::VectorXd>>(std::move(elements));
    int q = static_cast<int>(set->front().size());
    int d = shared->input_dim();
    return {[shared, set](const Eigen::VectorXd& x) { return (*set)[shared->argmax_action(x)]; },
            [q, d](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(q, d); }};
}

// Scalar field with gradient; used for the running value estimates. The
// fused form shares one pass where both pieces are consumed together.
struct ValueHandle {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
    std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)> value_and_grad;
};

inline ValueHandle terminal_handle(const ControlProblem& problem) {
    auto g = problem.terminal_cost;
    auto g_dx = problem.derivatives ? problem.derivatives->terminal_dx
                                    : std::function<Eigen::VectorXd(const Eigen::VectorXd&)>();
    auto grad = [g_dx](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        if (!g_dx) throw ConfigError("terminal cost gradient unavailable");
        return g_dx(x);
    };
    return {[g](const Eigen::VectorXd& x) { return g(x); }, grad,
            [g, grad](const Eigen::VectorXd& x) {
                return std::make_pair(g(x), grad(x));
            }};
}

inline ValueHandle truncated_net_handle(ValueNetwork net, double bound) {
    auto shared = std::make_shared<ValueNetwork>(std::move(net));
    auto fused = [shared, bound](const Eigen::VectorXd& x) {
        auto [raw, grad] = shared->value_and_input_gradient(x);
        if (raw >= bound || raw <= -bound)
            return std::make_pair(std::clamp(raw, -bound, bound),
                                  Eigen::VectorXd(Eigen::VectorXd::Zero(shared->input_dim())));
        return std::make_pair(raw, std::move(grad));
    };
    return {[shared, bound](const Eigen::VectorXd& x) {
                return std::clamp(shared->forward(x), -bound, bound);
            },
            [fused](const Eigen::VectorXd& x) { return fused(x).second; }, fused};
}

// Optional state-space localization pi_R applied to every successor state.
struct Localizer {
    std::optional<double> radius;

    Eigen::VectorXd apply(const Eigen::VectorXd& y) const {
        if (!radius) return y;
        return localize(LocalizationSpec{*radius}, y);
    }

    // Jacobian of pi_R at the pre-projection point.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const {
        int d = static_cast<int>(y.size());
        if (!radius) return Eigen::MatrixXd::Identity(d, d);
        double norm = y.norm();
        if (norm <= *radius) return Eigen::MatrixXd::Identity(d, d);
        Eigen::VectorXd u = y / norm;
        return (*radius / norm) *
               (Eigen::MatrixXd::Identity(d, d) - u * u.transpose());
    }
};

inline const ProblemDerivatives& require_derivatives(const ControlProblem& problem,
                                                     const char* who) {
    if (!problem.derivatives)
        throw ConfigError(std::string(who) +
                          ": the problem must supply analytic derivatives of F, f and g");
    return *problem.derivatives;
}

inline std::uint64_t derived_gd_seed(std::uint64_t seed, int step, int phase) {
    SeedStream s(seed, (static_cast<std::uint64_t>(stream_domain::gradient_descent) << 32) ^
                           (static_cast<std::uint64_t>(step) << 8) ^
                           static_cast<std::uint64_t>(phase));
    return s.next_u64();
}

inline OutputMap output_map_for(const ControlProblem& problem) {
    if (const auto* box = std::get_if<BoxBounds>(&problem.control_bounds))
        return OutputMap::box(box->lo, box->hi);
    if (const auto* fin = std::get_if<FiniteControlSet>(&problem.control_bounds)) {
        // Relax a finite set to its box hull; outputs are rounded back onto
        // the set when the trained policy is used.
        int q = static_cast<int>(fin->elements.front().size());
        Eigen::VectorXd lo = fin->elements.front(), hi = fin->elements.front();
        for (const auto& e : fin->elements) {
            lo = lo.cwiseMin(e);
            hi = hi.cwiseMax(e);
        }
        for (int c = 0; c < q; ++c)
            if (!(hi(c) > lo(c)))
                throw ConfigError(
                    "finite control set is degenerate along a component; "
                    "use the classification solver");
        return OutputMap::box(lo, hi);
    }
    return OutputMap::identity();
}

inline double truncation_bound(const SolverConfig& config, int horizon, int step) {
    return static_cast<double>(horizon - step) * config.stage_cost_bound +
           config.terminal_cost_bound;
}

// Full-horizon cost of one sample path for the performance-iteration loss,
// with the gradient w.r.t. the time-n policy parameters. Gradients flow
// through every later application of F via the chain rule.
inline double nncontpi_sample_cost(const ControlProblem& problem, const ProblemDerivatives& deriv,
                                   const PolicyNetwork& net,
                                   const std::vector<PolicyHandle>& future, int n,
                                   const Eigen::VectorXd& x0,
                                   const std::vector<Eigen::VectorXd>& noises,
                                   const Localizer& loc, Eigen::VectorXd& grad_out) {
    const int N = problem.horizon;
    Eigen::VectorXd a0 = net.forward(x0);

    std::vector<Eigen::VectorXd> states(N - n + 1), controls(N - n), raw_next(N - n);
    states[0] = x0;
    controls[0] = a0;
    std::vector<double> costs;
    costs.reserve(N - n + 1);
    costs.push_back(problem.stage_cost(x0, a0));
    for (int k = n; k < N; ++k) {
        int i = k - n;
        raw_next[i] = problem.dynamics(states[i], controls[i], noises[i]);
        states[i + 1] = loc.apply(raw_next[i]);
        if (k + 1 < N) {
            controls[i + 1] = future[k + 1 - n - 1].eval(states[i + 1]);
            costs.push_back(problem.stage_cost(states[i + 1], controls[i + 1]));
        }
    }
    costs.push_back(problem.terminal_cost(states[N - n]));
    double cost = tree_sum(costs);

    // Backward sweep: G_k = d(cost from k onward)/d x_k.
    Eigen::VectorXd g_next = deriv.terminal_dx(states[N - n]);
    for (int k = N - 1; k > n; --k) {
        int i = k - n;
        const Eigen::MatrixXd jac = future[k - n - 1].jacobian(states[i]);
        Eigen::VectorXd upstream = loc.jacobian(raw_next[i]).transpose() * g_next;
        Eigen::VectorXd g =
            deriv.stage_dx(states[i], controls[i]) +
            jac.transpose() * deriv.stage_da(states[i], controls[i]) +
            deriv.dynamics_dx(states[i], controls[i], noises[i]).transpose() * upstream +
            jac.transpose() *
                (deriv.dynamics_da(states[i], controls[i], noises[i]).transpose() * upstream);
        g_next = std::move(g);
    }
    Eigen::VectorXd upstream0 = loc.jacobian(raw_next[0]).transpose() * g_next;
    Eigen::VectorXd u = deriv.stage_da(x0, a0) +
                        deriv.dynamics_da(x0, a0, noises[0]).transpose() * upstream0;
    grad_out = net.backward(x0, u).first;
    return cost;
}

// One-step lookahead cost f(x, A(x)) + V(F(x, A(x), eps)) and its gradient
// w.r.t. the policy parameters.
inline double lookahead_sample_cost(const ControlProblem& problem,
                                    const ProblemDerivatives& deriv, const PolicyNetwork& net,
                                    const ValueHandle& next_value, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& noise, const Localizer& loc,
                                    Eigen::VectorXd& grad_out) {
    Eigen::VectorXd a = net.forward(x);
    Eigen::VectorXd raw = problem.dynamics(x, a, noise);
    auto [next_cost, next_grad] =
        loc.radius ? next_value.value_and_grad(loc.apply(raw)) : next_value.value_and_grad(raw);
    double cost = problem.stage_cost(x, a) + next_cost;
    if (loc.radius) next_grad = loc.jacobian(raw).transpose() * next_grad;
    Eigen::VectorXd u =
        deriv.stage_da(x, a) + deriv.dynamics_da(x, a, noise).transpose() * next_grad;
    grad_out = net.backward(x, u).first;
    return cost;
}

}  // namespace detail

namespace detail {

inline void validate_common(const ControlProblem& problem, const SolverConfig& config) {
    problem.validate();
    if (config.sample_size < 1) throw ConfigError("solver: sample size must be >= 1");
    if (config.training.dim() != problem.state_dim)
        throw ConfigError("solver: training distribution dimension mismatch");
    if (config.localization_radius && !(*config.localization_radius > 0.0))
        throw ConfigError("solver: localization radius must be positive");
}

inline void validate_cost_bounds(const SolverConfig& config) {
    bool finite = std::isfinite(config.stage_cost_bound) &&
                  std::isfinite(config.terminal_cost_bound);
    bool nonnegative = config.stage_cost_bound >= 0.0 && config.terminal_cost_bound >= 0.0;
    if (!finite || !nonnegative ||
        config.stage_cost_bound + config.terminal_cost_bound <= 0.0)
        throw ConfigError(
            "solver: hybrid methods need finite nonnegative cost bounds with a positive sum");
}

inline Eigen::MatrixXd sample_training_states(const SolverConfig& config, int step,
                                              const Localizer& loc) {
    SeedStream stream = derive_stream(config.seed, stream_domain::training_states,
                                      static_cast<std::uint64_t>(step));
    Eigen::MatrixXd states = config.training.sample_states(step, config.sample_size, stream);
    if (loc.radius)
        for (int m = 0; m < states.rows(); ++m)
            states.row(m) = loc.apply(states.row(m).transpose()).transpose();
    return states;
}

struct TrainedPolicy {
    PolicyNetwork net;
    GdResult gd;
};

// Fits the time-n policy network by projected gradient descent on the given
// per-sample loss.
template <typename SampleLoss>
TrainedPolicy fit_policy(const ControlProblem& problem, const SolverConfig& config, int step,
                         const SampleLoss& sample_loss) {
    OutputMap map = output_map_for(problem);
    PolicyNetwork net = PolicyNetwork::initialize(
        problem.state_dim, config.shape.hidden_units, problem.control_dim, config.shape.eta,
        config.shape.gamma, map, config.policy_init,
        derive_stream(config.seed, stream_domain::network_init,
                      static_cast<std::uint64_t>(step)));
    PolicyNetwork work = net;

    EmpiricalLoss loss = [&](const Eigen::VectorXd& params, std::span<const int> indices) {
        work.set_parameters(params);
        double total = 0.0;
        Eigen::VectorXd grad_total = Eigen::VectorXd::Zero(work.parameter_count());
        Eigen::VectorXd grad_sample;
        for (int m : indices) {
            total += sample_loss(work, m, grad_sample);
            grad_total += grad_sample;
        }
        double inv = 1.0 / static_cast<double>(indices.size());
        return std::make_pair(total * inv, Eigen::VectorXd(grad_total * inv));
    };
    PostStep projector = [&](Eigen::VectorXd& params) {
        work.set_parameters(params);
        work.project_constraints();
        params = work.parameters();
    };

    GdConfig gd = config.policy_gd;
    gd.seed = derived_gd_seed(config.seed, step, 0);
    gd.record_trace = config.record_losses;
    GdResult result = run_gd(loss, net.parameters(), config.sample_size, gd, projector);
    net.set_parameters(result.params);
    net.project_constraints();
    return {std::move(net), std::move(result)};
}

// Least-squares fit of a value network to fixed targets.
inline std::pair<ValueNetwork, GdResult> fit_value(const SolverConfig& config, int step,
                                                   int state_dim, const Eigen::MatrixXd& inputs,
                                                   const Eigen::VectorXd& targets) {
    ValueNetwork net = ValueNetwork::initialize(
        state_dim, config.shape.hidden_units, config.shape.eta, config.shape.gamma,
        config.value_init,
        derive_stream(config.seed, stream_domain::network_init,
                      0x8000u + static_cast<std::uint64_t>(step)));
    ValueNetwork work = net;

    EmpiricalLoss loss = [&](const Eigen::VectorXd& params, std::span<const int> indices) {
        work.set_parameters(params);
        double total = 0.0;
        Eigen::VectorXd grad_total = Eigen::VectorXd::Zero(work.parameter_count());
        for (int m : indices) {
            Eigen::VectorXd x = inputs.row(m).transpose();
            double residual = work.forward(x) - targets(m);
            total += residual * residual;
            grad_total += work.backward(x, 2.0 * residual).first;
        }
        double inv = 1.0 / static_cast<double>(indices.size());
        return std::make_pair(total * inv, Eigen::VectorXd(grad_total * inv));
    };
    PostStep projector = [&](Eigen::VectorXd& params) {
        work.set_parameters(params);
        work.project_constraints();
        params = work.parameters();
    };

    GdConfig gd = config.value_gd;
    gd.seed = derived_gd_seed(config.seed, step, 1);
    gd.record_trace = config.record_losses;
    GdResult result = run_gd(loss, net.parameters(), config.sample_size, gd, projector);
    net.set_parameters(result.params);
    net.project_constraints();
    return {std::move(net), std::move(result)};
}

inline PolicyHandle final_handle(const ControlProblem& problem, const PolicyNetwork& net) {
    if (const auto* fin = std::get_if<FiniteControlSet>(&problem.control_bounds))
        return rounded_handle(net, fin->elements);
    return continuous_handle(net);
}

}  // namespace detail

// Control learning by performance iteration: at each step n the policy is
// trained on the full simulated future cost under the frozen later policies.
inline SolvedPolicySequence solve_nncontpi(const ControlProblem& problem,
                                           const SolverConfig& config) {
    detail::validate_common(problem, config);
    const auto& deriv = detail::require_derivatives(problem, "nncontpi");
    const int N = problem.horizon;
    detail::Localizer loc{config.localization_radius};

    SolvedPolicySequence out;
    out.policies.resize(N);
    out.value_nets.assign(N + 1, std::nullopt);
    out.value_bounds.assign(N + 1, std::numeric_limits<double>::infinity());
    if (const auto* fin = std::get_if<FiniteControlSet>(&problem.control_bounds))
        out.finite_controls = fin->elements;
    out.metadata = {to_string(Algorithm::nncontpi), N,
                    config.sample_size,             config.shape,
                    config.seed,                    config.stage_cost_bound,
                    config.terminal_cost_bound,     0,
                    {},                             config.localization_radius};

    std::vector<detail::PolicyHandle> future;  // handles for steps n+1..N-1
    for (int n = N - 1; n >= 0; --n) {
        Eigen::MatrixXd states = detail::sample_training_states(config, n, loc);
        SeedStream noise_stream = derive_stream(config.seed, stream_domain::training_noise,
                                                static_cast<std::uint64_t>(n));
        std::vector<std::vector<Eigen::VectorXd>> noises(config.sample_size);
        for (int m = 0; m < config.sample_size; ++m) {
            noises[m].reserve(N - n);
            for (int k = n; k < N; ++k) noises[m].push_back(problem.noise.draw(noise_stream));
        }

        auto sample_loss = [&](const PolicyNetwork& net, int m, Eigen::VectorXd& grad) {
            return detail::nncontpi_sample_cost(problem, deriv, net, future, n,
                                                states.row(m).transpose(), noises[m], loc, grad);
        };
        auto trained = detail::fit_policy(problem, config, n, sample_loss);

        StepReport report;
        report.time_step = n;
        report.policy_final_loss = trained.gd.final_loss;
        report.policy_gd_steps = trained.gd.steps_taken;
        report.policy_trace = std::move(trained.gd.trace);
        out.metadata.steps.insert(out.metadata.steps.begin(), std::move(report));

        future.insert(future.begin(), detail::final_handle(problem, trained.net));
        out.policies[n] = std::move(trained.net);
    }
    return out;
}

// Shared backbone of the two hybrid variants. `regress_now` fits the value
// network at the time-n states against one-step targets (Hybrid-Now); the
// alternative interpolates at the time-(n+1) states and closes the update
// with the quantized expectation (Hybrid-LaterQ).
namespace detail {

inline SolvedPolicySequence solve_hybrid(const ControlProblem& problem,
                                         const SolverConfig& config, bool regress_now) {
    validate_common(problem, config);
    validate_cost_bounds(config);
    const auto& deriv = require_derivatives(problem, "hybrid");
    const int N = problem.horizon;
    Localizer loc{config.localization_radius};

    SolvedPolicySequence out;
    out.policies.resize(N);
    out.value_nets.assign(N + 1, std::nullopt);
    out.value_bounds.assign(N + 1, 0.0);
    for (int k = 0; k <= N; ++k) out.value_bounds[k] = truncation_bound(config, N, k);
    if (const auto* fin = std::get_if<FiniteControlSet>(&problem.control_bounds))
        out.finite_controls = fin->elements;
    Algorithm algo = regress_now ? Algorithm::hybrid_now : Algorithm::hybrid_laterq;
    out.metadata = {to_string(algo),
                    N,
                    config.sample_size,
                    config.shape,
                    config.seed,
                    config.stage_cost_bound,
                    config.terminal_cost_bound,
                    regress_now ? 0 : config.quantizer_size,
                    {},
                    config.localization_radius};

    if (!regress_now) {
        if (config.quantizer_size < 1)
            throw ConfigError("hybrid_laterq: quantizer size must be >= 1");
        Quantizer q = clvq_train(
            problem.noise, config.quantizer_size, config.quantizer_training,
            derive_stream(config.seed, stream_domain::quantizer).next_u64());
        if (config.quantizer_lloyd_refine) {
            SeedStream refine_stream =
                derive_stream(config.seed, stream_domain::quantizer, 7);
            Eigen::MatrixXd sample(config.quantizer_training.weight_samples,
                                   problem.noise.dimension);
            for (int i = 0; i < sample.rows(); ++i)
                sample.row(i) = problem.noise.draw(refine_stream).transpose();
            q = lloyd_refine(q, sample);
        }
        out.quantizer = std::move(q);
    }

    ValueHandle next_value = terminal_handle(problem);
    for (int n = N - 1; n >= 0; --n) {
        Eigen::MatrixXd states = sample_training_states(config, n, loc);
        SeedStream noise_stream = derive_stream(config.seed, stream_domain::training_noise,
                                                static_cast<std::uint64_t>(n));
        std::vector<Eigen::VectorXd> noises(config.sample_size);
        for (int m = 0; m < config.sample_size; ++m) noises[m] = problem.noise.draw(noise_stream);

        // (i) one-step lookahead policy fit against the current estimate.
        auto sample_loss = [&](const PolicyNetwork& net, int m, Eigen::VectorXd& grad) {
            return lookahead_sample_cost(problem, deriv, net, next_value,
                                         states.row(m).transpose(), noises[m], loc, grad);
        };
        auto trained = fit_policy(problem, config, n, sample_loss);
        PolicyHandle policy = final_handle(problem, trained.net);

        StepReport report;
        report.time_step = n;
        report.policy_final_loss = trained.gd.final_loss;
        report.policy_gd_steps = trained.gd.steps_taken;
        report.policy_trace = std::move(trained.gd.trace);

        // Successors under the fitted policy, reusing the training noises.
        Eigen::MatrixXd successors(config.sample_size, problem.state_dim);
        for (int m = 0; m < config.sample_size; ++m) {
            Eigen::VectorXd x = states.row(m).transpose();
            successors.row(m) =
                loc.apply(problem.dynamics(x, policy.eval(x), noises[m])).transpose();
        }

        if (regress_now) {
            // (ii) regress-now: targets f(x, a(x)) + V_{n+1}(x') at the
            // time-n states, then truncate at the a-priori value bound.
            Eigen::VectorXd targets(config.sample_size);
            for (int m = 0; m < config.sample_size; ++m) {
                Eigen::VectorXd x = states.row(m).transpose();
                targets(m) = problem.stage_cost(x, policy.eval(x)) +
                             next_value.value(successors.row(m).transpose());
            }
            auto [net, gd] = fit_value(config, n, problem.state_dim, states, targets);
            report.value_final_loss = gd.final_loss;
            report.value_gd_steps = gd.steps_taken;
            report.value_trace = std::move(gd.trace);
            double bound = out.value_bounds[n];
            next_value = truncated_net_handle(net, bound);
            out.value_nets[n] = std::move(net);
        } else {
            // (ii) regress-later: interpolate V_{n+1} at the successor
            // states, truncate at the time-(n+1) bound...
            Eigen::VectorXd targets(config.sample_size);
            for (int m = 0; m < config.sample_size; ++m)
                targets(m) = next_value.value(successors.row(m).transpose());
            auto [net, gd] = fit_value(config, n, problem.state_dim, successors, targets);
            report.value_final_loss = gd.final_loss;
            report.value_gd_steps = gd.steps_taken;
            report.value_trace = std::move(gd.trace);
            double bound = out.value_bounds[n + 1];
            ValueHandle interpolant = truncated_net_handle(net, bound);
            out.value_nets[n + 1] = std::move(net);

            // ...then close the update analytically with the quantized
            // expectation; no new network fit at time n.
            auto atoms = std::make_shared<std::vector<Eigen::VectorXd>>();
            auto atom_weights = std::make_shared<Eigen::VectorXd>(out.quantizer->weights);
            for (int l = 0; l < out.quantizer->size(); ++l)
                atoms->push_back(out.quantizer->grid.row(l).transpose());
            auto policy_copy = policy;
            auto f = problem.stage_cost;
            auto f_dx = deriv.stage_dx;
            auto f_da = deriv.stage_da;
            auto dyn = problem.dynamics;
            auto dyn_dx = deriv.dynamics_dx;
            auto dyn_da = deriv.dynamics_da;
            Localizer loc_copy = loc;
            auto composite_value = [atoms, atom_weights, policy_copy, f, dyn, interpolant,
                                    loc_copy](const Eigen::VectorXd& x) {
                Eigen::VectorXd a = policy_copy.eval(x);
                std::vector<double> terms(atoms->size() + 1);
                terms[0] = f(x, a);
                for (std::size_t l = 0; l < atoms->size(); ++l)
                    terms[l + 1] = (*atom_weights)(l) *
                                   interpolant.value(loc_copy.apply(dyn(x, a, (*atoms)[l])));
                return tree_sum(terms);
            };
            auto composite_fused = [atoms, atom_weights, policy_copy, f, f_dx, f_da, dyn,
                                    dyn_dx, dyn_da, interpolant,
                                    loc_copy](const Eigen::VectorXd& x) {
                Eigen::VectorXd a = policy_copy.eval(x);
                Eigen::MatrixXd jac = policy_copy.jacobian(x);
                Eigen::VectorXd g = f_dx(x, a) + jac.transpose() * f_da(x, a);
                std::vector<double> terms(atoms->size() + 1);
                terms[0] = f(x, a);
                for (std::size_t l = 0; l < atoms->size(); ++l) {
                    const Eigen::VectorXd& e = (*atoms)[l];
                    Eigen::VectorXd raw = dyn(x, a, e);
                    auto [v, vg] = loc_copy.radius
                                       ? interpolant.value_and_grad(loc_copy.apply(raw))
                                       : interpolant.value_and_grad(raw);
                    double w = (*atom_weights)(l);
                    terms[l + 1] = w * v;
                    if (loc_copy.radius) vg = loc_copy.jacobian(raw).transpose() * vg;
                    g.noalias() += w * (dyn_dx(x, a, e).transpose() * vg);
                    g.noalias() += w * (jac.transpose() * (dyn_da(x, a, e).transpose() * vg));
                }
                return std::make_pair(tree_sum(terms), std::move(g));
            };
            next_value = ValueHandle{
                composite_value,
                [composite_fused](const Eigen::VectorXd& x) { return composite_fused(x).second; },
                composite_fused};
        }

        out.metadata.steps.insert(out.metadata.steps.begin(), std::move(report));
        out.policies[n] = std::move(trained.net);
    }
    return out;
}

}  // namespace detail

// Hybrid iteration with regress-now value updates.
inline SolvedPolicySequence solve_hybrid_now(const ControlProblem& problem,
                                             const SolverConfig& config) {
    return detail::solve_hybrid(problem, config, true);
}

// Hybrid iteration with regress-later interpolation and quantized
// conditional expectations.
inline SolvedPolicySequence solve_hybrid_laterq(const ControlProblem& problem,
                                                const SolverConfig& config) {
    return detail::solve_hybrid(problem, config, false);
}

// Classification variant for finite control sets: a softmax network scores
// the L actions; the simulated future cost of each action is computed once
// per sample, so the objective is linear in the class probabilities.
inline SolvedPolicySequence solve_classification_pi(const ControlProblem& problem,
                                                    const SolverConfig& config) {
    detail::validate_common(problem, config);
    const auto* fin = std::get_if<FiniteControlSet>(&problem.control_bounds);
    if (!fin) throw ConfigError("classification_pi: the control set must be finite");
    const int L = static_cast<int>(fin->elements.size());
    if (L > config.max_finite_controls)
        throw ConfigError("classification_pi: " + std::to_string(L) +
                          " actions exceed the configured maximum of " +
                          std::to_string(config.max_finite_controls) +
                          " (simulation cost grows as L*M*N)");
    const int N = problem.horizon;
    detail::Localizer loc{config.localization_radius};

    SolvedPolicySequence out;
    out.softmax_policies.resize(N);
    out.value_nets.assign(N + 1, std::nullopt);
    out.value_bounds.assign(N + 1, std::numeric_limits<double>::infinity());
    out.finite_controls = fin->elements;
    out.metadata = {to_string(Algorithm::classification_pi),
                    N,
                    config.sample_size,
                    config.shape,
                    config.seed,
                    config.stage_cost_bound,
                    config.terminal_cost_bound,
                    0,
                    {},
                    config.localization_radius};

    std::vector<detail::PolicyHandle> future;
    for (int n = N - 1; n >= 0; --n) {
        Eigen::MatrixXd states = detail::sample_training_states(config, n, loc);
        SeedStream noise_stream = derive_stream(config.seed, stream_domain::training_noise,
                                                static_cast<std::uint64_t>(n));

        // Future cost of playing action l at time n, then the frozen argmax
        // policies. Targets do not depend on the softmax parameters.
        Eigen::MatrixXd action_costs(config.sample_size, L);
        for (int m = 0; m < config.sample_size; ++m) {
            std::vector<Eigen::VectorXd> noises(N - n);
            for (int k = 0; k < N - n; ++k) noises[k] = problem.noise.draw(noise_stream);
            Eigen::VectorXd x0 = states.row(m).transpose();
            for (int l = 0; l < L; ++l) {
                std::vector<double> costs;
                costs.reserve(N - n + 1);
                Eigen::VectorXd x = x0;
                Eigen::VectorXd a = fin->elements[l];
                costs.push_back(problem.stage_cost(x, a));
                x = loc.apply(problem.dynamics(x, a, noises[0]));
                for (int k = n + 1; k < N; ++k) {
                    a = future[k - n - 1].eval(x);
                    costs.push_back(problem.stage_cost(x, a));
                    x = loc.apply(problem.dynamics(x, a, noises[k - n]));
                }
                costs.push_back(problem.terminal_cost(x));
                action_costs(m, l) = tree_sum(costs);
            }
        }

        SoftmaxPolicyNetwork net = SoftmaxPolicyNetwork::initialize(
            problem.state_dim, config.shape.hidden_units, L, config.shape.eta,
            config.shape.gamma, config.policy_init,
            derive_stream(config.seed, stream_domain::network_init,
                          static_cast<std::uint64_t>(n)));
        SoftmaxPolicyNetwork work = net;

        EmpiricalLoss loss = [&](const Eigen::VectorXd& params, std::span<const int> indices) {
            work.set_parameters(params);
            double total = 0.0;
            Eigen::VectorXd grad_total = Eigen::VectorXd::Zero(work.parameter_count());
            for (int m : indices) {
                Eigen::VectorXd x = states.row(m).transpose();
                Eigen::VectorXd y = action_costs.row(m).transpose();
                total += work.forward(x).dot(y);
                grad_total += work.backward(x, y).first;
            }
            double inv = 1.0 / static_cast<double>(indices.size());
            return std::make_pair(total * inv, Eigen::VectorXd(grad_total * inv));
        };
        PostStep projector = [&](Eigen::VectorXd& params) {
            work.set_parameters(params);
            work.project_constraints();
            params = work.parameters();
        };

        GdConfig gd = config.policy_gd;
        gd.seed = detail::derived_gd_seed(config.seed, n, 0);
        gd.record_trace = config.record_losses;
        GdResult result = run_gd(loss, net.parameters(), config.sample_size, gd, projector);
        net.set_parameters(result.params);
        net.project_constraints();

        StepReport report;
        report.time_step = n;
        report.policy_final_loss = result.final_loss;
        report.policy_gd_steps = result.steps_taken;
        report.policy_trace = std::move(result.trace);
        out.metadata.steps.insert(out.metadata.steps.begin(), std::move(report));

        future.insert(future.begin(), detail::argmax_handle(net, fin->elements));
        out.softmax_policies[n] = std::move(net);
    }
    return out;
}

inline SolvedPolicySequence solve(const ControlProblem& problem, const SolverConfig& config) {
    switch (config.algorithm) {
        case Algorithm::nncontpi: return solve_nncontpi(problem, config);
        case Algorithm::hybrid_now: return solve_hybrid_now(problem, config);
        case Algorithm::hybrid_laterq: return solve_hybrid_laterq(problem, config);
        case Algorithm::classification_pi: return solve_classification_pi(problem, config);
    }
    throw ConfigError("solve: unknown algorithm");
}

// Regress-later value estimate rebuilt from the stored pieces: stage cost
// under the trained policy plus the quantized expectation of the truncated
// time-(n+1) interpolation. No sampling involved.
inline double laterq_value(const ControlProblem& problem, const SolvedPolicySequence& solved,
                           int n, const Eigen::VectorXd& x) {
    if (!solved.quantizer) throw ConfigError("laterq_value: no quantizer in this solution");
    if (n < 0 || n >= solved.horizon())
        throw ConfigError("laterq_value: time index out of range");
    if (n + 1 >= static_cast<int>(solved.value_nets.size()) || !solved.value_nets[n + 1])
        throw ConfigError("laterq_value: no interpolation network at time " +
                          std::to_string(n + 1));
    Eigen::VectorXd a = solved.control(n, x);
    detail::Localizer loc{solved.metadata.localization_radius};
    auto interp = [&](const Eigen::VectorXd& y) {
        return solved.value_net_eval(n + 1, loc.apply(y));
    };
    return problem.stage_cost(x, a) +
           quantized_expectation(*solved.quantizer, interp, problem.dynamics, x, a);
}

// Monte Carlo policy evaluation: expected cost-to-go from (n, x) under the
// trained policies, with fresh noises. Returns the mean and its standard
// error; the empty-horizon case n = N returns g(x) exactly.
inline McEstimate estimate_value_pi(const ControlProblem& problem,
                                    const SolvedPolicySequence& solved, int n,
                                    const Eigen::VectorXd& x, int num_samples,
                                    std::uint64_t seed) {
    problem.validate();
    const int N = problem.horizon;
    if (n < 0 || n > N) throw ConfigError("estimate_value_pi: time index out of range");
    if (n == N) return {problem.terminal_cost(x), 0.0, 1};
    if (num_samples < 1) throw ConfigError("estimate_value_pi: need at least one sample");

    SeedStream root(seed, stream_domain::evaluation);
    RunningStats stats;
    std::vector<double> costs;
    for (long s = 0; s < num_samples; ++s) {
        SeedStream path = root.substream(static_cast<std::uint64_t>(s));
        costs.clear();
        Eigen::VectorXd xt = x;
        for (int k = n; k < N; ++k) {
            Eigen::VectorXd a = solved.control(k, xt);
            costs.push_back(problem.stage_cost(xt, a));
            xt = problem.dynamics(xt, a, problem.noise.draw(path));
        }
        costs.push_back(problem.terminal_cost(xt));
        stats.add(tree_sum(costs));
    }
    return stats.estimate();
}

// Two-phase training-set design: solve on uniform exploration sets, replay
// the learned policies to collect per-step state clouds, then solve again
// on those clouds.
struct ExploreExploitResult {
    SolvedPolicySequence explore;
    SolvedPolicySequence exploit;
    std::vector<Eigen::MatrixXd> clouds;
};

inline ExploreExploitResult solve_explore_then_exploit(const ControlProblem& problem,
                                                       const SolverConfig& config,
                                                       const BoxBounds& explore_box,
                                                       const Eigen::VectorXd& x0) {
    SolverConfig phase1 = config;
    phase1.training = TrainingDistribution::uniform(explore_box);
    ExploreExploitResult result;
    result.explore = solve(problem, phase1);

    const int N = problem.horizon;
    result.clouds.assign(N, Eigen::MatrixXd(config.sample_size, problem.state_dim));
    SeedStream root = derive_stream(config.seed, stream_domain::explore_simulation);
    for (int m = 0; m < config.sample_size; ++m) {
        SeedStream path = root.substream(static_cast<std::uint64_t>(m));
        Eigen::VectorXd xt = x0;
        for (int k = 0; k < N; ++k) {
            result.clouds[k].row(m) = xt.transpose();
            xt = problem.dynamics(xt, result.explore.control(k, xt), problem.noise.draw(path));
        }
    }

    SolverConfig phase2 = config;
    phase2.training = TrainingDistribution::empirical(result.clouds);
    result.exploit = solve(problem, phase2);
    return result;
}

// Lipschitz growth diagnostic for linear-Gaussian dynamics
// F = b(x,a) + sigma(x,a) eps: the empirical mean over replications of
// sup_{m<=M} C(eps^m) with C(e) = [b]_L + [sigma]_L |e|, against the
// analytic bound [b]_L + d [sigma]_L sqrt(2 log(2dM)).
inline double rho_bound(double b_lipschitz, double sigma_lipschitz, int dim, int sample_count) {
    return b_lipschitz +
           static_cast<double>(dim) * sigma_lipschitz *
               std::sqrt(2.0 * std::log(2.0 * dim * static_cast<double>(sample_count)));
}

inline McEstimate rho_empirical(double b_lipschitz, double sigma_lipschitz, int dim,
                                int sample_count, int replications, std::uint64_t seed) {
    if (sample_count < 1 || replications < 1)
        throw ConfigError("rho_empirical: counts must be >= 1");
    SeedStream root(seed);
    RunningStats stats;
    for (int r = 0; r < replications; ++r) {
        SeedStream stream = root.substream(static_cast<std::uint64_t>(r));
        double sup = -std::numeric_limits<double>::infinity();
        for (int m = 0; m < sample_count; ++m)
            sup = std::max(sup,
                           b_lipschitz + sigma_lipschitz * stream.next_normal_vector(dim).norm());
        stats.add(sup);
    }
    return stats.estimate();
}

// --- solution serialization ---

inline nlohmann::json to_json(const SolvedPolicySequence& solved) {
    nlohmann::json j;
    j["format"] = "nndp-solution";
    j["version"] = 1;
    j["metadata"] = {{"algorithm", solved.metadata.algorithm},
                     {"horizon", solved.metadata.horizon},
                     {"sample_size", solved.metadata.sample_size},
                     {"hidden_units", solved.metadata.shape.hidden_units},
                     {"gamma", solved.metadata.shape.gamma},
                     {"eta", solved.metadata.shape.eta},
                     {"seed", solved.metadata.seed},
                     {"stage_cost_bound", solved.metadata.stage_cost_bound},
                     {"terminal_cost_bound", solved.metadata.terminal_cost_bound},
                     {"quantizer_size", solved.metadata.quantizer_size}};
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : solved.metadata.steps) {
        nlohmann::json step;
        step["time_step"] = s.time_step;
        if (std::isfinite(s.policy_final_loss)) step["policy_final_loss"] = s.policy_final_loss;
        if (std::isfinite(s.value_final_loss)) step["value_final_loss"] = s.value_final_loss;
        step["policy_gd_steps"] = s.policy_gd_steps;
        step["value_gd_steps"] = s.value_gd_steps;
        steps.push_back(std::move(step));
    }
    j["metadata"]["steps"] = std::move(steps);

    nlohmann::json policies = nlohmann::json::array();
    for (const auto& p : solved.policies) policies.push_back(to_json(p));
    for (const auto& p : solved.softmax_policies) policies.push_back(to_json(p));
    j["policies"] = std::move(policies);

    nlohmann::json values = nlohmann::json::array();
    for (std::size_t k = 0; k < solved.value_nets.size(); ++k) {
        if (!solved.value_nets[k]) continue;
        nlohmann::json entry;
        entry["time_step"] = k;
        entry["truncation_bound"] = solved.value_bounds[k];
        entry["network"] = to_json(*solved.value_nets[k]);
        values.push_back(std::move(entry));
    }
    j["value_networks"] = std::move(values);

    if (solved.quantizer) j["quantizer"] = to_json(*solved.quantizer);
    if (!solved.finite_controls.empty()) {
        nlohmann::json controls = nlohmann::json::array();
        for (const auto& c : solved.finite_controls)
            controls.push_back(detail::vector_to_json(c));
        j["finite_controls"] = std::move(controls);
    }
    return j;
}

}  // namespace nndp
