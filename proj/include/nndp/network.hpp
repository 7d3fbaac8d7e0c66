#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nndp/errors.hpp"
#include "nndp/problem.hpp"
#include "nndp/rng.hpp"

namespace nndp {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Exact Euclidean projection onto the l1 ball of radius r (sort-based).
// The soft threshold can leave the norm an ulp above r, so the pass repeats
// until the bound holds and the projection is exactly idempotent.
inline Eigen::VectorXd project_l1_ball(Eigen::VectorXd v, double r) {
    while (v.lpNorm<1>() > r) {
        Eigen::VectorXd u = v.cwiseAbs();
        std::vector<double> sorted(u.data(), u.data() + u.size());
        std::sort(sorted.begin(), sorted.end(), std::greater<double>());
        double cumulative = 0.0;
        double tau = 0.0;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            cumulative += sorted[i];
            double candidate = (cumulative - r) / static_cast<double>(i + 1);
            if (sorted[i] - candidate > 0.0) tau = candidate;
        }
        for (int i = 0; i < v.size(); ++i) {
            double mag = std::max(std::abs(v(i)) - tau, 0.0);
            v(i) = v(i) >= 0.0 ? mag : -mag;
        }
    }
    return v;
}

// Componentwise map of the raw output layer onto the control set A:
// identity for unbounded controls, an affine-rescaled sigmoid for boxes.
// The box map is 1-Lipschitz (slope 1 at the center), so networks in the
// constrained class stay (eta*gamma)-Lipschitz overall.
struct OutputMap {
    enum class Kind { identity, box_sigmoid };
    Kind kind = Kind::identity;
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    static OutputMap identity() { return {}; }

    static OutputMap box(Eigen::VectorXd lo_, Eigen::VectorXd hi_) {
        if (lo_.size() != hi_.size()) throw ConfigError("output map: box bound size mismatch");
        for (int i = 0; i < lo_.size(); ++i)
            if (!(hi_(i) > lo_(i))) throw ConfigError("output map: box must have hi > lo");
        return {Kind::box_sigmoid, std::move(lo_), std::move(hi_)};
    }

    double apply(int component, double z) const {
        if (kind == Kind::identity) return z;
        double w = hi(component) - lo(component);
        return lo(component) + w * sigmoid(4.0 * z / w);
    }

    double derivative(int component, double z) const {
        if (kind == Kind::identity) return 1.0;
        double w = hi(component) - lo(component);
        double s = sigmoid(4.0 * z / w);
        return 4.0 * s * (1.0 - s);
    }
};

enum class InitScheme { standard, zeros, spread };

inline InitScheme init_scheme_from_string(const std::string& name) {
    if (name == "standard") return InitScheme::standard;
    if (name == "zeros") return InitScheme::zeros;
    if (name == "spread") return InitScheme::spread;
    throw ConfigError("unknown init scheme: " + name);
}

namespace detail {

inline void init_kernel(Eigen::MatrixXd& kernel, InitScheme scheme, SeedStream& stream) {
    double s = 1.0 / std::sqrt(static_cast<double>(kernel.cols()));
    for (int i = 0; i < kernel.rows(); ++i)
        for (int j = 0; j < kernel.cols(); ++j)
            kernel(i, j) = scheme == InitScheme::zeros ? 0.0 : stream.next_uniform(-s, s);
}

inline void init_bias(Eigen::VectorXd& bias, InitScheme scheme, SeedStream& stream) {
    for (int i = 0; i < bias.size(); ++i)
        bias(i) = scheme == InitScheme::spread ? stream.next_uniform(-2.0, 2.0) : 0.0;
}

inline void init_weights(Eigen::VectorXd& w, InitScheme scheme, SeedStream& stream) {
    double s = 1.0 / std::sqrt(static_cast<double>(w.size()));
    for (int i = 0; i < w.size(); ++i)
        w(i) = scheme == InitScheme::zeros ? 0.0 : stream.next_uniform(-s, s);
}

}  // namespace detail

// One-hidden-layer ReLU policy network. Each output component owns its K
// hidden units:
//   A_i(x) = sigma_A( sum_j c_ij (a_ij . x + b_ij)_+ + c_i0 ),
// with kernel rows bounded by eta and the output weights (offset included)
// inside the l1 ball of radius gamma.
class PolicyNetwork {
public:
    PolicyNetwork() = default;

    PolicyNetwork(int input_dim, int hidden_units, int output_dim, double eta, double gamma,
                  OutputMap output_map)
        : input_dim_(input_dim),
          hidden_units_(hidden_units),
          output_dim_(output_dim),
          eta_(eta),
          gamma_(gamma),
          output_map_(std::move(output_map)) {
        if (input_dim < 1 || hidden_units < 1 || output_dim < 1)
            throw ConfigError("policy network: dimensions must be >= 1");
        if (!(eta > 0.0) || !(gamma > 0.0))
            throw ConfigError("policy network: eta and gamma must be positive");
        kernels_.assign(output_dim, Eigen::MatrixXd::Zero(hidden_units, input_dim));
        biases_.assign(output_dim, Eigen::VectorXd::Zero(hidden_units));
        weights_.assign(output_dim, Eigen::VectorXd::Zero(hidden_units));
        offsets_ = Eigen::VectorXd::Zero(output_dim);
    }

    static PolicyNetwork initialize(int input_dim, int hidden_units, int output_dim, double eta,
                                    double gamma, OutputMap output_map, InitScheme scheme,
                                    SeedStream stream) {
        PolicyNetwork net(input_dim, hidden_units, output_dim, eta, gamma, std::move(output_map));
        for (int j = 0; j < output_dim; ++j) {
            detail::init_kernel(net.kernels_[j], scheme, stream);
            detail::init_bias(net.biases_[j], scheme, stream);
            detail::init_weights(net.weights_[j], scheme, stream);
        }
        net.project_constraints();
        return net;
    }

    int input_dim() const { return input_dim_; }
    int hidden_units() const { return hidden_units_; }
    int output_dim() const { return output_dim_; }
    double eta() const { return eta_; }
    double gamma() const { return gamma_; }
    const OutputMap& output_map() const { return output_map_; }

    std::vector<Eigen::MatrixXd>& kernels() { return kernels_; }
    const std::vector<Eigen::MatrixXd>& kernels() const { return kernels_; }
    std::vector<Eigen::VectorXd>& biases() { return biases_; }
    const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
    std::vector<Eigen::VectorXd>& weights() { return weights_; }
    const std::vector<Eigen::VectorXd>& weights() const { return weights_; }
    Eigen::VectorXd& offsets() { return offsets_; }
    const Eigen::VectorXd& offsets() const { return offsets_; }

    int parameter_count() const {
        return output_dim_ * (hidden_units_ * (input_dim_ + 2) + 1);
    }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd flat(parameter_count());
        int at = 0;
        for (int j = 0; j < output_dim_; ++j) {
            for (int i = 0; i < hidden_units_; ++i)
                for (int c = 0; c < input_dim_; ++c) flat(at++) = kernels_[j](i, c);
            for (int i = 0; i < hidden_units_; ++i) flat(at++) = biases_[j](i);
            for (int i = 0; i < hidden_units_; ++i) flat(at++) = weights_[j](i);
            flat(at++) = offsets_(j);
        }
        return flat;
    }

    void set_parameters(const Eigen::VectorXd& flat) {
        if (flat.size() != parameter_count())
            throw ConfigError("policy network: parameter vector size mismatch");
        int at = 0;
        for (int j = 0; j < output_dim_; ++j) {
            for (int i = 0; i < hidden_units_; ++i)
                for (int c = 0; c < input_dim_; ++c) kernels_[j](i, c) = flat(at++);
            for (int i = 0; i < hidden_units_; ++i) biases_[j](i) = flat(at++);
            for (int i = 0; i < hidden_units_; ++i) weights_[j](i) = flat(at++);
            offsets_(j) = flat(at++);
        }
    }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
        check_input(x);
        Eigen::VectorXd y(output_dim_);
        for (int j = 0; j < output_dim_; ++j) {
            Eigen::VectorXd h = kernels_[j] * x + biases_[j];
            double z = offsets_(j);
            for (int i = 0; i < hidden_units_; ++i)
                if (h(i) > 0.0) z += weights_[j](i) * h(i);
            y(j) = output_map_.apply(j, z);
        }
        return y;
    }

    // Gradients of upstream . output w.r.t. the flat parameters and the
    // input; ReLU subgradient at 0 taken as 0.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> backward(const Eigen::VectorXd& x,
                                                         const Eigen::VectorXd& upstream) const {
        check_input(x);
        if (upstream.size() != output_dim_)
            throw ConfigError("policy network: upstream gradient size mismatch");
        Eigen::VectorXd dparams = Eigen::VectorXd::Zero(parameter_count());
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(input_dim_);
        int at = 0;
        for (int j = 0; j < output_dim_; ++j) {
            Eigen::VectorXd h = kernels_[j] * x + biases_[j];
            double z = offsets_(j);
            for (int i = 0; i < hidden_units_; ++i)
                if (h(i) > 0.0) z += weights_[j](i) * h(i);
            double gz = upstream(j) * output_map_.derivative(j, z);
            int kernel_at = at;
            int bias_at = at + hidden_units_ * input_dim_;
            int weight_at = bias_at + hidden_units_;
            for (int i = 0; i < hidden_units_; ++i) {
                bool active = h(i) > 0.0;
                double db = active ? gz * weights_[j](i) : 0.0;
                for (int c = 0; c < input_dim_; ++c)
                    dparams(kernel_at + i * input_dim_ + c) = db * x(c);
                dparams(bias_at + i) = db;
                dparams(weight_at + i) = active ? gz * h(i) : 0.0;
                if (active) dx += db * kernels_[j].row(i).transpose();
            }
            at = weight_at + hidden_units_;
            dparams(at++) = gz;
        }
        return {std::move(dparams), std::move(dx)};
    }

    Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& x) const {
        check_input(x);
        Eigen::MatrixXd jac(output_dim_, input_dim_);
        for (int j = 0; j < output_dim_; ++j) {
            Eigen::VectorXd h = kernels_[j] * x + biases_[j];
            double z = offsets_(j);
            Eigen::VectorXd row = Eigen::VectorXd::Zero(input_dim_);
            for (int i = 0; i < hidden_units_; ++i) {
                if (h(i) > 0.0) {
                    z += weights_[j](i) * h(i);
                    row += weights_[j](i) * kernels_[j].row(i).transpose();
                }
            }
            jac.row(j) = output_map_.derivative(j, z) * row.transpose();
        }
        return jac;
    }

    // Radial projection of every kernel row onto ||a|| <= eta, and exact l1
    // projection of each output weight vector (offset included) onto the
    // gamma ball. Idempotent.
    void project_constraints() {
        for (int j = 0; j < output_dim_; ++j) {
            for (int i = 0; i < hidden_units_; ++i)
                for (double norm = kernels_[j].row(i).norm(); norm > eta_;
                     norm = kernels_[j].row(i).norm())
                    kernels_[j].row(i) *= eta_ / norm;
            Eigen::VectorXd v(hidden_units_ + 1);
            v(0) = offsets_(j);
            v.tail(hidden_units_) = weights_[j];
            v = project_l1_ball(v, gamma_);
            offsets_(j) = v(0);
            weights_[j] = v.tail(hidden_units_);
        }
    }

    bool satisfies_constraints(double tol = 1e-12) const {
        for (int j = 0; j < output_dim_; ++j) {
            for (int i = 0; i < hidden_units_; ++i)
                if (kernels_[j].row(i).norm() > eta_ + tol) return false;
            if (weights_[j].lpNorm<1>() + std::abs(offsets_(j)) > gamma_ + tol) return false;
        }
        return true;
    }

private:
    void check_input(const Eigen::VectorXd& x) const {
        if (x.size() != input_dim_) throw ConfigError("policy network: input dimension mismatch");
    }

    int input_dim_ = 0;
    int hidden_units_ = 0;
    int output_dim_ = 0;
    double eta_ = 1.0;
    double gamma_ = 1.0;
    OutputMap output_map_;
    std::vector<Eigen::MatrixXd> kernels_;
    std::vector<Eigen::VectorXd> biases_;
    std::vector<Eigen::VectorXd> weights_;
    Eigen::VectorXd offsets_;
};

// One-hidden-layer sigmoid network for value functions:
//   Phi(x) = sum_i c_i sigmoid(a_i . x + b_i) + c_0,
// no output activation; |Phi| <= gamma everywhere since the sigmoid is
// bounded by 1 and the weights live in the gamma l1 ball.
class ValueNetwork {
public:
    ValueNetwork() = default;

    ValueNetwork(int input_dim, int hidden_units, double eta, double gamma)
        : input_dim_(input_dim), hidden_units_(hidden_units), eta_(eta), gamma_(gamma) {
        if (input_dim < 1 || hidden_units < 1)
            throw ConfigError("value network: dimensions must be >= 1");
        if (!(eta > 0.0) || !(gamma > 0.0))
            throw ConfigError("value network: eta and gamma must be positive");
        kernel_ = Eigen::MatrixXd::Zero(hidden_units, input_dim);
        bias_ = Eigen::VectorXd::Zero(hidden_units);
        weights_ = Eigen::VectorXd::Zero(hidden_units);
        offset_ = 0.0;
    }

    static ValueNetwork initialize(int input_dim, int hidden_units, double eta, double gamma,
                                   InitScheme scheme, SeedStream stream) {
        ValueNetwork net(input_dim, hidden_units, eta, gamma);
        detail::init_kernel(net.kernel_, scheme, stream);
        detail::init_bias(net.bias_, scheme, stream);
        detail::init_weights(net.weights_, scheme, stream);
        net.project_constraints();
        return net;
    }

    int input_dim() const { return input_dim_; }
    int hidden_units() const { return hidden_units_; }
    double eta() const { return eta_; }
    double gamma() const { return gamma_; }

    Eigen::MatrixXd& kernel() { return kernel_; }
    const Eigen::MatrixXd& kernel() const { return kernel_; }
    Eigen::VectorXd& bias() { return bias_; }
    const Eigen::VectorXd& bias() const { return bias_; }
    Eigen::VectorXd& weights() { return weights_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    double& offset() { return offset_; }
    double offset() const { return offset_; }

    int parameter_count() const { return hidden_units_ * (input_dim_ + 2) + 1; }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd flat(parameter_count());
        int at = 0;
        for (int i = 0; i < hidden_units_; ++i)
            for (int c = 0; c < input_dim_; ++c) flat(at++) = kernel_(i, c);
        for (int i = 0; i < hidden_units_; ++i) flat(at++) = bias_(i);
        for (int i = 0; i < hidden_units_; ++i) flat(at++) = weights_(i);
        flat(at) = offset_;
        return flat;
    }

    void set_parameters(const Eigen::VectorXd& flat) {
        if (flat.size() != parameter_count())
            throw ConfigError("value network: parameter vector size mismatch");
        int at = 0;
        for (int i = 0; i < hidden_units_; ++i)
            for (int c = 0; c < input_dim_; ++c) kernel_(i, c) = flat(at++);
        for (int i = 0; i < hidden_units_; ++i) bias_(i) = flat(at++);
        for (int i = 0; i < hidden_units_; ++i) weights_(i) = flat(at++);
        offset_ = flat(at);
    }

    double forward(const Eigen::VectorXd& x) const {
        check_input(x);
        Eigen::VectorXd h = kernel_ * x + bias_;
        double z = offset_;
        for (int i = 0; i < hidden_units_; ++i) z += weights_(i) * sigmoid(h(i));
        return z;
    }

    std::pair<Eigen::VectorXd, Eigen::VectorXd> backward(const Eigen::VectorXd& x,
                                                         double upstream) const {
        check_input(x);
        Eigen::VectorXd dparams(parameter_count());
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(input_dim_);
        Eigen::VectorXd h = kernel_ * x + bias_;
        int bias_at = hidden_units_ * input_dim_;
        int weight_at = bias_at + hidden_units_;
        for (int i = 0; i < hidden_units_; ++i) {
            double s = sigmoid(h(i));
            double db = upstream * weights_(i) * s * (1.0 - s);
            for (int c = 0; c < input_dim_; ++c) dparams(i * input_dim_ + c) = db * x(c);
            dparams(bias_at + i) = db;
            dparams(weight_at + i) = upstream * s;
            dx += db * kernel_.row(i).transpose();
        }
        dparams(weight_at + hidden_units_) = upstream;
        return {std::move(dparams), std::move(dx)};
    }

    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const {
        return value_and_input_gradient(x).second;
    }

    // Single hidden-layer pass computing the output and its input gradient
    // without touching the parameter gradients; the hot path for value
    // estimates composed over quantization grids.
    std::pair<double, Eigen::VectorXd> value_and_input_gradient(const Eigen::VectorXd& x) const {
        check_input(x);
        double z = offset_;
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(input_dim_);
        for (int i = 0; i < hidden_units_; ++i) {
            double h = kernel_.row(i).dot(x) + bias_(i);
            double s = sigmoid(h);
            z += weights_(i) * s;
            dx += (weights_(i) * s * (1.0 - s)) * kernel_.row(i).transpose();
        }
        return {z, std::move(dx)};
    }

    void project_constraints() {
        for (int i = 0; i < hidden_units_; ++i)
            for (double norm = kernel_.row(i).norm(); norm > eta_; norm = kernel_.row(i).norm())
                kernel_.row(i) *= eta_ / norm;
        Eigen::VectorXd v(hidden_units_ + 1);
        v(0) = offset_;
        v.tail(hidden_units_) = weights_;
        v = project_l1_ball(v, gamma_);
        offset_ = v(0);
        weights_ = v.tail(hidden_units_);
    }

    bool satisfies_constraints(double tol = 1e-12) const {
        for (int i = 0; i < hidden_units_; ++i)
            if (kernel_.row(i).norm() > eta_ + tol) return false;
        return weights_.lpNorm<1>() + std::abs(offset_) <= gamma_ + tol;
    }

private:
    void check_input(const Eigen::VectorXd& x) const {
        if (x.size() != input_dim_) throw ConfigError("value network: input dimension mismatch");
    }

    int input_dim_ = 0;
    int hidden_units_ = 0;
    double eta_ = 1.0;
    double gamma_ = 1.0;
    Eigen::MatrixXd kernel_;
    Eigen::VectorXd bias_;
    Eigen::VectorXd weights_;
    double offset_ = 0.0;
};

// Randomized policy over a finite control set: shared ReLU hidden layer,
// L logit heads, softmax output.
class SoftmaxPolicyNetwork {
public:
    SoftmaxPolicyNetwork() = default;

    SoftmaxPolicyNetwork(int input_dim, int hidden_units, int num_actions, double eta,
                         double gamma)
        : input_dim_(input_dim),
          hidden_units_(hidden_units),
          num_actions_(num_actions),
          eta_(eta),
          gamma_(gamma) {
        if (input_dim < 1 || hidden_units < 1 || num_actions < 1)
            throw ConfigError("softmax network: dimensions must be >= 1");
        kernel_ = Eigen::MatrixXd::Zero(hidden_units, input_dim);
        bias_ = Eigen::VectorXd::Zero(hidden_units);
        head_weights_ = Eigen::MatrixXd::Zero(num_actions, hidden_units);
        head_offsets_ = Eigen::VectorXd::Zero(num_actions);
    }

    static SoftmaxPolicyNetwork initialize(int input_dim, int hidden_units, int num_actions,
                                           double eta, double gamma, InitScheme scheme,
                                           SeedStream stream) {
        SoftmaxPolicyNetwork net(input_dim, hidden_units, num_actions, eta, gamma);
        detail::init_kernel(net.kernel_, scheme, stream);
        detail::init_bias(net.bias_, scheme, stream);
        detail::init_kernel(net.head_weights_, scheme, stream);
        net.project_constraints();
        return net;
    }

    int input_dim() const { return input_dim_; }
    int hidden_units() const { return hidden_units_; }
    int num_actions() const { return num_actions_; }
    double eta() const { return eta_; }
    double gamma() const { return gamma_; }

    Eigen::MatrixXd& kernel() { return kernel_; }
    const Eigen::MatrixXd& kernel() const { return kernel_; }
    Eigen::VectorXd& bias() { return bias_; }
    const Eigen::VectorXd& bias() const { return bias_; }
    Eigen::MatrixXd& head_weights() { return head_weights_; }
    const Eigen::MatrixXd& head_weights() const { return head_weights_; }
    Eigen::VectorXd& head_offsets() { return head_offsets_; }
    const Eigen::VectorXd& head_offsets() const { return head_offsets_; }

    int parameter_count() const {
        return hidden_units_ * (input_dim_ + 1) + num_actions_ * (hidden_units_ + 1);
    }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd flat(parameter_count());
        int at = 0;
        for (int i = 0; i < hidden_units_; ++i)
            for (int c = 0; c < input_dim_; ++c) flat(at++) = kernel_(i, c);
        for (int i = 0; i < hidden_units_; ++i) flat(at++) = bias_(i);
        for (int l = 0; l < num_actions_; ++l)
            for (int i = 0; i < hidden_units_; ++i) flat(at++) = head_weights_(l, i);
        for (int l = 0; l < num_actions_; ++l) flat(at++) = head_offsets_(l);
        return flat;
    }

    void set_parameters(const Eigen::VectorXd& flat) {
        if (flat.size() != parameter_count())
            throw ConfigError("softmax network: parameter vector size mismatch");
        int at = 0;
        for (int i = 0; i < hidden_units_; ++i)
            for (int c = 0; c < input_dim_; ++c) kernel_(i, c) = flat(at++);
        for (int i = 0; i < hidden_units_; ++i) bias_(i) = flat(at++);
        for (int l = 0; l < num_actions_; ++l)
            for (int i = 0; i < hidden_units_; ++i) head_weights_(l, i) = flat(at++);
        for (int l = 0; l < num_actions_; ++l) head_offsets_(l) = flat(at++);
    }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const {
        check_input(x);
        Eigen::VectorXd r = (kernel_ * x + bias_).cwiseMax(0.0);
        return head_weights_ * r + head_offsets_;
    }

    // Probability vector; numerically stabilized softmax.
    Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
        Eigen::VectorXd z = logits(x);
        double zmax = z.maxCoeff();
        Eigen::VectorXd p = (z.array() - zmax).exp();
        return p / p.sum();
    }

    // Pure strategy: argmax probability, ties to the smallest index.
    int argmax_action(const Eigen::VectorXd& x) const {
        Eigen::VectorXd z = logits(x);
        int best = 0;
        for (int l = 1; l < num_actions_; ++l)
            if (z(l) > z(best)) best = l;
        return best;
    }

    // upstream = dLoss/dp; the softmax Jacobian is applied internally.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> backward(const Eigen::VectorXd& x,
                                                         const Eigen::VectorXd& upstream) const {
        check_input(x);
        if (upstream.size() != num_actions_)
            throw ConfigError("softmax network: upstream gradient size mismatch");
        Eigen::VectorXd h = kernel_ * x + bias_;
        Eigen::VectorXd r = h.cwiseMax(0.0);
        Eigen::VectorXd z = head_weights_ * r + head_offsets_;
        double zmax = z.maxCoeff();
        Eigen::VectorXd p = (z.array() - zmax).exp();
        p /= p.sum();
        // dLoss/dz_l = p_l (u_l - p . u)
        double mixed = p.dot(upstream);
        Eigen::VectorXd dz = p.cwiseProduct((upstream.array() - mixed).matrix());
        Eigen::VectorXd dr = head_weights_.transpose() * dz;
        Eigen::VectorXd dparams(parameter_count());
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(input_dim_);
        int at = 0;
        int bias_at = hidden_units_ * input_dim_;
        for (int i = 0; i < hidden_units_; ++i) {
            double db = h(i) > 0.0 ? dr(i) : 0.0;
            for (int c = 0; c < input_dim_; ++c) dparams(at++) = db * x(c);
            dparams(bias_at + i) = db;
            if (h(i) > 0.0) dx += db * kernel_.row(i).transpose();
        }
        at = bias_at + hidden_units_;
        for (int l = 0; l < num_actions_; ++l)
            for (int i = 0; i < hidden_units_; ++i) dparams(at++) = dz(l) * r(i);
        for (int l = 0; l < num_actions_; ++l) dparams(at++) = dz(l);
        return {std::move(dparams), std::move(dx)};
    }

    void project_constraints() {
        for (int i = 0; i < hidden_units_; ++i)
            for (double norm = kernel_.row(i).norm(); norm > eta_; norm = kernel_.row(i).norm())
                kernel_.row(i) *= eta_ / norm;
        for (int l = 0; l < num_actions_; ++l) {
            Eigen::VectorXd v(hidden_units_ + 1);
            v(0) = head_offsets_(l);
            v.tail(hidden_units_) = head_weights_.row(l).transpose();
            v = project_l1_ball(v, gamma_);
            head_offsets_(l) = v(0);
            head_weights_.row(l) = v.tail(hidden_units_).transpose();
        }
    }

private:
    void check_input(const Eigen::VectorXd& x) const {
        if (x.size() != input_dim_)
            throw ConfigError("softmax network: input dimension mismatch");
    }

    int input_dim_ = 0;
    int hidden_units_ = 0;
    int num_actions_ = 0;
    double eta_ = 1.0;
    double gamma_ = 1.0;
    Eigen::MatrixXd kernel_;
    Eigen::VectorXd bias_;
    Eigen::MatrixXd head_weights_;
    Eigen::VectorXd head_offsets_;
};

// --- JSON checkpoint format (versioned, explicit field names) ---

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    int rows = static_cast<int>(j.size());
    int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

}  // namespace detail

inline nlohmann::json to_json(const PolicyNetwork& net) {
    nlohmann::json j;
    j["format"] = "nndp-network";
    j["version"] = 1;
    j["type"] = "policy";
    j["input_dim"] = net.input_dim();
    j["hidden_units"] = net.hidden_units();
    j["output_dim"] = net.output_dim();
    j["bounds"] = {{"eta", net.eta()}, {"gamma", net.gamma()}};
    const auto& map = net.output_map();
    if (map.kind == OutputMap::Kind::identity) {
        j["output_map"] = {{"kind", "identity"}};
    } else {
        j["output_map"] = {{"kind", "box_sigmoid"},
                           {"lo", detail::vector_to_json(map.lo)},
                           {"hi", detail::vector_to_json(map.hi)}};
    }
    nlohmann::json kernels = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    nlohmann::json weights = nlohmann::json::array();
    for (int c = 0; c < net.output_dim(); ++c) {
        kernels.push_back(detail::matrix_to_json(net.kernels()[c]));
        biases.push_back(detail::vector_to_json(net.biases()[c]));
        weights.push_back(detail::vector_to_json(net.weights()[c]));
    }
    j["kernels"] = std::move(kernels);
    j["biases"] = std::move(biases);
    j["output_weights"] = std::move(weights);
    j["output_offsets"] = detail::vector_to_json(net.offsets());
    return j;
}

inline PolicyNetwork policy_network_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "nndp-network" || j.value("type", "") != "policy")
        throw ConfigError("not a policy network checkpoint");
    OutputMap map;
    if (j.at("output_map").at("kind") == "box_sigmoid")
        map = OutputMap::box(detail::vector_from_json(j.at("output_map").at("lo")),
                             detail::vector_from_json(j.at("output_map").at("hi")));
    PolicyNetwork net(j.at("input_dim"), j.at("hidden_units"), j.at("output_dim"),
                      j.at("bounds").at("eta"), j.at("bounds").at("gamma"), std::move(map));
    for (int c = 0; c < net.output_dim(); ++c) {
        net.kernels()[c] = detail::matrix_from_json(j.at("kernels").at(c));
        net.biases()[c] = detail::vector_from_json(j.at("biases").at(c));
        net.weights()[c] = detail::vector_from_json(j.at("output_weights").at(c));
    }
    net.offsets() = detail::vector_from_json(j.at("output_offsets"));
    return net;
}

inline nlohmann::json to_json(const ValueNetwork& net) {
    nlohmann::json j;
    j["format"] = "nndp-network";
    j["version"] = 1;
    j["type"] = "value";
    j["input_dim"] = net.input_dim();
    j["hidden_units"] = net.hidden_units();
    j["bounds"] = {{"eta", net.eta()}, {"gamma", net.gamma()}};
    j["kernels"] = detail::matrix_to_json(net.kernel());
    j["biases"] = detail::vector_to_json(net.bias());
    j["output_weights"] = detail::vector_to_json(net.weights());
    j["output_offset"] = net.offset();
    return j;
}

inline ValueNetwork value_network_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "nndp-network" || j.value("type", "") != "value")
        throw ConfigError("not a value network checkpoint");
    ValueNetwork net(j.at("input_dim"), j.at("hidden_units"), j.at("bounds").at("eta"),
                     j.at("bounds").at("gamma"));
    net.kernel() = detail::matrix_from_json(j.at("kernels"));
    net.bias() = detail::vector_from_json(j.at("biases"));
    net.weights() = detail::vector_from_json(j.at("output_weights"));
    net.offset() = j.at("output_offset").get<double>();
    return net;
}

inline nlohmann::json to_json(const SoftmaxPolicyNetwork& net) {
    nlohmann::json j;
    j["format"] = "nndp-network";
    j["version"] = 1;
    j["type"] = "softmax_policy";
    j["input_dim"] = net.input_dim();
    j["hidden_units"] = net.hidden_units();
    j["num_actions"] = net.num_actions();
    j["bounds"] = {{"eta", net.eta()}, {"gamma", net.gamma()}};
    j["kernels"] = detail::matrix_to_json(net.kernel());
    j["biases"] = detail::vector_to_json(net.bias());
    j["output_weights"] = detail::matrix_to_json(net.head_weights());
    j["output_offsets"] = detail::vector_to_json(net.head_offsets());
    return j;
}

inline SoftmaxPolicyNetwork softmax_network_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "nndp-network" || j.value("type", "") != "softmax_policy")
        throw ConfigError("not a softmax network checkpoint");
    SoftmaxPolicyNetwork net(j.at("input_dim"), j.at("hidden_units"), j.at("num_actions"),
                             j.at("bounds").at("eta"), j.at("bounds").at("gamma"));
    net.kernel() = detail::matrix_from_json(j.at("kernels"));
    net.bias() = detail::vector_from_json(j.at("biases"));
    net.head_weights() = detail::matrix_from_json(j.at("output_weights"));
    net.head_offsets() = detail::vector_from_json(j.at("output_offsets"));
    return net;
}

}  // namespace nndp
