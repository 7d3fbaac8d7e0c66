#include <catch2/catch_amalgamated.hpp>

#include "nndp/network.hpp"

using namespace nndp;

namespace {

// Central finite difference of a scalar function of the flat parameters.
template <typename Net, typename Eval>
Eigen::VectorXd fd_param_gradient(Net net, const Eval& eval, double step = 1e-5) {
    Eigen::VectorXd params = net.parameters();
    Eigen::VectorXd grad(params.size());
    for (int i = 0; i < params.size(); ++i) {
        Eigen::VectorXd hi = params, lo = params;
        hi(i) += step;
        lo(i) -= step;
        net.set_parameters(hi);
        double up = eval(net);
        net.set_parameters(lo);
        double down = eval(net);
        grad(i) = (up - down) / (2.0 * step);
    }
    return grad;
}

void require_gradients_match(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd,
                             double rel_tol = 1e-5, double floor = 1e-8) {
    REQUIRE(analytic.size() == fd.size());
    for (int i = 0; i < analytic.size(); ++i) {
        if (std::abs(analytic(i)) <= floor && std::abs(fd(i)) <= floor) continue;
        double scale = std::max(std::abs(analytic(i)), std::abs(fd(i)));
        REQUIRE(std::abs(analytic(i) - fd(i)) <= rel_tol * scale + 1e-10);
    }
}

// Redraw inputs whose hidden pre-activations sit within tol of a ReLU kink.
Eigen::VectorXd sample_off_kink(const PolicyNetwork& net, SeedStream& stream, double tol = 1e-6) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Eigen::VectorXd x = stream.next_normal_vector(net.input_dim());
        bool clear = true;
        for (int j = 0; j < net.output_dim() && clear; ++j) {
            Eigen::VectorXd h = net.kernels()[j] * x + net.biases()[j];
            for (int i = 0; i < h.size(); ++i)
                if (std::abs(h(i)) < tol) clear = false;
        }
        if (clear) return x;
    }
    FAIL("could not sample an input away from every ReLU kink");
    return Eigen::VectorXd();
}

}  // namespace

TEST_CASE("zero network maps everything to the output map of zero", "[network]") {
    ValueNetwork value(3, 4, 1.0, 1.0);
    Eigen::VectorXd x(3);
    x << 0.3, -0.7, 0.1;
    REQUIRE(value.forward(x) == 0.0);

    PolicyNetwork policy(2, 3, 1, 1.0, 1.0, OutputMap::box(Eigen::VectorXd::Zero(1),
                                                           Eigen::VectorXd::Ones(1)));
    Eigen::VectorXd x2(2);
    x2 << 1.0, -1.0;
    REQUIRE(policy.forward(x2)(0) == Catch::Approx(0.5));
}

TEST_CASE("single sigmoid unit evaluates by hand", "[network]") {
    // K=1, a=1, b=0, c_1=2, c_0=1, input 0: 2*sigmoid(0) + 1 = 2.
    ValueNetwork net(1, 1, 10.0, 10.0);
    net.kernel()(0, 0) = 1.0;
    net.bias()(0) = 0.0;
    net.weights()(0) = 2.0;
    net.offset() = 1.0;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    REQUIRE(net.forward(x) == Catch::Approx(2.0));
}

TEST_CASE("softmax head with equal logits is uniform", "[network]") {
    SoftmaxPolicyNetwork net(2, 3, 4, 1.0, 1.0);
    Eigen::VectorXd x(2);
    x << 0.4, -0.2;
    Eigen::VectorXd p = net.forward(x);
    for (int l = 0; l < 4; ++l) REQUIRE(p(l) == Catch::Approx(0.25));
    REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
}

TEST_CASE("softmax probabilities are a distribution for random parameters", "[network]") {
    SeedStream stream(31);
    auto net = SoftmaxPolicyNetwork::initialize(3, 5, 6, 2.0, 3.0, InitScheme::standard,
                                                stream.substream(0));
    for (int t = 0; t < 200; ++t) {
        Eigen::VectorXd p = net.forward(stream.next_normal_vector(3));
        REQUIRE(p.minCoeff() >= 0.0);
        REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
    }
}

TEST_CASE("zero upstream gradient zeroes every parameter gradient", "[network]") {
    SeedStream stream(7);
    auto net = PolicyNetwork::initialize(2, 3, 2, 2.0, 2.0, OutputMap::identity(),
                                         InitScheme::standard, stream);
    Eigen::VectorXd x(2);
    x << 0.2, -0.4;
    auto [dparams, dx] = net.backward(x, Eigen::VectorXd::Zero(2));
    REQUIRE(dparams.norm() == 0.0);
    REQUIRE(dx.norm() == 0.0);
}

TEST_CASE("policy backward matches central finite differences", "[network]") {
    SeedStream stream(11);
    auto net = PolicyNetwork::initialize(2, 3, 1, 2.0, 2.0, OutputMap::identity(),
                                         InitScheme::standard, stream.substream(1));
    SeedStream inputs(12);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x = sample_off_kink(net, inputs);
        Eigen::VectorXd upstream(1);
        upstream << inputs.next_uniform(-1.0, 1.0);
        auto [analytic, dx] = net.backward(x, upstream);
        auto fd = fd_param_gradient(
            net, [&](const PolicyNetwork& n) { return upstream.dot(n.forward(x)); });
        require_gradients_match(analytic, fd);

        Eigen::VectorXd fd_x(x.size());
        for (int i = 0; i < x.size(); ++i) {
            Eigen::VectorXd hi = x, lo = x;
            hi(i) += 1e-5;
            lo(i) -= 1e-5;
            fd_x(i) = (upstream.dot(net.forward(hi)) - upstream.dot(net.forward(lo))) / 2e-5;
        }
        require_gradients_match(dx, fd_x);
    }
}

TEST_CASE("value backward matches central finite differences", "[network]") {
    SeedStream stream(13);
    auto net =
        ValueNetwork::initialize(3, 4, 2.0, 3.0, InitScheme::standard, stream.substream(2));
    SeedStream inputs(14);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x = inputs.next_normal_vector(3);
        double upstream = inputs.next_uniform(-1.0, 1.0);
        auto [analytic, dx] = net.backward(x, upstream);
        auto fd = fd_param_gradient(
            net, [&](const ValueNetwork& n) { return upstream * n.forward(x); });
        require_gradients_match(analytic, fd);
    }
}

TEST_CASE("softmax backward matches central finite differences", "[network]") {
    SeedStream stream(15);
    auto net = SoftmaxPolicyNetwork::initialize(2, 3, 4, 2.0, 2.0, InitScheme::standard,
                                                stream.substream(3));
    SeedStream inputs(16);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x = inputs.next_normal_vector(2);
        Eigen::VectorXd upstream(4);
        for (int l = 0; l < 4; ++l) upstream(l) = inputs.next_uniform(0.0, 2.0);
        auto [analytic, dx] = net.backward(x, upstream);
        auto fd = fd_param_gradient(net, [&](const SoftmaxPolicyNetwork& n) {
            return upstream.dot(n.forward(x));
        });
        require_gradients_match(analytic, fd);
    }
}

TEST_CASE("dead rectifier units pass no gradient", "[network]") {
    PolicyNetwork net(1, 1, 1, 5.0, 5.0, OutputMap::identity());
    net.kernels()[0](0, 0) = 1.0;
    net.biases()[0](0) = -2.0;  // pre-activation at x=1 is -1 < 0
    net.weights()[0](0) = 1.5;
    Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd upstream = Eigen::VectorXd::Ones(1);
    auto [dparams, dx] = net.backward(x, upstream);
    // Kernel, bias and weight gradients for the dead unit vanish; only the
    // output offset keeps a gradient.
    REQUIRE(dparams(0) == 0.0);
    REQUIRE(dparams(1) == 0.0);
    REQUIRE(dparams(2) == 0.0);
    REQUIRE(dparams(3) == 1.0);
    REQUIRE(dx.norm() == 0.0);
}

TEST_CASE("projection leaves feasible networks unchanged", "[network]") {
    SeedStream stream(17);
    auto net = PolicyNetwork::initialize(2, 3, 1, 2.0, 2.0, OutputMap::identity(),
                                         InitScheme::standard, stream);
    Eigen::VectorXd before = net.parameters();
    net.project_constraints();
    REQUIRE(net.parameters() == before);
}

TEST_CASE("kernel rows rescale radially onto the eta ball", "[network]") {
    ValueNetwork net(2, 1, 1.0, 10.0);
    net.kernel()(0, 0) = 1.2;
    net.kernel()(0, 1) = 1.6;  // norm 2 = 2*eta
    net.project_constraints();
    REQUIRE(net.kernel().row(0).norm() == Catch::Approx(1.0));
    REQUIRE(net.kernel()(0, 1) / net.kernel()(0, 0) == Catch::Approx(1.6 / 1.2));
}

TEST_CASE("l1 projection of an axis vector clips to the ball radius", "[network]") {
    Eigen::VectorXd v(2);
    v << 3.0, 0.0;
    Eigen::VectorXd p = project_l1_ball(v, 1.0);
    REQUIRE(p(0) == Catch::Approx(1.0));
    REQUIRE(p(1) == 0.0);
}

TEST_CASE("projection is idempotent and non-expansive", "[network]") {
    SeedStream stream(19);
    for (int trial = 0; trial < 20; ++trial) {
        PolicyNetwork a(2, 4, 2, 0.7, 0.9, OutputMap::identity());
        PolicyNetwork b = a;
        Eigen::VectorXd pa = stream.next_normal_vector(a.parameter_count()) * 2.0;
        Eigen::VectorXd pb = stream.next_normal_vector(a.parameter_count()) * 2.0;
        a.set_parameters(pa);
        b.set_parameters(pb);
        a.project_constraints();
        b.project_constraints();
        REQUIRE(a.satisfies_constraints());
        Eigen::VectorXd once = a.parameters();
        a.project_constraints();
        REQUIRE(a.parameters() == once);
        REQUIRE((a.parameters() - b.parameters()).norm() <= (pa - pb).norm() + 1e-12);
    }
}

TEST_CASE("initialization is reproducible and lands in the constraint set", "[network]") {
    SeedStream s1(23), s2(23);
    auto a = PolicyNetwork::initialize(4, 5, 2, 1.0, 1.5, OutputMap::identity(),
                                       InitScheme::standard, s1);
    auto b = PolicyNetwork::initialize(4, 5, 2, 1.0, 1.5, OutputMap::identity(),
                                       InitScheme::standard, s2);
    REQUIRE(a.parameters() == b.parameters());
    REQUIRE(a.satisfies_constraints());
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 5; ++i) REQUIRE(a.kernels()[j].row(i).norm() <= 1.0 + 1e-12);
}

TEST_CASE("zero init scheme yields a constant network", "[network]") {
    SeedStream s(29);
    auto net = PolicyNetwork::initialize(
        3, 4, 1, 1.0, 1.0, OutputMap::box(Eigen::VectorXd::Constant(1, -2.0),
                                          Eigen::VectorXd::Constant(1, 2.0)),
        InitScheme::zeros, s);
    Eigen::VectorXd y0 = net.forward(Eigen::VectorXd::Zero(3));
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd y = net.forward(s.next_normal_vector(3));
        REQUIRE(y == y0);
    }
    REQUIRE(y0(0) == Catch::Approx(0.0).margin(1e-12));  // box midpoint
}

TEST_CASE("value network output is bounded by gamma", "[network]") {
    SeedStream stream(31);
    auto net = ValueNetwork::initialize(2, 6, 2.0, 1.3, InitScheme::spread,
                                        stream.substream(0));
    // Push weights to the boundary to make the bound tight.
    net.weights().setConstant(10.0);
    net.offset() = -10.0;
    net.project_constraints();
    for (int t = 0; t < 10000; ++t) {
        double y = net.forward(stream.next_normal_vector(2) * 5.0);
        REQUIRE(std::abs(y) <= 1.3 + 1e-12);
    }
}

TEST_CASE("policy output stays inside the control box", "[network]") {
    SeedStream stream(37);
    Eigen::VectorXd lo(2), hi(2);
    lo << -1.0, 0.0;
    hi << 1.0, 3.0;
    auto net = PolicyNetwork::initialize(2, 4, 2, 2.0, 4.0, OutputMap::box(lo, hi),
                                         InitScheme::standard, stream.substream(0));
    for (int t = 0; t < 1000; ++t) {
        Eigen::VectorXd y = net.forward(stream.next_normal_vector(2) * 3.0);
        for (int j = 0; j < 2; ++j) {
            REQUIRE(y(j) >= lo(j) - 1e-12);
            REQUIRE(y(j) <= hi(j) + 1e-12);
        }
    }
}

TEST_CASE("constrained networks are (eta gamma)-Lipschitz on random secants", "[network]") {
    SeedStream stream(41);
    auto policy = PolicyNetwork::initialize(3, 5, 1, 0.8, 1.1, OutputMap::identity(),
                                            InitScheme::spread, stream.substream(0));
    auto value = ValueNetwork::initialize(3, 5, 0.8, 1.1, InitScheme::spread,
                                          stream.substream(1));
    double bound = 0.8 * 1.1;
    for (int t = 0; t < 500; ++t) {
        Eigen::VectorXd x = stream.next_normal_vector(3) * 2.0;
        Eigen::VectorXd y = stream.next_normal_vector(3) * 2.0;
        double dist = (x - y).norm();
        if (dist < 1e-9) continue;
        REQUIRE((policy.forward(x) - policy.forward(y)).norm() <= bound * dist + 1e-9);
        REQUIRE(std::abs(value.forward(x) - value.forward(y)) <= bound * dist + 1e-9);
    }
}

TEST_CASE("network checkpoints round-trip through json", "[network]") {
    SeedStream stream(43);
    auto policy = PolicyNetwork::initialize(
        2, 3, 2, 1.5, 2.5, OutputMap::box(Eigen::VectorXd::Constant(2, -1.0),
                                          Eigen::VectorXd::Constant(2, 1.0)),
        InitScheme::standard, stream.substream(0));
    auto restored = policy_network_from_json(to_json(policy));
    REQUIRE(restored.parameters() == policy.parameters());
    Eigen::VectorXd x = stream.next_normal_vector(2);
    REQUIRE(restored.forward(x) == policy.forward(x));

    auto value = ValueNetwork::initialize(3, 4, 1.0, 2.0, InitScheme::spread,
                                          stream.substream(1));
    auto value_back = value_network_from_json(to_json(value));
    REQUIRE(value_back.parameters() == value.parameters());

    auto softmax = SoftmaxPolicyNetwork::initialize(2, 3, 5, 1.0, 2.0, InitScheme::standard,
                                                    stream.substream(2));
    auto softmax_back = softmax_network_from_json(to_json(softmax));
    REQUIRE(softmax_back.parameters() == softmax.parameters());
}
