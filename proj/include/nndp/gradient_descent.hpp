#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nndp/errors.hpp"
#include "nndp/rng.hpp"

namespace nndp {

// Learning-rate schedule: constant c, or inverse-time c/(k + k0). The
// inverse-time choice has divergent rate sum and convergent squared sum.
struct LearningSchedule {
    enum class Kind { constant, inverse_time };
    Kind kind = Kind::constant;
    double c = 0.1;
    double k0 = 1.0;

    static LearningSchedule constant(double rate) {
        if (!(rate > 0.0)) throw ConfigError("schedule: rate must be positive");
        return {Kind::constant, rate, 1.0};
    }

    static LearningSchedule inverse_time(double c, double k0) {
        if (!(c > 0.0) || !(k0 > 0.0))
            throw ConfigError("schedule: inverse-time parameters must be positive");
        return {Kind::inverse_time, c, k0};
    }

    double at(int k) const {
        return kind == Kind::constant ? c : c / (static_cast<double>(k) + k0);
    }
};

enum class GdVariant { batch, stochastic, minibatch };

inline GdVariant gd_variant_from_string(const std::string& name) {
    if (name == "batch") return GdVariant::batch;
    if (name == "stochastic") return GdVariant::stochastic;
    if (name == "minibatch") return GdVariant::minibatch;
    throw ConfigError("unknown gradient-descent variant: " + name);
}

struct GdConfig {
    GdVariant variant = GdVariant::minibatch;
    // Batch: number of steps. Stochastic/minibatch: number of epochs.
    int iterations = 100;
    int minibatch_count = 1;  // Mb; must divide the sample count
    LearningSchedule schedule = LearningSchedule::constant(0.1);
    std::uint64_t seed = 0;
    bool record_trace = false;
    // Optional early stop on stalled loss.
    bool early_stop = false;
    double early_stop_improvement = 1e-10;
    int early_stop_window = 50;
};

struct GdTraceRow {
    int iteration;
    double loss;
    double gradient_norm;
};

struct GdResult {
    Eigen::VectorXd params;
    double final_loss = 0.0;  // full-sample loss at the final parameters
    int steps_taken = 0;
    std::vector<GdTraceRow> trace;
};

// Empirical loss over the indexed subset of the training sample. Returns
// the subset-mean loss and its gradient.
using EmpiricalLoss =
    std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&, std::span<const int>)>;

using PostStep = std::function<void(Eigen::VectorXd&)>;

// Projected gradient descent over a fixed training sample of size M in one
// of the three variants: full-batch steps, per-sample sweeps, or random
// disjoint minibatches (shuffle then partition, every index used once per
// epoch). post_step runs after every update.
inline GdResult run_gd(const EmpiricalLoss& loss_and_grad, Eigen::VectorXd initial,
                       int sample_count, const GdConfig& config, const PostStep& post_step = {}) {
    if (sample_count < 1) throw ConfigError("run_gd: sample count must be >= 1");
    if (config.iterations < 1) throw ConfigError("run_gd: iteration count must be >= 1");
    if (config.variant == GdVariant::minibatch) {
        if (config.minibatch_count < 1 || sample_count % config.minibatch_count != 0)
            throw ConfigError("run_gd: minibatch count must divide the sample count");
    }

    GdResult result;
    result.params = std::move(initial);

    std::vector<int> all_indices(sample_count);
    std::iota(all_indices.begin(), all_indices.end(), 0);

    double best_loss = std::numeric_limits<double>::infinity();
    int stalled_steps = 0;
    int step = 0;
    bool stop = false;

    auto apply_update = [&](std::span<const int> indices) {
        auto [loss, grad] = loss_and_grad(result.params, indices);
        if (!std::isfinite(loss) || !grad.allFinite())
            throw DivergenceError("run_gd: non-finite loss or gradient", step);
        result.params -= config.schedule.at(step) * grad;
        if (post_step) post_step(result.params);
        if (config.record_trace) result.trace.push_back({step, loss, grad.norm()});
        ++step;
        if (config.early_stop) {
            if (loss < best_loss - config.early_stop_improvement) {
                best_loss = loss;
                stalled_steps = 0;
            } else if (++stalled_steps >= config.early_stop_window) {
                stop = true;
            }
        }
    };

    switch (config.variant) {
        case GdVariant::batch:
            for (int k = 0; k < config.iterations && !stop; ++k) apply_update(all_indices);
            break;
        case GdVariant::stochastic:
            for (int epoch = 0; epoch < config.iterations && !stop; ++epoch) {
                for (int m = 0; m < sample_count && !stop; ++m) {
                    int index = m;
                    apply_update(std::span<const int>(&index, 1));
                }
            }
            break;
        case GdVariant::minibatch: {
            int batch_size = sample_count / config.minibatch_count;
            std::vector<int> order(all_indices);
            SeedStream shuffle_stream(config.seed, stream_domain::gradient_descent);
            for (int epoch = 0; epoch < config.iterations && !stop; ++epoch) {
                // Fisher-Yates with the counter-based stream.
                for (int i = sample_count - 1; i > 0; --i)
                    std::swap(order[i], order[shuffle_stream.next_index(i + 1)]);
                for (int b = 0; b < config.minibatch_count && !stop; ++b)
                    apply_update(std::span<const int>(order.data() + b * batch_size,
                                                      static_cast<std::size_t>(batch_size)));
            }
            break;
        }
    }

    result.steps_taken = step;
    auto [final_loss, final_grad] = loss_and_grad(result.params, all_indices);
    (void)final_grad;
    result.final_loss = final_loss;
    return result;
}

}  // namespace nndp
