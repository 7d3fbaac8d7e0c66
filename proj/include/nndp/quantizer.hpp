#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <utility>

#include <Eigen/Core>
#include <json.hpp>

#include "nndp/errors.hpp"
#include "nndp/numeric.hpp"
#include "nndp/problem.hpp"
#include "nndp/rng.hpp"

namespace nndp {

// Discrete approximation of the noise law: grid points (rows) with cell
// probabilities estimated from the Voronoi partition.
struct Quantizer {
    Eigen::MatrixXd grid;      // K x dim
    Eigen::VectorXd weights;   // K

    int size() const { return static_cast<int>(grid.rows()); }
    int dim() const { return static_cast<int>(grid.cols()); }

    void validate() const {
        if (grid.rows() == 0) throw ConfigError("quantizer: empty grid");
        if (weights.size() != grid.rows())
            throw ConfigError("quantizer: weight/grid size mismatch");
        if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-12)
            throw ConfigError("quantizer: weights must be a probability vector");
        for (int i = 0; i < grid.rows(); ++i)
            for (int j = i + 1; j < grid.rows(); ++j)
                if ((grid.row(i) - grid.row(j)).norm() == 0.0)
                    throw DegenerateGridError("quantizer: duplicate grid points");
    }
};

// Nearest grid point in Euclidean norm; ties resolved to the smallest index.
inline std::pair<int, Eigen::VectorXd> project(const Quantizer& q, const Eigen::VectorXd& e) {
    if (q.grid.rows() == 0) throw ConfigError("project: empty grid");
    int best = 0;
    double best_d = (e.transpose() - q.grid.row(0)).squaredNorm();
    for (int i = 1; i < q.grid.rows(); ++i) {
        double d = (e.transpose() - q.grid.row(i)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return {best, q.grid.row(best).transpose()};
}

struct ClvqConfig {
    int steps = 100000;
    // Robbins-Monro decay gamma_t = a / (b + t). With a = 1 the iterates
    // forget their initialization too slowly once the Voronoi boundary
    // starts moving; a = 4 reaches the optimal 1-D normal grids within
    // ~1e6 steps.
    double schedule_a = 4.0;
    double schedule_b = 100.0;
    int weight_samples = 100000;
};

// Kohonen / competitive learning vector quantization: move the nearest grid
// point toward each fresh draw, then estimate the cell weights by empirical
// frequencies over a fresh sample.
inline Quantizer clvq_train(const NoiseSampler& sampler, int grid_size, const ClvqConfig& config,
                            std::uint64_t seed) {
    if (grid_size < 1) throw ConfigError("clvq_train: grid size must be >= 1");
    if (config.steps < 1) throw ConfigError("clvq_train: step count must be >= 1");

    SeedStream init_stream = derive_stream(seed, stream_domain::quantizer, 0);
    Quantizer q;
    q.grid.resize(grid_size, sampler.dimension);

    // Grid initialized from i.i.d. draws; a constant sampler cannot seed
    // more than one distinct cell.
    const int max_attempts = 16;
    bool distinct = false;
    for (int attempt = 0; attempt < max_attempts && !distinct; ++attempt) {
        for (int i = 0; i < grid_size; ++i) q.grid.row(i) = sampler.draw(init_stream).transpose();
        distinct = true;
        for (int i = 0; i < grid_size && distinct; ++i)
            for (int j = i + 1; j < grid_size; ++j)
                if ((q.grid.row(i) - q.grid.row(j)).norm() == 0.0) {
                    distinct = false;
                    break;
                }
    }
    if (!distinct)
        throw DegenerateGridError("clvq_train: sampler cannot populate " +
                                  std::to_string(grid_size) + " distinct grid points");

    SeedStream train_stream = derive_stream(seed, stream_domain::quantizer, 1);
    for (int t = 0; t < config.steps; ++t) {
        Eigen::VectorXd e = sampler.draw(train_stream);
        auto [index, point] = project(q, e);
        double rate = config.schedule_a / (config.schedule_b + static_cast<double>(t));
        q.grid.row(index) += rate * (e.transpose() - q.grid.row(index));
    }

    SeedStream weight_stream = derive_stream(seed, stream_domain::quantizer, 2);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(grid_size);
    for (int t = 0; t < config.weight_samples; ++t) {
        Eigen::VectorXd e = sampler.draw(weight_stream);
        counts(project(q, e).first) += 1.0;
    }
    q.weights = counts / counts.sum();
    q.validate();
    return q;
}

// Deterministic Lloyd refinement on a fixed sample: alternate nearest-point
// assignment and centroid updates until the grid stops moving. Empty cells
// keep their previous point. Also serves as the 1-D test oracle.
inline Quantizer lloyd_refine(const Quantizer& initial, const Eigen::MatrixXd& sample,
                              int max_iterations = 200, double tol = 1e-12) {
    if (sample.rows() == 0) throw ConfigError("lloyd_refine: empty sample");
    Quantizer q = initial;
    int K = q.size();
    Eigen::VectorXd counts(K);
    for (int it = 0; it < max_iterations; ++it) {
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, q.dim());
        counts.setZero();
        for (int s = 0; s < sample.rows(); ++s) {
            int idx = project(q, sample.row(s).transpose()).first;
            sums.row(idx) += sample.row(s);
            counts(idx) += 1.0;
        }
        double moved = 0.0;
        for (int i = 0; i < K; ++i) {
            if (counts(i) > 0.0) {
                Eigen::RowVectorXd centroid = sums.row(i) / counts(i);
                moved = std::max(moved, (centroid - q.grid.row(i)).norm());
                q.grid.row(i) = centroid;
            }
        }
        if (moved <= tol) break;
    }
    // Weights from the final partition of the same sample.
    counts.setZero();
    for (int s = 0; s < sample.rows(); ++s) counts(project(q, sample.row(s).transpose()).first) += 1.0;
    q.weights = counts / counts.sum();
    q.validate();
    return q;
}

// Empirical mean squared distance E |eps - Proj(eps)|^2.
inline double distortion(const Quantizer& q, const NoiseSampler& sampler, int num_samples,
                         std::uint64_t seed) {
    if (num_samples < 1) throw ConfigError("distortion: need at least one sample");
    SeedStream stream(seed);
    std::vector<double> terms(static_cast<std::size_t>(num_samples));
    for (int t = 0; t < num_samples; ++t) {
        Eigen::VectorXd e = sampler.draw(stream);
        terms[t] = (e - project(q, e).second).squaredNorm();
    }
    return tree_sum(terms) / static_cast<double>(num_samples);
}

// Quantized conditional-expectation operator:
//   P-hat W(x) = sum_l p_l W(F(x, a, e_l)),
// an exact finite sum with no sampling.
inline double quantized_expectation(
    const Quantizer& q, const std::function<double(const Eigen::VectorXd&)>& w,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                        const Eigen::VectorXd&)>& dynamics,
    const Eigen::VectorXd& x, const Eigen::VectorXd& a) {
    q.validate();
    std::vector<double> terms(static_cast<std::size_t>(q.size()));
    for (int l = 0; l < q.size(); ++l)
        terms[l] = q.weights(l) * w(dynamics(x, a, q.grid.row(l).transpose()));
    return tree_sum(terms);
}

inline nlohmann::json to_json(const Quantizer& q, const nlohmann::json& metadata = {}) {
    nlohmann::json j;
    j["format"] = "nndp-quantizer";
    j["version"] = 1;
    nlohmann::json grid = nlohmann::json::array();
    for (int i = 0; i < q.grid.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < q.grid.cols(); ++c) row.push_back(q.grid(i, c));
        grid.push_back(std::move(row));
    }
    j["grid"] = std::move(grid);
    nlohmann::json weights = nlohmann::json::array();
    for (int i = 0; i < q.weights.size(); ++i) weights.push_back(q.weights(i));
    j["weights"] = std::move(weights);
    if (!metadata.is_null() && !metadata.empty()) j["metadata"] = metadata;
    return j;
}

inline Quantizer quantizer_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "nndp-quantizer")
        throw ConfigError("not a quantizer checkpoint");
    const auto& grid = j.at("grid");
    int rows = static_cast<int>(grid.size());
    int cols = rows > 0 ? static_cast<int>(grid.at(0).size()) : 0;
    Quantizer q;
    q.grid.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) q.grid(i, c) = grid.at(i).at(c).get<double>();
    const auto& weights = j.at("weights");
    q.weights.resize(static_cast<int>(weights.size()));
    for (int i = 0; i < q.weights.size(); ++i) q.weights(i) = weights.at(i).get<double>();
    q.validate();
    return q;
}

}  // namespace nndp
