#pragma once

#include <cstdio>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nndp/errors.hpp"
#include "nndp/problem.hpp"
#include "nndp/rng.hpp"

namespace nndp {

// Law of the time-n training states. Exploitation draws Gaussian clouds
// around a guess of the optimal path; exploration draws uniformly over a
// box; the empirical kind replays simulated state clouds for the second
// phase of explore-then-exploit.
class TrainingDistribution {
public:
    enum class Kind { gaussian, uniform_box, empirical, custom };

    static TrainingDistribution gaussian(std::vector<Eigen::VectorXd> means,
                                         std::vector<double> radii) {
        if (means.empty() || radii.empty())
            throw ConfigError("training: gaussian needs means and radii");
        for (double r : radii) {
            if (r < 0.0) throw ConfigError("training: gaussian radius must be >= 0");
            if (r == 0.0)
                std::fprintf(stderr,
                             "training: radius 0 collapses a step onto a single point\n");
        }
        TrainingDistribution t;
        t.kind_ = Kind::gaussian;
        t.dim_ = static_cast<int>(means.front().size());
        t.means_ = std::move(means);
        t.radii_ = std::move(radii);
        return t;
    }

    static TrainingDistribution uniform(BoxBounds box) {
        if (box.lo.size() != box.hi.size() || box.lo.size() == 0)
            throw ConfigError("training: box bounds must share a nonzero dimension");
        for (int i = 0; i < box.lo.size(); ++i)
            if (!(box.hi(i) > box.lo(i)))
                throw ConfigError("training: uniform box must have positive volume");
        TrainingDistribution t;
        t.kind_ = Kind::uniform_box;
        t.dim_ = static_cast<int>(box.lo.size());
        t.box_ = std::move(box);
        return t;
    }

    static TrainingDistribution empirical(std::vector<Eigen::MatrixXd> clouds) {
        if (clouds.empty() || clouds.front().rows() == 0)
            throw ConfigError("training: empirical clouds must be non-empty");
        TrainingDistribution t;
        t.kind_ = Kind::empirical;
        t.dim_ = static_cast<int>(clouds.front().cols());
        t.clouds_ = std::move(clouds);
        return t;
    }

    static TrainingDistribution custom(int dim,
                                       std::function<Eigen::VectorXd(int, SeedStream&)> draw) {
        if (dim < 1 || !draw) throw ConfigError("training: invalid custom sampler");
        TrainingDistribution t;
        t.kind_ = Kind::custom;
        t.dim_ = dim;
        t.custom_ = std::move(draw);
        return t;
    }

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }

    // Training matrix of `count` states for time step n (rows are states).
    // The empirical kind returns its stored cloud verbatim when the sizes
    // match and bootstrap-resamples it otherwise.
    Eigen::MatrixXd sample_states(int n, int count, SeedStream& stream) const {
        if (count < 1) throw ConfigError("training: sample count must be >= 1");
        Eigen::MatrixXd out(count, dim_);
        switch (kind_) {
            case Kind::gaussian: {
                const Eigen::VectorXd& mean = means_[step_index(n, means_.size())];
                double radius = radii_[step_index(n, radii_.size())];
                for (int m = 0; m < count; ++m)
                    out.row(m) = (mean + radius * stream.next_normal_vector(dim_)).transpose();
                break;
            }
            case Kind::uniform_box:
                for (int m = 0; m < count; ++m)
                    for (int c = 0; c < dim_; ++c)
                        out(m, c) = stream.next_uniform(box_.lo(c), box_.hi(c));
                break;
            case Kind::empirical: {
                const Eigen::MatrixXd& cloud = clouds_[step_index(n, clouds_.size())];
                if (cloud.rows() == count) {
                    out = cloud;
                } else {
                    for (int m = 0; m < count; ++m)
                        out.row(m) = cloud.row(stream.next_index(static_cast<int>(cloud.rows())));
                }
                break;
            }
            case Kind::custom:
                for (int m = 0; m < count; ++m) out.row(m) = custom_(n, stream).transpose();
                break;
        }
        return out;
    }

private:
    static std::size_t step_index(int n, std::size_t have) {
        // Per-step parameters when provided, otherwise broadcast the last.
        std::size_t i = static_cast<std::size_t>(n < 0 ? 0 : n);
        return i < have ? i : have - 1;
    }

    Kind kind_ = Kind::uniform_box;
    int dim_ = 0;
    std::vector<Eigen::VectorXd> means_;
    std::vector<double> radii_;
    BoxBounds box_;
    std::vector<Eigen::MatrixXd> clouds_;
    std::function<Eigen::VectorXd(int, SeedStream&)> custom_;
};

}  // namespace nndp
