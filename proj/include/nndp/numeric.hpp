#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace nndp {

// Pairwise tree sum: deterministic reduction order independent of how the
// terms were produced, and better conditioned than a running sum.
inline double tree_sum(std::span<const double> values) {
    if (values.empty()) return 0.0;
    if (values.size() == 1) return values[0];
    if (values.size() == 2) return values[0] + values[1];
    std::size_t half = values.size() / 2;
    return tree_sum(values.subspan(0, half)) + tree_sum(values.subspan(half));
}

inline double tree_sum(const std::vector<double>& values) {
    return tree_sum(std::span<const double>(values));
}

// Monte Carlo estimate with its standard error.
struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    long count = 0;
};

// Welford accumulator. On a constant input sequence the variance is exactly
// zero, which the degenerate-noise contracts rely on.
class RunningStats {
public:
    void add(double x) {
        ++count_;
        double delta = x - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta * (x - mean_);
    }

    long count() const { return count_; }
    double mean() const { return mean_; }

    double variance() const {
        return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0;
    }

    double standard_error() const {
        return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
    }

    McEstimate estimate() const { return {mean(), standard_error(), count()}; }

private:
    long count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

}  // namespace nndp
