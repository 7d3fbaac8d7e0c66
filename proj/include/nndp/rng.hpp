#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace nndp {

// Counter-based random stream: draw i of stream s under seed k is a pure
// function of (k, s, i), so identical (seed, stream) pairs reproduce the
// same sequence bit for bit and parallel workers can own disjoint streams.
class SeedStream {
public:
    explicit SeedStream(std::uint64_t seed, std::uint64_t stream = 0)
        : base_(mix(stream ^ mix(seed ^ 0x9e3779b97f4a7c15ULL))), counter_(0) {}

    std::uint64_t next_u64() { return mix(mix(counter_++) ^ base_); }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Box-Muller; consumes exactly two counter values per call.
    double next_normal() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd next_normal_vector(int dim) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v(i) = next_normal();
        return v;
    }

    // Uniform integer in [0, n).
    int next_index(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Independent child stream; the parent's counter is not advanced.
    SeedStream substream(std::uint64_t k) const {
        SeedStream child(0, 0);
        child.base_ = mix(mix(k) ^ base_ ^ 0xd1b54a32d192ed03ULL);
        child.counter_ = 0;
        return child;
    }

private:
    // SplitMix64 finalizer.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t base_;
    std::uint64_t counter_;
};

// Stable tags for deriving per-purpose substreams from one master seed.
namespace stream_domain {
inline constexpr std::uint64_t training_states = 0x101;
inline constexpr std::uint64_t training_noise = 0x102;
inline constexpr std::uint64_t network_init = 0x103;
inline constexpr std::uint64_t gradient_descent = 0x104;
inline constexpr std::uint64_t quantizer = 0x105;
inline constexpr std::uint64_t evaluation = 0x106;
inline constexpr std::uint64_t explore_simulation = 0x107;
}  // namespace stream_domain

// Substream keyed by (domain, time step): the scheme used throughout the
// solvers so reruns with one config seed are reproducible.
inline SeedStream derive_stream(std::uint64_t seed, std::uint64_t domain, std::uint64_t step = 0) {
    return SeedStream(seed, (domain << 32) ^ step);
}

}  // namespace nndp
