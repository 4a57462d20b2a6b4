#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace combo {

/// Seeded generator with platform-independent sampling helpers.
///
/// Only the raw 64-bit engine output is used; the conversions to uniforms,
/// categorical draws and exponentials are done here so that a seed produces
/// the same stream on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();

    /// Uniform integer in [0, n).
    int uniform_int(int n);

    /// Draws an index with probability proportional to `weights`.
    int categorical(const Eigen::Ref<const Eigen::VectorXd>& weights);

    /// Standard exponential variate.
    double exponential();

    /// Uniform draw from the probability simplex of dimension n.
    Eigen::VectorXd simplex(int n);

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace combo
