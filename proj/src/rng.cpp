#include "combo/rng.hpp"

#include <cmath>

#include "combo/errors.hpp"

namespace combo {

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw ValidationError("uniform_int: n must be positive");
    return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
}

int Rng::categorical(const Eigen::Ref<const Eigen::VectorXd>& weights) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw ValidationError("categorical: weights must have positive mass");
    const double u = uniform() * total;
    double acc = 0.0;
    int last_positive = -1;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = static_cast<int>(i);
        if (u < acc) return last_positive;
    }
    return last_positive;
}

double Rng::exponential() {
    // 1 - u lies in (0, 1], so the log is finite.
    return -std::log(1.0 - uniform());
}

Eigen::VectorXd Rng::simplex(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = exponential();
    return v / v.sum();
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace combo
