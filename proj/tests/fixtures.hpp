#pragma once

// Small hand-built MDPs and datasets shared by the unit tests.

#include <cstdint>
#include <vector>

#include "combo/dataset.hpp"
#include "combo/mdp.hpp"
#include "combo/rng.hpp"

namespace fixtures {

using combo::Matrix;
using combo::TabularMDP;
using combo::Vector;

inline TabularMDP single_state(int n_actions, double reward, double gamma) {
    std::vector<Matrix> dyn(static_cast<std::size_t>(n_actions), Matrix::Ones(1, 1));
    return TabularMDP(dyn, Matrix::Constant(1, n_actions, reward), Vector::Ones(1), gamma);
}

/// s0 -> s1 with reward 0, s1 absorbing with reward 1, one action.
inline TabularMDP two_state_chain(double gamma) {
    Matrix p(2, 2);
    p << 0, 1, 0, 1;
    Matrix r(2, 1);
    r << 0, 1;
    Vector mu0(2);
    mu0 << 1, 0;
    return TabularMDP({p}, r, mu0, gamma);
}

/// Seeded random MDP with full-support rows, rewards in [0, 1), uniform mu0.
inline TabularMDP random_mdp(int n, int m, double gamma, std::uint64_t seed) {
    combo::Rng rng(seed);
    std::vector<Matrix> dyn;
    for (int a = 0; a < m; ++a) {
        Matrix p(n, n);
        for (int s = 0; s < n; ++s) p.row(s) = rng.simplex(n).transpose();
        dyn.push_back(p);
    }
    Matrix r(n, m);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < m; ++a) r(s, a) = rng.uniform();
    return TabularMDP(dyn, r, Vector::Constant(n, 1.0 / n), gamma);
}

inline combo::TabularPolicy random_policy(int n, int m, std::uint64_t seed) {
    combo::Rng rng(seed);
    Matrix p(n, m);
    for (int s = 0; s < n; ++s) p.row(s) = rng.simplex(m).transpose();
    return combo::TabularPolicy(p);
}

/// `count` copies of (s, a, r, s_next).
inline void repeat(std::vector<combo::Transition>& out, int count, int s, int a, double r, int s_next) {
    for (int i = 0; i < count; ++i) out.push_back({s, a, r, s_next});
}

inline Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}

}  // namespace fixtures
