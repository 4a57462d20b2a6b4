#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

#include <Eigen/Dense>

namespace combo {

/// 64-bit FNV-1a over raw value bytes. Used for config, MDP and dataset
/// digests recorded next to persisted artifacts.
class Fnv1a {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    void add(std::int64_t v) { add_bytes(&v, sizeof v); }
    void add(int v) { add(static_cast<std::int64_t>(v)); }
    void add(std::uint64_t v) { add_bytes(&v, sizeof v); }
    void add(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        add(bits);
    }
    void add(std::string_view s) {
        add(static_cast<std::uint64_t>(s.size()));
        add_bytes(s.data(), s.size());
    }
    template <typename Derived>
    void add(const Eigen::DenseBase<Derived>& m) {
        add(static_cast<std::int64_t>(m.rows()));
        add(static_cast<std::int64_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) add(static_cast<double>(m(i, j)));
    }

    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace combo
