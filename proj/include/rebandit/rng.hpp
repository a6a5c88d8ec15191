#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>

namespace rebandit {

/// SplitMix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a, used to turn stream names into tags.
constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Key of the child stream `tag` below `parent`.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t tag) noexcept {
    return mix64(parent ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_key(std::uint64_t parent, std::string_view name) noexcept {
    return derive_key(parent, hash_name(name));
}

/**
 * Counter-based random stream. The n-th output depends only on (key, n), so
 * a stream position is fully described by its counter and can be logged and
 * restored. Streams for different consumers are derived with `substream`, so
 * extra draws in one consumer never shift another.
 *
 * Satisfies UniformRandomBitGenerator. The distribution helpers below are
 * implemented here rather than through <random> so that sequences are
 * identical across standard libraries.
 */
class StreamRng {
public:
    using result_type = std::uint64_t;

    StreamRng() = default;
    explicit StreamRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
        : key_(key), counter_(counter) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }
    void set_counter(std::uint64_t c) noexcept { counter_ = c; }

    StreamRng substream(std::uint64_t tag) const noexcept { return StreamRng(derive_key(key_, tag)); }
    StreamRng substream(std::string_view name) const noexcept { return StreamRng(derive_key(key_, name)); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; consumes exactly two outputs.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Marsaglia-Tsang gamma(shape, 1).
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double u = 1.0 - uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = 1.0 - uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    double beta(double a, double b) noexcept {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    /// Index drawn from (not necessarily normalized) non-negative weights.
    std::size_t categorical(std::span<const double> weights) noexcept {
        double total = 0.0;
        for (double w : weights) total += w;
        return categorical_from_uniform(weights, uniform() * total);
    }

    std::size_t below(std::size_t n) noexcept {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    /// Inverse-CDF lookup of `target` in cumulative `weights`.
    static std::size_t categorical_from_uniform(std::span<const double> weights, double target) noexcept {
        double acc = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            acc += weights[k];
            if (target < acc) return k;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace rebandit
