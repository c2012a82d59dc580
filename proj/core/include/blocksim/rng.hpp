#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace blocksim {

// Deterministic per-consumer random stream. Each consumer derives its state
// from (seed, stream_id), so adding a new consumer never perturbs the draws
// of existing ones. The generator is splitmix64-seeded xoshiro256**; it is
// self-contained so results are identical across standard libraries.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::string_view stream_id) : stream_id_(stream_id) {
        std::uint64_t x = seed ^ fnv1a64(stream_id);
        for (auto& s : s_) s = splitmix64(x);
    }

    const std::string& stream_id() const { return stream_id_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return lo + static_cast<std::int64_t>(v % span);
    }

    double exponential(double mean) {
        if (mean <= 0.0) throw std::invalid_argument("exponential: mean <= 0");
        return -mean * std::log1p(-uniform());
    }

    bool bernoulli(double p) { return uniform() < p; }

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::string stream_id_;
    std::uint64_t s_[4];
};

}  // namespace blocksim
