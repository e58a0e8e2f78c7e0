#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace groundcap {

/// Counter-based random stream: the state is (seed, counter) and every draw
/// hashes the pair, so a stream can be re-created from its seed at any time
/// and sub-streams derived for independent purposes never share draws.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : seed_(seed), counter_(0) {}

    // Derived streams. Sub-seeding mixes the label (or index) into the parent
    // seed through the same 64-bit finalizer, so ("a" then "b") and ("b") give
    // unrelated streams.
    RngStream substream(std::string_view label) const;
    RngStream substream(uint64_t index) const;

    uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    /// Standard normal via Box-Muller (two draws per call, no caching,
    /// so the draw count stays predictable).
    double normal();
    /// Normal(0, std) re-drawn until within [-2*std, 2*std].
    double truncated_normal(double stddev);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t seed_;
    uint64_t counter_;
};

/// SplitMix64 finalizer; the single mixing primitive behind RngStream.
uint64_t mix64(uint64_t x);

}  // namespace groundcap
