#include "groundcap/rng.hpp"

#include <cmath>
#include <numbers>

namespace groundcap {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {
uint64_t hash_label(std::string_view label) {
    // FNV-1a, then one mixing round.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}
}  // namespace

RngStream RngStream::substream(std::string_view label) const {
    return RngStream(mix64(seed_ ^ hash_label(label)));
}

RngStream RngStream::substream(uint64_t index) const {
    return RngStream(mix64(seed_ ^ mix64(index + 0x51ed270b7a4fdc21ULL)));
}

uint64_t RngStream::next_u64() {
    return mix64(seed_ ^ mix64(counter_++));
}

double RngStream::uniform() {
    // 53 of the 64 bits, as a double in [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int RngStream::uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
}

double RngStream::normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::truncated_normal(double stddev) {
    for (;;) {
        double z = normal();
        if (std::abs(z) <= 2.0) return z * stddev;
    }
}

}  // namespace groundcap
