#include "vesselgan/rng.hpp"

#include <cmath>

namespace vgan {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    return fnv1a64(s.data(), s.size(), seed);
}

RngStream::RngStream(std::uint64_t master_seed, std::string_view name)
    : gen_(fnv1a64(name, fnv1a64(&master_seed, sizeof(master_seed)))) {}

RngStream::RngStream(std::uint64_t raw_seed) : gen_(raw_seed) {}

double RngStream::uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

int RngStream::uniform_int(int lo, int hi) {
    // Modulo with rejection to stay unbiased.
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double RngStream::truncated_normal(double stdev) {
    double v;
    do {
        v = normal();
    } while (std::abs(v) > 2.0);
    return v * stdev;
}

}  // namespace vgan
