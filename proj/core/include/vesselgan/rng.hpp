#pragma once

#include <cstdint>
#include <string_view>
#include <random>
#include <vector>

namespace vgan {

/// FNV-1a 64-bit hash; used to derive named sub-stream seeds and to
/// fingerprint serialized payloads.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Deterministic random stream. All randomness in the project flows from a
/// single master seed fanned out to named streams, so results are
/// reproducible across platforms (mt19937_64 plus our own Box-Muller; no
/// implementation-defined std distributions).
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view name);
    explicit RngStream(std::uint64_t raw_seed);

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in [lo, hi].
    int uniform_int(int lo, int hi);
    /// Standard normal via Box-Muller.
    double normal();
    /// Normal truncated to |x| <= 2*stdev (resampling), mean 0.
    double truncated_normal(double stdev);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vgan
