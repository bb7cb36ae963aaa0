#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kegraph {

// Error taxonomy. The CLI maps these onto exit codes: config/usage -> 1,
// data-shaped failures -> 2, numeric/training failures -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };         // malformed input line
struct SchemaError : Error { using Error::Error; };        // unknown kind, bad meta-path spec
struct ReferenceError : Error { using Error::Error; };     // id or key not found
struct DimensionError : Error { using Error::Error; };     // shape mismatch
struct DomainError : Error { using Error::Error; };        // value outside contract domain
struct ContractError : Error { using Error::Error; };      // precondition broken by caller
struct ConfigError : Error { using Error::Error; };        // bad configuration / unknown key
struct NumericError : Error { using Error::Error; };       // NaN/Inf encountered
struct TrainingError : Error { using Error::Error; };      // degenerate training condition
struct SamplingError : Error { using Error::Error; };      // corruption impossible
struct MetricError : Error { using Error::Error; };        // metric undefined on input
struct IoError : Error { using Error::Error; };            // file system failure

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable seed for a named sub-stream of a master seed, so independent stages
// (split, kge, sieve, final training, ...) never share draws.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return splitmix64(master ^ h);
}

// Deterministic RNG wrapper. All distribution helpers are implemented here
// rather than via <random> distributions, whose output is
// implementation-defined and would break cross-toolchain reproducibility.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, bound) via rejection.
    uint64_t below(uint64_t bound) {
        if (bound == 0) throw DomainError("Rng::below: bound must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with spare caching.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace kegraph
