#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace arc {

// Error taxonomy. Every failure surfaces as one of these so callers can
// map them onto exit codes (usage/config vs runtime) without string matching.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct ParamError : std::invalid_argument {
    explicit ParamError(const std::string& msg) : std::invalid_argument("parameter error: " + msg) {}
};
struct IndexError : std::out_of_range {
    explicit IndexError(const std::string& msg) : std::out_of_range("index error: " + msg) {}
};
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error("state error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument("config error: " + msg) {}
};
struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

// splitmix64; used to derive independent seed streams from (seed, tag) pairs.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return splitmix64(seed ^ h);
}

// Deterministic RNG with portable output. std::mt19937_64 is specified
// bit-exactly by the standard; the distributions below avoid the
// implementation-defined std::*_distribution so that seeded runs produce
// identical streams on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() {
        state_ = splitmix64(state_ + 0x632be59bd9b4e019ULL);
        return state_;
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // modulo bias is irrelevant at the ranges used here (n << 2^64)
        return next_u64() % n;
    }

    int next_int(int lo, int hi) {  // inclusive lo, exclusive hi
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo)));
    }

    // standard normal via Box-Muller
    double next_gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace arc
