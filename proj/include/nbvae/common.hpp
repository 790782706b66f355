#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nbvae {

// Error taxonomy. Every failure mode the library reports maps onto one of
// these so callers (and the CLI exit codes) can tell config problems from
// numeric ones.
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericDomainError : std::runtime_error {
    explicit NumericDomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mixes a base seed with a stream tag into an independent sub-seed
/// (splitmix64 finalizer). Used wherever one user-facing seed has to fan
/// out into per-row / per-epoch / per-purpose streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Deterministic random stream. mt19937_64 is fully specified by the
/// standard; the uniform/normal mappings are written out explicitly instead
/// of going through std distributions, whose output is
/// implementation-defined. Identical seeds therefore give identical streams
/// on every platform.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (pairs cached).
    double normal();

    /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
    std::uint64_t uniform_int(std::uint64_t n);

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace nbvae
