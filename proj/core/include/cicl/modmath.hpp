#pragma once

// Exact modular arithmetic for the exponential task family. All residues are
// held in 64-bit integers and every product is reduced immediately, which is
// exact for any modulus below 2^32 (moduli used here are < 2^16).

#include <cstdint>
#include <vector>

namespace cicl {

/// A prime modulus p >= 3, verified by trial division on construction.
class Modulus {
 public:
  explicit Modulus(std::int64_t p);

  std::int64_t value() const noexcept { return p_; }
  /// Order of the multiplicative group, p - 1.
  std::int64_t group_order() const noexcept { return p_ - 1; }

  friend bool operator==(const Modulus&, const Modulus&) = default;

 private:
  std::int64_t p_;
};

/// Task identity: modulus and the two exponent bases, both primitive roots.
struct TaskParams {
  Modulus p;
  std::int64_t a;
  std::int64_t b;

  /// Throws std::invalid_argument unless a and b are primitive roots of p.
  static TaskParams make(Modulus p, std::int64_t a, std::int64_t b);

  friend bool operator==(const TaskParams&, const TaskParams&) = default;
};

bool is_prime(std::int64_t n) noexcept;

std::int64_t mod_pow(std::int64_t base, std::uint64_t exp, std::int64_t m);
inline std::int64_t mod_pow(std::int64_t base, std::uint64_t exp, Modulus p) {
  return mod_pow(base, exp, p.value());
}

/// Distinct prime factors of n (n >= 1), ascending.
std::vector<std::int64_t> prime_factors(std::int64_t n);

bool is_primitive_root(std::int64_t g, Modulus p);

/// All g in (1, p) of multiplicative order p - 1, ascending.
std::vector<std::int64_t> primitive_roots(Modulus p);

/// g^x mod p.
std::int64_t single_exp_oracle(std::int64_t g, std::int64_t x, Modulus p);

/// a^x mod (p - 1): the reduced inner exponent of the double exponential.
std::int64_t fermat_reduce(const TaskParams& params, std::int64_t x);

/// b^(a^x) mod p, evaluated through the Fermat-reduced inner exponent.
std::int64_t double_exp_oracle(const TaskParams& params, std::int64_t x);

}  // namespace cicl
