#include "cicl/modmath.hpp"

#include <stdexcept>
#include <string>

namespace cicl {

namespace {

void require_exponent_range(std::int64_t x, const Modulus& p) {
  if (x < 0 || x >= p.value()) {
    throw std::invalid_argument("exponent input " + std::to_string(x) +
                                " outside [0, " + std::to_string(p.value()) +
                                ")");
  }
}

}  // namespace

bool is_prime(std::int64_t n) noexcept {
  if (n < 2) return false;
  if (n % 2 == 0) return n == 2;
  for (std::int64_t d = 3; d * d <= n; d += 2) {
    if (n % d == 0) return false;
  }
  return true;
}

Modulus::Modulus(std::int64_t p) : p_(p) {
  if (p < 3 || p >= (std::int64_t{1} << 16) || !is_prime(p)) {
    throw std::invalid_argument("modulus must be a prime in [3, 65536), got " +
                                std::to_string(p));
  }
}

TaskParams TaskParams::make(Modulus p, std::int64_t a, std::int64_t b) {
  if (!is_primitive_root(a, p) || !is_primitive_root(b, p)) {
    throw std::invalid_argument("task bases (" + std::to_string(a) + ", " +
                                std::to_string(b) +
                                ") must be primitive roots of " +
                                std::to_string(p.value()));
  }
  return TaskParams{p, a, b};
}

std::int64_t mod_pow(std::int64_t base, std::uint64_t exp, std::int64_t m) {
  if (m <= 0) throw std::invalid_argument("mod_pow: modulus must be positive");
  if (base < 0) throw std::invalid_argument("mod_pow: base must be >= 0");
  std::int64_t result = 1 % m;
  std::int64_t sq = base % m;
  while (exp != 0) {
    if (exp & 1u) result = result * sq % m;
    sq = sq * sq % m;
    exp >>= 1;
  }
  return result;
}

std::vector<std::int64_t> prime_factors(std::int64_t n) {
  std::vector<std::int64_t> out;
  for (std::int64_t d = 2; d * d <= n; ++d) {
    if (n % d != 0) continue;
    out.push_back(d);
    while (n % d == 0) n /= d;
  }
  if (n > 1) out.push_back(n);
  return out;
}

bool is_primitive_root(std::int64_t g, Modulus p) {
  if (g <= 1 || g >= p.value()) return false;
  const std::int64_t order = p.group_order();
  for (std::int64_t q : prime_factors(order)) {
    if (mod_pow(g, static_cast<std::uint64_t>(order / q), p) == 1) return false;
  }
  return true;
}

std::vector<std::int64_t> primitive_roots(Modulus p) {
  std::vector<std::int64_t> roots;
  // p = 3 has group order 2, whose only prime factor test already covers g=2.
  for (std::int64_t g = 2; g < p.value(); ++g) {
    if (is_primitive_root(g, p)) roots.push_back(g);
  }
  return roots;
}

std::int64_t single_exp_oracle(std::int64_t g, std::int64_t x, Modulus p) {
  require_exponent_range(x, p);
  return mod_pow(g, static_cast<std::uint64_t>(x), p);
}

std::int64_t fermat_reduce(const TaskParams& params, std::int64_t x) {
  require_exponent_range(x, params.p);
  return mod_pow(params.a, static_cast<std::uint64_t>(x),
                 params.p.group_order());
}

std::int64_t double_exp_oracle(const TaskParams& params, std::int64_t x) {
  const std::int64_t inner = fermat_reduce(params, x);
  return mod_pow(params.b, static_cast<std::uint64_t>(inner), params.p);
}

}  // namespace cicl
