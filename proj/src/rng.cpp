#include "stitch/rng.hpp"

#include <cmath>

namespace stitch {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(splitmix64(seed ^ splitmix64(fnv1a(stream))));
}

double sample_von_mises(Rng& rng, double kappa) {
  // Best & Fisher (1979) wrapped-Cauchy envelope rejection sampler.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (kappa < 1e-8) return 2.0 * M_PI * unif(rng) - M_PI;
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = unif(rng);
    const double z = std::cos(M_PI * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = unif(rng);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double u3 = unif(rng);
      return (u3 > 0.5 ? 1.0 : -1.0) * std::acos(f);
    }
  }
}

}  // namespace stitch
