#ifndef STITCH_RNG_HPP
#define STITCH_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace stitch {

using Rng = std::mt19937_64;

// Derives an independent generator for a named substream of a base seed, so
// the simulation, initialization, batching and evaluation streams can be
// re-run independently.
Rng make_rng(std::uint64_t seed, std::string_view stream);

// Zero-mean von Mises draw with concentration kappa (Best-Fisher rejection).
double sample_von_mises(Rng& rng, double kappa);

}  // namespace stitch

#endif
