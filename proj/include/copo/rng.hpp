#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace copo {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Derives independent named rng streams from one master seed so that
// components (env, policy noise, gumbel, replay, ...) never share draws.
inline Rng make_stream(std::uint64_t master, std::string_view name) {
  return Rng(detail::splitmix64(master ^ detail::fnv1a(name)));
}

// Sampling helpers implemented on raw engine output. std:: distributions are
// implementation-defined; these keep runs byte-reproducible across toolchains.
inline double uniform01(Rng& rng) {
  // in (0, 1): 53-bit mantissa, shifted away from exact 0
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline double normal(Rng& rng) {
  // Box-Muller without caching: two draws per sample, stateless
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double gumbel(Rng& rng) { return -std::log(-std::log(uniform01(rng))); }

inline Eigen::VectorXd normal_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline int categorical(const Eigen::VectorXd& weights, Rng& rng) {
  double total = weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive sum");
  double u = uniform01(rng) * total;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size() - 1);
}

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_set_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw std::runtime_error("rng_set_state: malformed engine state");
}

}  // namespace copo
