#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Core>

namespace simavg {

inline std::uint64_t splitmix64(std::uint64_t& state)
{
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

//! Independent child seed for the index-th stream of a base seed.
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index)
{
  std::uint64_t s = base_seed;
  splitmix64(s);
  s ^= 0xD1B54A32D192ED03ULL * (index + 1);
  return splitmix64(s);
}

//! Deterministic stream of uniforms and standard normals. Streams derived
//! from (base seed, index) are independent, so replications can run on
//! parallel workers without sharing state.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed)
    : engine_(seed)
  {
  }

  static RandomStream for_replication(std::uint64_t base_seed, std::uint64_t index)
  {
    return RandomStream(derive_seed(base_seed, index));
  }

  //! Uniform draw on (0, 1].
  double uniform()
  {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  //! Standard normal via the Box-Muller transform.
  double normal()
  {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normals(Eigen::Index n)
  {
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] = normal();
    }
    return out;
  }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace simavg
