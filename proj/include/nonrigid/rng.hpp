#pragma once

// Counter-based random numbers. Every draw is a hash of (key, counter), so a
// generator can be split into independent streams without sharing state, and
// the same seed always reproduces the same sequence regardless of platform.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace nonrigid {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x7b4f1d3a9e28c65bULL)) {}

  // Derives an independent stream. Children with different ids never collide
  // with each other or with the parent's own draws.
  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(stream + 0x3c6ef372fe94f82bULL));
    child.ctr_ = 0;
    child.has_spare_ = false;
    return child;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  Eigen::Vector3d normal3() {
    Eigen::Vector3d n;
    n << normal(), normal(), normal();
    return n;
  }

  Eigen::Vector3d unit3() {
    Eigen::Vector3d n = normal3();
    double len = n.norm();
    while (len < 1e-12) {
      n = normal3();
      len = n.norm();
    }
    return n / len;
  }

  // Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::integer: n must be positive");
    // Rejection keeps the distribution exact for any n.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[integer(i)]);
    }
  }

 private:
  std::uint64_t next() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++ctr_); }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nonrigid
