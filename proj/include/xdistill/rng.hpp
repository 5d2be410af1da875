#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace xdistill {

// Deterministic random source. Draws come from mt19937_64 (whose output
// sequence is fixed by the standard) and all distributions are hand-rolled,
// so a given seed produces the same stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n) by rejection on masked bits.
  int64_t below(int64_t n) {
    uint64_t bound = static_cast<uint64_t>(n);
    uint64_t mask = ~uint64_t{0};
    mask >>= __builtin_clzll(bound | 1);
    uint64_t draw;
    do {
      draw = next() & mask;
    } while (draw >= bound);
    return static_cast<int64_t>(draw);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xdistill
