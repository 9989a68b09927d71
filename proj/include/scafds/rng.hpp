#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <random>

namespace scafds {

// Deterministic random source. mt19937_64 is bit-exact across platforms by
// the standard; the distributions of the standard library are not, so every
// distribution used anywhere in the pipeline is implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [lo, hi] via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal, Box-Muller with cached spare.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double lognormal(double mu, double sigma);

  // Marsaglia-Tsang for k >= 1, boosted for k < 1. theta = 1.
  double gamma(double k);

  double beta(double a, double b);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n);

  // Engine + spare state, for checkpoint round-trips.
  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scafds
