#ifndef TMRN_RNG_HPP
#define TMRN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace tmrn {

/// Seeded random source. All distributions are derived from raw mt19937_64
/// draws by hand so that a given seed yields the same stream on every
/// platform (std:: distribution implementations are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no cached spare, one pair per call).
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + stddev * z;
  }

  /// Uniform integer in [0, n). Modulo bias is negligible for 64-bit draws.
  std::size_t below(std::size_t n) { return n ? static_cast<std::size_t>(gen_() % n) : 0; }

  std::size_t uniform_int(std::size_t lo, std::size_t hi) {  // inclusive range
    return lo + below(hi - lo + 1);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derive an independent child generator. Consumes exactly one parent draw,
  /// so how much the child is used never shifts the parent stream.
  Rng fork(std::uint64_t stream) {
    return Rng(splitmix64(gen_() ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL)));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tmrn

#endif  // TMRN_RNG_HPP
