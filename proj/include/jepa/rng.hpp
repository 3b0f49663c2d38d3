#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace jepa {

/// Seeded generator with platform-independent distributions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distribution mappings are implemented here rather than taken
/// from <random> because the library distributions are allowed to differ
/// between standard library implementations, and every artifact has to be
/// reproducible from (config, seed).
///
/// Independent streams are derived from a root seed plus a list of stream
/// keys (e.g. {tag, sample_index}), so a worker can own the stream for one
/// sample without any shared state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// k distinct indices from [0, n), in selection order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer; used to mix seeds and stream keys.
std::uint64_t mix64(std::uint64_t x);

/// Stream tags used across the project.
enum class Stream : std::uint64_t {
  kSample = 1,
  kShardDraw = 2,
  kShardOrder = 3,
  kDropout = 4,
  kInit = 5,
  kLossDraw = 6,
  kProbe = 7,
  kSynthetic = 8,
  kBench = 9,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace jepa
