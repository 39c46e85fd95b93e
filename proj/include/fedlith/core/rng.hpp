#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace fedlith {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over a tag string, used to name independent streams.
constexpr std::uint64_t tag_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based random stream. A stream is a pure function of its key
/// (seed, tag, indices), so draws never depend on execution order.
///
/// Distribution transforms are implemented here rather than taken from
/// <random> because the standard distributions are implementation-defined and
/// outputs must be byte-stable.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  RngStream(std::uint64_t seed, std::string_view tag,
            std::initializer_list<std::uint64_t> indices = {}) {
    std::uint64_t k = splitmix64(seed ^ tag_hash(tag));
    for (auto i : indices) k = splitmix64(k ^ splitmix64(i + 0x632be59bd9b4e019ULL));
    key_ = k;
  }

  /// Derived child stream; the parent is not advanced.
  RngStream child(std::string_view tag, std::initializer_list<std::uint64_t> indices = {}) const {
    return RngStream(key_, tag, indices);
  }

  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal (Box-Muller, both halves used).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedlith
