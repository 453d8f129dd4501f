#pragma once

#include <complex>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nelson {

using cplx = std::complex<double>;

// Thrown when inputs violate a documented precondition (bad config values,
// unsupported grid sizes, mismatched arities). CLI maps it to exit code 1.
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an algorithm fails to reach its tolerance (solver stagnation,
// indefinite shifted operator, basis overflow). CLI maps it to exit code 2.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  Vec3& operator+=(Vec3 b) { x += b.x; y += b.y; z += b.z; return *this; }
  Vec3& operator-=(Vec3 b) { x -= b.x; y -= b.y; z -= b.z; return *this; }
  friend bool operator==(Vec3 a, Vec3 b) { return a.x == b.x && a.y == b.y && a.z == b.z; }
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(Vec3 a) { return dot(a, a); }
inline double norm(Vec3 a) { return std::sqrt(norm2(a)); }

// Pairwise summation. Used everywhere a result must not depend on the number
// of worker threads or on incidental evaluation order.
template <typename T>
T pairwise_sum(std::span<const T> v) {
  const std::size_t n = v.size();
  if (n == 0) return T{};
  if (n <= 8) {
    T acc = v[0];
    for (std::size_t i = 1; i < n; ++i) acc += v[i];
    return acc;
  }
  const std::size_t half = n / 2;
  T lo = pairwise_sum(v.subspan(0, half));
  T hi = pairwise_sum(v.subspan(half));
  return lo + hi;
}

template <typename T>
T pairwise_sum(const std::vector<T>& v) {
  return pairwise_sum(std::span<const T>(v));
}

// Quantized coordinate key for hashing momenta that are known to be exact
// grid/lattice values. Scale 1e7 keeps distinct physical modes separated while
// collapsing only sub-1e-8 noise.
struct QKey3 {
  std::int64_t a = 0, b = 0, c = 0;
  friend bool operator==(const QKey3&, const QKey3&) = default;
};

inline QKey3 quantize(Vec3 k, double scale = 1e7) {
  return {static_cast<std::int64_t>(std::llround(k.x * scale)),
          static_cast<std::int64_t>(std::llround(k.y * scale)),
          static_cast<std::int64_t>(std::llround(k.z * scale))};
}

struct QKey3Hash {
  std::size_t operator()(const QKey3& k) const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    mix(static_cast<std::uint64_t>(k.a));
    mix(static_cast<std::uint64_t>(k.b));
    mix(static_cast<std::uint64_t>(k.c));
    return static_cast<std::size_t>(h);
  }
};

inline double factorial(int n) {
  double r = 1.0;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// FNV-1a over a string; used for config hashes in run records and cache keys.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace nelson
