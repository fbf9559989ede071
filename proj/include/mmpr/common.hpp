#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmpr {

using Vec = std::vector<double>;

enum class ErrorCode {
  Io,
  MalformedLine,
  MalformedRecord,
  MissingField,
  DimMismatch,
  DuplicateId,
  NonFiniteValue,
  NegativeTimestamp,
  EmptyInput,
  NotFitted,
  BatchTooSmall,
  UnknownItem,
  UnknownNode,
  MissingModality,
  MissingRepresentation,
  MissingProfile,
  MissingTitle,
  EmptySequence,
  TooManyPaths,
  NonFiniteLoss,
  InvalidConfig,
  StageFailed,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

inline double sq_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Standard cosine; near-zero-norm vectors compare as 0.
inline double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::DimMismatch, "cosine_sim: dim mismatch");
  double na = norm2(a), nb = norm2(b);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot(a, b) / (na * nb);
}

// FNV-1a, used for stage manifests and seed splitting.
inline uint64_t fnv1a(std::string_view data, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// All randomness flows from one root seed, split per stage by label.
inline uint64_t split_seed(uint64_t root, std::string_view label) {
  uint64_t h = fnv1a(label);
  h ^= root + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline std::mt19937_64 make_rng(uint64_t root, std::string_view label) {
  return std::mt19937_64(split_seed(root, label));
}

}  // namespace mmpr
