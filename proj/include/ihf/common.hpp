#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ihf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

enum class ErrorCode {
  InvalidArgument,
  EmptyCloud,
  DegenerateCloud,
  Underdetermined,
  NoDescriptors,
  NoParts,
  CorruptModel,
  OutsideFrustum,
  IoError,
  EmptyVotes,
};

/// Every failure in the library surfaces as an ihf::Error carrying a code,
/// so callers (the CLI in particular) can map it to a structured diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

const char* to_string(ErrorCode code);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Deterministic random source. Distribution code is hand-written so that a
/// given seed yields the same stream with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::size_t index(std::size_t n);  // [0, n)
  double normal();                   // standard normal, Box-Muller

  // Independent stream for (seed, stream) pairs, e.g. per-scene generation.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ihf
