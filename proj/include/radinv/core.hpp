#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <exception>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace radinv {

/// Row-major dense matrix; the storage type of every tensor on a tape.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

// Error hierarchy. Callers that only care about failure catch Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StructuralError : Error {
  using Error::Error;
};
struct InvalidPoseError : Error {
  using Error::Error;
};
struct InsufficientDataError : Error {
  using Error::Error;
};
struct DegenerateConfigurationError : Error {
  using Error::Error;
};
struct PretrainingFailure : Error {
  using Error::Error;
};
struct NumericalAbort : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct UndefinedNormalError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw StructuralError(msg);
}

// splitmix64 finalizer; the basis of all counter-based randomness so that
// results never depend on evaluation order or thread count.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (mix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

/// Uniform in the open interval (0, 1) from a counter triple.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  const std::uint64_t h = hash_combine(hash_combine(seed, a), b);
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

/// Small sequential generator for everything that is not per-ray.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    // Box-Muller, one value per call keeps the stream position predictable.
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
  Mat normal_mat(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal();
    return m;
  }
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

 private:
  std::uint64_t state_;
};

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs;
/// callers reduce per-iteration buffers in index order for determinism.
/// The exception of the lowest failing index is rethrown after the loop.
template <class Body>
void parallel_for(int n, Body&& body) {
#ifdef _OPENMP
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(n, 0)));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
#else
  for (int i = 0; i < n; ++i) body(i);
#endif
}

/// Caps the worker count of parallel_for; n <= 0 keeps the runtime default.
inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace radinv
