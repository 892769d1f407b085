#pragma once

#include <array>
#include <cmath>

// Forward-mode dual numbers with N tangent directions. Used for the small
// fused ops (pose -> camera) where a dense Jacobian is cheaper to obtain by
// evaluating the same templated code on Jets than by hand derivation.

namespace radinv::ad {

template <int N>
struct Jet {
  double a = 0.0;
  std::array<double, N> v{};

  Jet() = default;
  Jet(double value) : a(value) {}  // NOLINT: implicit promotion from constants
  static Jet variable(double value, int k) {
    Jet j(value);
    j.v[static_cast<std::size_t>(k)] = 1.0;
    return j;
  }
};

template <int N>
Jet<N> operator+(const Jet<N>& x, const Jet<N>& y) {
  Jet<N> r(x.a + y.a);
  for (int i = 0; i < N; ++i) r.v[i] = x.v[i] + y.v[i];
  return r;
}
template <int N>
Jet<N> operator-(const Jet<N>& x, const Jet<N>& y) {
  Jet<N> r(x.a - y.a);
  for (int i = 0; i < N; ++i) r.v[i] = x.v[i] - y.v[i];
  return r;
}
template <int N>
Jet<N> operator-(const Jet<N>& x) {
  Jet<N> r(-x.a);
  for (int i = 0; i < N; ++i) r.v[i] = -x.v[i];
  return r;
}
template <int N>
Jet<N> operator*(const Jet<N>& x, const Jet<N>& y) {
  Jet<N> r(x.a * y.a);
  for (int i = 0; i < N; ++i) r.v[i] = x.a * y.v[i] + y.a * x.v[i];
  return r;
}
template <int N>
Jet<N> operator/(const Jet<N>& x, const Jet<N>& y) {
  const double inv = 1.0 / y.a;
  Jet<N> r(x.a * inv);
  for (int i = 0; i < N; ++i) r.v[i] = (x.v[i] - r.a * y.v[i]) * inv;
  return r;
}
template <int N>
Jet<N> operator+(const Jet<N>& x, double c) { return x + Jet<N>(c); }
template <int N>
Jet<N> operator+(double c, const Jet<N>& x) { return Jet<N>(c) + x; }
template <int N>
Jet<N> operator-(const Jet<N>& x, double c) { return x - Jet<N>(c); }
template <int N>
Jet<N> operator-(double c, const Jet<N>& x) { return Jet<N>(c) - x; }
template <int N>
Jet<N> operator*(const Jet<N>& x, double c) {
  Jet<N> r(x.a * c);
  for (int i = 0; i < N; ++i) r.v[i] = x.v[i] * c;
  return r;
}
template <int N>
Jet<N> operator*(double c, const Jet<N>& x) { return x * c; }
template <int N>
Jet<N> operator/(const Jet<N>& x, double c) { return x * (1.0 / c); }
template <int N>
Jet<N> operator/(double c, const Jet<N>& x) { return Jet<N>(c) / x; }

template <int N>
Jet<N> sqrt(const Jet<N>& x) {
  Jet<N> r(std::sqrt(x.a));
  const double d = 0.5 / r.a;
  for (int i = 0; i < N; ++i) r.v[i] = d * x.v[i];
  return r;
}
template <int N>
Jet<N> exp(const Jet<N>& x) {
  Jet<N> r(std::exp(x.a));
  for (int i = 0; i < N; ++i) r.v[i] = r.a * x.v[i];
  return r;
}
template <int N>
Jet<N> log(const Jet<N>& x) {
  Jet<N> r(std::log(x.a));
  for (int i = 0; i < N; ++i) r.v[i] = x.v[i] / x.a;
  return r;
}

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Jet<N>& x) { return x.a; }

}  // namespace radinv::ad
