#pragma once

#include <cmath>

namespace omla {

/// Forward-mode dual number carrying one tangent component.
///
/// Instantiating the tensor engine with `Dual` instead of `double` turns every
/// reverse-mode gradient computation into a differentiable function of one
/// seeded input direction. The meta-learning code uses this for exact
/// derivatives through unrolled optimizer steps on small models.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double value, double tangent = 0.0) : v(value), d(tangent) {}

  constexpr Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    d = (d * o.v - v * o.d) / (o.v * o.v);
    v /= o.v;
    return *this;
  }
};

constexpr Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }

inline Dual sqrt(const Dual& a) {
  // sqrt(0) takes the zero subgradient so Adam on a zero gradient stays finite.
  if (a.v == 0.0) return {0.0, 0.0};
  const double r = std::sqrt(a.v);
  return {r, a.d / (2.0 * r)};
}
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual abs(const Dual& a) {
  if (a.v > 0.0) return a;
  if (a.v < 0.0) return -a;
  return {0.0, 0.0};
}
inline Dual pow(const Dual& a, double p) {
  const double r = std::pow(a.v, p);
  return {r, a.v == 0.0 ? 0.0 : a.d * p * std::pow(a.v, p - 1.0)};
}

constexpr double value_of(double x) { return x; }
constexpr double value_of(const Dual& x) { return x.v; }
constexpr double tangent_of(double) { return 0.0; }
constexpr double tangent_of(const Dual& x) { return x.d; }

}  // namespace omla
