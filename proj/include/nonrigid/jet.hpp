#pragma once

// Forward-mode dual numbers. A Jet carries a value together with the partial
// derivatives of that value with respect to N independent inputs, so any
// computation written against a generic scalar yields exact Jacobian columns
// as a by-product. Only the operations the pose/spline math needs are defined.

#include <Eigen/Core>
#include <cmath>

namespace nonrigid {

template <int N>
struct Jet {
  double a = 0.0;
  Eigen::Matrix<double, N, 1> v = Eigen::Matrix<double, N, 1>::Zero();

  Jet() = default;
  Jet(double value) : a(value) {}  // NOLINT: implicit so Scalar(0) works in Eigen
  Jet(double value, int k) : a(value) { v[k] = 1.0; }

  Jet& operator+=(const Jet& o) { a += o.a; v += o.v; return *this; }
  Jet& operator-=(const Jet& o) { a -= o.a; v -= o.v; return *this; }
  Jet& operator*=(const Jet& o) { v = o.a * v + a * o.v; a *= o.a; return *this; }
  Jet& operator/=(const Jet& o) {
    const double inv = 1.0 / o.a;
    a *= inv;
    v = (v - a * o.v) * inv;
    return *this;
  }
};

template <int N> inline Jet<N> operator+(const Jet<N>& x) { return x; }
template <int N> inline Jet<N> operator-(const Jet<N>& x) {
  Jet<N> r;
  r.a = -x.a;
  r.v = -x.v;
  return r;
}

template <int N> inline Jet<N> operator+(Jet<N> x, const Jet<N>& y) { return x += y; }
template <int N> inline Jet<N> operator-(Jet<N> x, const Jet<N>& y) { return x -= y; }
template <int N> inline Jet<N> operator*(Jet<N> x, const Jet<N>& y) { return x *= y; }
template <int N> inline Jet<N> operator/(Jet<N> x, const Jet<N>& y) { return x /= y; }

template <int N> inline Jet<N> operator+(Jet<N> x, double s) { x.a += s; return x; }
template <int N> inline Jet<N> operator+(double s, Jet<N> x) { x.a += s; return x; }
template <int N> inline Jet<N> operator-(Jet<N> x, double s) { x.a -= s; return x; }
template <int N> inline Jet<N> operator-(double s, const Jet<N>& x) {
  Jet<N> r;
  r.a = s - x.a;
  r.v = -x.v;
  return r;
}
template <int N> inline Jet<N> operator*(Jet<N> x, double s) { x.a *= s; x.v *= s; return x; }
template <int N> inline Jet<N> operator*(double s, Jet<N> x) { x.a *= s; x.v *= s; return x; }
template <int N> inline Jet<N> operator/(Jet<N> x, double s) {
  const double inv = 1.0 / s;
  x.a *= inv;
  x.v *= inv;
  return x;
}
template <int N> inline Jet<N> operator/(double s, const Jet<N>& x) {
  Jet<N> r;
  r.a = s / x.a;
  r.v = (-r.a / x.a) * x.v;
  return r;
}

template <int N> inline bool operator<(const Jet<N>& x, const Jet<N>& y) { return x.a < y.a; }
template <int N> inline bool operator>(const Jet<N>& x, const Jet<N>& y) { return x.a > y.a; }
template <int N> inline bool operator<=(const Jet<N>& x, const Jet<N>& y) { return x.a <= y.a; }
template <int N> inline bool operator>=(const Jet<N>& x, const Jet<N>& y) { return x.a >= y.a; }
template <int N> inline bool operator<(const Jet<N>& x, double y) { return x.a < y; }
template <int N> inline bool operator>(const Jet<N>& x, double y) { return x.a > y; }
template <int N> inline bool operator<=(const Jet<N>& x, double y) { return x.a <= y; }
template <int N> inline bool operator>=(const Jet<N>& x, double y) { return x.a >= y; }
template <int N> inline bool operator<(double x, const Jet<N>& y) { return x < y.a; }
template <int N> inline bool operator>(double x, const Jet<N>& y) { return x > y.a; }

template <int N> inline Jet<N> sqrt(const Jet<N>& x) {
  Jet<N> r;
  r.a = std::sqrt(x.a);
  r.v = x.v / (2.0 * r.a);
  return r;
}
template <int N> inline Jet<N> sin(const Jet<N>& x) {
  Jet<N> r;
  r.a = std::sin(x.a);
  r.v = std::cos(x.a) * x.v;
  return r;
}
template <int N> inline Jet<N> cos(const Jet<N>& x) {
  Jet<N> r;
  r.a = std::cos(x.a);
  r.v = -std::sin(x.a) * x.v;
  return r;
}
template <int N> inline Jet<N> exp(const Jet<N>& x) {
  Jet<N> r;
  r.a = std::exp(x.a);
  r.v = r.a * x.v;
  return r;
}
template <int N> inline Jet<N> log(const Jet<N>& x) {
  Jet<N> r;
  r.a = std::log(x.a);
  r.v = x.v / x.a;
  return r;
}
template <int N> inline Jet<N> abs(const Jet<N>& x) { return x.a < 0.0 ? -x : x; }
template <int N> inline Jet<N> atan2(const Jet<N>& y, const Jet<N>& x) {
  Jet<N> r;
  r.a = std::atan2(y.a, x.a);
  const double inv = 1.0 / (x.a * x.a + y.a * y.a);
  r.v = inv * (x.a * y.v - y.a * x.v);
  return r;
}

template <int N> inline bool isfinite(const Jet<N>& x) { return std::isfinite(x.a); }
template <int N> inline double value(const Jet<N>& x) { return x.a; }

}  // namespace nonrigid

namespace Eigen {

template <int N>
struct NumTraits<nonrigid::Jet<N>> : NumTraits<double> {
  using Real = nonrigid::Jet<N>;
  using NonInteger = nonrigid::Jet<N>;
  using Nested = nonrigid::Jet<N>;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    ReadCost = 1,
    AddCost = 1 + N,
    MulCost = 3 + 2 * N,
    RequireInitialization = 1,
  };
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<nonrigid::Jet<N>, double, BinaryOp> {
  using ReturnType = nonrigid::Jet<N>;
};
template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<double, nonrigid::Jet<N>, BinaryOp> {
  using ReturnType = nonrigid::Jet<N>;
};

}  // namespace Eigen
