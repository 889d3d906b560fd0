#pragma once

// Rigid-body primitives: rotations as plain 3x3 matrices, poses as (R, p),
// twists ordered angular-first. Everything is templated on the scalar so the
// same code runs on doubles and on Jets when Jacobians are needed. Near the
// identity the closed forms switch to series expansions below kSmallAngle.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nonrigid {

template <class S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S> using Vec6 = Eigen::Matrix<S, 6, 1>;
template <class S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S> using Mat4 = Eigen::Matrix<S, 4, 4>;

using Vec3d = Vec3<double>;
using Vec6d = Vec6<double>;
using Mat3d = Mat3<double>;
using Mat4d = Mat4<double>;
using Mat6d = Eigen::Matrix<double, 6, 6>;

inline constexpr double kSmallAngle = 1e-8;

// Plain-double overload of the Jet value accessor, so generic code can always
// call value(x) regardless of the scalar in play.
inline double value(double x) { return x; }

template <class S>
Mat3<S> skew(const Vec3<S>& v) {
  Mat3<S> m;
  m << S(0), -v[2], v[1],
       v[2], S(0), -v[0],
      -v[1], v[0], S(0);
  return m;
}

template <class S>
Vec3<S> unskew(const Mat3<S>& m) {
  return Vec3<S>(m(2, 1), m(0, 2), m(1, 0));
}

template <class S>
struct PoseT {
  Mat3<S> R = Mat3<S>::Identity();
  Vec3<S> p = Vec3<S>::Zero();

  PoseT() = default;
  PoseT(const Mat3<S>& rot, const Vec3<S>& trans) : R(rot), p(trans) {}

  static PoseT identity() { return PoseT(); }

  Mat4<S> matrix() const {
    Mat4<S> m = Mat4<S>::Identity();
    m.template block<3, 3>(0, 0) = R;
    m.template block<3, 1>(0, 3) = p;
    return m;
  }
};

using Pose = PoseT<double>;

// Body twist, split into named halves. Stacked order is [angular; linear].
struct Twist {
  Vec3d angular = Vec3d::Zero();
  Vec3d linear = Vec3d::Zero();

  Twist() = default;
  Twist(const Vec3d& ang, const Vec3d& lin) : angular(ang), linear(lin) {}
  explicit Twist(const Vec6d& xi) : angular(xi.head<3>()), linear(xi.tail<3>()) {}

  Vec6d vec() const {
    Vec6d xi;
    xi << angular, linear;
    return xi;
  }
};

// Lifts a double pose into another scalar type (typically a Jet with zero
// derivative part, i.e. a constant in the derivative sense).
template <class S>
PoseT<S> pose_cast(const Pose& T) {
  PoseT<S> out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.R(r, c) = S(T.R(r, c));
    out.p[r] = S(T.p[r]);
  }
  return out;
}

template <class S>
PoseT<S> compose(const PoseT<S>& a, const PoseT<S>& b) {
  return PoseT<S>(a.R * b.R, a.p + a.R * b.p);
}

template <class S>
PoseT<S> inverse(const PoseT<S>& a) {
  Mat3<S> rt = a.R.transpose();
  return PoseT<S>(rt, -(rt * a.p));
}

namespace detail {

inline void check_finite3(const Vec3d& v, const char* who) {
  if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
    throw std::invalid_argument(std::string(who) + ": non-finite input");
}

inline void check_rotation(const Mat3d& R, const char* who) {
  const double ortho = (R.transpose() * R - Mat3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-6) || !(R.determinant() > 0.0))
    throw std::invalid_argument(std::string(who) + ": matrix is not a rotation (orthonormality error " +
                                std::to_string(ortho) + ")");
}

template <class S> inline constexpr bool is_plain_double = std::is_same_v<S, double>;

}  // namespace detail

template <class S>
Mat3<S> rot_exp(const Vec3<S>& w) {
  if constexpr (detail::is_plain_double<S>) detail::check_finite3(w, "rot_exp");
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S th2 = w.squaredNorm();
  const Mat3<S> wx = skew(w);
  if (th2 < S(kSmallAngle * kSmallAngle)) {
    return Mat3<S>(Mat3<S>::Identity() + wx + S(0.5) * (wx * wx));
  }
  const S th = sqrt(th2);
  const S sh = sin(th * S(0.5));
  const S a = sin(th) / th;              // sin(th)/th
  const S b = S(2.0) * sh * sh / th2;    // (1 - cos(th))/th^2, cancellation-free
  return Mat3<S>(Mat3<S>::Identity() + a * wx + b * (wx * wx));
}

template <class S>
Vec3<S> rot_log(const Mat3<S>& R) {
  if constexpr (detail::is_plain_double<S>) detail::check_rotation(R, "rot_log");
  using std::atan2;
  using std::sqrt;
  const Vec3<S> w = unskew<S>(Mat3<S>(R - R.transpose()));
  const S s = S(0.5) * sqrt(w.squaredNorm() + S(1e-300));  // sin(theta), >= 0 on [0, pi]
  const S c = S(0.5) * (R.trace() - S(1.0));               // cos(theta)
  const S th = atan2(s, c);
  if (th < S(kSmallAngle)) {
    return Vec3<S>(S(0.5) * w);
  }
  if (c > S(-0.999)) {
    return Vec3<S>((th / (S(2.0) * s)) * w);
  }
  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part instead. Axis sign is a convention here, not a promise.
  const Mat3<S> aat = (R + R.transpose() - S(2.0) * c * Mat3<S>::Identity()) / (S(2.0) * (S(1.0) - c));
  int i = 0;
  if (value(aat(1, 1)) > value(aat(i, i))) i = 1;
  if (value(aat(2, 2)) > value(aat(i, i))) i = 2;
  Vec3<S> axis;
  axis[i] = sqrt(aat(i, i));
  axis[(i + 1) % 3] = aat(i, (i + 1) % 3) / axis[i];
  axis[(i + 2) % 3] = aat(i, (i + 2) % 3) / axis[i];
  axis /= sqrt(axis.squaredNorm());
  if (value(axis.dot(w)) < 0.0) axis = -axis;
  return Vec3<S>(th * axis);
}

namespace detail {

// V(w) such that the translation of exp([w; v]) is V(w) v.
template <class S>
Mat3<S> se3_v(const Vec3<S>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S th2 = w.squaredNorm();
  const Mat3<S> wx = skew(w);
  if (th2 < S(kSmallAngle * kSmallAngle)) {
    return Mat3<S>(Mat3<S>::Identity() + S(0.5) * wx + (wx * wx) / S(6.0));
  }
  const S th = sqrt(th2);
  const S sh = sin(th * S(0.5));
  const S b = S(2.0) * sh * sh / th2;  // (1 - cos)/th^2
  S cc;                                // (th - sin)/th^3
  if (th < S(1e-4)) {
    cc = S(1.0 / 6.0) - th2 / S(120.0);
  } else {
    cc = (th - sin(th)) / (th2 * th);
  }
  return Mat3<S>(Mat3<S>::Identity() + b * wx + cc * (wx * wx));
}

template <class S>
Mat3<S> se3_v_inv(const Vec3<S>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S th2 = w.squaredNorm();
  const Mat3<S> wx = skew(w);
  S d;  // coefficient of wx^2 in V^-1
  if (th2 < S(1e-8)) {
    d = S(1.0 / 12.0) + th2 / S(720.0);
  } else {
    const S th = sqrt(th2);
    const S sh = sin(th * S(0.5));
    const S a = sin(th) / th;
    const S b = S(2.0) * sh * sh / th2;
    d = (S(1.0) - a / (S(2.0) * b)) / th2;
  }
  return Mat3<S>(Mat3<S>::Identity() - S(0.5) * wx + d * (wx * wx));
}

}  // namespace detail

template <class S>
PoseT<S> se3_exp_vec(const Vec6<S>& xi) {
  const Vec3<S> w = xi.template head<3>();
  const Vec3<S> v = xi.template tail<3>();
  return PoseT<S>(rot_exp(w), detail::se3_v(w) * v);
}

template <class S>
Vec6<S> se3_log_vec(const PoseT<S>& T) {
  const Vec3<S> w = rot_log(T.R);
  Vec6<S> xi;
  xi << w, detail::se3_v_inv(w) * T.p;
  return xi;
}

inline Pose se3_exp(const Twist& xi) { return se3_exp_vec<double>(xi.vec()); }
inline Twist se3_log(const Pose& T) { return Twist(se3_log_vec<double>(T)); }

// Minimal rotation taking unit vector `from` onto unit vector `to`; the
// component about the shared axis (the yaw of the alignment) is left at zero.
inline Mat3d rotation_between(const Vec3d& from, const Vec3d& to) {
  const Vec3d f = from.normalized();
  const Vec3d t = to.normalized();
  const Vec3d axis = f.cross(t);
  const double s = axis.norm();
  const double c = f.dot(t);
  if (s < 1e-12) {
    if (c > 0.0) return Mat3d::Identity();
    // Antipodal: rotate by pi about any axis orthogonal to f.
    Vec3d ortho = std::abs(f[0]) < 0.9 ? Vec3d::UnitX() : Vec3d::UnitY();
    ortho = (ortho - ortho.dot(f) * f).normalized();
    return rot_exp<double>(M_PI * ortho);
  }
  return rot_exp<double>(std::atan2(s, c) * axis / s);
}

}  // namespace nonrigid
