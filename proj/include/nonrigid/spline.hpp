#pragma once

// Uniform cumulative B-splines on the pose group. A curve of order k blends k
// consecutive control poses per segment,
//
//   T(t) = T_i * prod_{j=1}^{k-1} exp(btilde_j(u) * log(T_{i+j-1}^-1 T_{i+j})),
//
// where u in [0,1) is the normalized position inside segment i and btilde are
// the cumulative (suffix-summed) blending polynomials. Time derivatives come
// from the product rule over the exp factors, so velocity and acceleration are
// analytic, not finite differences.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nonrigid/geometry.hpp"
#include "nonrigid/jet.hpp"

namespace nonrigid {

// Blending coefficients for order k: row s holds the polynomial coefficients
// of basis s in powers of u. Entries are exact integer ratios evaluated with a
// single division, and `cumulative` row s is the suffix sum over rows >= s.
struct BlendingMatrix {
  int k = 0;
  Eigen::MatrixXd m;
  Eigen::MatrixXd cumulative;
};

inline BlendingMatrix blending_matrix(int k) {
  if (k < 2 || k > 8) throw std::invalid_argument("blending_matrix: order must be in [2, 8]");
  auto binom = [](int n, int r) -> std::int64_t {
    if (r < 0 || r > n) return 0;
    std::int64_t b = 1;
    for (int i = 0; i < r; ++i) b = b * (n - i) / (i + 1);
    return b;
  };
  auto ipow = [](std::int64_t base, int e) -> std::int64_t {
    std::int64_t r = 1;  // 0^0 = 1 by convention
    for (int i = 0; i < e; ++i) r *= base;
    return r;
  };
  std::int64_t fact = 1;
  for (int i = 2; i <= k - 1; ++i) fact *= i;

  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> num(k, k);
  for (int s = 0; s < k; ++s) {
    for (int n = 0; n < k; ++n) {
      std::int64_t acc = 0;
      for (int l = s; l <= k - 1; ++l) {
        const std::int64_t sign = ((l - s) % 2 == 0) ? 1 : -1;
        acc += sign * binom(k, l - s) * ipow(k - 1 - l, k - 1 - n);
      }
      num(s, n) = binom(k - 1, n) * acc;
    }
  }

  BlendingMatrix out;
  out.k = k;
  out.m.resize(k, k);
  out.cumulative.resize(k, k);
  for (int s = 0; s < k; ++s) {
    for (int n = 0; n < k; ++n) {
      out.m(s, n) = double(num(s, n)) / double(fact);
      std::int64_t acc = 0;
      for (int l = s; l < k; ++l) acc += num(l, n);
      out.cumulative(s, n) = double(acc) / double(fact);
    }
  }
  return out;
}

// Pose of one segment. `ctrl` points at k consecutive control poses and u is
// the normalized segment coordinate. Works for any scalar, Jets included.
template <class S>
PoseT<S> eval_segment(const PoseT<S>* ctrl, int k, const Eigen::MatrixXd& cumulative, S u) {
  std::array<S, 8> upow;
  upow[0] = S(1.0);
  for (int n = 1; n < k; ++n) upow[n] = upow[n - 1] * u;

  PoseT<S> T = ctrl[0];
  for (int j = 1; j < k; ++j) {
    Vec6<S> d = se3_log_vec(compose(inverse(ctrl[j - 1]), ctrl[j]));
    S b = S(0.0);
    for (int n = 0; n < k; ++n) b += S(cumulative(j, n)) * upow[n];
    T = compose(T, se3_exp_vec<S>(Vec6<S>(b * d)));
  }
  return T;
}

struct PoseSample {
  double t = 0.0;
  Pose pose;
};

// Pose plus first and second kinematics at one instant. Linear quantities are
// world frame, angular quantities body frame.
struct KinematicSample {
  double t = 0.0;
  Pose pose;
  Vec3d v_world = Vec3d::Zero();
  Vec3d a_world = Vec3d::Zero();
  Vec3d w_body = Vec3d::Zero();
  Vec3d alpha_body = Vec3d::Zero();
};

struct FitOptions {
  int max_iterations = 10;
  double tol = 1e-12;
  double pad = 0.0;  // extends the knot layout past the sample span on both sides
};

class SplineTrajectory {
 public:
  SplineTrajectory() = default;

  SplineTrajectory(int k, double dt, double t0, std::vector<Pose> knots)
      : k_(k), dt_(dt), t0_(t0), knots_(std::move(knots)), blend_(blending_matrix(k)) {
    if (dt <= 0.0) throw std::invalid_argument("SplineTrajectory: knot spacing must be positive");
    if (int(knots_.size()) < k_)
      throw std::invalid_argument("SplineTrajectory: need at least k control poses");
  }

  int order() const { return k_; }
  double knot_dt() const { return dt_; }
  double t0() const { return t0_; }
  int num_segments() const { return int(knots_.size()) - k_ + 1; }
  const std::vector<Pose>& knots() const { return knots_; }
  const BlendingMatrix& blending() const { return blend_; }
  void set_knot(int i, const Pose& T) { knots_.at(std::size_t(i)) = T; }

  // Half-open valid interval [t_begin, t_end).
  std::pair<double, double> domain() const {
    return {t0_, t0_ + num_segments() * dt_};
  }

  // Segment index and normalized coordinate for a time inside the domain.
  std::pair<int, double> locate(double t) const {
    const auto [lo, hi] = domain();
    if (!(t >= lo && t < hi))
      throw std::domain_error("SplineTrajectory: t=" + std::to_string(t) + " outside valid interval [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + ")");
    double s = (t - t0_) / dt_;
    int seg = std::min(int(std::floor(s)), num_segments() - 1);
    return {seg, s - seg};
  }

  Pose evaluate(double t) const {
    const auto [seg, u] = locate(t);
    return eval_segment(knots_.data() + seg, k_, blend_.cumulative, u);
  }

  // Pose, velocity and acceleration. Acceleration needs curvature, so order 2
  // is refused rather than silently returning zeros.
  KinematicSample derivatives(double t) const {
    if (k_ < 3) throw std::invalid_argument("SplineTrajectory::derivatives: order must be >= 3");
    const auto [seg, u] = locate(t);
    const Pose* ctrl = knots_.data() + seg;
    const int n = k_ - 1;  // number of exp factors

    std::array<double, 8> upow;
    upow[0] = 1.0;
    for (int i = 1; i < k_; ++i) upow[i] = upow[i - 1] * u;

    std::array<Mat4d, 7> A, dA, ddA;
    for (int j = 0; j < n; ++j) {
      const Vec6d d = se3_log_vec<double>(compose(inverse(ctrl[j]), ctrl[j + 1]));
      double b = 0.0, db = 0.0, ddb = 0.0;
      for (int m = 0; m < k_; ++m) {
        const double c = blend_.cumulative(j + 1, m);
        b += c * upow[m];
        if (m >= 1) db += c * m * upow[m - 1];
        if (m >= 2) ddb += c * m * (m - 1) * upow[m - 2];
      }
      db /= dt_;
      ddb /= dt_ * dt_;

      const Pose Aj = se3_exp_vec<double>(Vec6d(b * d));
      Mat4d H = Mat4d::Zero();
      H.block<3, 3>(0, 0) = skew<double>(d.head<3>());
      H.block<3, 1>(0, 3) = d.tail<3>();
      A[j] = Aj.matrix();
      dA[j] = A[j] * H * db;
      ddA[j] = dA[j] * H * db + A[j] * H * ddb;
    }

    // prefix[j] = T_seg * A_0..A_{j-1}, suffix[j] = A_j..A_{n-1}
    std::array<Mat4d, 8> prefix, suffix;
    prefix[0] = ctrl[0].matrix();
    for (int j = 0; j < n; ++j) prefix[j + 1] = prefix[j] * A[j];
    suffix[n] = Mat4d::Identity();
    for (int j = n - 1; j >= 0; --j) suffix[j] = A[j] * suffix[j + 1];

    const Mat4d T = prefix[n];
    Mat4d dT = Mat4d::Zero();
    Mat4d ddT = Mat4d::Zero();
    for (int j = 0; j < n; ++j) {
      dT += prefix[j] * dA[j] * suffix[j + 1];
      ddT += prefix[j] * ddA[j] * suffix[j + 1];
      Mat4d left = prefix[j] * dA[j];
      for (int l = j + 1; l < n; ++l) {
        ddT += 2.0 * left * dA[l] * suffix[l + 1];
        left *= A[l];
      }
    }

    KinematicSample out;
    out.t = t;
    out.pose = Pose(T.block<3, 3>(0, 0), T.block<3, 1>(0, 3));
    out.v_world = dT.block<3, 1>(0, 3);
    out.a_world = ddT.block<3, 1>(0, 3);
    const Mat3d& R = out.pose.R;
    const Mat3d wx_raw = R.transpose() * dT.block<3, 3>(0, 0);
    const Mat3d wx = 0.5 * (wx_raw - wx_raw.transpose());
    out.w_body = unskew<double>(wx);
    const Mat3d ax_raw = R.transpose() * ddT.block<3, 3>(0, 0) - wx * wx;
    out.alpha_body = unskew<double>(Mat3d(0.5 * (ax_raw - ax_raw.transpose())));
    return out;
  }

 private:
  int k_ = 0;
  double dt_ = 0.0;
  double t0_ = 0.0;
  std::vector<Pose> knots_;
  BlendingMatrix blend_;
};

namespace detail {

// Cholesky factorization for a symmetric band matrix, stored lower-band:
// band(i, d) = H(i, i - d) for d in [0, bw]. Factorizes in place.
class BandedCholesky {
 public:
  BandedCholesky(int n, int bw) : n_(n), bw_(bw), band_(Eigen::MatrixXd::Zero(n, bw + 1)) {}

  double& at(int i, int j) { return band_(i, i - j); }  // requires j <= i, i - j <= bw

  void add_ridge(double r) {
    for (int i = 0; i < n_; ++i) band_(i, 0) += r;
  }

  bool factorize() {
    for (int i = 0; i < n_; ++i) {
      for (int j = std::max(0, i - bw_); j <= i; ++j) {
        double sum = band_(i, i - j);
        for (int l = std::max(0, i - bw_); l < j; ++l) sum -= band_(i, i - l) * band_(j, j - l);
        if (i == j) {
          if (sum <= 0.0) return false;
          band_(i, 0) = std::sqrt(sum);
        } else {
          band_(i, i - j) = sum / band_(j, 0);
        }
      }
    }
    return true;
  }

  Eigen::VectorXd solve(Eigen::VectorXd b) const {
    for (int i = 0; i < n_; ++i) {
      for (int j = std::max(0, i - bw_); j < i; ++j) b[i] -= band_(i, i - j) * b[j];
      b[i] /= band_(i, 0);
    }
    for (int i = n_ - 1; i >= 0; --i) {
      for (int j = i + 1; j < std::min(n_, i + bw_ + 1); ++j) b[i] -= band_(j, j - i) * b[j];
      b[i] /= band_(i, 0);
    }
    return b;
  }

 private:
  int n_;
  int bw_;
  Eigen::MatrixXd band_;
};

}  // namespace detail

struct SplineFitResult {
  SplineTrajectory spline;
  double rms = 0.0;       // root mean square of the 6-dof log residual
  bool converged = false;
  int iterations = 0;
};

// Least-squares fit of a spline to timestamped poses: Gauss-Newton on the
// residual log(T(t)^-1 T_sample), control poses initialized by geodesic
// interpolation of the nearest samples. Deliberately not robustified; callers
// that expect outliers must handle them at a higher level.
inline SplineFitResult fit_spline(std::vector<PoseSample> samples, int k, double dt,
                                  const FitOptions& opt = {}) {
  if (samples.size() < 2) throw std::invalid_argument("fit_spline: need at least two samples");
  if (dt <= 0.0) throw std::invalid_argument("fit_spline: knot spacing must be positive");
  blending_matrix(k);  // validates the order range
  std::sort(samples.begin(), samples.end(), [](const PoseSample& a, const PoseSample& b) { return a.t < b.t; });
  const double t_min = samples.front().t;
  const double t_max = samples.back().t;
  if (t_max - t_min < k * dt)
    throw std::invalid_argument("fit_spline: sample span must cover at least k knot intervals");

  const double t0 = t_min - opt.pad;
  const int num_seg = int(std::floor((t_max + opt.pad - t0) / dt)) + 1;
  const int num_knots = num_seg + k - 1;

  // Every interval overlapping the sample span must contain a sample; padded
  // edge intervals are allowed to be empty and are held by the ridge term.
  {
    std::size_t idx = 0;
    for (int s = 0; s < num_seg; ++s) {
      const double lo = t0 + s * dt, hi = lo + dt;
      if (hi <= t_min || lo > t_max) continue;
      while (idx < samples.size() && samples[idx].t < lo) ++idx;
      if (idx >= samples.size() || samples[idx].t >= hi)
        throw std::invalid_argument("fit_spline: knot interval [" + std::to_string(lo) + ", " +
                                    std::to_string(hi) + ") contains no sample");
    }
  }

  // Initial control poses: geodesic interpolation at each knot's anchor time.
  std::vector<Pose> knots(static_cast<std::size_t>(num_knots));
  for (int m = 0; m < num_knots; ++m) {
    double tau = t0 + (m - (k - 1) * 0.5) * dt;
    tau = std::min(std::max(tau, t_min), t_max);
    auto it = std::lower_bound(samples.begin(), samples.end(), tau,
                               [](const PoseSample& s, double t) { return s.t < t; });
    if (it == samples.begin()) {
      knots[std::size_t(m)] = it->pose;
    } else if (it == samples.end()) {
      knots[std::size_t(m)] = samples.back().pose;
    } else {
      const PoseSample& b = *it;
      const PoseSample& a = *(it - 1);
      const double span = b.t - a.t;
      const double alpha = span > 0.0 ? (tau - a.t) / span : 0.0;
      const Vec6d d = se3_log_vec<double>(compose(inverse(a.pose), b.pose));
      knots[std::size_t(m)] = compose(a.pose, se3_exp_vec<double>(Vec6d(alpha * d)));
    }
  }

  SplineTrajectory spline(k, dt, t0, std::move(knots));

  auto total_cost = [&](const SplineTrajectory& sp) {
    double c = 0.0;
    for (const auto& s : samples) {
      const Vec6d r = se3_log_vec<double>(compose(inverse(sp.evaluate(s.t)), s.pose));
      c += r.squaredNorm();
    }
    return c;
  };

  constexpr int kLanes = 48;  // 6 * max order
  using J = Jet<kLanes>;
  const int n_params = 6 * num_knots;
  const int bw = 6 * k - 1;
  const double ridge = 1e-10;

  double cost = total_cost(spline);
  bool converged = false;
  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    detail::BandedCholesky H(n_params, bw);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_params);

    std::array<PoseT<J>, 8> ctrl;
    for (const auto& s : samples) {
      const auto [seg, u] = spline.locate(s.t);
      for (int j = 0; j < k; ++j) {
        Vec6<J> eps;
        for (int l = 0; l < 6; ++l) eps[l] = J(0.0, 6 * j + l);
        ctrl[std::size_t(j)] =
            compose(pose_cast<J>(spline.knots()[std::size_t(seg + j)]), se3_exp_vec<J>(eps));
      }
      const PoseT<J> T = eval_segment(ctrl.data(), k, spline.blending().cumulative, J(u));
      const Vec6<J> r = se3_log_vec<J>(compose(inverse(T), pose_cast<J>(s.pose)));

      const int base = 6 * seg;
      const int nloc = 6 * k;
      for (int row = 0; row < 6; ++row) {
        for (int a = 0; a < nloc; ++a) {
          const double ja = r[row].v[a];
          if (ja == 0.0) continue;
          g[base + a] += ja * r[row].a;
          for (int b = 0; b <= a; ++b) H.at(base + a, base + b) += ja * r[row].v[b];
        }
      }
    }

    H.add_ridge(ridge);
    if (!H.factorize()) break;
    Eigen::VectorXd step = H.solve(-g);

    // Retract, with halving as a safety net; the problem is mildly nonlinear.
    double scale = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 5; ++attempt, scale *= 0.5) {
      SplineTrajectory trial = spline;
      for (int m = 0; m < num_knots; ++m) {
        const Vec6d d = scale * step.segment<6>(6 * m);
        trial.set_knot(m, compose(trial.knots()[std::size_t(m)], se3_exp_vec<double>(d)));
      }
      const double trial_cost = total_cost(trial);
      if (trial_cost <= cost) {
        const double drop = cost - trial_cost;
        spline = std::move(trial);
        cost = trial_cost;
        accepted = true;
        if (drop <= opt.tol * std::max(cost, 1e-300)) converged = true;
        break;
      }
    }
    if (!accepted || converged) {
      if (!accepted) converged = cost == 0.0;
      break;
    }
  }
  if (cost <= 1e-24) converged = true;

  SplineFitResult out{std::move(spline), std::sqrt(cost / double(samples.size())), converged, iter};
  return out;
}

}  // namespace nonrigid
