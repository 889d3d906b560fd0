#pragma once

// Trajectory evaluation: absolute pose error with optional closed-form
// alignment, relative scale error, and the gravity direction error. All three
// are pure functions of their inputs.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Geometry>

#include "nonrigid/geometry.hpp"
#include "nonrigid/spline.hpp"

namespace nonrigid {

enum class AlignMode { none, se3, sim3 };

// Per-sample translational error statistics after alignment. The alignment
// itself is kept because its scale doubles as the trajectory's metric scale
// when mode is sim3.
struct ApeStats {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;
  AlignMode mode = AlignMode::none;
  double scale = 1.0;
  Pose transform;
  int matched = 0;
};

// Least-squares fit of est onto gt after nearest-timestamp association, then
// ‖t_est − t_gt‖ statistics. Association accepts matches closer than half the
// ground truth's median sample period.
inline ApeStats ape(const std::vector<PoseSample>& est, const std::vector<PoseSample>& gt,
                    AlignMode mode) {
  if (gt.size() < 2) throw std::invalid_argument("ape: ground truth needs at least 2 samples");
  if (est.empty()) throw std::invalid_argument("ape: empty estimate");

  std::vector<PoseSample> e(est), g(gt);
  const auto by_time = [](const PoseSample& a, const PoseSample& b) { return a.t < b.t; };
  std::sort(e.begin(), e.end(), by_time);
  std::sort(g.begin(), g.end(), by_time);

  std::vector<double> gaps(g.size() - 1);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) gaps[i] = g[i + 1].t - g[i].t;
  std::nth_element(gaps.begin(), gaps.begin() + std::ptrdiff_t(gaps.size() / 2), gaps.end());
  const double tol = 0.5 * gaps[gaps.size() / 2];

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto it = std::lower_bound(g.begin(), g.end(), e[i], by_time);
    std::size_t j = std::size_t(it - g.begin());
    if (j == g.size() || (j > 0 && e[i].t - g[j - 1].t < g[j].t - e[i].t)) --j;
    if (std::abs(e[i].t - g[j].t) <= tol) pairs.emplace_back(i, j);
  }
  if (pairs.size() < 3) throw std::invalid_argument("ape: fewer than 3 matched samples");

  Eigen::Matrix3Xd src(3, Eigen::Index(pairs.size())), dst(3, Eigen::Index(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    src.col(Eigen::Index(k)) = e[pairs[k].first].pose.p;
    dst.col(Eigen::Index(k)) = g[pairs[k].second].pose.p;
  }

  ApeStats stats;
  stats.mode = mode;
  stats.matched = int(pairs.size());
  if (mode != AlignMode::none) {
    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, mode == AlignMode::sim3);
    if (!T.allFinite()) throw std::invalid_argument("ape: degenerate alignment");
    const Mat3d L = T.topLeftCorner<3, 3>();
    stats.scale = std::cbrt(L.determinant());
    if (!(stats.scale > 0.0) || !std::isfinite(stats.scale))
      throw std::invalid_argument("ape: degenerate alignment");
    stats.transform = Pose(Mat3d(L / stats.scale), Vec3d(T.topRightCorner<3, 1>()));
  }

  std::vector<double> errs(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Vec3d mapped =
        stats.scale * (stats.transform.R * src.col(Eigen::Index(k))) + stats.transform.p;
    errs[k] = (mapped - dst.col(Eigen::Index(k))).norm();
  }

  double sum = 0.0, sq = 0.0;
  for (double v : errs) sum += v;
  stats.mean = sum / double(errs.size());
  for (double v : errs) sq += (v - stats.mean) * (v - stats.mean);
  stats.std = std::sqrt(sq / double(errs.size()));
  std::sort(errs.begin(), errs.end());
  const std::size_t mid = errs.size() / 2;
  stats.median = errs.size() % 2 ? errs[mid] : 0.5 * (errs[mid - 1] + errs[mid]);
  return stats;
}

inline double scale_error(double lambda_opt, double lambda_gt) {
  if (!(lambda_gt > 0.0)) throw std::invalid_argument("scale_error: lambda_gt must be positive");
  return std::abs(lambda_gt - lambda_opt) / lambda_gt;
}

// Angle between the two directions in degrees, in [0, 180].
inline double gravity_error(const Vec3d& g_opt, const Vec3d& g_gt) {
  const double no = g_opt.norm(), ng = g_gt.norm();
  if (!(no > 0.0) || !(ng > 0.0))
    throw std::invalid_argument("gravity_error: zero-length direction");
  const double c = std::clamp(g_opt.dot(g_gt) / (no * ng), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace nonrigid
