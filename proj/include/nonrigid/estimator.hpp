#pragma once

// Joint recovery of metric scale, gravity direction and the base trajectory
// from a monocular camera track. The track lives in an arbitrary similarity
// frame (unknown scale, unknown world orientation); the camera hangs from the
// base on a passive suspension, so its acceleration is tied to the relative
// pose through a learned (or known) deformation model. Matching the model
// prediction against the track's own second derivative makes the scale and
// the gravity axis observable.
//
// The optimization state is (lambda, R_vo, base spline knots): lambda maps
// track units to meters, R_vo rotates the track's world frame into the
// gravity-aligned one, and the base spline is the recovered support motion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "nonrigid/dfn.hpp"
#include "nonrigid/jet.hpp"
#include "nonrigid/rng.hpp"

namespace nonrigid {

// Degrades a ground-truth camera trajectory into something shaped like real
// visual-odometry output: per-pose se3 noise, a fixed fraction of gross
// outliers, and a global similarity ambiguity (random scale and rotation).
// `noise` scales translation noise by the trajectory bounding-box diagonal
// and rotation noise directly in radians, so one number degrades both.
struct PerturbConfig {
  double noise = 0.0;          // std dev, fraction of bbox diagonal / radians
  double outlier_ratio = 0.0;  // fraction of poses replaced by gross errors
  double outlier_mag = 1.0;    // outlier increment size, meters and radians
  std::uint64_t seed = 0;
  double spline_dt = 0.1;      // knot spacing of the fitted track spline

  // Tests pin the similarity ambiguity instead of drawing it.
  std::optional<double> scale_override;
  std::optional<Mat3d> rotation_override;

  void validate() const {
    if (!(noise >= 0.0)) throw std::invalid_argument("PerturbConfig: noise must be nonnegative");
    if (!(outlier_ratio >= 0.0 && outlier_ratio <= 0.5))
      throw std::invalid_argument("PerturbConfig: outlier_ratio must be in [0, 0.5]");
    if (!(outlier_mag >= 0.0))
      throw std::invalid_argument("PerturbConfig: outlier_mag must be nonnegative");
    if (!(spline_dt > 0.0)) throw std::invalid_argument("PerturbConfig: spline_dt must be positive");
    if (scale_override && !(*scale_override > 0.0))
      throw std::invalid_argument("PerturbConfig: scale override must be positive");
  }
};

// The values perturb() drew for the global similarity ambiguity. Evaluation
// code recovers these from trajectory alignment; tests read them directly.
struct PerturbDraw {
  double scale = 1.0;   // true metric scale of the produced track
  Mat3d rotation = Mat3d::Identity();
};

// Camera track as the estimator consumes it: timestamped poses in the track's
// own similarity frame plus accelerations differentiated out of a spline fit.
// `poses` keeps the raw input; `spline` is the smoothed representation the
// residuals read poses from, so per-sample noise does not feed straight into
// the deflection input. `accel` stacks linear acceleration (track world
// frame) over angular acceleration rotated into the same frame; `accel_idx`
// maps each entry back to the pose sample it was evaluated at, a subset of
// the poses because the fitted spline's valid interval does not reach the
// track ends.
struct VoTrack {
  std::vector<double> t;
  std::vector<Pose> poses;
  std::optional<SplineTrajectory> spline;
  double fit_rms = 0.0;
  double refit_dt = 0.0;  // spacing the differentiation spline ended up on; 0 = exact derivatives
  std::vector<std::size_t> accel_idx;
  std::vector<Vec6d> accel;
};

inline std::vector<PoseSample> to_pose_samples(const std::vector<KinematicSample>& samples) {
  std::vector<PoseSample> out;
  out.reserve(samples.size());
  for (const KinematicSample& s : samples) out.push_back({s.t, s.pose});
  return out;
}

inline VoTrack make_vo_track(std::vector<PoseSample> samples, double knot_dt = 0.1) {
  if (samples.size() < 8)
    throw std::invalid_argument("make_vo_track: need at least 8 pose samples");
  std::sort(samples.begin(), samples.end(),
            [](const PoseSample& a, const PoseSample& b) { return a.t < b.t; });

  SplineFitResult fit = fit_spline(samples, 4, knot_dt);
  double used_dt = knot_dt;

  // Differentiating a tight fit of noisy poses amplifies the noise into the
  // accelerations, so when the per-sample misfit says the track is noisy,
  // refit at a coarser spacing and differentiate that instead. The misfit is
  // judged by a median, which a small outlier fraction cannot move.
  Vec3d lo_p = samples.front().pose.p, hi_p = lo_p;
  for (const PoseSample& s : samples) {
    lo_p = lo_p.cwiseMin(s.pose.p);
    hi_p = hi_p.cwiseMax(s.pose.p);
  }
  const double diag = (hi_p - lo_p).norm();
  if (diag > 1e-12) {
    std::vector<double> errs;
    errs.reserve(samples.size());
    const auto [dlo, dhi] = fit.spline.domain();
    for (const PoseSample& s : samples) {
      if (!(s.t >= dlo && s.t < dhi)) continue;
      errs.push_back((fit.spline.evaluate(s.t).p - s.pose.p).norm());
    }
    if (errs.size() >= 8) {
      std::nth_element(errs.begin(), errs.begin() + long(errs.size() / 2), errs.end());
      const double rel = errs[errs.size() / 2] / diag;
      const double coarse_dt = rel <= 2e-3 ? knot_dt : (rel <= 0.06 ? 0.35 : 0.5);
      if (coarse_dt > knot_dt) {
        fit = fit_spline(samples, 4, coarse_dt);
        used_dt = coarse_dt;
      }
    }
  }

  VoTrack out;
  out.t.reserve(samples.size());
  out.poses.reserve(samples.size());
  for (const PoseSample& s : samples) {
    out.t.push_back(s.t);
    out.poses.push_back(s.pose);
  }
  const auto [lo, hi] = fit.spline.domain();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double t = samples[i].t;
    if (!(t >= lo && t < hi)) continue;
    const KinematicSample k = fit.spline.derivatives(t);
    Vec6d a;
    a.head<3>() = k.a_world;
    a.tail<3>() = k.pose.R * k.alpha_body;
    out.accel_idx.push_back(i);
    out.accel.push_back(a);
  }
  out.spline = std::move(fit.spline);
  out.fit_rms = fit.rms;
  out.refit_dt = used_dt;
  return out;
}

// Bypasses the spline fit and takes accelerations straight from a simulated
// sequence. Only for constructions that need the track derivatives exact.
inline VoTrack vo_track_exact(const SimulatedSequence& seq) {
  VoTrack out;
  out.t.reserve(seq.camera.size());
  out.poses.reserve(seq.camera.size());
  for (std::size_t i = 0; i < seq.camera.size(); ++i) {
    const KinematicSample& c = seq.camera[i];
    out.t.push_back(c.t);
    out.poses.push_back(c.pose);
    Vec6d a;
    a.head<3>() = c.a_world;
    a.tail<3>() = c.pose.R * c.alpha_body;
    out.accel_idx.push_back(i);
    out.accel.push_back(a);
  }
  return out;
}

inline VoTrack perturb(std::vector<PoseSample> track, const PerturbConfig& cfg,
                       PerturbDraw* draw = nullptr) {
  cfg.validate();
  if (track.size() < 8) throw std::invalid_argument("perturb: need at least 8 pose samples");
  std::sort(track.begin(), track.end(),
            [](const PoseSample& a, const PoseSample& b) { return a.t < b.t; });

  Vec3d lo = track.front().pose.p, hi = lo;
  for (const PoseSample& s : track) {
    lo = lo.cwiseMin(s.pose.p);
    hi = hi.cwiseMax(s.pose.p);
  }
  const double diag = (hi - lo).norm();

  Rng noise = Rng(cfg.seed).split(0x6e6f6973);
  Rng outl = Rng(cfg.seed).split(0x6f75746c);
  Rng glob = Rng(cfg.seed).split(0x676c6f62);

  const std::size_t n = track.size();
  const auto n_out = std::size_t(std::llround(cfg.outlier_ratio * double(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  outl.shuffle(order);
  std::vector<char> is_outlier(n, 0);
  for (std::size_t i = 0; i < n_out; ++i) is_outlier[order[i]] = 1;

  for (std::size_t i = 0; i < n; ++i) {
    Vec6d xi;
    xi.head<3>() = cfg.noise * noise.normal3();
    xi.tail<3>() = (cfg.noise * diag) * noise.normal3();
    if (is_outlier[i]) {
      xi.head<3>() = cfg.outlier_mag * outl.unit3();
      xi.tail<3>() = cfg.outlier_mag * outl.unit3();
    }
    track[i].pose = compose(track[i].pose, se3_exp_vec<double>(xi));
  }

  const double lam = cfg.scale_override
                         ? *cfg.scale_override
                         : std::exp(glob.uniform(std::log(0.05), std::log(0.6)));
  Mat3d q;
  if (cfg.rotation_override) {
    q = *cfg.rotation_override;
  } else {
    // Normalized 4-normal quaternion draw, uniform over rotations.
    Eigen::Quaterniond quat(glob.normal(), glob.normal(), glob.normal(), glob.normal());
    q = quat.normalized().toRotationMatrix();
  }

  for (PoseSample& s : track)
    s.pose = Pose(q * s.pose.R, (q * s.pose.p) / lam);

  if (draw) {
    draw->scale = lam;
    draw->rotation = q.transpose();  // maps track world back to metric world
  }
  return make_vo_track(std::move(track), cfg.spline_dt);
}

// Current estimate. `r_vo` takes track-world vectors into the gravity-aligned
// frame; `lambda` takes track units into meters; the base spline is expressed
// directly in the gravity-aligned metric frame.
struct EstimatorState {
  double lambda = 1.0;
  Mat3d r_vo = Mat3d::Identity();
  SplineTrajectory base;
};

inline Pose camera_pose_opt(const EstimatorState& st, const Pose& vo_pose) {
  return Pose(st.r_vo * vo_pose.R, st.lambda * (st.r_vo * vo_pose.p));
}

struct SolverConfig {
  int max_iters = 200;
  double tol_cost = 1e-10;    // relative drop of the accepted cost
  double tol_grad = 1e-8;     // sup norm of the gradient
  double huber = 1.345;       // multiple of the median absolute residual; 0 disables
  double knot_dt = 0.5;       // base spline knot spacing laid out at initialization
  double residual_dt = 0.05;  // spacing at which track samples enter the cost
  double mu0 = 1e-6;          // initial LM damping, relative to block curvature
  double mu_max = 1e8;        // damping beyond this means the solve stalled

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be at least 1");
    if (!(tol_cost > 0.0) || !(tol_grad > 0.0))
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (!(huber >= 0.0)) throw std::invalid_argument("SolverConfig: huber must be nonnegative");
    if (!(knot_dt > 0.0) || !(residual_dt > 0.0))
      throw std::invalid_argument("SolverConfig: time steps must be positive");
    if (!(mu0 > 0.0) || !(mu_max > mu0))
      throw std::invalid_argument("SolverConfig: damping range is invalid");
  }
};

struct Solution {
  EstimatorState state;
  bool converged = false;
  int iterations = 0;     // accepted steps
  double final_cost = 0.0;
  double huber_delta = 0.0;  // 0 means plain least squares
  int skipped = 0;           // track samples outside the base spline's interval
  std::vector<double> cost_history;  // accepted costs, first entry is the initial cost
};

namespace detail {

// Parameter layout used by the solver and its Jacobian: one lane for
// log(lambda), three for the rotation increment, six per active control pose.
// 28 lanes cover splines up to order 4.
constexpr int kEstJets = 28;
using EstJet = Jet<kEstJets>;

// Runs the model at the value point and routes its Jacobian onto the input's
// derivative lanes, so a plain double model slots into Jet-valued residuals.
inline Vec6d lift_model(const AccelModel& model, const Vec6d& input) {
  return model.predict(input);
}

template <int N>
Vec6<Jet<N>> lift_model(const AccelModel& model, const Vec6<Jet<N>>& input) {
  Vec6d value;
  for (int r = 0; r < 6; ++r) value[r] = input[r].a;
  const Vec6d pred = model.predict(value);
  const Mat6d jac = model.input_jacobian(value);
  Vec6<Jet<N>> out;
  for (int r = 0; r < 6; ++r) {
    out[r].a = pred[r];
    out[r].v.setZero();
    for (int c = 0; c < 6; ++c) out[r].v += jac(r, c) * input[c].v;
  }
  return out;
}

// One residual: model prediction rotated to the world, gravity added, minus
// the scaled track acceleration. The angular rows carry no lambda because
// rotations are scale-free.
template <class S>
Vec6<S> residual_eval(const S& lambda, const Mat3<S>& r_vo, const PoseT<S>& base_pose,
                      const Pose& vo_pose, const Vec6d& vo_accel, const AccelModel& model,
                      const Vec3d& g) {
  const Mat3<S> r_cam = r_vo * vo_pose.R;
  const Vec3<S> p_cam = lambda * (r_vo * vo_pose.p);
  const PoseT<S> cam{r_cam, p_cam};

  const Vec6<S> input = se3_log_vec(compose(inverse(base_pose), cam));
  const Vec6<S> pred = lift_model(model, input);

  Vec6<S> r;
  r.template head<3>() = r_cam * pred.template head<3>() + g.template cast<S>() -
                         lambda * (r_vo * vo_accel.head<3>());
  r.template tail<3>() = r_cam * pred.template tail<3>() - r_vo * vo_accel.tail<3>();
  return r;
}

// Pose the residual at acceleration entry j reads: the smoothed spline when
// the track has one, the raw sample otherwise (exact tracks).
inline Pose vo_pose_at(const VoTrack& vo, std::size_t j) {
  const std::size_t i = vo.accel_idx[j];
  if (vo.spline) {
    const auto [lo, hi] = vo.spline->domain();
    if (vo.t[i] >= lo && vo.t[i] < hi) return vo.spline->evaluate(vo.t[i]);
  }
  return vo.poses[i];
}

// Which track samples enter the cost: thinned to roughly residual_dt spacing,
// and samples outside the base spline's valid interval are counted off.
struct ResidualPlan {
  std::vector<std::size_t> idx;  // indices into VoTrack::accel
  int skipped = 0;
};

inline ResidualPlan plan_residuals(const VoTrack& vo, const SplineTrajectory& base,
                                   double residual_dt) {
  ResidualPlan plan;
  const auto [lo, hi] = base.domain();
  double next = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < vo.accel.size(); ++j) {
    const double t = vo.t[vo.accel_idx[j]];
    if (t < next) continue;
    next = t + residual_dt * (1.0 - 1e-9);
    if (!(t >= lo && t < hi)) {
      ++plan.skipped;
      continue;
    }
    plan.idx.push_back(j);
  }
  return plan;
}

// Stacked residual vector and, when requested, its Jacobian with respect to
// [log lambda | r_vo increment | per-knot se3 increments].
inline void assemble(const EstimatorState& st, const VoTrack& vo, const ResidualPlan& plan,
                     const AccelModel& model, const Vec3d& g, Eigen::VectorXd* r_out,
                     Eigen::MatrixXd* jac_out) {
  const SplineTrajectory& base = st.base;
  const int k = base.order();
  const int num_knots = int(base.knots().size());
  const int num_params = 4 + 6 * num_knots;
  const auto rows = Eigen::Index(6 * plan.idx.size());

  r_out->resize(rows);
  if (jac_out) jac_out->setZero(rows, num_params);

  const double loglam = std::log(st.lambda);
  for (std::size_t m = 0; m < plan.idx.size(); ++m) {
    const std::size_t j = plan.idx[m];
    const double t = vo.t[vo.accel_idx[j]];
    const Pose pose = vo_pose_at(vo, j);
    const Vec6d& acc = vo.accel[j];
    const auto row0 = Eigen::Index(6 * m);

    if (!jac_out) {
      const Vec6d r = residual_eval<double>(st.lambda, st.r_vo, base.evaluate(t), pose, acc,
                                            model, g);
      r_out->segment<6>(row0) = r;
      continue;
    }

    const auto [seg, u] = base.locate(t);

    EstJet loglam_j(loglam, 0);
    const EstJet lambda_j = exp(loglam_j);

    Vec3<EstJet> dr;
    for (int q = 0; q < 3; ++q) dr[q] = EstJet(0.0, 1 + q);
    const Mat3<EstJet> r_vo_j = st.r_vo.cast<EstJet>() * rot_exp<EstJet>(dr);

    std::array<PoseT<EstJet>, 8> ctrl;
    for (int a = 0; a < k; ++a) {
      Vec6<EstJet> eps;
      for (int q = 0; q < 6; ++q) eps[q] = EstJet(0.0, 4 + 6 * a + q);
      ctrl[std::size_t(a)] =
          compose(pose_cast<EstJet>(base.knots()[std::size_t(seg + a)]), se3_exp_vec<EstJet>(eps));
    }
    const PoseT<EstJet> base_pose =
        eval_segment(ctrl.data(), k, base.blending().cumulative, EstJet(u));

    const Vec6<EstJet> r = residual_eval<EstJet>(lambda_j, r_vo_j, base_pose, pose, acc, model, g);
    for (int row = 0; row < 6; ++row) {
      (*r_out)[row0 + row] = r[row].a;
      for (int q = 0; q < 4; ++q) (*jac_out)(row0 + row, q) = r[row].v[q];
      for (int a = 0; a < k; ++a)
        for (int q = 0; q < 6; ++q)
          (*jac_out)(row0 + row, 4 + 6 * (seg + a) + q) = r[row].v[4 + 6 * a + q];
    }
  }
}

inline EstimatorState apply_step(const EstimatorState& st, const Eigen::VectorXd& d) {
  EstimatorState out = st;
  out.lambda = st.lambda * std::exp(d[0]);
  out.r_vo = st.r_vo * rot_exp<double>(Vec3d(d.segment<3>(1)));
  for (std::size_t i = 0; i < st.base.knots().size(); ++i)
    out.base.set_knot(int(i), compose(st.base.knots()[i],
                                      se3_exp_vec<double>(Vec6d(d.segment<6>(4 + 6 * Eigen::Index(i))))));
  return out;
}

// The robust loss works on whole six-row sample blocks, not single entries.
// Axis-aligned motions zero out entire residual rows identically, and an
// entrywise median would latch onto those structural zeros and collapse the
// Huber width to roundoff scale.
inline double median_block_norm(const Eigen::VectorXd& r) {
  std::vector<double> a;
  a.reserve(std::size_t(r.size() / 6));
  for (Eigen::Index i = 0; i + 5 < r.size(); i += 6) a.push_back(r.segment<6>(i).norm());
  if (a.empty()) return 0.0;
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + long(mid), a.end());
  double med = a[mid];
  if (a.size() % 2 == 0) {
    std::nth_element(a.begin(), a.begin() + long(mid) - 1, a.begin() + long(mid));
    med = 0.5 * (med + a[mid - 1]);
  }
  return med;
}

inline double robust_cost(const Eigen::VectorXd& r, double delta) {
  if (!(delta > 0.0)) return 0.5 * r.squaredNorm();
  double cost = 0.0;
  for (Eigen::Index i = 0; i + 5 < r.size(); i += 6) {
    const double n = r.segment<6>(i).norm();
    cost += n <= delta ? 0.5 * n * n : delta * (n - 0.5 * delta);
  }
  return cost;
}

inline Eigen::VectorXd robust_weights(const Eigen::VectorXd& r, double delta) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(r.size());
  if (!(delta > 0.0)) return w;
  for (Eigen::Index i = 0; i + 5 < r.size(); i += 6) {
    const double n = r.segment<6>(i).norm();
    if (n > delta) w.segment<6>(i).setConstant(delta / n);
  }
  return w;
}

// Rest-hang relative pose implied by the model: the input at which the
// prediction balances gravity with the camera at rest. Damped Newton with a
// step cap; the gravity term's orientation derivative ignores the dexp
// correction, which is fine for the small angles a hanging camera settles at.
inline Vec6d equilibrium_input(const AccelModel& model, const Vec3d& g) {
  Vec6d xi = Vec6d::Zero();
  Vec6d best = xi;
  double best_norm = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    const Mat3d r_rel = se3_exp_vec<double>(xi).R;
    Vec6d f = model.predict(xi);
    f.head<3>() += r_rel.transpose() * g;
    const double fn = f.norm();
    if (fn < best_norm) {
      best_norm = fn;
      best = xi;
    }
    if (fn < 1e-10) break;

    Mat6d jac = model.input_jacobian(xi);
    jac.block<3, 3>(0, 0) += skew<double>(r_rel.transpose() * g);
    Eigen::FullPivLU<Mat6d> lu(jac);
    if (!lu.isInvertible()) break;
    Vec6d step = lu.solve(-f);
    const double sn = step.norm();
    if (sn > 0.1) step *= 0.1 / sn;
    xi += step;
  }
  return best;
}

// Solves predict(xi) = y for the input by damped Newton from the given guess.
// Empty when no input reproduces the target, which screens targets the model
// cannot explain out of the initialization.
inline std::optional<Vec6d> invert_model(const AccelModel& model, const Vec6d& y,
                                         const Vec6d& guess) {
  const double tol = 1e-8 * std::max(1.0, y.norm());
  Vec6d xi = guess;
  Vec6d best = xi;
  double best_norm = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 30; ++iter) {
    const Vec6d f = model.predict(xi) - y;
    const double fn = f.norm();
    if (fn < best_norm) {
      best_norm = fn;
      best = xi;
    }
    if (fn < tol) break;

    Mat6d jac = model.input_jacobian(xi);
    jac.diagonal().array() += 1e-10;
    Eigen::FullPivLU<Mat6d> lu(jac);
    if (!lu.isInvertible()) break;
    Vec6d step = lu.solve(-f);
    const double sn = step.norm();
    if (sn > 0.5) step *= 0.5 / sn;
    xi += step;
  }
  if (!(best_norm < 1e-5 * std::max(1.0, y.norm()))) return std::nullopt;
  return best;
}

}  // namespace detail

// Residual of one track sample under the given state, for inspection.
inline Vec6d residual_at(const EstimatorState& st, const VoTrack& vo, std::size_t j,
                         const AccelModel& model, const GravityVector& gravity) {
  if (j >= vo.accel.size()) throw std::out_of_range("residual_at: sample index out of range");
  const double t = vo.t[vo.accel_idx[j]];
  return detail::residual_eval<double>(st.lambda, st.r_vo, st.base.evaluate(t),
                                       detail::vo_pose_at(vo, j), vo.accel[j], model,
                                       gravity.vec());
}

// Initial state from the track alone. The gravity axis comes from rotating
// the model's rest-hang gravity reading through the track orientations. The
// scale comes from a grid search anchored at gravity-magnitude matching: the
// median track acceleration against one g fixes the decade, and candidates
// around it are scored by inverting the model on every sample. A candidate
// scale says what each acceleration was in meters, the inverted model says
// what deflection produces that reading, and peeling the deflection off the
// mapped camera pose leaves an implied support motion. At the right scale
// that motion is smooth; at the wrong one it keeps an unexplained deformation
// wiggle, so the score is the misfit of a smooth spline through it. Scoring
// the residual cost directly would not work: with the deflection explaining
// whatever it can, the data term is proportional to lambda and every such
// grid drifts to its low edge.
inline EstimatorState initialize(const VoTrack& vo, const AccelModel& model,
                                 const GravityVector& gravity, const SolverConfig& cfg = {}) {
  cfg.validate();
  if (vo.accel.size() < 10) throw std::runtime_error("initialize: track too short to estimate from");

  Vec3d mean_acc = Vec3d::Zero();
  for (const Vec6d& a : vo.accel) mean_acc += a.head<3>();
  mean_acc /= double(vo.accel.size());
  double var = 0.0;
  for (const Vec6d& a : vo.accel) var += (a.head<3>() - mean_acc).squaredNorm();
  var /= double(vo.accel.size());
  if (var < 1e-3)
    throw std::runtime_error(
        "initialize: camera track is at rest, scale and gravity are unobservable");

  const Vec3d g = gravity.vec();
  const Vec6d xi_eq = detail::equilibrium_input(model, g);
  const Vec3d g_cam = -model.predict(xi_eq).head<3>();
  if (g_cam.norm() < 0.5 * g.norm())
    throw std::runtime_error("initialize: model's rest prediction carries no gravity reading");

  Vec3d w = Vec3d::Zero();
  for (std::size_t j = 0; j < vo.accel.size(); ++j)
    w += vo.poses[vo.accel_idx[j]].R * g_cam;
  w /= double(vo.accel.size());
  if (w.norm() < 1e-6)
    throw std::runtime_error("initialize: track orientations average out the gravity reading");
  const Mat3d r0 = rotation_between(w, g);

  std::vector<double> mags;
  mags.reserve(vo.accel.size());
  for (const Vec6d& a : vo.accel) mags.push_back(a.head<3>().norm());
  std::nth_element(mags.begin(), mags.begin() + long(mags.size() / 2), mags.end());
  const double med = mags[mags.size() / 2];
  if (med < 1e-6)
    throw std::runtime_error("initialize: track carries no linear acceleration");
  const double seed = std::clamp(g.norm() / med, std::exp(-4.0), std::exp(2.0));

  std::vector<std::size_t> sel;
  {
    double next = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vo.accel.size(); ++j) {
      const double t = vo.t[vo.accel_idx[j]];
      if (t < next) continue;
      next = t + cfg.residual_dt * (1.0 - 1e-9);
      sel.push_back(j);
    }
  }

  // Deflections far outside the rest-hang scale mean the inversion chased an
  // outlier; those samples are dropped rather than bent into the base.
  const double xi_cap = 10.0 * xi_eq.norm() + 1.0;
  std::vector<PoseSample> based;
  const auto implied_base = [&](double lambda) {
    based.clear();
    based.reserve(sel.size());
    Vec6d warm = xi_eq;
    for (std::size_t j : sel) {
      const Pose vp = detail::vo_pose_at(vo, j);
      const Mat3d r_c = r0 * vp.R;
      Vec6d y;
      y.head<3>() = r_c.transpose() * (lambda * (r0 * vo.accel[j].head<3>()) - g);
      y.tail<3>() = vp.R.transpose() * vo.accel[j].tail<3>();
      const std::optional<Vec6d> xi = detail::invert_model(model, y, warm);
      if (!xi || (*xi - xi_eq).norm() > xi_cap) continue;
      warm = *xi;
      const Pose cam{r_c, lambda * (r0 * vp.p)};
      based.push_back(
          {vo.t[vo.accel_idx[j]], compose(cam, inverse(se3_exp_vec<double>(*xi)))});
    }
  };

  // The misfit is judged back in track units. In metric units everything a
  // candidate scale touches shrinks with it, and a near-zero lambda would be
  // rewarded for collapsing the implied motion to a trivially smooth point.
  //
  // The scoring fit uses a finer spacing than the solver's base spline: it
  // must absorb the whole base band (so base content never masks the
  // comparison) while still rejecting the spring's resonance ring, which is
  // the part of the track whose shape actually pins the scale through the
  // cubic stiffening. A wrong scale maps the ring through the wrong part of
  // the stiffness curve and the implied base keeps an unabsorbable wiggle.
  //
  // That wiggle is episodic, strongest where the deflection peaks, so on
  // trusted derivatives the quadratic mean picks it up well before the
  // median does. Once the track needed a coarse differentiation refit the
  // tail of the error distribution belongs to noise instead, and the median
  // is the statistic that still tracks the misfit.
  const double score_dt = std::min(0.25, cfg.knot_dt);
  const bool noisy_track = vo.refit_dt > 0.15;
  const auto score = [&](double loglam) {
    const double lambda = std::exp(loglam);
    implied_base(lambda);
    if (based.size() < 10 || based.size() * 2 < sel.size())
      return std::numeric_limits<double>::infinity();
    std::vector<PoseSample> track_units = based;
    for (PoseSample& s : track_units) s.pose.p /= lambda;
    FitOptions fopt;
    fopt.max_iterations = 3;
    const SplineFitResult fit = fit_spline(track_units, 4, score_dt, fopt);
    std::vector<double> errs;
    errs.reserve(track_units.size());
    const auto [dlo, dhi] = fit.spline.domain();
    for (const PoseSample& s : track_units) {
      if (!(s.t >= dlo && s.t < dhi)) continue;
      errs.push_back(se3_log_vec<double>(compose(inverse(fit.spline.evaluate(s.t)), s.pose)).norm());
    }
    if (errs.size() < 10) return std::numeric_limits<double>::infinity();
    if (noisy_track) {
      std::nth_element(errs.begin(), errs.begin() + long(errs.size() / 2), errs.end());
      return errs[errs.size() / 2];
    }
    double sq = 0.0;
    for (double e : errs) sq += e * e;
    return std::sqrt(sq / double(errs.size()));
  };

  double best = std::clamp(std::log(seed), -4.0, 2.0);
  double lo = std::max(best - std::log(32.0), -4.0);
  double hi = std::min(best + std::log(2.0), 2.0);
  bool any = false;
  for (int stage = 0; stage < 2; ++stage) {
    const int pts = stage == 0 ? 25 : 15;
    double best_cost = std::numeric_limits<double>::infinity();
    double worst_cost = 0.0;
    double arg = best;
    for (int i = 0; i < pts; ++i) {
      const double loglam = lo + (hi - lo) * double(i) / double(pts - 1);
      const double c = score(loglam);
      if (std::isfinite(c) && c > worst_cost) worst_cost = c;
      if (c < best_cost) {
        best_cost = c;
        arg = loglam;
      }
    }
    if (!std::isfinite(best_cost)) break;
    any = true;
    // A flat profile means the track carries no usable shape signal for the
    // scale (heavy smoothing or noise drowned the ring). The argmin would be
    // an arbitrary point on a noise floor, so fall back to the magnitude
    // seed, which at least anchors the decade.
    if (stage == 0 && worst_cost < 1.3 * best_cost) {
      best = std::clamp(std::log(seed), -4.0, 2.0);
      break;
    }
    best = arg;
    const double spacing = (hi - lo) / double(pts - 1);
    lo = best - spacing;
    hi = best + spacing;
  }

  const double lambda = std::exp(best);
  implied_base(lambda);
  if (!any || based.size() < 10) {
    // Nothing invertible along the whole grid; fall back to hanging the rest
    // pose off the mapped camera path.
    const Pose eq_inv = inverse(se3_exp_vec<double>(xi_eq));
    based.clear();
    for (std::size_t j : sel) {
      const Pose vp = detail::vo_pose_at(vo, j);
      const Pose cam{r0 * vp.R, lambda * (r0 * vp.p)};
      based.push_back({vo.t[vo.accel_idx[j]], compose(cam, eq_inv)});
    }
  }
  FitOptions fopt;
  fopt.max_iterations = 10;
  SplineFitResult fit = fit_spline(based, 4, cfg.knot_dt, fopt);
  return EstimatorState{lambda, r0, std::move(fit.spline)};
}

// Levenberg-Marquardt over (log lambda, R_vo, base knots). The damping is
// scaled per parameter block by the block's mean curvature, because the
// curvatures are wildly unbalanced: the knot blocks see stiff geometric
// constraints while log lambda only feels the cubic part of the spring, and
// a single scalar damping sized for the knots freezes the scale in place.
// Block traces rather than per-entry diagonals keep the iterates equivariant
// under rotations of the track frame (a rotation conjugates each block and
// preserves its trace but not its diagonal), so a yawed problem converges to
// the correspondingly yawed solution. The Huber width is frozen at the
// initial residuals, which keeps the cost function fixed and accepted costs
// monotone.
inline Solution solve(const VoTrack& vo, const AccelModel& model, const GravityVector& gravity,
                      const EstimatorState& init, const SolverConfig& cfg = {}) {
  cfg.validate();
  if (!(init.lambda > 0.0)) throw std::invalid_argument("solve: initial lambda must be positive");
  const int k = init.base.order();
  if (k > 4) throw std::invalid_argument("solve: base spline order above 4 is unsupported");

  const Vec3d g = gravity.vec();
  const detail::ResidualPlan plan = detail::plan_residuals(vo, init.base, cfg.residual_dt);
  if (plan.idx.size() < 10)
    throw std::runtime_error("solve: too few track samples inside the base spline's interval");

  Solution sol;
  sol.skipped = plan.skipped;
  EstimatorState state = init;

  Eigen::VectorXd r, r_trial;
  Eigen::MatrixXd jac;
  detail::assemble(state, vo, plan, model, g, &r, nullptr);
  double delta = cfg.huber > 0.0 ? cfg.huber * detail::median_block_norm(r) : 0.0;
  if (delta < 1e-12) delta = 0.0;
  sol.huber_delta = delta;

  double cost = detail::robust_cost(r, delta);
  sol.cost_history.push_back(cost);

  double mu = -1.0, nu = 2.0;
  bool converged = false;
  for (int it = 0; it < cfg.max_iters && !converged; ++it) {
    detail::assemble(state, vo, plan, model, g, &r, &jac);
    const Eigen::VectorXd w = detail::robust_weights(r, delta);
    const Eigen::VectorXd grad = jac.transpose() * (w.array() * r.array()).matrix();
    if (grad.lpNorm<Eigen::Infinity>() < cfg.tol_grad) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd h = jac.transpose() * w.asDiagonal() * jac;
    if (mu < 0.0) mu = cfg.mu0;

    Eigen::VectorXd damp_scale(h.cols());
    {
      const double floor = 1e-12 * std::max(h.trace() / double(h.cols()), 1e-300);
      damp_scale(0) = h(0, 0) + floor;
      damp_scale.segment(1, 3).setConstant(h.block(1, 1, 3, 3).trace() / 3.0 + floor);
      for (int b = 4; b < h.cols(); b += 6)
        damp_scale.segment(b, 6).setConstant(h.block(b, b, 6, 6).trace() / 6.0 + floor);
    }

    bool stepped = false;
    while (!stepped) {
      Eigen::MatrixXd a = h;
      a.diagonal() += mu * damp_scale;
      const Eigen::VectorXd d = a.ldlt().solve(-grad);
      const EstimatorState trial = detail::apply_step(state, d);
      detail::assemble(trial, vo, plan, model, g, &r_trial, nullptr);
      const double cost_trial = detail::robust_cost(r_trial, delta);
      if (cost_trial < cost) {
        const double pred =
            0.5 * (mu * d.dot(damp_scale.asDiagonal() * d) - grad.dot(d));
        const double rho = pred > 0.0 ? (cost - cost_trial) / pred : 1.0;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3.0));
        nu = 2.0;
        const double drop = cost - cost_trial;
        state = trial;
        cost = cost_trial;
        sol.cost_history.push_back(cost);
        if (drop < cfg.tol_cost * std::max(cost, 1e-30)) converged = true;
        stepped = true;
      } else {
        mu *= nu;
        nu *= 2.0;
        if (mu > cfg.mu_max) break;
      }
    }
    if (!stepped) break;  // damping exhausted, no acceptable step
  }

  sol.state = state;
  sol.converged = converged;
  sol.iterations = int(sol.cost_history.size()) - 1;
  sol.final_cost = cost;
  return sol;
}

}  // namespace nonrigid
