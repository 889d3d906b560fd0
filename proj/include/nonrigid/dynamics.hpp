#pragma once

// Ground-truth physics for a camera hanging off a moving base on a nonlinear
// spring. The base trajectory is a pose spline; the camera is a rigid body
// pulled toward a rest offset by a Duffing spring (linear + cubic stiffness,
// viscous damping) plus a linear torsion spring for orientation. Forward
// simulation integrates Newton/Euler with fixed-step RK4 and records the
// instantaneous accelerations from the ODE right-hand side.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nonrigid/geometry.hpp"
#include "nonrigid/rng.hpp"
#include "nonrigid/spline.hpp"

namespace nonrigid {

struct SpringParams {
  double mass = 0.25;            // kg
  double kappa1 = 40.0;          // N/m
  double kappa3 = 2000.0;        // N/m^3, elementwise cubic term
  double damping = 0.15;         // N s/m
  double kappa_theta = 0.5;      // N m/rad
  double damping_theta = 0.01;   // N m s/rad
  Vec3d inertia = Vec3d::Constant(5e-4);  // kg m^2, body-frame diagonal
  Pose rest = Pose(Mat3d::Identity(), Vec3d(0.0, -0.15, 0.0));  // camera in base at rest

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("SpringParams: mass must be positive");
    if (!(kappa1 > 0.0)) throw std::invalid_argument("SpringParams: kappa1 must be positive");
    if (!(damping >= 0.0) || !(damping_theta >= 0.0))
      throw std::invalid_argument("SpringParams: damping must be nonnegative");
    if (!(inertia.minCoeff() > 0.0))
      throw std::invalid_argument("SpringParams: inertia entries must be positive");
  }
};

// World-frame gravity. The magnitude is pinned to the standard value so that
// scale recovery has an absolute reference; only the direction is free.
class GravityVector {
 public:
  static constexpr double kMagnitude = 9.81;

  GravityVector() : g_(0.0, -kMagnitude, 0.0) {}
  explicit GravityVector(const Vec3d& g) : g_(g) {
    if (std::abs(g.norm() - kMagnitude) > 1e-9)
      throw std::invalid_argument("GravityVector: magnitude must be 9.81");
  }

  const Vec3d& vec() const { return g_; }

 private:
  Vec3d g_;
};

// Force in the base frame and torque in the camera body frame. Split frames
// mirror how the two halves are consumed: force enters Newton's law after
// rotation by the base, torque enters Euler's equation directly.
struct Wrench {
  Vec3d force = Vec3d::Zero();
  Vec3d torque = Vec3d::Zero();
};

// Relative rate of the camera with respect to the base: d(rel.p)/dt in the
// base frame and the angular velocity difference in the camera body frame.
struct RelativeRate {
  Vec3d linear = Vec3d::Zero();
  Vec3d angular = Vec3d::Zero();
};

// Spring wrench at a relative state. The deflection is measured toward the
// rest pose (dx = rest.p - rel.p), so a camera pushed past rest feels a pull
// back, and the same formula doubles as the restoring force in Newton's law.
inline Wrench spring_wrench(const SpringParams& params, const Pose& rel, const RelativeRate& rate) {
  params.validate();
  const Vec3d dx = params.rest.p - rel.p;
  const Vec3d dtheta = rot_log<double>(Mat3d(rel.R.transpose() * params.rest.R));
  Wrench w;
  w.force = params.kappa1 * dx + params.kappa3 * dx.array().cube().matrix() - params.damping * rate.linear;
  w.torque = params.kappa_theta * dtheta - params.damping_theta * rate.angular;
  return w;
}

// World-frame camera state: position, velocity, orientation, body rates.
struct CamState {
  Vec3d p = Vec3d::Zero();
  Vec3d v = Vec3d::Zero();
  Mat3d R = Mat3d::Identity();
  Vec3d w = Vec3d::Zero();
};

struct SimulatedSequence {
  double rate = 0.0;  // Hz
  std::vector<KinematicSample> base;
  std::vector<KinematicSample> camera;
};

namespace detail {

// Unique root of kappa1 * d + kappa3 * d^3 = w (monotone for positive gains).
inline double solve_cubic_deflection(double kappa1, double kappa3, double w) {
  if (kappa3 == 0.0) return w / kappa1;
  double d = w / kappa1;
  for (int i = 0; i < 60; ++i) {
    const double f = kappa1 * d + kappa3 * d * d * d - w;
    const double fp = kappa1 + 3.0 * kappa3 * d * d;
    const double step = f / fp;
    d -= step;
    if (std::abs(step) < 1e-16 * std::max(1.0, std::abs(d))) break;
  }
  return d;
}

struct RelState {
  Pose rel;
  RelativeRate rate;
};

inline RelState relative_state(const KinematicSample& base, const Vec3d& p, const Vec3d& v,
                               const Mat3d& R, const Vec3d& w) {
  RelState out;
  const Mat3d& Rb = base.pose.R;
  out.rel.R = Rb.transpose() * R;
  out.rel.p = Rb.transpose() * (p - base.pose.p);
  out.rate.linear = Rb.transpose() * (v - base.v_world) - skew<double>(base.w_body) * out.rel.p;
  out.rate.angular = w - out.rel.R.transpose() * base.w_body;
  return out;
}

}  // namespace detail

// Camera state that makes a static base an exact fixed point: the spring
// deflects along each axis until it carries the gravity (and base
// acceleration) load, the torsion sits at rest, and velocities match rigid
// attachment. For a moving base this is only quasi-static, which is fine as
// an initial condition.
inline CamState equilibrium_state(const SplineTrajectory& base, double t, const SpringParams& params,
                                  const GravityVector& gravity) {
  params.validate();
  const KinematicSample b = base.derivatives(t);
  const Vec3d load = params.mass * (b.pose.R.transpose() * (b.a_world - gravity.vec()));
  Vec3d dx;
  for (int i = 0; i < 3; ++i)
    dx[i] = detail::solve_cubic_deflection(params.kappa1, params.kappa3, load[i]);

  const Vec3d rel_p = params.rest.p - dx;
  CamState s;
  s.R = b.pose.R * params.rest.R;
  s.p = b.pose.p + b.pose.R * rel_p;
  s.v = b.v_world + b.pose.R * (skew<double>(b.w_body) * rel_p);
  s.w = params.rest.R.transpose() * b.w_body;
  return s;
}

// Forward simulation over [0, duration] at a fixed rate. Records one sample
// per step for both bodies; camera a_world and alpha_body are the ODE
// right-hand side at the sample instant. Throws if the spring deflection
// leaves the physical regime (10x the rest length).
inline SimulatedSequence simulate(const SplineTrajectory& base, const SpringParams& params,
                                  const GravityVector& gravity, double rate, double duration,
                                  const std::optional<CamState>& initial = std::nullopt) {
  params.validate();
  if (!(rate >= 100.0)) throw std::invalid_argument("simulate: rate must be at least 100 Hz");
  if (!(duration > 0.0)) throw std::invalid_argument("simulate: duration must be positive");
  const auto [lo, hi] = base.domain();
  if (lo > 0.0 || hi <= duration)
    throw std::invalid_argument("simulate: base domain must cover [0, duration]");

  const Vec3d g = gravity.vec();
  const double rest_len = std::max(params.rest.p.norm(), 1e-2);

  // flat state: p(3), v(3), R(9 row-major), w(3)
  using State = Eigen::Matrix<double, 18, 1>;
  auto pack = [](const CamState& s) {
    State x;
    x.segment<3>(0) = s.p;
    x.segment<3>(3) = s.v;
    for (int r = 0; r < 3; ++r) x.segment<3>(6 + 3 * r) = s.R.row(r);
    x.segment<3>(15) = s.w;
    return x;
  };
  auto unpack = [](const State& x) {
    CamState s;
    s.p = x.segment<3>(0);
    s.v = x.segment<3>(3);
    for (int r = 0; r < 3; ++r) s.R.row(r) = x.segment<3>(6 + 3 * r);
    s.w = x.segment<3>(15);
    return s;
  };

  struct Rhs {
    State xdot;
    Vec3d a_world;
    Vec3d alpha_body;
    double deflection;
  };
  auto rhs = [&](const KinematicSample& b, const State& x) {
    CamState s = unpack(x);
    // mid-step RK4 stages carry O((wh)^2) orthonormality error; project back
    // before any geometry sees the rotation
    s.R = 1.5 * s.R - 0.5 * s.R * (s.R.transpose() * s.R);
    const auto rel = detail::relative_state(b, s.p, s.v, s.R, s.w);
    const Wrench w = spring_wrench(params, rel.rel, rel.rate);

    Rhs out;
    out.a_world = g + b.pose.R * w.force / params.mass;
    const Vec3d Iw = params.inertia.cwiseProduct(s.w);
    out.alpha_body = (w.torque - s.w.cross(Iw)).cwiseQuotient(params.inertia);
    out.deflection = (params.rest.p - rel.rel.p).norm();

    out.xdot.segment<3>(0) = s.v;
    out.xdot.segment<3>(3) = out.a_world;
    const Mat3d Rdot = s.R * skew<double>(s.w);
    for (int r = 0; r < 3; ++r) out.xdot.segment<3>(6 + 3 * r) = Rdot.row(r);
    out.xdot.segment<3>(15) = out.alpha_body;
    return out;
  };

  const double h = 1.0 / rate;
  const int steps = int(std::llround(duration * rate));

  CamState cam = initial ? *initial : equilibrium_state(base, 0.0, params, gravity);
  State x = pack(cam);

  SimulatedSequence seq;
  seq.rate = rate;
  seq.base.reserve(std::size_t(steps) + 1);
  seq.camera.reserve(std::size_t(steps) + 1);

  KinematicSample b0 = base.derivatives(0.0);
  for (int i = 0; i <= steps; ++i) {
    const double t = i * h;
    const Rhs k1 = rhs(b0, x);
    if (k1.deflection > 10.0 * rest_len)
      throw std::runtime_error("simulate: spring deflection diverged at t=" + std::to_string(t));

    seq.base.push_back(b0);
    KinematicSample c;
    c.t = t;
    const CamState s = unpack(x);
    c.pose = Pose(s.R, s.p);
    c.v_world = s.v;
    c.a_world = k1.a_world;
    c.w_body = s.w;
    c.alpha_body = k1.alpha_body;
    seq.camera.push_back(c);
    if (i == steps) break;

    const KinematicSample bm = base.derivatives(t + 0.5 * h);
    const KinematicSample b1 = base.derivatives((i + 1) * h);
    const Rhs k2 = rhs(bm, State(x + 0.5 * h * k1.xdot));
    const Rhs k3 = rhs(bm, State(x + 0.5 * h * k2.xdot));
    const Rhs k4 = rhs(b1, State(x + h * k3.xdot));
    x += (h / 6.0) * (k1.xdot + 2.0 * k2.xdot + 2.0 * k3.xdot + k4.xdot);

    // one Newton step of the polar projection keeps R orthonormal; the RK4
    // drift per step is far inside its contraction region
    Mat3d R;
    for (int r = 0; r < 3; ++r) R.row(r) = x.segment<3>(6 + 3 * r);
    R = 1.5 * R - 0.5 * R * (R.transpose() * R);
    for (int r = 0; r < 3; ++r) x.segment<3>(6 + 3 * r) = R.row(r);

    b0 = b1;
  }
  return seq;
}

enum class Pattern { A, B, C, D };

// Base-motion generator settings. Waveforms are a dominant slow sinusoid plus
// a small faster one; the fast component is what makes the spring deflect
// appreciably, so keep `secondary` nonzero for anything feeding estimation.
// Both bands stay well below the spring resonance (~2.4 Hz at the default
// parameters): estimation separates base from deformation by frequency, and a
// base overlapping the resonance band would be indistinguishable from
// deflection ringing.
struct PatternCfg {
  double amp_xy = 0.4;     // m, horizontal plane
  double amp_vert = 0.25;  // m, gravity axis
  double amp_yaw = 0.6;    // rad
  double freq_lo = 0.1;    // Hz, dominant component
  double freq_hi = 0.4;
  double freq2_lo = 0.5;   // Hz, fast component
  double freq2_hi = 0.75;
  double secondary = 0.15;  // fast component amplitude, fraction of the main one
  double knot_dt = 0.1;     // s, spacing of the generated spline
  bool any_duration = false;

  void validate() const {
    if (amp_xy < 0.0 || amp_vert < 0.0 || amp_yaw < 0.0)
      throw std::invalid_argument("PatternCfg: amplitudes must be nonnegative");
    if (!(freq_lo > 0.0) || freq_hi < freq_lo || !(freq2_lo > 0.0) || freq2_hi < freq2_lo)
      throw std::invalid_argument("PatternCfg: frequency bounds must be positive and ordered");
    if (!(knot_dt > 0.0)) throw std::invalid_argument("PatternCfg: knot spacing must be positive");
    if (secondary < 0.0) throw std::invalid_argument("PatternCfg: secondary fraction must be nonnegative");
  }
};

namespace detail {

// One scalar waveform with randomized frequencies and phases.
struct Wave {
  double f1 = 0.0, p1 = 0.0, f2 = 0.0, p2 = 0.0, frac = 0.0;

  static Wave draw(Rng& rng, const PatternCfg& cfg) {
    Wave w;
    w.f1 = rng.uniform(cfg.freq_lo, cfg.freq_hi);
    w.p1 = rng.uniform(0.0, 2.0 * M_PI);
    w.f2 = rng.uniform(cfg.freq2_lo, cfg.freq2_hi);
    w.p2 = rng.uniform(0.0, 2.0 * M_PI);
    w.frac = cfg.secondary;
    return w;
  }

  double operator()(double t) const {
    return std::sin(2.0 * M_PI * f1 * t + p1) + frac * std::sin(2.0 * M_PI * f2 * t + p2);
  }
};

}  // namespace detail

// Scripted base motions. A: planar sinusoids in the horizontal plane, fixed
// orientation. B: yaw oscillation about the origin's vertical axis, fixed
// position. C and D add a vertical sinusoid to A and B. The same seed yields
// the same horizontal/yaw waveforms whether or not the vertical one is used,
// because each channel draws from its own split stream.
inline SplineTrajectory gen_pattern(Pattern pattern, double duration, const PatternCfg& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  if (!(duration > 0.0)) throw std::invalid_argument("gen_pattern: duration must be positive");
  if (!cfg.any_duration && (duration < 25.0 || duration > 45.0))
    throw std::invalid_argument(
        "gen_pattern: duration outside [25, 45] s; set any_duration to override");

  Rng root(seed);
  Rng rng_xy = root.split(1);
  Rng rng_vert = root.split(2);
  Rng rng_yaw = root.split(3);

  const detail::Wave wx = detail::Wave::draw(rng_xy, cfg);
  const detail::Wave wz = detail::Wave::draw(rng_xy, cfg);
  const detail::Wave wv = detail::Wave::draw(rng_vert, cfg);
  const detail::Wave wy = detail::Wave::draw(rng_yaw, cfg);

  const bool translate = pattern == Pattern::A || pattern == Pattern::C;
  const bool vertical = pattern == Pattern::C || pattern == Pattern::D;
  const bool yaw = pattern == Pattern::B || pattern == Pattern::D;

  auto curve = [&](double t) {
    Pose T;
    if (translate) {
      T.p.x() = cfg.amp_xy * wx(t);
      T.p.z() = cfg.amp_xy * wz(t);
    }
    if (vertical) T.p.y() = cfg.amp_vert * wv(t);
    if (yaw) T.R = rot_exp<double>(Vec3d(0.0, cfg.amp_yaw * wy(t), 0.0));
    return T;
  };

  const int k = 4;
  const double t0 = -0.3;
  const int num_seg = int(std::ceil((duration + 0.6) / cfg.knot_dt)) + 1;
  const int num_knots = num_seg + k - 1;
  std::vector<Pose> knots;
  knots.reserve(std::size_t(num_knots));
  for (int m = 0; m < num_knots; ++m) {
    const double tau = t0 + (m - (k - 1) * 0.5) * cfg.knot_dt;
    knots.push_back(curve(tau));
  }
  return SplineTrajectory(k, cfg.knot_dt, t0, std::move(knots));
}

}  // namespace nonrigid
