#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "nonrigid/rng.hpp"
#include "nonrigid/spline.hpp"

using namespace nonrigid;

namespace {

// Independent evaluation of the blending coefficients: binomials from the
// Pascal recurrence, powers from std::pow with the 0^0 = 1 convention, each
// term accumulated in double. The library builds the same numbers from exact
// integer numerators, so agreement to roundoff is the expected outcome.
double binom_pascal(int n, int r) {
  if (r < 0 || r > n) return 0.0;
  std::vector<double> row(std::size_t(n) + 1, 0.0);
  row[0] = 1.0;
  for (int i = 1; i <= n; ++i)
    for (int j = i; j >= 1; --j) row[std::size_t(j)] += row[std::size_t(j) - 1];
  return row[std::size_t(r)];
}

double power00(double base, int e) {
  if (e == 0) return 1.0;
  return std::pow(base, double(e));
}

double blend_entry(int k, int s, int n) {
  double fact = 1.0;
  for (int i = 2; i <= k - 1; ++i) fact *= double(i);
  double acc = 0.0;
  for (int l = s; l <= k - 1; ++l) {
    const double sign = ((l - s) % 2 == 0) ? 1.0 : -1.0;
    acc += sign * binom_pascal(k, l - s) * power00(double(k - 1 - l), k - 1 - n);
  }
  return binom_pascal(k - 1, n) * acc / fact;
}

Pose random_pose(Rng& rng, double rot_scale, double trans_scale) {
  return Pose(rot_exp<double>(Vec3d(rot_scale * rng.normal3())), trans_scale * rng.normal3());
}

SplineTrajectory random_spline(Rng& rng, int k, double dt, int num_knots) {
  std::vector<Pose> knots;
  Pose T = random_pose(rng, 0.5, 0.5);
  for (int m = 0; m < num_knots; ++m) {
    knots.push_back(T);
    Vec6d step;
    step.head<3>() = 0.3 * rng.normal3();
    step.tail<3>() = 0.3 * rng.normal3();
    T = compose(T, se3_exp(Twist(step)));
  }
  return SplineTrajectory(k, dt, 0.0, std::move(knots));
}

}  // namespace

TEST_CASE("cubic blending matrix equals the frozen reference exactly") {
  const BlendingMatrix b = blending_matrix(4);
  const double f = 6.0;
  const double cum[4][4] = {{6 / f, 0, 0, 0},
                            {5 / f, 3 / f, -3 / f, 1 / f},
                            {1 / f, 3 / f, 3 / f, -2 / f},
                            {0, 0, 0, 1 / f}};
  for (int s = 0; s < 4; ++s)
    for (int n = 0; n < 4; ++n) CHECK(b.cumulative(s, n) == cum[s][n]);
}

TEST_CASE("order 2 and 3 blending matrices equal their frozen references exactly") {
  const BlendingMatrix b2 = blending_matrix(2);
  const double m2[2][2] = {{1, -1}, {0, 1}};
  const double c2[2][2] = {{1, 0}, {0, 1}};
  for (int s = 0; s < 2; ++s)
    for (int n = 0; n < 2; ++n) {
      CHECK(b2.m(s, n) == m2[s][n]);
      CHECK(b2.cumulative(s, n) == c2[s][n]);
    }

  const BlendingMatrix b3 = blending_matrix(3);
  const double m3[3][3] = {{0.5, -1.0, 0.5}, {0.5, 1.0, -1.0}, {0, 0, 0.5}};
  const double c3[3][3] = {{1, 0, 0}, {0.5, 1.0, -0.5}, {0, 0, 0.5}};
  for (int s = 0; s < 3; ++s)
    for (int n = 0; n < 3; ++n) {
      CHECK(b3.m(s, n) == m3[s][n]);
      CHECK(b3.cumulative(s, n) == c3[s][n]);
    }
}

TEST_CASE("blending matrices match the direct summation for all supported orders") {
  for (int k = 2; k <= 8; ++k) {
    const BlendingMatrix b = blending_matrix(k);
    for (int s = 0; s < k; ++s) {
      for (int n = 0; n < k; ++n) {
        CHECK(b.m(s, n) == Catch::Approx(blend_entry(k, s, n)).margin(1e-13));
        double cum = 0.0;
        for (int l = s; l < k; ++l) cum += blend_entry(k, l, n);
        CHECK(b.cumulative(s, n) == Catch::Approx(cum).margin(1e-13));
      }
    }
  }
}

TEST_CASE("blending basis is a partition of unity") {
  for (int k = 2; k <= 8; ++k) {
    const BlendingMatrix b = blending_matrix(k);
    for (int n = 0; n < k; ++n) {
      CHECK(b.m.col(n).sum() == Catch::Approx(n == 0 ? 1.0 : 0.0).margin(1e-14));
      // row 0 of the cumulative matrix is the full column sum, computed from
      // integer numerators, so it is exactly the constant polynomial 1
      CHECK(b.cumulative(0, n) == (n == 0 ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("blending matrix rejects out-of-range orders") {
  CHECK_THROWS_AS(blending_matrix(1), std::invalid_argument);
  CHECK_THROWS_AS(blending_matrix(0), std::invalid_argument);
  CHECK_THROWS_AS(blending_matrix(9), std::invalid_argument);
}

TEST_CASE("constant control poses give a constant curve with zero kinematics") {
  Rng rng(21);
  const Pose T = random_pose(rng, 1.0, 2.0);
  SplineTrajectory sp(4, 0.5, 1.0, std::vector<Pose>(8, T));
  for (double t : {1.0, 1.3, 2.0, 3.49}) {
    const Pose P = sp.evaluate(t);
    CHECK((P.R - T.R).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((P.p - T.p).norm() < 1e-14);
    const KinematicSample s = sp.derivatives(t);
    CHECK(s.v_world.norm() < 1e-12);
    CHECK(s.a_world.norm() < 1e-12);
    CHECK(s.w_body.norm() < 1e-12);
    CHECK(s.alpha_body.norm() < 1e-12);
  }
}

TEST_CASE("control poses on a one-parameter subgroup reproduce the screw exactly") {
  // Knots T_m = exp(m * xi) commute, so the curve collapses to
  // exp((s + (k-2)/2 + u) * xi) with s the segment index. This pins the basis
  // linear precision, the 1/dt velocity scaling and the extraction frames:
  //   w_body = xi_ang / dt, alpha = 0, v = R * xi_lin / dt, a = R [w]x xi_lin / dt^2.
  Vec6d xi;
  xi << 0.3, -0.2, 0.5, 0.8, 0.1, -0.4;
  const double dt = 0.25;
  for (int k = 2; k <= 5; ++k) {
    std::vector<Pose> knots;
    for (int m = 0; m < 10; ++m) knots.push_back(se3_exp(Twist(Vec6d(m * xi))));
    SplineTrajectory sp(k, dt, 0.0, std::move(knots));
    const double shift = (k - 2) * 0.5;
    for (double t : {0.0, 0.13, 0.61, 0.9, 1.4}) {
      const double s = t / dt;
      const Pose expected = se3_exp(Twist(Vec6d((s + shift) * xi)));
      const Pose got = sp.evaluate(t);
      CHECK((got.R - expected.R).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((got.p - expected.p).norm() < 1e-12);

      if (k < 3) continue;
      const KinematicSample ks = sp.derivatives(t);
      CHECK((ks.w_body - xi.head<3>() / dt).norm() < 1e-10);
      CHECK(ks.alpha_body.norm() < 1e-9);
      CHECK((ks.v_world - got.R * xi.tail<3>() / dt).norm() < 1e-10);
      const Vec3d a_expected = got.R * skew<double>(xi.head<3>()) * xi.tail<3>() / (dt * dt);
      CHECK((ks.a_world - a_expected).norm() < 1e-9);
    }
  }
}

TEST_CASE("analytic derivatives agree with finite differences of the pose") {
  Rng rng(33);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 3 + int(rng.integer(4));
    const double dt = rng.uniform(0.2, 1.5);
    SplineTrajectory sp = random_spline(rng, k, dt, k + 4);
    const auto [lo, hi] = sp.domain();
    const double t = rng.uniform(lo + 1e-4, hi - 1e-4);
    const double knot_frac = (t - lo) / dt - std::floor((t - lo) / dt);
    if (knot_frac * dt < 10 * h || (1.0 - knot_frac) * dt < 10 * h) continue;

    const KinematicSample s = sp.derivatives(t);
    // reconstruct dT and ddT from the extracted quantities, then compare
    // against central differences of evaluate()
    const Mat3d wx = skew<double>(s.w_body);
    const Mat3d ax = skew<double>(s.alpha_body);
    const Mat3d dR = s.pose.R * wx;
    const Mat3d ddR = s.pose.R * (wx * wx + ax);

    const Pose Tp = sp.evaluate(t + h);
    const Pose Tm = sp.evaluate(t - h);
    CHECK(((Tp.R - Tm.R) / (2 * h) - dR).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(((Tp.p - Tm.p) / (2 * h) - s.v_world).norm() < 1e-5);
    CHECK(((Tp.R + Tm.R - 2.0 * s.pose.R) / (h * h) - ddR).cwiseAbs().maxCoeff() < 2e-3);
    CHECK(((Tp.p + Tm.p - 2.0 * s.pose.p) / (h * h) - s.a_world).norm() < 2e-3);

    const KinematicSample sp_ = sp.derivatives(t + h);
    const KinematicSample sm_ = sp.derivatives(t - h);
    CHECK(((sp_.v_world - sm_.v_world) / (2 * h) - s.a_world).norm() < 1e-5);
    CHECK(((sp_.w_body - sm_.w_body) / (2 * h) - s.alpha_body).norm() < 1e-5);
  }
}

TEST_CASE("curve and derivatives are continuous across knot boundaries") {
  Rng rng(44);
  // order 4 is C2, so pose, velocity and acceleration must all line up when
  // the same instant is evaluated from the segments on either side
  SplineTrajectory sp = random_spline(rng, 4, 0.4, 10);
  for (int seg = 1; seg < sp.num_segments(); ++seg) {
    const double tk = sp.t0() + seg * sp.knot_dt();
    const double tbefore = std::nextafter(tk, -1e300);
    const KinematicSample a = sp.derivatives(tbefore);
    const KinematicSample b = sp.derivatives(tk);
    CHECK((a.pose.R - b.pose.R).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.pose.p - b.pose.p).norm() < 1e-10);
    CHECK((a.v_world - b.v_world).norm() < 1e-9);
    CHECK((a.w_body - b.w_body).norm() < 1e-9);
    CHECK((a.a_world - b.a_world).norm() < 1e-8);
    CHECK((a.alpha_body - b.alpha_body).norm() < 1e-8);
  }

  // order 3 is only C1: pose and velocity continuous, curvature may jump
  SplineTrajectory sq = random_spline(rng, 3, 0.4, 9);
  for (int seg = 1; seg < sq.num_segments(); ++seg) {
    const double tk = sq.t0() + seg * sq.knot_dt();
    const KinematicSample a = sq.derivatives(std::nextafter(tk, -1e300));
    const KinematicSample b = sq.derivatives(tk);
    CHECK((a.pose.p - b.pose.p).norm() < 1e-10);
    CHECK((a.v_world - b.v_world).norm() < 1e-9);
    CHECK((a.w_body - b.w_body).norm() < 1e-9);
  }
}

TEST_CASE("a left-composed rigid offset maps through the curve") {
  Rng rng(55);
  const Pose G = random_pose(rng, 1.2, 3.0);
  SplineTrajectory sp = random_spline(rng, 4, 0.5, 9);
  std::vector<Pose> shifted;
  for (const Pose& T : sp.knots()) shifted.push_back(compose(G, T));
  SplineTrajectory sp2(4, 0.5, sp.t0(), std::move(shifted));

  for (double t : {0.05, 0.71, 1.9, 2.6}) {
    const KinematicSample a = sp.derivatives(t);
    const KinematicSample b = sp2.derivatives(t);
    const Pose expected = compose(G, a.pose);
    CHECK((b.pose.R - expected.R).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((b.pose.p - expected.p).norm() < 1e-12);
    CHECK((b.v_world - G.R * a.v_world).norm() < 1e-11);
    CHECK((b.a_world - G.R * a.a_world).norm() < 1e-10);
    CHECK((b.w_body - a.w_body).norm() < 1e-11);
    CHECK((b.alpha_body - a.alpha_body).norm() < 1e-10);
  }
}

TEST_CASE("trajectory validates construction and evaluation inputs") {
  std::vector<Pose> four(4);
  CHECK_THROWS_AS(SplineTrajectory(4, 0.0, 0.0, four), std::invalid_argument);
  CHECK_THROWS_AS(SplineTrajectory(4, -0.5, 0.0, four), std::invalid_argument);
  CHECK_THROWS_AS(SplineTrajectory(4, 0.5, 0.0, std::vector<Pose>(3)), std::invalid_argument);
  CHECK_THROWS_AS(SplineTrajectory(9, 0.5, 0.0, std::vector<Pose>(12)), std::invalid_argument);

  SplineTrajectory sp(4, 0.5, 2.0, std::vector<Pose>(6));
  CHECK(sp.num_segments() == 3);
  const auto [lo, hi] = sp.domain();
  CHECK(lo == 2.0);
  CHECK(hi == 3.5);
  CHECK_NOTHROW(sp.evaluate(2.0));
  CHECK_NOTHROW(sp.evaluate(std::nextafter(3.5, 0.0)));
  CHECK_THROWS_AS(sp.evaluate(3.5), std::domain_error);
  CHECK_THROWS_AS(sp.evaluate(1.99), std::domain_error);

  SplineTrajectory lin(2, 0.5, 0.0, std::vector<Pose>(4));
  CHECK_THROWS_AS(lin.derivatives(0.2), std::invalid_argument);
}

TEST_CASE("segment evaluation differentiates through control pose perturbations") {
  Rng rng(66);
  using J = Jet<6>;
  const BlendingMatrix blend = blending_matrix(4);
  Pose ctrl_d[4];
  for (auto& T : ctrl_d) T = random_pose(rng, 0.4, 0.6);
  const double u = 0.37;
  const int target = 2;

  PoseT<J> ctrl[4];
  for (int j = 0; j < 4; ++j) ctrl[j] = pose_cast<J>(ctrl_d[j]);
  Vec6<J> eps;
  for (int l = 0; l < 6; ++l) eps[l] = J(0.0, l);
  ctrl[target] = compose(ctrl[target], se3_exp_vec<J>(eps));
  const PoseT<J> T = eval_segment(ctrl, 4, blend.cumulative, J(u));

  const double h = 1e-7;
  for (int l = 0; l < 6; ++l) {
    Vec6d step = Vec6d::Zero();
    step[l] = h;
    Pose cp = ctrl_d[target], cm = ctrl_d[target];
    cp = compose(cp, se3_exp(Twist(step)));
    cm = compose(cm, se3_exp(Twist(Vec6d(-step))));
    Pose plus[4], minus[4];
    for (int j = 0; j < 4; ++j) {
      plus[j] = ctrl_d[j];
      minus[j] = ctrl_d[j];
    }
    plus[target] = cp;
    minus[target] = cm;
    const Pose Tp = eval_segment(plus, 4, blend.cumulative, u);
    const Pose Tm = eval_segment(minus, 4, blend.cumulative, u);
    for (int r = 0; r < 3; ++r) {
      CHECK(T.p[r].v[l] == Catch::Approx((Tp.p[r] - Tm.p[r]) / (2 * h)).margin(1e-6));
      for (int c = 0; c < 3; ++c)
        CHECK(T.R(r, c).v[l] == Catch::Approx((Tp.R(r, c) - Tm.R(r, c)) / (2 * h)).margin(1e-6));
    }
  }
}

TEST_CASE("fitting samples drawn from a spline reproduces the curve") {
  Rng rng(77);
  SplineTrajectory truth = random_spline(rng, 4, 0.5, 9);
  std::vector<PoseSample> samples;
  const auto [lo, hi] = truth.domain();
  for (double t = lo; t < hi - 1e-9; t += 0.05) samples.push_back({t, truth.evaluate(t)});

  const auto fit = fit_spline(samples, 4, 0.5);
  CHECK(fit.converged);
  CHECK(fit.rms < 1e-8);
  CHECK(fit.spline.order() == 4);
  CHECK(int(fit.spline.knots().size()) == 9);
  for (double t : {0.2, 1.1, 2.3, 2.9}) {
    const Pose a = truth.evaluate(t);
    const Pose b = fit.spline.evaluate(t);
    CHECK((a.p - b.p).norm() < 1e-6);
    CHECK((a.R - b.R).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("fitting a sampled circle tracks it to sub-millimeter error") {
  std::vector<PoseSample> samples;
  for (int i = 0; i <= 400; ++i) {
    const double t = 0.02 * i;
    Pose T;
    T.R = rot_exp<double>(Vec3d(0.0, 0.0, t));
    T.p = Vec3d(std::cos(t), std::sin(t), 0.0);
    samples.push_back({t, T});
  }
  const auto fit = fit_spline(samples, 4, 0.1);
  CHECK(fit.converged);
  CHECK(fit.rms < 1e-4);
  for (double t = 0.5; t < 7.5; t += 0.37) {
    const Pose truth(rot_exp<double>(Vec3d(0.0, 0.0, t)), Vec3d(std::cos(t), std::sin(t), 0.0));
    const Pose got = fit.spline.evaluate(t);
    CHECK((got.p - truth.p).norm() < 1e-4);
  }
}

TEST_CASE("fit residual under translation noise lands near the noise floor") {
  Rng rng(88);
  const double sigma = 0.01;
  std::vector<PoseSample> samples;
  for (int i = 0; i <= 400; ++i) {
    const double t = 0.02 * i;
    Pose T;
    T.R = rot_exp<double>(Vec3d(0.0, 0.0, t));
    T.p = Vec3d(std::cos(t), std::sin(t), 0.0) + sigma * rng.normal3();
    samples.push_back({t, T});
  }
  const auto fit = fit_spline(samples, 4, 0.2);
  // rms is over the 6-dof residual whose translation block carries the noise
  CHECK(fit.rms > 0.3 * sigma);
  CHECK(fit.rms < 3.0 * sigma);
}

TEST_CASE("fit rejects inputs that cannot pin down the curve") {
  std::vector<PoseSample> one = {{0.0, Pose()}};
  CHECK_THROWS_AS(fit_spline(one, 4, 0.5), std::invalid_argument);

  std::vector<PoseSample> narrow;
  for (double t = 0.0; t < 1.0; t += 0.1) narrow.push_back({t, Pose()});
  CHECK_THROWS_AS(fit_spline(narrow, 4, 0.5), std::invalid_argument);

  std::vector<PoseSample> gappy;
  for (double t = 0.0; t <= 1.0; t += 0.1) gappy.push_back({t, Pose()});
  for (double t = 3.0; t <= 4.0; t += 0.1) gappy.push_back({t, Pose()});
  CHECK_THROWS_AS(fit_spline(gappy, 4, 0.5), std::invalid_argument);
}
