#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "nonrigid/metrics.hpp"
#include "nonrigid/rng.hpp"

using namespace nonrigid;

namespace {

// Helix with rotation, sampled at a fixed rate. Curved enough that any
// alignment is unique.
std::vector<PoseSample> helix(int n, double dt, double phase = 0.0) {
  std::vector<PoseSample> out;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    PoseSample s;
    s.t = t;
    s.pose.p = Vec3d(std::cos(t + phase), 0.3 * t, std::sin(t + phase));
    s.pose.R = rot_exp<double>(Vec3d(0.0, t, 0.0));
    out.push_back(s);
  }
  return out;
}

std::vector<PoseSample> transformed(const std::vector<PoseSample>& in, double scale, const Mat3d& R,
                                    const Vec3d& t) {
  std::vector<PoseSample> out = in;
  for (auto& s : out) s.pose = Pose(Mat3d(R * s.pose.R), Vec3d(scale * (R * s.pose.p) + t));
  return out;
}

}  // namespace

TEST_CASE("scale error matches the published table values") {
  CHECK(scale_error(0.251, 0.251) == 0.0);
  CHECK(std::abs(scale_error(0.183, 0.251) - 0.271) < 5e-4);
  CHECK(std::abs(scale_error(0.308, 0.247) - 0.24696) < 1e-5);
  CHECK(std::abs(scale_error(0.308, 0.247) - 0.247) < 1e-3);

  CHECK_THROWS_AS(scale_error(0.2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(scale_error(0.2, -1.0), std::invalid_argument);
}

TEST_CASE("scale error is invariant to a common positive factor") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const double opt = rng.uniform(0.05, 2.0);
    const double gt = rng.uniform(0.05, 2.0);
    const double c = rng.uniform(0.1, 10.0);
    CHECK(scale_error(c * opt, c * gt) == Catch::Approx(scale_error(opt, gt)).epsilon(1e-12));
  }
}

TEST_CASE("gravity error covers the standard angles") {
  const Vec3d down(0.0, -9.81, 0.0);
  CHECK(gravity_error(down, down) == 0.0);
  CHECK(gravity_error(down, Vec3d(0.0, -1.0, 0.0)) == 0.0);
  CHECK(gravity_error(down, Vec3d(1.0, 0.0, 0.0)) == Catch::Approx(90.0));
  CHECK(gravity_error(down, Vec3d(0.0, 9.81, 0.0)) == Catch::Approx(180.0));

  const double a = 2.0 * M_PI / 180.0;
  const Vec3d tilted(std::sin(a), -std::cos(a), 0.0);
  CHECK(std::abs(gravity_error(Vec3d(0.0, -1.0, 0.0), tilted) - 2.0) < 1e-6);

  CHECK_THROWS_AS(gravity_error(Vec3d::Zero(), down), std::invalid_argument);
  CHECK_THROWS_AS(gravity_error(down, Vec3d::Zero()), std::invalid_argument);
}

TEST_CASE("gravity error is symmetric and scale-free") {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Vec3d a = rng.unit3(), b = rng.unit3();
    CHECK(gravity_error(a, b) == Catch::Approx(gravity_error(b, a)).margin(1e-12));
    CHECK(gravity_error(17.0 * a, b) == Catch::Approx(gravity_error(a, 0.03 * b)).margin(1e-12));
  }
}

TEST_CASE("identical trajectories give zero error in every mode") {
  const auto gt = helix(60, 0.1);
  for (AlignMode mode : {AlignMode::none, AlignMode::se3, AlignMode::sim3}) {
    const ApeStats s = ape(gt, gt, mode);
    CHECK(s.matched == 60);
    CHECK(s.mean < 1e-12);
    CHECK(s.median < 1e-12);
    CHECK(s.std < 1e-12);
  }
}

TEST_CASE("similarity alignment absorbs a pure scale") {
  const auto gt = helix(60, 0.1);
  const auto est = transformed(gt, 2.0, Mat3d::Identity(), Vec3d::Zero());

  const ApeStats s = ape(est, gt, AlignMode::sim3);
  CHECK(s.mean < 1e-9);
  CHECK(s.std < 1e-9);
  CHECK(s.scale == Catch::Approx(0.5).epsilon(1e-9));

  // Rigid alignment must not absorb it.
  const ApeStats r = ape(est, gt, AlignMode::se3);
  CHECK(r.scale == 1.0);
  CHECK(r.mean > 0.1);
}

TEST_CASE("alignment scale recovers the metric factor of a scaled track") {
  const auto gt = helix(80, 0.05);
  const double lambda = 0.37;
  // A track expressed in units where distances appear 1/lambda too large.
  const auto vo = transformed(gt, 1.0 / lambda, rot_exp<double>(Vec3d(0.2, 0.5, -0.1)),
                              Vec3d(1.0, -2.0, 0.5));
  const ApeStats s = ape(vo, gt, AlignMode::sim3);
  CHECK(s.scale == Catch::Approx(lambda).epsilon(1e-9));
  CHECK(s.mean < 1e-9);
}

TEST_CASE("constant offset without alignment reports exactly itself") {
  const auto gt = helix(40, 0.1);
  auto est = gt;
  for (auto& s : est) s.pose.p += Vec3d(1.0, 0.0, 0.0);
  const ApeStats s = ape(est, gt, AlignMode::none);
  CHECK(s.mean == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(s.median == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(s.std < 1e-12);
}

TEST_CASE("statistics match a hand-computed error set") {
  std::vector<PoseSample> gt(4), est(4);
  for (int i = 0; i < 4; ++i) {
    gt[std::size_t(i)].t = est[std::size_t(i)].t = double(i);
    gt[std::size_t(i)].pose.p = Vec3d::Zero();
  }
  est[0].pose.p = Vec3d(1.0, 0.0, 0.0);
  est[1].pose.p = Vec3d(0.0, 2.0, 0.0);
  est[2].pose.p = Vec3d(0.0, 0.0, 3.0);
  est[3].pose.p = Vec3d(4.0, 0.0, 0.0);

  const ApeStats s = ape(est, gt, AlignMode::none);
  CHECK(s.mean == Catch::Approx(2.5));
  CHECK(s.median == Catch::Approx(2.5));
  CHECK(s.std == Catch::Approx(std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0)));
}

TEST_CASE("rigid alignment is invariant to rigid motion of the estimate") {
  const auto gt = helix(60, 0.1);
  Rng rng(3);
  auto est = gt;
  for (auto& s : est) s.pose.p += 0.05 * rng.normal3();  // imperfect estimate

  const ApeStats base = ape(est, gt, AlignMode::se3);
  const Mat3d R = rot_exp<double>(Vec3d(0.4, -0.2, 0.9));
  const auto moved = transformed(est, 1.0, R, Vec3d(2.0, -1.0, 3.0));
  const ApeStats after = ape(moved, gt, AlignMode::se3);
  CHECK(after.mean == Catch::Approx(base.mean).margin(1e-9));
  CHECK(after.median == Catch::Approx(base.median).margin(1e-9));
  CHECK(after.std == Catch::Approx(base.std).margin(1e-9));

  // Similarity mode shrugs off an extra scale on top.
  const auto scaled = transformed(est, 3.1, R, Vec3d(0.2, 0.0, -0.7));
  const ApeStats sim_base = ape(est, gt, AlignMode::sim3);
  const ApeStats sim_after = ape(scaled, gt, AlignMode::sim3);
  CHECK(sim_after.mean == Catch::Approx(sim_base.mean).margin(1e-9));
}

TEST_CASE("association tolerates jitter below half the sample period") {
  const auto gt = helix(30, 0.1);
  auto est = gt;
  for (std::size_t i = 0; i < est.size(); ++i)
    est[i].t += (i % 2 ? 0.02 : -0.03);  // within the 0.05 window
  CHECK(ape(est, gt, AlignMode::none).matched == 30);

  // Push three stamps out of every window; they must be dropped.
  est[5].t = 5.055;
  est[11].t = -3.0;
  est[17].t = 99.0;
  const ApeStats s = ape(est, gt, AlignMode::none);
  CHECK(s.matched == 27);
}

TEST_CASE("rejects starved or degenerate inputs") {
  const auto gt = helix(10, 0.1);
  CHECK_THROWS_AS(ape({}, gt, AlignMode::none), std::invalid_argument);
  CHECK_THROWS_AS(ape(gt, {gt[0]}, AlignMode::none), std::invalid_argument);

  std::vector<PoseSample> two = {gt[0], gt[3]};
  CHECK_THROWS_AS(ape(two, gt, AlignMode::none), std::invalid_argument);

  // All estimate points identical: a similarity fit has no defined scale.
  auto flat = gt;
  for (auto& s : flat) s.pose.p = Vec3d(1.0, 2.0, 3.0);
  CHECK_THROWS_AS(ape(flat, gt, AlignMode::sim3), std::invalid_argument);
}
