#pragma once

// Helpers shared between the unit suites and the acceptance runner.

#include <stdexcept>

#include "nonrigid/dfn.hpp"
#include "nonrigid/dynamics.hpp"

namespace nonrigid::test {

// Acceleration model backed directly by the spring law instead of a trained
// net. Valid only for undamped parameters with isotropic inertia: then the
// camera acceleration is a pure function of the relative pose and the model
// reproduces simulated labels exactly, which makes zero-residual estimation
// problems constructible.
class SpringLawModel : public AccelModel {
 public:
  explicit SpringLawModel(const SpringParams& params) : params_(params) {
    params_.validate();
    if (params_.damping != 0.0 || params_.damping_theta != 0.0)
      throw std::invalid_argument("SpringLawModel: damping makes acceleration depend on rates");
    if (params_.inertia.maxCoeff() - params_.inertia.minCoeff() != 0.0)
      throw std::invalid_argument("SpringLawModel: anisotropic inertia brings in the gyroscopic term");
  }

  Vec6d predict(const Vec6d& input) const override {
    const Pose rel = se3_exp_vec<double>(input);
    const Wrench w = spring_wrench(params_, rel, RelativeRate{});
    Vec6d out;
    out.head<3>() = (rel.R.transpose() * w.force) / params_.mass;
    out.tail<3>() = w.torque.cwiseQuotient(params_.inertia);
    return out;
  }

  Mat6d input_jacobian(const Vec6d& input) const override {
    Mat6d jac;
    const double h = 1e-7;
    for (int c = 0; c < 6; ++c) {
      Vec6d hi = input, lo = input;
      hi[c] += h;
      lo[c] -= h;
      jac.col(c) = (predict(hi) - predict(lo)) / (2.0 * h);
    }
    return jac;
  }

 private:
  SpringParams params_;
};

inline SpringParams undamped_params() {
  SpringParams p;
  p.damping = 0.0;
  p.damping_theta = 0.0;
  return p;
}

}  // namespace nonrigid::test
