// Fits a cubic pose spline to a noisy helix and prints the residual rms,
// mostly as a smoke test that the library headers stand on their own.

#include <cstdio>
#include <vector>

#include "nonrigid/rng.hpp"
#include "nonrigid/spline.hpp"

int main() {
  using namespace nonrigid;

  Rng rng(7);
  std::vector<PoseSample> samples;
  for (int i = 0; i <= 400; ++i) {
    const double t = 0.02 * i;
    Pose T;
    T.R = rot_exp(Vec3d(0.0, 0.6 * t, 0.0));
    T.p = Vec3d(std::cos(t), 0.1 * t, std::sin(t));
    T.p += 0.002 * rng.normal3();
    samples.push_back({t, T});
  }

  const auto fit = fit_spline(samples, 4, 0.4);
  std::printf("fit rms %.6f over %zu samples, %d iterations, converged=%d\n",
              fit.rms, samples.size(), fit.iterations, int(fit.converged));
  return fit.converged ? 0 : 1;
}
