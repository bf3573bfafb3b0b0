// Fit a quasi-Bayes NPIV posterior to one simulated sample and print the
// posterior mean next to the true structural function.

#include "qbcmr/qbcmr.hpp"

#include <iomanip>
#include <iostream>

int main() {
  using namespace qbcmr;
  Rng rng(7);
  DesignSpec spec;
  spec.name = DesignName::s;
  spec.n = 1000;
  spec.test_size = 0;
  const GeneratedSample sample = generate(spec, rng);

  QbOptions opt;
  opt.K = 5;
  opt.sampler.explore_iters = 4000;
  opt.sampler.burnin = 2000;
  opt.sampler.draws = 4000;
  opt.sampler.inducing_cap = 50;
  const QbFit fit = fit_quasi_bayes(sample.data, opt, rng);

  MatrixXd grid(9, 1);
  grid.col(0) = VectorXd::LinSpaced(9, -0.8, 0.8);
  const VectorXd est = fit.predict(grid);
  const VectorXd truth = sample.h0(grid);

  std::cout << "theta_hat: sigma=" << fit.theta_hat.sigma << " ell=" << fit.theta_hat.lengthscale(0) << '\n';
  std::cout << std::fixed << std::setprecision(3) << "     x   h_hat      h0\n";
  for (Index i = 0; i < grid.rows(); ++i)
    std::cout << std::setw(6) << grid(i, 0) << std::setw(8) << est(i) << std::setw(8) << truth(i) << '\n';

  const VectorXd c = fit.average_weights(sample.data.x);
  const CredibleSet cs = credible_set(fit.draws, c, 0.1);
  std::cout << "90% credible set for the sample mean of h: " << fit.y_mean + fit.y_sd * cs.center << " +/- "
            << fit.y_sd * cs.halfwidth << '\n';
}
