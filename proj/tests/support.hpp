#pragma once

#include "qbcmr/dgp.hpp"

namespace qbcmr::test_support {

struct DgpValidity {
  double moment_rms = 0.0; // RMS of the W-projection of the standardized structural error
  double moment_threshold = 0.0;
  VectorXd relevance_r2;   // first-stage R^2 of each X_j on the W-basis
  VectorXd endogeneity;    // sample corr(structural error, latent driver_j)
  VectorXd endogeneity_target;

  bool moment_ok() const { return moment_rms < moment_threshold; }
  bool relevance_ok() const { return relevance_r2.minCoeff() > 0.02; }
  bool endogeneity_ok() const { return (endogeneity - endogeneity_target).cwiseAbs().maxCoeff() <= 0.05; }
  bool ok() const { return moment_ok() && relevance_ok() && endogeneity_ok(); }
};

inline double sample_corr(const VectorXd &a, const VectorXd &b) {
  const VectorXd ac = a.array() - a.mean(), bc = b.array() - b.mean();
  return ac.dot(bc) / (ac.norm() * bc.norm());
}

inline DgpValidity check_design(DesignSpec spec, std::uint64_t seed, Index K = 5) {
  spec.n = 10000;
  spec.test_size = 0;
  Rng rng(seed);
  const GeneratedSample s = generate(spec, rng);
  const double n = static_cast<double>(spec.n);
  const BasisDesign wb = build_thin_plate(Standardizer::fit(s.data.w).apply(s.data.w), K, rng);

  DgpValidity out;
  const VectorXd resid = s.data.y - s.h0(s.data.x);
  const VectorXd centred = resid.array() - resid.mean();
  const double sd = std::sqrt(centred.squaredNorm() / n);
  out.moment_rms = std::sqrt(wb.project(VectorXd(resid / sd)).squaredNorm() / n);
  out.moment_threshold = 3.0 / std::sqrt(n);

  out.relevance_r2.resize(s.data.x.cols());
  for (Index j = 0; j < s.data.x.cols(); ++j) {
    const VectorXd xj = s.data.x.col(j).array() - s.data.x.col(j).mean();
    const VectorXd fitted = wb.project(xj);
    out.relevance_r2(j) = fitted.squaredNorm() / xj.squaredNorm();
  }

  out.endogeneity.resize(s.latent_driver.cols());
  for (Index j = 0; j < s.latent_driver.cols(); ++j)
    out.endogeneity(j) = sample_corr(s.structural_error, s.latent_driver.col(j));
  out.endogeneity_target = s.endogeneity_target;
  return out;
}

inline std::vector<DesignSpec> benchmark_designs() {
  std::vector<DesignSpec> out;
  for (Variant v : {Variant::univariate, Variant::multivariate})
    for (DesignName d : {DesignName::np, DesignName::s, DesignName::cns, DesignName::cw, DesignName::cck}) {
      DesignSpec s;
      s.name = d;
      s.variant = v;
      out.push_back(s);
    }
  return out;
}

} // namespace qbcmr::test_support
