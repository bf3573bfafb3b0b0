#pragma once

// Generalized residual functions rho(Y, h(X)).

#include "qbcmr/core.hpp"

#include <variant>

namespace qbcmr {

inline VectorXd npiv_residual(const VectorXd &y, const VectorXd &h) {
  if (y.size() != h.size()) throw DimensionError("npiv: length mismatch");
  return y - h;
}

/// 1{y - h <= 0} - tau. Ties count toward the indicator.
inline VectorXd npqiv_residual(const VectorXd &y, const VectorXd &h, double tau) {
  if (y.size() != h.size()) throw DimensionError("npqiv: length mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("npqiv: tau must lie in (0,1)");
  VectorXd out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(i) = (y(i) - h(i) <= 0.0 ? 1.0 : 0.0) - tau;
  return out;
}

/// Plug-ins for the production-function restriction: phi = Phi_t at the
/// current observation, phi_lag = Phi_{t-1} at the lagged one.
struct AcfPlugins {
  VectorXd phi;
  VectorXd phi_lag;
  int poly_degree = 2;
};

struct AcfFit {
  VectorXd residual;
  VectorXd g_coefficients; // ascending powers of omega_{t-1}
  bool degenerate = false; // fell back to an intercept-only g
};

/// y_t - F(x_t) - g(omega_{t-1}) with g refit by OLS of omega_t on a polynomial
/// in omega_{t-1}, where omega = Phi - F.
inline AcfFit acf_residual(const VectorXd &y, const AcfPlugins &plug, const VectorXd &f_t,
                           const VectorXd &f_tm1) {
  const Index n = y.size();
  if (plug.phi.size() != n || plug.phi_lag.size() != n || f_t.size() != n || f_tm1.size() != n)
    throw DimensionError("acf: length mismatch");
  if (plug.poly_degree < 1) throw ParameterError("acf: poly_degree must be at least 1");

  const VectorXd omega = plug.phi - f_t;
  const VectorXd omega_lag = plug.phi_lag - f_tm1;

  AcfFit fit;
  const double centre = omega_lag.mean();
  const double spread = std::sqrt((omega_lag.array() - centre).square().mean());
  if (!(spread > 1e-12 * (1.0 + std::abs(centre)))) {
    fit.degenerate = true;
  } else {
    // centred/scaled powers for conditioning, mapped back to raw powers below
    const Index p = plug.poly_degree;
    MatrixXd design(n, p + 1);
    const VectorXd u = (omega_lag.array() - centre) / spread;
    design.col(0).setOnes();
    for (Index k = 1; k <= p; ++k) design.col(k) = design.col(k - 1).cwiseProduct(u);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p + 1) {
      fit.degenerate = true;
    } else {
      const VectorXd c = qr.solve(omega);
      // g(w) = sum_k c_k ((w - centre)/spread)^k expanded in powers of w
      VectorXd raw = VectorXd::Zero(p + 1);
      for (Index k = 0; k <= p; ++k) {
        double binom = 1.0;
        for (Index j = 0; j <= k; ++j) {
          if (j > 0) binom = binom * static_cast<double>(k - j + 1) / static_cast<double>(j);
          raw(j) += c(k) * binom * std::pow(-centre, static_cast<double>(k - j)) /
                    std::pow(spread, static_cast<double>(k));
        }
      }
      fit.g_coefficients = raw;
      fit.residual = y - f_t - design * c;
      return fit;
    }
  }
  // intercept-only g absorbs the mean of y - F
  const double level = (y - f_t).mean();
  fit.g_coefficients = VectorXd::Constant(1, level);
  fit.residual = (y - f_t).array() - level;
  return fit;
}

struct NpivModel {};
struct NpqivModel {
  double tau = 0.5;
};
struct AcfModel {
  AcfPlugins plugins;
};

/// Pluggable residual model. All implemented models have d_rho = 1.
class ResidualModel {
public:
  ResidualModel() = default;
  static ResidualModel npiv() { return ResidualModel(NpivModel{}); }
  static ResidualModel npqiv(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("npqiv: tau must lie in (0,1)");
    return ResidualModel(NpqivModel{tau});
  }
  static ResidualModel acf(AcfPlugins plugins) {
    if (plugins.poly_degree < 1) throw ParameterError("acf: poly_degree must be at least 1");
    return ResidualModel(AcfModel{std::move(plugins)});
  }

  Index d_rho() const { return 1; }
  bool needs_lag() const { return std::holds_alternative<AcfModel>(model_); }
  bool is_npiv() const { return std::holds_alternative<NpivModel>(model_); }
  bool is_npqiv() const { return std::holds_alternative<NpqivModel>(model_); }
  double tau() const {
    if (auto *q = std::get_if<NpqivModel>(&model_)) return q->tau;
    throw ParameterError("residual: tau requested from a non-quantile model");
  }

  /// n x d_rho residual matrix at the candidate structural values.
  MatrixXd evaluate(const VectorXd &y, const VectorXd &h, const VectorXd &h_lag = VectorXd()) const {
    return std::visit(
        [&](const auto &m) -> MatrixXd {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, NpivModel>) {
            return npiv_residual(y, h);
          } else if constexpr (std::is_same_v<T, NpqivModel>) {
            return npqiv_residual(y, h, m.tau);
          } else {
            return acf_residual(y, m.plugins, h, h_lag).residual;
          }
        },
        model_);
  }

private:
  using Variant = std::variant<NpivModel, NpqivModel, AcfModel>;
  explicit ResidualModel(Variant v) : model_(std::move(v)) {}
  Variant model_ = NpivModel{};
};

} // namespace qbcmr
