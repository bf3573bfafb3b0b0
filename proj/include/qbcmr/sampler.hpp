#pragma once

// Posterior sampling: pCN moves on the whitened path coordinates z,
// Metropolis moves on (sigma, ell) during an exploration phase, and posterior
// summaries.

#include "qbcmr/gp_prior.hpp"
#include "qbcmr/quasi_posterior.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace qbcmr {

struct SamplerConfig {
  int explore_iters = 10000;
  int burnin = 5000;
  int draws = 10000;
  int thin = 1;
  Index inducing_cap = 2000;
  double initial_beta = 0.2;
  double initial_mh_scale = 0.5;
  int adapt_window = 50;
  double adapt_gain = 0.05;
  double target_rate = 0.25;
  int pilot_iters = 2000; // identity-weighted pilot for two-step optimal weights

  void validate() const {
    if (explore_iters < 0 || burnin < 0 || draws < 0) throw ConfigError("sampler: negative iteration count");
    if (thin < 1) throw ConfigError("sampler: thin must be at least 1");
    if (inducing_cap < 1) throw ConfigError("sampler: inducing cap must be positive");
    if (!(initial_beta >= 0.0 && initial_beta <= 1.0)) throw ConfigError("sampler: beta must lie in [0,1]");
    if (adapt_window < 1) throw ConfigError("sampler: adapt window must be positive");
  }
};

/// Log quasi-likelihood as a function of structural values at the data
/// points (and at lagged data points for panel restrictions).
using LogLikFn = std::function<double(const VectorXd &h, const VectorXd &h_lag)>;

/// State-independent pieces of the chain: the grid carrying the process, the
/// data locations the likelihood reads, and per-coordinate squared-distance
/// caches.
class PathTarget {
public:
  PathTarget(MatrixXd grid_points, MatrixXd data_points, bool grid_is_data, LogLikFn loglik,
             double alpha = 1.5, double prior_scale = 1.0, MatrixXd lag_points = MatrixXd())
      : grid_(std::move(grid_points)), data_(std::move(data_points)),
        lag_(std::move(lag_points)), grid_is_data_(grid_is_data), loglik_(std::move(loglik)),
        alpha_(alpha), prior_scale_(prior_scale) {
    if (grid_.cols() != data_.cols()) throw DimensionError("target: grid/data dimension mismatch");
    if (grid_is_data_ && grid_.rows() != data_.rows())
      throw DimensionError("target: grid flagged as data but sizes differ");
    if (lag_.rows() > 0 && lag_.cols() != data_.cols())
      throw DimensionError("target: lag dimension mismatch");
    grid_sq_ = squared_differences(grid_, grid_);
    if (!grid_is_data_) data_sq_ = squared_differences(data_, grid_);
    if (lag_.rows() > 0) lag_sq_ = squared_differences(lag_, grid_);
  }

  Index grid_size() const { return grid_.rows(); }
  Index dim() const { return grid_.cols(); }
  bool grid_is_data() const { return grid_is_data_; }
  bool has_lag() const { return lag_.rows() > 0; }
  double alpha() const { return alpha_; }
  double prior_scale() const { return prior_scale_; }
  const MatrixXd &grid_points() const { return grid_; }
  const MatrixXd &data_points() const { return data_; }

  double loglik(const VectorXd &h, const VectorXd &h_lag) const { return loglik_(h, h_lag); }

  GPGrid factor(const GPHyper &hyper) const {
    return GPGrid::from_correlation(grid_, correlation(grid_sq_, hyper), hyper);
  }
  /// Correlation between data rows and the grid; rows that coincide with a
  /// grid point carry the grid's jitter, matching kriging_predict.
  MatrixXd cross_data(const GPHyper &hyper, double jitter) const {
    return grid_is_data_ ? MatrixXd() : correlation(data_sq_, hyper, jitter);
  }
  MatrixXd cross_lag(const GPHyper &hyper, double jitter) const {
    return has_lag() ? correlation(lag_sq_, hyper, jitter) : MatrixXd();
  }

  GPHyper hyper(double sigma, const VectorXd &lengthscale) const {
    GPHyper h;
    h.sigma = sigma;
    h.lengthscale = lengthscale;
    h.alpha = alpha_;
    h.prior_scale = prior_scale_;
    return h;
  }

private:
  static std::vector<Eigen::ArrayXXd> squared_differences(const MatrixXd &a, const MatrixXd &b) {
    std::vector<Eigen::ArrayXXd> out;
    for (Index j = 0; j < a.cols(); ++j) {
      const Eigen::ArrayXd ac = a.col(j).array();
      const Eigen::ArrayXd bc = b.col(j).array();
      out.emplace_back((ac.replicate(1, b.rows()) - bc.transpose().replicate(a.rows(), 1)).square());
    }
    return out;
  }

  MatrixXd correlation(const std::vector<Eigen::ArrayXXd> &sq, const GPHyper &hyper, double jitter = 0.0) const {
    Eigen::ArrayXXd r2 = sq[0] / (hyper.lengthscale(0) * hyper.lengthscale(0));
    for (std::size_t j = 1; j < sq.size(); ++j) {
      const double l = hyper.lengthscale(static_cast<Index>(j));
      r2 += sq[j] / (l * l);
    }
    Eigen::ArrayXXd c = matern_from_squared(r2, alpha_);
    if (jitter > 0.0) c += (r2 == 0.0).cast<double>() * jitter;
    return c.matrix();
  }

  MatrixXd grid_, data_, lag_;
  bool grid_is_data_;
  LogLikFn loglik_;
  double alpha_, prior_scale_;
  std::vector<Eigen::ArrayXXd> grid_sq_, data_sq_, lag_sq_;
};

struct ChainState {
  VectorXd z;
  GPHyper hyper;
  GPGrid grid;
  MatrixXd cross;     // correlation data x grid (empty when the grid is the data)
  MatrixXd cross_lag; // correlation lagged data x grid
  VectorXd hvals_data;
  VectorXd hvals_lag;
  double loglik = 0.0;
  double beta = 0.2;
  VectorXd mh_scales; // log-scale random-walk sizes for (sigma, ell_1..ell_d)
  long nonfinite_rejections = 0;
};

namespace detail {

struct PathValues {
  VectorXd data, lag;
};

inline PathValues path_values(const PathTarget &target, const GPGrid &grid, const MatrixXd &cross,
                              const MatrixXd &cross_lag, const GPHyper &hyper, const VectorXd &z) {
  const double scale = hyper.prior_scale * hyper.sigma;
  PathValues out;
  const auto &l = grid.unit_factor();
  if (target.grid_is_data()) {
    VectorXd lz = l.triangularView<Eigen::Lower>() * z;
    out.data = scale * lz;
    if (!target.has_lag()) return out;
  }
  // kriging of L z from the grid: C_{.,m} (L L')^{-1} L z = C_{.,m} L^{-T} z
  const VectorXd white = l.transpose().triangularView<Eigen::Upper>().solve(z);
  if (!target.grid_is_data()) out.data = scale * (cross * white);
  if (target.has_lag()) out.lag = scale * (cross_lag * white);
  return out;
}

inline double safe_loglik(const PathTarget &target, const PathValues &pv) {
  try {
    return target.loglik(pv.data, pv.lag);
  } catch (const NumericalError &) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline double log_prior_log_param(double log_value) { return -0.5 * log_value * log_value; }

} // namespace detail

/// Recompute every cache of the state from (z, hyper).
inline void refresh(ChainState &state, const PathTarget &target) {
  state.grid = target.factor(state.hyper);
  state.cross = target.cross_data(state.hyper, state.grid.jitter());
  state.cross_lag = target.cross_lag(state.hyper, state.grid.jitter());
  auto pv = detail::path_values(target, state.grid, state.cross, state.cross_lag, state.hyper, state.z);
  state.hvals_data = std::move(pv.data);
  state.hvals_lag = std::move(pv.lag);
  state.loglik = target.loglik(state.hvals_data, state.hvals_lag);
  if (!std::isfinite(state.loglik)) throw NumericalError("sampler: non-finite log-likelihood at the initial state");
}

inline ChainState initial_state(const PathTarget &target, const GPHyper &hyper, double beta,
                                double mh_scale, std::optional<VectorXd> z = std::nullopt) {
  hyper.validate();
  if (hyper.lengthscale.size() != target.dim()) throw DimensionError("sampler: lengthscale dimension");
  ChainState s;
  s.z = z ? *z : VectorXd::Zero(target.grid_size());
  if (s.z.size() != target.grid_size()) throw DimensionError("sampler: z has the wrong length");
  s.hyper = hyper;
  s.beta = beta;
  s.mh_scales = VectorXd::Constant(1 + target.dim(), mh_scale);
  refresh(s, target);
  return s;
}

/// Path values on the grid for the current state.
inline VectorXd grid_path(const ChainState &state) { return sample_path(state.grid, state.z, state.hyper); }

/// One preconditioned Crank-Nicolson move on z with a likelihood-only
/// acceptance ratio.
inline bool pcn_step(ChainState &state, const PathTarget &target, Rng &rng) {
  if (!(state.beta >= 0.0 && state.beta <= 1.0)) throw ParameterError("pcn: beta must lie in [0,1]");
  const VectorXd xi = standard_normal(state.z.size(), rng);
  VectorXd proposal = std::sqrt(1.0 - state.beta * state.beta) * state.z + state.beta * xi;
  auto pv = detail::path_values(target, state.grid, state.cross, state.cross_lag, state.hyper, proposal);
  const double ll = detail::safe_loglik(target, pv);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double log_u = std::log(unif(rng));
  if (!std::isfinite(ll)) {
    ++state.nonfinite_rejections;
    return false;
  }
  if (log_u < ll - state.loglik) {
    state.z = std::move(proposal);
    state.hvals_data = std::move(pv.data);
    state.hvals_lag = std::move(pv.lag);
    state.loglik = ll;
    return true;
  }
  return false;
}

/// Sweep over (sigma, ell_1, ..., ell_d) with log-scale Gaussian random-walk
/// proposals and independent LogNormal(0,1) priors. Lengthscale moves
/// refactor the grid; a failed factorization rejects the move.
inline std::vector<bool> hyper_step(ChainState &state, const PathTarget &target, Rng &rng) {
  const Index d = target.dim();
  std::vector<bool> accepted(static_cast<std::size_t>(d + 1), false);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (Index p = 0; p <= d; ++p) {
    const double step = state.mh_scales(p) * normal(rng);
    const double log_u = std::log(unif(rng));
    if (step == 0.0) {
      accepted[static_cast<std::size_t>(p)] = true;
      continue;
    }
    const double current = p == 0 ? state.hyper.sigma : state.hyper.lengthscale(p - 1);
    const double log_old = std::log(current);
    const double log_new = log_old + step;
    GPHyper hyper = state.hyper;
    if (p == 0) {
      hyper.sigma = std::exp(log_new);
      const double ratio = hyper.sigma / state.hyper.sigma;
      VectorXd h = ratio * state.hvals_data;
      VectorXd hl = state.hvals_lag.size() ? VectorXd(ratio * state.hvals_lag) : VectorXd();
      double ll = std::numeric_limits<double>::quiet_NaN();
      try {
        ll = target.loglik(h, hl);
      } catch (const NumericalError &) {
      }
      if (!std::isfinite(ll)) {
        ++state.nonfinite_rejections;
        continue;
      }
      const double log_ratio = ll - state.loglik + detail::log_prior_log_param(log_new) -
                               detail::log_prior_log_param(log_old);
      if (log_u < log_ratio) {
        state.hyper = hyper;
        state.grid.set_sigma(hyper.sigma);
        state.hvals_data = std::move(h);
        state.hvals_lag = std::move(hl);
        state.loglik = ll;
        accepted[static_cast<std::size_t>(p)] = true;
      }
    } else {
      hyper.lengthscale(p - 1) = std::exp(log_new);
      GPGrid grid;
      try {
        grid = target.factor(hyper);
      } catch (const NumericalError &) {
        continue;
      }
      MatrixXd cross = target.cross_data(hyper, grid.jitter());
      MatrixXd cross_lag = target.cross_lag(hyper, grid.jitter());
      auto pv = detail::path_values(target, grid, cross, cross_lag, hyper, state.z);
      const double ll = detail::safe_loglik(target, pv);
      if (!std::isfinite(ll)) {
        ++state.nonfinite_rejections;
        continue;
      }
      const double log_ratio = ll - state.loglik + detail::log_prior_log_param(log_new) -
                               detail::log_prior_log_param(log_old);
      if (log_u < log_ratio) {
        state.hyper = hyper;
        state.grid = std::move(grid);
        state.cross = std::move(cross);
        state.cross_lag = std::move(cross_lag);
        state.hvals_data = std::move(pv.data);
        state.hvals_lag = std::move(pv.lag);
        state.loglik = ll;
        accepted[static_cast<std::size_t>(p)] = true;
      }
    }
  }
  return accepted;
}


/// Multiplicative Robbins-Monro style update toward the target acceptance
/// rate: scale <- scale * exp(gain * (rate - target)). beta is kept in
/// [1e-4, 1].
inline void adapt_rates(const VectorXd &hyper_rates, double pcn_rate, VectorXd &mh_scales, double &beta,
                        double gain = 0.05, double target = 0.25) {
  if (hyper_rates.size() != mh_scales.size()) throw DimensionError("adapt: rate/scale size mismatch");
  for (Index p = 0; p < mh_scales.size(); ++p)
    mh_scales(p) *= std::exp(gain * (hyper_rates(p) - target));
  beta = std::clamp(beta * std::exp(gain * (pcn_rate - target)), 1e-4, 1.0);
}

/// Acceptance bookkeeping over a sliding window plus running totals.
class AcceptanceTracker {
public:
  explicit AcceptanceTracker(Index n_hyper) : window_hyper_(VectorXd::Zero(n_hyper)), total_hyper_(VectorXd::Zero(n_hyper)) {}

  void record_pcn(bool accepted) {
    window_pcn_ += accepted ? 1.0 : 0.0;
    total_pcn_ += accepted ? 1.0 : 0.0;
    ++window_pcn_count_;
    ++total_pcn_count_;
  }
  void record_hyper(const std::vector<bool> &accepted) {
    for (std::size_t p = 0; p < accepted.size(); ++p) {
      window_hyper_(static_cast<Index>(p)) += accepted[p] ? 1.0 : 0.0;
      total_hyper_(static_cast<Index>(p)) += accepted[p] ? 1.0 : 0.0;
    }
    ++window_hyper_count_;
    ++total_hyper_count_;
  }

  double window_pcn_rate() const { return window_pcn_count_ ? window_pcn_ / window_pcn_count_ : 0.0; }
  VectorXd window_hyper_rates() const {
    return window_hyper_count_ ? VectorXd(window_hyper_ / window_hyper_count_) : VectorXd(window_hyper_);
  }
  double pcn_rate() const { return total_pcn_count_ ? total_pcn_ / total_pcn_count_ : 0.0; }
  VectorXd hyper_rates() const {
    return total_hyper_count_ ? VectorXd(total_hyper_ / total_hyper_count_) : VectorXd(total_hyper_);
  }
  void reset_window() {
    window_pcn_ = 0.0;
    window_pcn_count_ = 0;
    window_hyper_.setZero();
    window_hyper_count_ = 0;
  }

private:
  double window_pcn_ = 0.0, total_pcn_ = 0.0;
  double window_pcn_count_ = 0, total_pcn_count_ = 0;
  VectorXd window_hyper_, total_hyper_;
  double window_hyper_count_ = 0, total_hyper_count_ = 0;
};

struct ExplorationResult {
  GPHyper theta_hat;
  MatrixXd trace; // iterations x (1 + d): sigma, ell_1..ell_d
  double accept_z = 0.0;
  VectorXd accept_hyper;
  ChainState final_state;
};

/// Joint exploration of (z, sigma, ell): alternate one pCN move with one
/// hyperparameter sweep, adapting step sizes every `adapt_window` iterations.
/// theta_hat is the coordinatewise mean over the second half of the trace.
inline ExplorationResult run_exploration(const PathTarget &target, const SamplerConfig &config,
                                         const GPHyper &initial, Rng &rng,
                                         std::optional<ChainState> start = std::nullopt) {
  config.validate();
  if (config.explore_iters < 2) throw ConfigError("exploration: need at least two iterations");
  ChainState state = start ? std::move(*start)
                           : initial_state(target, initial, config.initial_beta, config.initial_mh_scale);
  const Index d = target.dim();
  AcceptanceTracker tracker(d + 1);
  ExplorationResult out;
  out.trace.resize(config.explore_iters, d + 1);

  for (int it = 0; it < config.explore_iters; ++it) {
    tracker.record_pcn(pcn_step(state, target, rng));
    tracker.record_hyper(hyper_step(state, target, rng));
    out.trace(it, 0) = state.hyper.sigma;
    out.trace.row(it).tail(d) = state.hyper.lengthscale.transpose();
    if ((it + 1) % config.adapt_window == 0) {
      adapt_rates(tracker.window_hyper_rates(), tracker.window_pcn_rate(), state.mh_scales, state.beta,
                  config.adapt_gain, config.target_rate);
      tracker.reset_window();
    }
  }

  const Index half = config.explore_iters / 2;
  const VectorXd mean = out.trace.bottomRows(config.explore_iters - half).colwise().mean().transpose();
  out.theta_hat = state.hyper;
  out.theta_hat.sigma = mean(0);
  out.theta_hat.lengthscale = mean.tail(d);
  out.accept_z = tracker.pcn_rate();
  out.accept_hyper = tracker.hyper_rates();
  out.final_state = std::move(state);
  return out;
}

/// Draws of the structural function at the grid points.
struct PosteriorDraws {
  MatrixXd paths;       // draws x m
  MatrixXd hyper_trace; // draws x (1 + d)
  double accept_z = 0.0;
  VectorXd accept_hyper;

  Index size() const { return paths.rows(); }
  bool empty() const { return paths.rows() == 0; }
};

/// pCN-only chain at fixed hyperparameters. Discards `burnin` iterations and
/// keeps `draws` states, one every `thin` iterations.
inline PosteriorDraws run_posterior(const PathTarget &target, const GPHyper &theta_hat,
                                    const SamplerConfig &config, Rng &rng,
                                    std::optional<VectorXd> z0 = std::nullopt,
                                    std::optional<double> beta = std::nullopt) {
  config.validate();
  ChainState state = initial_state(target, theta_hat, beta.value_or(config.initial_beta),
                                   config.initial_mh_scale, std::move(z0));
  const Index d = target.dim();
  PosteriorDraws out;
  out.paths.resize(config.draws, target.grid_size());
  out.hyper_trace.resize(config.draws, d + 1);
  out.accept_hyper = VectorXd::Zero(d + 1);
  long accepted = 0, steps = 0;
  const long total = static_cast<long>(config.burnin) + static_cast<long>(config.draws) * config.thin;
  Index kept = 0;
  for (long it = 0; it < total; ++it) {
    accepted += pcn_step(state, target, rng) ? 1 : 0;
    ++steps;
    if (it >= config.burnin && (it - config.burnin + 1) % config.thin == 0) {
      out.paths.row(kept) = grid_path(state).transpose();
      out.hyper_trace(kept, 0) = state.hyper.sigma;
      out.hyper_trace.row(kept).tail(d) = state.hyper.lengthscale.transpose();
      ++kept;
    }
  }
  out.accept_z = steps ? static_cast<double>(accepted) / static_cast<double>(steps) : 0.0;
  return out;
}

inline VectorXd posterior_mean(const PosteriorDraws &draws) {
  if (draws.empty()) throw SummaryError("posterior mean: no draws");
  return draws.paths.colwise().mean().transpose();
}

/// Type-7 empirical quantile.
inline double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw SummaryError("quantile: no values");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct CredibleSet {
  double center = 0.0;
  double halfwidth = 0.0;
  bool contains(double t) const { return std::abs(t - center) <= halfwidth; }
};

/// Credible set for the linear functional L(h) = weights . h(grid): centred at
/// L(posterior mean), halfwidth = (1 - gamma) quantile of |L(h) - center|.
inline CredibleSet credible_set(const PosteriorDraws &draws, const VectorXd &functional_weights,
                                double gamma) {
  if (draws.empty()) throw SummaryError("credible set: no draws");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("credible set: gamma must lie in (0,1)");
  if (functional_weights.size() != draws.paths.cols())
    throw DimensionError("credible set: weight length mismatch");
  const VectorXd values = draws.paths * functional_weights;
  CredibleSet out;
  out.center = posterior_mean(draws).dot(functional_weights);
  std::vector<double> dev(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) dev[static_cast<std::size_t>(i)] = std::abs(values(i) - out.center);
  out.halfwidth = empirical_quantile(std::move(dev), 1.0 - gamma);
  return out;
}

/// Likelihood target for a quasi-Bayes posterior built from a residual model
/// and a first stage. `data` must already be on the scale the prior expects.
inline PathTarget make_quasi_target(const Dataset &data, const ResidualModel &model, const FirstStage &fs,
                                    MatrixXd grid_points, bool grid_is_data, double alpha,
                                    double prior_scale) {
  data.validate();
  if (model.needs_lag() && !data.has_lag()) throw DimensionError("target: model needs lagged regressors");
  auto shared_fs = std::make_shared<const FirstStage>(fs);
  auto shared_model = std::make_shared<const ResidualModel>(model);
  auto y = std::make_shared<const VectorXd>(data.y);
  LogLikFn fn = [shared_fs, shared_model, y](const VectorXd &h, const VectorXd &h_lag) {
    return quasi_loglik(*shared_fs, *shared_model, *y, h, h_lag).loglik;
  };
  return PathTarget(std::move(grid_points), data.x, grid_is_data, std::move(fn), alpha, prior_scale,
                    model.needs_lag() ? data.x_lag : MatrixXd());
}

} // namespace qbcmr
