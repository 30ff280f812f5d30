#ifndef DSBFA_GIBBS_HPP
#define DSBFA_GIBBS_HPP

// Gibbs sampler for the augmented parameter block with the MOGP
// hyperparameters held fixed.
//
// One systematic sweep updates, in order: factor scores per subject (block draw
// at the observed times, then the remaining grid times from the MOGP
// conditional), inclusion rows of Z by enumeration of all 2^k patterns,
// coefficient rows of A, subject-biomarker means, and the conjugate scalars
// (pi, rho^2, sigma^2, phi^2).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/factor_model.hpp"
#include "dsbfa/random.hpp"

namespace dsbfa {

/// Mean and covariance of a Gaussian full conditional.
struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Parameters of every conjugate full conditional for the scalar blocks.
/// Inverse-Gamma entries are (shape, rate).
struct ConjugateParameters {
  Eigen::VectorXd pi_a, pi_b;
  Eigen::VectorXd rho2_shape, rho2_rate;
  Eigen::VectorXd sigma2_shape, sigma2_rate;
  Eigen::VectorXd phi2_shape, phi2_rate;
};

/// Statistics of the observed-time scores shared by all rows of Z and A:
/// G = sum_i Y_i Y_i^T, cross(g, .) = sum_i Y_i (x_ig - mu_ig),
/// ss(g) = sum_i ||x_ig - mu_ig||^2.
struct RowStatistics {
  Eigen::MatrixXd gram;   // k x k
  Eigen::MatrixXd cross;  // p x k
  Eigen::VectorXd ss;     // p
};

/// Largest k for which Z rows are enumerated.
inline constexpr int kMaxEnumeratedFactors = 12;

namespace detail {

inline double log_sum_exp(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline Eigen::VectorXd draw_gaussian_from_precision(const Eigen::MatrixXd& precision,
                                                    const Eigen::VectorXd& rhs, Rng& rng,
                                                    const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": posterior precision is not positive definite");
  }
  Eigen::VectorXd out = llt.solve(rhs);
  out += llt.matrixU().solve(rng.normal_vector(rhs.size()));
  return out;
}

}  // namespace detail

/// Full-conditional updates for a fixed dataset, hyperparameters and prior.
/// The sampler keeps references to all three; they must outlive it.
class GibbsSampler {
 public:
  GibbsSampler(const Dataset& ds, const MogpHyperparams& hp, const PriorConfig& prior)
      : ds_(&ds), hp_(hp), prior_(prior) {
    hp_.validate();
    prior_.validate(ds.p());
    detail::require(hp_.k() <= kMaxEnumeratedFactors,
                    "GibbsSampler: k exceeds the enumeration bound for inclusion rows");
    build_subject_caches();
  }

  const Dataset& dataset() const { return *ds_; }
  const MogpHyperparams& hyperparams() const { return hp_; }
  const PriorConfig& prior() const { return prior_; }
  int k() const { return hp_.k(); }

  // -- factor scores --------------------------------------------------------

  /// Conditional of vec(Y_i^T) at the subject's observed times.
  GaussianConditional factor_score_conditional(int i, const LatentState& st) const {
    Eigen::MatrixXd precision;
    Eigen::VectorXd rhs;
    score_precision(i, st, precision, rhs);
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("sample_factor_scores: posterior precision is not positive definite");
    }
    GaussianConditional out;
    out.mean = llt.solve(rhs);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
    return out;
  }

  /// Conditional of the unobserved grid times given observed-time scores
  /// (vec layout of the added rows, factor-major).
  GaussianConditional augmentation_conditional(int i, const Eigen::VectorXd& observed) const {
    const auto& cache = caches_[static_cast<std::size_t>(i)];
    GaussianConditional out;
    out.mean = cache.add_mean + cache.add_map * (observed - cache.obs_mean);
    out.covariance = cache.add_chol * cache.add_chol.transpose();
    return out;
  }

  /// Two-stage block draw of Y_i,aug.
  void sample_factor_scores(int i, LatentState& st, Rng& rng) const {
    Eigen::MatrixXd precision;
    Eigen::VectorXd rhs;
    score_precision(i, st, precision, rhs);
    const Eigen::VectorXd observed =
        detail::draw_gaussian_from_precision(precision, rhs, rng, "sample_factor_scores");
    const auto& cache = caches_[static_cast<std::size_t>(i)];
    auto& Yi = st.Y[static_cast<std::size_t>(i)];
    const int q = ds_->q();
    for (std::size_t r = 0; r < cache.obs_rows.size(); ++r) {
      const int row = cache.obs_rows[r];
      Yi(row / q, row % q) = observed(static_cast<Eigen::Index>(r));
    }
    if (!cache.add_rows.empty()) {
      Eigen::VectorXd added = cache.add_mean + cache.add_map * (observed - cache.obs_mean);
      added += cache.add_chol * rng.normal_vector(added.size());
      for (std::size_t r = 0; r < cache.add_rows.size(); ++r) {
        const int row = cache.add_rows[r];
        Yi(row / q, row % q) = added(static_cast<Eigen::Index>(r));
      }
    }
  }

  // -- inclusion indicators and coefficients ----------------------------------

  RowStatistics row_statistics(const LatentState& st) const {
    const int k = this->k();
    RowStatistics stats;
    stats.gram = Eigen::MatrixXd::Zero(k, k);
    stats.cross = Eigen::MatrixXd::Zero(ds_->p(), k);
    stats.ss = Eigen::VectorXd::Zero(ds_->p());
    for (int i = 0; i < ds_->n(); ++i) {
      const auto& s = ds_->subject(i);
      const Eigen::MatrixXd Yo = st.observed_scores(s, i);
      const Eigen::MatrixXd R = s.X.colwise() - st.M.row(i).transpose();
      stats.gram.noalias() += Yo * Yo.transpose();
      stats.cross.noalias() += R * Yo.transpose();
      stats.ss += R.rowwise().squaredNorm();
    }
    return stats;
  }

  /// Normalized probabilities of all 2^k rows; bit a of the index is Z_ga.
  std::vector<double> inclusion_row_probabilities(int g, const LatentState& st,
                                                  const RowStatistics& stats) const {
    const int k = this->k();
    const std::size_t count = std::size_t{1} << k;
    std::vector<double> logp(count);
    const Eigen::RowVectorXd A = st.A.row(g);
    const Eigen::RowVectorXd b = stats.cross.row(g);
    Eigen::VectorXd l(k);
    for (std::size_t mask = 0; mask < count; ++mask) {
      double prior = 0.0;
      for (int a = 0; a < k; ++a) {
        const bool on = (mask >> a) & 1U;
        l(a) = on ? A(a) : 0.0;
        prior += on ? std::log(st.pi(a)) : std::log1p(-st.pi(a));
      }
      const double rss = stats.ss(g) - 2.0 * b.dot(l) + l.dot(stats.gram * l);
      logp[mask] = -0.5 * rss / st.phi2(g) + prior;
    }
    const double norm = detail::log_sum_exp(logp);
    if (!std::isfinite(norm)) {
      throw NumericalError("sample_inclusion_row: every candidate row has zero probability");
    }
    std::vector<double> prob(count);
    for (std::size_t mask = 0; mask < count; ++mask) prob[mask] = std::exp(logp[mask] - norm);
    return prob;
  }

  void sample_inclusion_row(int g, LatentState& st, Rng& rng, const RowStatistics& stats) const {
    const auto prob = inclusion_row_probabilities(g, st, stats);
    double u = rng.uniform();
    std::size_t chosen = prob.size() - 1;
    for (std::size_t mask = 0; mask < prob.size(); ++mask) {
      if (u < prob[mask]) {
        chosen = mask;
        break;
      }
      u -= prob[mask];
    }
    for (int a = 0; a < k(); ++a) st.Z(g, a) = static_cast<int>((chosen >> a) & 1U);
  }

  void sample_inclusion_row(int g, LatentState& st, Rng& rng) const {
    sample_inclusion_row(g, st, rng, row_statistics(st));
  }

  GaussianConditional coefficient_row_conditional(int g, const LatentState& st,
                                                  const RowStatistics& stats) const {
    Eigen::MatrixXd precision;
    Eigen::VectorXd rhs;
    coefficient_precision(g, st, stats, precision, rhs);
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    GaussianConditional out;
    out.mean = llt.solve(rhs);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(k(), k()));
    return out;
  }

  void sample_coefficient_row(int g, LatentState& st, Rng& rng, const RowStatistics& stats) const {
    Eigen::MatrixXd precision;
    Eigen::VectorXd rhs;
    coefficient_precision(g, st, stats, precision, rhs);
    st.A.row(g) =
        detail::draw_gaussian_from_precision(precision, rhs, rng, "sample_coefficient_row").transpose();
  }

  void sample_coefficient_row(int g, LatentState& st, Rng& rng) const {
    sample_coefficient_row(g, st, rng, row_statistics(st));
  }

  // -- subject-biomarker means ----------------------------------------------

  /// (mean, variance) of mu_ig given everything else.
  std::pair<double, double> subject_mean_conditional(int i, int g, const LatentState& st) const {
    const auto& s = ds_->subject(i);
    const Eigen::RowVectorXd fit = st.loadings().row(g) * st.observed_scores(s, i);
    const double resid = (s.X.row(g) - fit).sum();
    const double var = 1.0 / (1.0 / st.sigma2(g) + s.q() / st.phi2(g));
    const double mean = var * (prior_.mu(g) / st.sigma2(g) + resid / st.phi2(g));
    return {mean, var};
  }

  void sample_subject_means(LatentState& st, Rng& rng) const {
    const Eigen::MatrixXd L = st.loadings();
    for (int i = 0; i < ds_->n(); ++i) {
      const auto& s = ds_->subject(i);
      const Eigen::VectorXd resid = (s.X - L * st.observed_scores(s, i)).rowwise().sum();
      for (int g = 0; g < ds_->p(); ++g) {
        const double var = 1.0 / (1.0 / st.sigma2(g) + s.q() / st.phi2(g));
        const double mean = var * (prior_.mu(g) / st.sigma2(g) + resid(g) / st.phi2(g));
        st.M(i, g) = rng.normal(mean, std::sqrt(var));
      }
    }
  }

  // -- conjugate scalars ------------------------------------------------------

  ConjugateParameters conjugate_parameters(const LatentState& st) const {
    const int k = this->k();
    const int p = ds_->p();
    const int n = ds_->n();
    ConjugateParameters cp;
    cp.pi_a.resize(k);
    cp.pi_b.resize(k);
    cp.rho2_shape.resize(k);
    cp.rho2_rate.resize(k);
    for (int a = 0; a < k; ++a) {
      const double included = st.Z.col(a).cast<double>().sum();
      cp.pi_a(a) = prior_.c0 + included;
      cp.pi_b(a) = prior_.d0 + (p - included);
      cp.rho2_shape(a) = prior_.c1 + 0.5 * p;
      cp.rho2_rate(a) = prior_.d1 + 0.5 * st.A.col(a).squaredNorm();
    }
    const Eigen::MatrixXd L = st.loadings();
    Eigen::VectorXd rss = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < n; ++i) {
      const auto& s = ds_->subject(i);
      const Eigen::MatrixXd E =
          (s.X - L * st.observed_scores(s, i)).colwise() - st.M.row(i).transpose();
      rss += E.rowwise().squaredNorm();
    }
    cp.sigma2_shape = Eigen::VectorXd::Constant(p, prior_.c2 + 0.5 * n);
    cp.sigma2_rate.resize(p);
    for (int g = 0; g < p; ++g) {
      cp.sigma2_rate(g) = prior_.d2 + 0.5 * (st.M.col(g).array() - prior_.mu(g)).square().sum();
    }
    cp.phi2_shape = Eigen::VectorXd::Constant(p, prior_.c3 + 0.5 * ds_->total_observations());
    cp.phi2_rate = (prior_.d3 + 0.5 * rss.array()).matrix();
    return cp;
  }

  void sample_conjugate_scalars(LatentState& st, Rng& rng) const {
    const auto cp = conjugate_parameters(st);
    constexpr double tiny = 1e-12;
    for (int a = 0; a < k(); ++a) {
      st.pi(a) = std::clamp(rng.beta(cp.pi_a(a), cp.pi_b(a)), tiny, 1.0 - tiny);
      st.rho2(a) = rng.inverse_gamma(cp.rho2_shape(a), cp.rho2_rate(a));
    }
    for (int g = 0; g < ds_->p(); ++g) {
      st.sigma2(g) = rng.inverse_gamma(cp.sigma2_shape(g), cp.sigma2_rate(g));
      st.phi2(g) = rng.inverse_gamma(cp.phi2_shape(g), cp.phi2_rate(g));
    }
  }

  /// One systematic-scan sweep over every block.
  void sweep(LatentState& st, Rng& rng) const {
    for (int i = 0; i < ds_->n(); ++i) sample_factor_scores(i, st, rng);
    const RowStatistics stats = row_statistics(st);
    for (int g = 0; g < ds_->p(); ++g) sample_inclusion_row(g, st, rng, stats);
    for (int g = 0; g < ds_->p(); ++g) sample_coefficient_row(g, st, rng, stats);
    sample_subject_means(st, rng);
    sample_conjugate_scalars(st, rng);
  }

 private:
  struct SubjectCache {
    std::vector<int> obs_rows;  // rows of vec(Y_aug^T) observed, subject layout order
    std::vector<int> add_rows;  // remaining rows
    Eigen::MatrixXd prior_precision;  // Sigma_oo^-1
    Eigen::VectorXd prior_shift;      // Sigma_oo^-1 C_obs
    Eigen::VectorXd obs_mean;
    Eigen::VectorXd add_mean;
    Eigen::MatrixXd add_map;   // Sigma_ao Sigma_oo^-1
    Eigen::MatrixXd add_chol;  // Cholesky factor of the conditional covariance
  };

  void build_subject_caches() {
    const int k = hp_.k();
    const int q = ds_->q();
    const Eigen::MatrixXd sigma = assemble_normalized_covariance(hp_, ds_->grid());
    const Eigen::VectorXd mean = mean_vector(hp_, q);
    caches_.resize(static_cast<std::size_t>(ds_->n()));
    for (int i = 0; i < ds_->n(); ++i) {
      const auto& s = ds_->subject(i);
      auto& cache = caches_[static_cast<std::size_t>(i)];
      std::vector<bool> observed(static_cast<std::size_t>(k * q), false);
      for (int a = 0; a < k; ++a) {
        for (int j = 0; j < s.q(); ++j) {
          const int row = a * q + s.grid_index[static_cast<std::size_t>(j)];
          cache.obs_rows.push_back(row);
          observed[static_cast<std::size_t>(row)] = true;
        }
      }
      for (int row = 0; row < k * q; ++row) {
        if (!observed[static_cast<std::size_t>(row)]) cache.add_rows.push_back(row);
      }
      std::vector<int> order = cache.obs_rows;
      order.insert(order.end(), cache.add_rows.begin(), cache.add_rows.end());
      const auto m = static_cast<Eigen::Index>(order.size());
      Eigen::MatrixXd joint(m, m);
      Eigen::VectorXd joint_mean(m);
      for (Eigen::Index r = 0; r < m; ++r) {
        joint_mean(r) = mean(order[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < m; ++c) {
          joint(r, c) = sigma(order[static_cast<std::size_t>(r)], order[static_cast<std::size_t>(c)]);
        }
      }
      const auto llt = cholesky_or_throw(joint, hp_, "GibbsSampler");
      const Eigen::MatrixXd chol = llt.matrixL();
      const auto no = static_cast<Eigen::Index>(cache.obs_rows.size());
      const auto na = m - no;
      const Eigen::MatrixXd L11 = chol.topLeftCorner(no, no);
      const Eigen::MatrixXd L11inv =
          L11.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(no, no));
      cache.prior_precision = L11inv.transpose() * L11inv;
      cache.obs_mean = joint_mean.head(no);
      cache.prior_shift = cache.prior_precision * cache.obs_mean;
      if (na > 0) {
        cache.add_mean = joint_mean.tail(na);
        cache.add_map = chol.bottomLeftCorner(na, no) * L11inv;
        cache.add_chol = chol.bottomRightCorner(na, na);
      }
    }
  }

  /// Posterior precision and linear term of vec(Y_i^T) at observed times.
  void score_precision(int i, const LatentState& st, Eigen::MatrixXd& precision,
                       Eigen::VectorXd& rhs) const {
    const auto& s = ds_->subject(i);
    const auto& cache = caches_[static_cast<std::size_t>(i)];
    const int k = this->k();
    const int qi = s.q();
    const Eigen::MatrixXd L = st.loadings();
    // L^T Sigma_X^-1 without materializing the pq_i x pq_i diagonal.
    const Eigen::MatrixXd Lw = (st.phi2.cwiseInverse().asDiagonal() * L).transpose();  // k x p
    const Eigen::MatrixXd lambda = Lw * L;                                              // k x k
    const Eigen::MatrixXd data = Lw * (s.X.colwise() - st.M.row(i).transpose());     // k x q_i
    precision = cache.prior_precision;
    rhs = cache.prior_shift;
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        for (int j = 0; j < qi; ++j) precision(a * qi + j, b * qi + j) += lambda(a, b);
      }
      for (int j = 0; j < qi; ++j) rhs(a * qi + j) += data(a, j);
    }
  }

  void coefficient_precision(int g, const LatentState& st, const RowStatistics& stats,
                             Eigen::MatrixXd& precision, Eigen::VectorXd& rhs) const {
    const int k = this->k();
    const Eigen::VectorXd z = st.Z.row(g).cast<double>().transpose();
    precision = z.asDiagonal() * stats.gram * z.asDiagonal() / st.phi2(g);
    precision.diagonal() += st.rho2.cwiseInverse();
    rhs = z.cwiseProduct(stats.cross.row(g).transpose()) / st.phi2(g);
    (void)k;
  }

  const Dataset* ds_;
  MogpHyperparams hp_;
  PriorConfig prior_;
  std::vector<SubjectCache> caches_;
};

// ---------------------------------------------------------------------------
// Chains

struct ChainConfig {
  long iterations = 100000;
  double burnin_fraction = 0.2;
  long stride = 200;
  std::uint64_t seed = 1;

  long burnin() const { return static_cast<long>(std::floor(iterations * burnin_fraction)); }
  long stored_draws() const { return (iterations - burnin()) / stride; }

  void validate() const {
    detail::require(iterations >= 1, "ChainConfig: iterations must be positive");
    detail::require(burnin_fraction >= 0.0 && burnin_fraction < 1.0,
                    "ChainConfig: burn-in fraction must lie in [0, 1)");
    detail::require(stride >= 1, "ChainConfig: stride must be positive");
  }
};

/// Thinned post-burn-in draws of one chain.
struct ChainSamples {
  ChainConfig config;
  std::vector<LatentState> draws;
  std::vector<long> sweeps;  ///< 1-based sweep index of each stored draw
};

/// Run S sweeps from `init` and keep every stride-th post-burn-in state.
inline ChainSamples run_chain(const GibbsSampler& sampler, const ChainConfig& config,
                              LatentState init) {
  config.validate();
  init.validate(sampler.dataset());
  ChainSamples out;
  out.config = config;
  out.draws.reserve(static_cast<std::size_t>(config.stored_draws()));
  Rng rng(config.seed);
  const long burnin = config.burnin();
  for (long s = 1; s <= config.iterations; ++s) {
    try {
      sampler.sweep(init, rng);
    } catch (const NumericalError& e) {
      throw NumericalError("sweep " + std::to_string(s) + ": " + e.what());
    }
    if (s > burnin && (s - burnin) % config.stride == 0) {
      out.draws.push_back(init);
      out.sweeps.push_back(s);
    }
  }
  return out;
}

inline ChainSamples run_chain(const Dataset& ds, const MogpHyperparams& hp, const PriorConfig& prior,
                              const ChainConfig& config, LatentState init) {
  GibbsSampler sampler(ds, hp, prior);
  return run_chain(sampler, config, std::move(init));
}

// ---------------------------------------------------------------------------
// Posterior predictive

/// MOGP conditional of factor scores at new times given the scores on the
/// full dataset grid. New times already on the grid are copied exactly.
class ScorePredictor {
 public:
  ScorePredictor(const MogpHyperparams& hp, const TimeGrid& grid, const TimeGrid& new_times)
      : hp_(hp), grid_(grid), new_times_(new_times) {
    hp_.validate();
    detail::require(!new_times.empty(), "posterior_predictive: no prediction times");
    std::vector<double> off;
    for (int m = 0; m < new_times.size(); ++m) {
      const auto on = grid.index_of(new_times[m]);
      on_grid_.push_back(on ? *on : -1);
      if (!on) off.push_back(new_times[m]);
    }
    off_grid_ = TimeGrid(off);
    const int k = hp_.k();
    const int q = grid.size();
    const int r = off_grid_.size();
    if (r == 0) return;
    const Eigen::VectorXd d = factor_variances(hp_);
    Eigen::VectorXd sg(k * q), sr(k * r);
    for (int a = 0; a < k; ++a) {
      sg.segment(a * q, q).setConstant(1.0 / std::sqrt(d(a)));
      sr.segment(a * r, r).setConstant(1.0 / std::sqrt(d(a)));
    }
    const Eigen::MatrixXd Kgg = sg.asDiagonal() * assemble_covariance(hp_, grid) * sg.asDiagonal();
    const Eigen::MatrixXd Krg =
        sr.asDiagonal() * assemble_cross_covariance(hp_, off_grid_, grid) * sg.asDiagonal();
    const Eigen::MatrixXd Krr =
        sr.asDiagonal() * assemble_covariance(hp_, off_grid_) * sr.asDiagonal();
    Eigen::MatrixXd joint(k * (q + r), k * (q + r));
    joint << Kgg, Krg.transpose(), Krg, Krr;
    const auto llt = cholesky_or_throw(joint, hp_, "posterior_predictive");
    const Eigen::MatrixXd chol = llt.matrixL();
    const Eigen::MatrixXd L11 = chol.topLeftCorner(k * q, k * q);
    map_ = L11.triangularView<Eigen::Lower>()
               .transpose()
               .solve(chol.bottomLeftCorner(k * r, k * q).transpose())
               .transpose();
    cond_chol_ = chol.bottomRightCorner(k * r, k * r);
    grid_mean_ = mean_vector(hp_, q);
    new_mean_ = mean_vector(hp_, r);
  }

  /// Mean (k x m) and covariance (vec layout over off-grid times) of the scores.
  GaussianConditional off_grid_moments(const Eigen::MatrixXd& Y_aug) const {
    GaussianConditional out;
    if (off_grid_.empty()) return out;
    out.mean = new_mean_ + map_ * (vec_scores(Y_aug) - grid_mean_);
    out.covariance = cond_chol_ * cond_chol_.transpose();
    return out;
  }

  const TimeGrid& off_grid_times() const { return off_grid_; }

  /// One draw of the k x m score matrix at the new times.
  Eigen::MatrixXd sample(const Eigen::MatrixXd& Y_aug, Rng& rng) const {
    const int k = hp_.k();
    const int m = new_times_.size();
    const int r = off_grid_.size();
    Eigen::MatrixXd out(k, m);
    Eigen::VectorXd off;
    if (r > 0) {
      off = new_mean_ + map_ * (vec_scores(Y_aug) - grid_mean_) +
            cond_chol_ * rng.normal_vector(k * r);
    }
    int next_off = 0;
    for (int j = 0; j < m; ++j) {
      const int idx = on_grid_[static_cast<std::size_t>(j)];
      if (idx >= 0) {
        out.col(j) = Y_aug.col(idx);
      } else {
        for (int a = 0; a < k; ++a) out(a, j) = off(a * r + next_off);
        ++next_off;
      }
    }
    return out;
  }

 private:
  MogpHyperparams hp_;
  TimeGrid grid_;
  TimeGrid new_times_;
  TimeGrid off_grid_;
  std::vector<int> on_grid_;
  Eigen::MatrixXd map_;
  Eigen::MatrixXd cond_chol_;
  Eigen::VectorXd grid_mean_;
  Eigen::VectorXd new_mean_;
};

/// One p x m draw of subject i's biomarkers at new times for every stored
/// draw: scores from the MOGP conditional, then the observation model.
inline std::vector<Eigen::MatrixXd> posterior_predictive(const Dataset& ds, int i,
                                                         const TimeGrid& new_times,
                                                         const std::vector<LatentState>& draws,
                                                         const MogpHyperparams& hp, Rng& rng) {
  detail::require(i >= 0 && i < ds.n(), "posterior_predictive: unknown subject");
  detail::require(!draws.empty(), "posterior_predictive: no posterior draws");
  const ScorePredictor predictor(hp, ds.grid(), new_times);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(draws.size());
  for (const auto& st : draws) {
    const Eigen::MatrixXd Ynew = predictor.sample(st.Y[static_cast<std::size_t>(i)], rng);
    Eigen::MatrixXd X = st.loadings() * Ynew;
    for (int g = 0; g < ds.p(); ++g) {
      const double sd = std::sqrt(st.phi2(g));
      for (Eigen::Index j = 0; j < X.cols(); ++j) X(g, j) += st.M(i, g) + sd * rng.normal();
    }
    out.push_back(std::move(X));
  }
  return out;
}

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> values, double prob) {
  detail::require(!values.empty(), "quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Median and central 95% interval of predictive draws, per biomarker and time.
struct PredictiveSummary {
  Eigen::MatrixXd median, lower, upper, mean;  // p x m
};

inline PredictiveSummary summarize_predictive(const std::vector<Eigen::MatrixXd>& draws) {
  detail::require(!draws.empty(), "summarize_predictive: no draws");
  const auto p = draws.front().rows();
  const auto m = draws.front().cols();
  PredictiveSummary out;
  out.median.resize(p, m);
  out.lower.resize(p, m);
  out.upper.resize(p, m);
  out.mean.resize(p, m);
  std::vector<double> v(draws.size());
  for (Eigen::Index g = 0; g < p; ++g) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double sum = 0.0;
      for (std::size_t d = 0; d < draws.size(); ++d) {
        v[d] = draws[d](g, j);
        sum += v[d];
      }
      out.mean(g, j) = sum / static_cast<double>(draws.size());
      out.median(g, j) = quantile(v, 0.5);
      out.lower(g, j) = quantile(v, 0.025);
      out.upper(g, j) = quantile(v, 0.975);
    }
  }
  return out;
}

}  // namespace dsbfa

#endif  // DSBFA_GIBBS_HPP
