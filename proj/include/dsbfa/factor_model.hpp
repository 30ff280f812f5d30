#ifndef DSBFA_FACTOR_MODEL_HPP
#define DSBFA_FACTOR_MODEL_HPP

// Sparse factor model with MOGP factor trajectories:
//
//   X_i = M_i + L Y_i + E_i,   L = A o Z,   E_i ~ N(0, diag(phi^2))
//   vec(Y_i^T) ~ MVN(C_i, Sigma_Y(Theta, t_i))
//
// with point-mass mixture priors on the loadings and conjugate priors on the
// variances. This header holds the state container, the priors, the
// complete-data log density and the penalized objective maximized over the
// MOGP hyperparameters.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/random.hpp"

namespace dsbfa {

/// Hyperprior constants and the fixed per-biomarker means.
struct PriorConfig {
  double c0 = 1.0, d0 = 1.0;  ///< Beta prior on inclusion probabilities
  double c1 = 1.0, d1 = 1.0;  ///< Inverse-Gamma prior on slab variances rho^2
  double c2 = 1.0, d2 = 1.0;  ///< Inverse-Gamma prior on mean variances sigma^2
  double c3 = 1.0, d3 = 1.0;  ///< Inverse-Gamma prior on residual variances phi^2
  Eigen::VectorXd mu;         ///< fixed prior mean of each biomarker

  /// c0 = 0.1 p, d0 = 0.9 p (expected inclusion 0.1), unit Inverse-Gamma
  /// constants, mu = empirical biomarker means.
  static PriorConfig defaults(const Dataset& ds) {
    PriorConfig prior;
    prior.c0 = 0.1 * ds.p();
    prior.d0 = 0.9 * ds.p();
    prior.mu = ds.biomarker_means();
    return prior;
  }

  double expected_inclusion() const { return c0 / (c0 + d0); }

  void validate(int p) const {
    detail::require(c0 > 0 && d0 > 0 && c1 > 0 && d1 > 0 && c2 > 0 && d2 > 0 && c3 > 0 && d3 > 0,
                    "PriorConfig: all hyperprior constants must be positive");
    detail::require(mu.size() == p, "PriorConfig: mu must have one entry per biomarker");
  }
};

/// The sampled parameter block {M, Y_aug, A, Z, rho^2, pi, sigma^2, phi^2}.
struct LatentState {
  Eigen::MatrixXd M;               ///< n x p subject-biomarker means
  std::vector<Eigen::MatrixXd> Y;  ///< per subject, k x q scores on the full grid
  Eigen::MatrixXd A;               ///< p x k coefficients
  Eigen::MatrixXi Z;               ///< p x k inclusion indicators
  Eigen::VectorXd rho2;            ///< k slab variances
  Eigen::VectorXd pi;              ///< k inclusion probabilities
  Eigen::VectorXd sigma2;          ///< p mean variances
  Eigen::VectorXd phi2;            ///< p residual variances

  int k() const { return static_cast<int>(A.cols()); }

  Eigen::MatrixXd loadings() const { return A.cwiseProduct(Z.cast<double>()); }

  /// k x q_i scores of subject i at its own observation times.
  Eigen::MatrixXd observed_scores(const Subject& s, int i) const {
    const auto& Yi = Y[static_cast<std::size_t>(i)];
    Eigen::MatrixXd out(Yi.rows(), s.q());
    for (int j = 0; j < s.q(); ++j) out.col(j) = Yi.col(s.grid_index[static_cast<std::size_t>(j)]);
    return out;
  }

  void validate(const Dataset& ds) const {
    const int k = this->k();
    detail::require(k >= 1, "LatentState: k must be positive");
    detail::require(M.rows() == ds.n() && M.cols() == ds.p(), "LatentState: M must be n x p");
    detail::require(static_cast<int>(Y.size()) == ds.n(), "LatentState: one score matrix per subject");
    for (const auto& Yi : Y) {
      detail::require(Yi.rows() == k && Yi.cols() == ds.q(), "LatentState: scores must be k x q");
    }
    detail::require(A.rows() == ds.p() && Z.rows() == ds.p() && Z.cols() == k,
                    "LatentState: A and Z must be p x k");
    detail::require(((Z.array() == 0) || (Z.array() == 1)).all(), "LatentState: Z must be binary");
    detail::require(rho2.size() == k && pi.size() == k, "LatentState: rho2 and pi need length k");
    detail::require(sigma2.size() == ds.p() && phi2.size() == ds.p(),
                    "LatentState: sigma2 and phi2 need length p");
    detail::require((rho2.array() > 0).all() && (sigma2.array() > 0).all() &&
                        (phi2.array() > 0).all(),
                    "LatentState: variances must be positive");
    detail::require((pi.array() > 0).all() && (pi.array() < 1).all(),
                    "LatentState: inclusion probabilities must lie in (0, 1)");
  }
};

/// Diffuse but proper starting state: Z ~ Bernoulli(E[pi]), A and Y ~ N(0, 1),
/// mu_ig = mu_g, all variances 1.
inline LatentState initial_state(const Dataset& ds, int k, const PriorConfig& prior, Rng& rng) {
  detail::require(k >= 1, "initial_state: k must be positive");
  prior.validate(ds.p());
  LatentState st;
  const double pi0 = prior.expected_inclusion();
  st.M.resize(ds.n(), ds.p());
  for (int i = 0; i < ds.n(); ++i) st.M.row(i) = prior.mu.transpose();
  st.Y.resize(static_cast<std::size_t>(ds.n()));
  for (auto& Yi : st.Y) {
    Yi.resize(k, ds.q());
    for (Eigen::Index r = 0; r < Yi.size(); ++r) Yi.data()[r] = rng.normal();
  }
  st.A.resize(ds.p(), k);
  st.Z.resize(ds.p(), k);
  for (int g = 0; g < ds.p(); ++g) {
    for (int a = 0; a < k; ++a) {
      st.A(g, a) = rng.normal();
      st.Z(g, a) = rng.bernoulli(pi0) ? 1 : 0;
    }
  }
  st.rho2 = Eigen::VectorXd::Ones(k);
  st.pi = Eigen::VectorXd::Constant(k, pi0);
  st.sigma2 = Eigen::VectorXd::Ones(ds.p());
  st.phi2 = Eigen::VectorXd::Ones(ds.p());
  return st;
}

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double log_normal_density(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

inline double log_inverse_gamma_density(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

inline double log_beta_density(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
         (b - 1.0) * std::log1p(-x);
}

/// log MVN(y | mean, L L^T) given the Cholesky factor.
inline double log_mvn_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                              const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::VectorXd z = llt.matrixL().solve(y - mean);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(y.size()) * kLog2Pi + log_det + z.squaredNorm());
}

}  // namespace detail

/// vec(Y^T) of a k x q score matrix in the factor-major layout.
inline Eigen::VectorXd vec_scores(const Eigen::MatrixXd& Y) {
  Eigen::VectorXd v(Y.size());
  const auto q = Y.cols();
  for (Eigen::Index a = 0; a < Y.rows(); ++a) v.segment(a * q, q) = Y.row(a).transpose();
  return v;
}

/// C_aug: each c_a repeated q times, factor-major.
inline Eigen::VectorXd mean_vector(const MogpHyperparams& hp, int q) {
  Eigen::VectorXd m(hp.k() * q);
  for (int a = 0; a < hp.k(); ++a) m.segment(a * q, q).setConstant(hp.c(a));
  return m;
}

/// Complete-data log density split by factor.
struct LogDensityTerms {
  double observation = 0.0;   ///< X given M, L, Y, phi
  double factor_scores = 0.0; ///< Y_aug under the unit-variance MOGP prior
  double means = 0.0;         ///< M given sigma
  double coefficients = 0.0;  ///< A given rho
  double indicators = 0.0;    ///< Z given pi
  double hyperpriors = 0.0;   ///< pi, rho^2, sigma^2, phi^2

  double total() const {
    return observation + factor_scores + means + coefficients + indicators + hyperpriors;
  }
};

/// Gaussian log density of the observations given the state.
inline double observation_loglik(const Dataset& ds, const LatentState& st) {
  const Eigen::MatrixXd L = st.loadings();
  double total = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const auto& s = ds.subject(i);
    const Eigen::MatrixXd fit = L * st.observed_scores(s, i);
    for (int j = 0; j < s.q(); ++j) {
      for (int g = 0; g < ds.p(); ++g) {
        total += detail::log_normal_density(s.X(g, j), st.M(i, g) + fit(g, j), st.phi2(g));
      }
    }
  }
  return total;
}

/// Every term of ln f(X, Omega_aug | Theta, C). Factor scores use the
/// unit-variance (normalized) covariance on the dataset grid.
inline LogDensityTerms complete_data_terms(const Dataset& ds, const LatentState& st,
                                           const MogpHyperparams& hp, const PriorConfig& prior) {
  st.validate(ds);
  detail::require(hp.k() == st.k(), "complete_data_loglik: hyperparameters have wrong k");
  prior.validate(ds.p());
  LogDensityTerms terms;
  terms.observation = observation_loglik(ds, st);

  const Eigen::MatrixXd sigma = assemble_normalized_covariance(hp, ds.grid());
  const auto llt = cholesky_or_throw(sigma, hp, "complete_data_loglik");
  const Eigen::VectorXd mean = mean_vector(hp, ds.q());
  for (const auto& Yi : st.Y) terms.factor_scores += detail::log_mvn_density(vec_scores(Yi), mean, llt);

  for (int i = 0; i < ds.n(); ++i) {
    for (int g = 0; g < ds.p(); ++g) {
      terms.means += detail::log_normal_density(st.M(i, g), prior.mu(g), st.sigma2(g));
    }
  }
  for (int g = 0; g < ds.p(); ++g) {
    for (int a = 0; a < st.k(); ++a) {
      terms.coefficients += detail::log_normal_density(st.A(g, a), 0.0, st.rho2(a));
      terms.indicators += st.Z(g, a) == 1 ? std::log(st.pi(a)) : std::log1p(-st.pi(a));
    }
  }
  for (int a = 0; a < st.k(); ++a) {
    terms.hyperpriors += detail::log_beta_density(st.pi(a), prior.c0, prior.d0) +
                         detail::log_inverse_gamma_density(st.rho2(a), prior.c1, prior.d1);
  }
  for (int g = 0; g < ds.p(); ++g) {
    terms.hyperpriors += detail::log_inverse_gamma_density(st.sigma2(g), prior.c2, prior.d2) +
                         detail::log_inverse_gamma_density(st.phi2(g), prior.c3, prior.d3);
  }
  return terms;
}

inline double complete_data_loglik(const Dataset& ds, const LatentState& st,
                                   const MogpHyperparams& hp, const PriorConfig& prior) {
  return complete_data_terms(ds, st, hp, prior).total();
}

// ---------------------------------------------------------------------------
// Penalized objective over the MOGP hyperparameters.

/// Unconstrained coordinates of the hyperparameters. Per factor a the block
/// [v0_a, log v1_a, log B0_a, log B1_a, c_a], then log psi2 last.
inline constexpr int kParamsPerFactor = 5;

inline int parameter_count(int k) { return kParamsPerFactor * k + 1; }

inline Eigen::VectorXd pack_parameters(const MogpHyperparams& hp, double floor = 1e-6) {
  const int k = hp.k();
  Eigen::VectorXd theta(parameter_count(k));
  for (int a = 0; a < k; ++a) {
    theta(kParamsPerFactor * a + 0) = hp.v0(a);
    theta(kParamsPerFactor * a + 1) = std::log(std::max(std::abs(hp.v1(a)), floor));
    theta(kParamsPerFactor * a + 2) = std::log(std::max(hp.B0(a), floor));
    theta(kParamsPerFactor * a + 3) = std::log(std::max(hp.B1(a), floor));
    theta(kParamsPerFactor * a + 4) = hp.c(a);
  }
  theta(kParamsPerFactor * k) = std::log(std::max(hp.psi2, floor));
  return theta;
}

inline MogpHyperparams unpack_parameters(const Eigen::VectorXd& theta, int k) {
  detail::require(theta.size() == parameter_count(k), "unpack_parameters: wrong length");
  MogpHyperparams hp = MogpHyperparams::uniform(k, 0, 0, 1, 1, 0);
  for (int a = 0; a < k; ++a) {
    hp.v0(a) = theta(kParamsPerFactor * a + 0);
    hp.v1(a) = std::exp(theta(kParamsPerFactor * a + 1));
    hp.B0(a) = std::exp(theta(kParamsPerFactor * a + 2));
    hp.B1(a) = std::exp(theta(kParamsPerFactor * a + 3));
    hp.c(a) = theta(kParamsPerFactor * a + 4);
  }
  hp.psi2 = std::exp(theta(kParamsPerFactor * k));
  return hp;
}

/// Which packed coordinates are log-transformed (and so carry a floor).
inline bool is_log_coordinate(int index, int k) {
  if (index == kParamsPerFactor * k) return true;
  const int slot = index % kParamsPerFactor;
  return slot == 1 || slot == 2 || slot == 3;
}

/// sum_i ln MVN(vec(Y_i^T) | C, Sigma(Theta, t)) - lambda sum_a (B_a0 + B_a1)
/// for score samples on a common grid, with its gradient in packed
/// coordinates. The likelihood work per evaluation is O(n k^2 q^2) plus one
/// O(k^3 q^3) factorization.
class PenalizedObjective {
 public:
  PenalizedObjective(const std::vector<Eigen::MatrixXd>& scores, TimeGrid grid, double lambda)
      : grid_(std::move(grid)), lambda_(lambda) {
    detail::require(!scores.empty(), "PenalizedObjective: no score samples");
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "PenalizedObjective: lambda must be >= 0");
    k_ = static_cast<int>(scores.front().rows());
    const int q = grid_.size();
    stacked_.resize(k_ * q, static_cast<Eigen::Index>(scores.size()));
    for (std::size_t i = 0; i < scores.size(); ++i) {
      detail::require(scores[i].rows() == k_ && scores[i].cols() == q,
                      "PenalizedObjective: every score sample must be k x q on the grid");
      stacked_.col(static_cast<Eigen::Index>(i)) = vec_scores(scores[i]);
    }
  }

  int k() const { return k_; }
  int n() const { return static_cast<int>(stacked_.cols()); }
  double lambda() const { return lambda_; }
  const TimeGrid& grid() const { return grid_; }

  double penalty(const MogpHyperparams& hp) const { return lambda_ * (hp.B0.sum() + hp.B1.sum()); }

  /// Objective value; throws NumericalError for a non-PD covariance.
  double value(const MogpHyperparams& hp) const {
    detail::require(hp.k() == k_, "PenalizedObjective: hyperparameters have wrong k");
    const Eigen::MatrixXd sigma = assemble_covariance(hp, grid_);
    const auto llt = cholesky_or_throw(sigma, hp, "penalized_objective");
    const Eigen::MatrixXd centred = stacked_.colwise() - mean_vector(hp, grid_.size());
    const Eigen::MatrixXd z = llt.matrixL().solve(centred);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double d = static_cast<double>(sigma.rows());
    return -0.5 * (n() * (d * detail::kLog2Pi + log_det) + z.squaredNorm()) - penalty(hp);
  }

  /// Value and gradient with respect to the packed coordinates.
  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    const MogpHyperparams hp = unpack_parameters(theta, k_);
    const int q = grid_.size();
    const Eigen::MatrixXd sigma = assemble_covariance(hp, grid_);
    const auto llt = cholesky_or_throw(sigma, hp, "penalized_objective");
    const Eigen::MatrixXd centred = stacked_.colwise() - mean_vector(hp, q);
    const Eigen::MatrixXd alpha = llt.solve(centred);  // Sigma^-1 (y_i - C)
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double d = static_cast<double>(sigma.rows());
    const double quad = (centred.array() * alpha.array()).sum();
    const double value = -0.5 * (n() * (d * detail::kLog2Pi + log_det) + quad) - penalty(hp);

    // d/dtheta = 1/2 tr(W dSigma/dtheta), W = sum_i alpha_i alpha_i^T - n Sigma^-1
    Eigen::MatrixXd W = alpha * alpha.transpose();
    W.noalias() -= static_cast<double>(n()) * llt.solve(Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols()));

    grad.setZero(parameter_count(k_));
    const double sqrt_pi = std::sqrt(std::numbers::pi);
    for (int a = 0; a < k_; ++a) {
      const int base = kParamsPerFactor * a;
      const double v0 = hp.v0(a), v1 = hp.v1(a), b0 = hp.B0(a), b1 = hp.B1(a);
      for (int j = 0; j < q; ++j) {
        for (int l = 0; l < q; ++l) {
          const double dt = grid_[j] - grid_[l];
          const double w = W(a * q + j, a * q + l);
          const double e0 = std::exp(-0.25 * b0 * b0 * dt * dt);
          const double e1 = std::exp(-0.25 * b1 * b1 * dt * dt);
          const double t0 = v0 * v0 * sqrt_pi / b0 * e0;
          const double t1 = v1 * v1 * sqrt_pi / b1 * e1;
          grad(base + 0) += 0.5 * w * 2.0 * v0 * sqrt_pi / b0 * e0;
          grad(base + 1) += 0.5 * w * 2.0 * t1;
          grad(base + 2) += 0.5 * w * t0 * (-1.0 - 0.5 * b0 * b0 * dt * dt);
          grad(base + 3) += 0.5 * w * t1 * (-1.0 - 0.5 * b1 * b1 * dt * dt);
        }
      }
      for (int b = a + 1; b < k_; ++b) {
        const double ba2 = b0 * b0;
        const double bb2 = hp.B0(b) * hp.B0(b);
        const double s = ba2 + bb2;
        const double r = ba2 * bb2 / s;
        const double amp = std::sqrt(2.0 * std::numbers::pi / s);
        for (int j = 0; j < q; ++j) {
          for (int l = 0; l < q; ++l) {
            const double dt = grid_[j] - grid_[l];
            // Blocks (a,b) and (b,a) are transposes; W is symmetric.
            const double w = 2.0 * W(a * q + j, b * q + l);
            const double e = amp * std::exp(-0.5 * r * dt * dt);
            const double kab = hp.v0(a) * hp.v0(b) * e;
            grad(base + 0) += 0.5 * w * hp.v0(b) * e;
            grad(kParamsPerFactor * b + 0) += 0.5 * w * hp.v0(a) * e;
            grad(base + 2) += 0.5 * w * kab * (-ba2 / s - r * bb2 * dt * dt / s);
            grad(kParamsPerFactor * b + 2) += 0.5 * w * kab * (-bb2 / s - r * ba2 * dt * dt / s);
          }
        }
      }
      grad(base + 4) = alpha.middleRows(a * q, q).sum();
      grad(base + 2) -= lambda_ * b0;
      grad(base + 3) -= lambda_ * b1;
    }
    grad(kParamsPerFactor * k_) = 0.5 * W.trace() * hp.psi2;
    return value;
  }

 private:
  TimeGrid grid_;
  double lambda_;
  int k_ = 0;
  Eigen::MatrixXd stacked_;  // kq x n, column i = vec(Y_i^T)
};

/// Penalized objective for score samples on the common grid.
inline double penalized_objective(const std::vector<Eigen::MatrixXd>& scores,
                                  const MogpHyperparams& hp, const TimeGrid& grid, double lambda) {
  return PenalizedObjective(scores, grid, lambda).value(hp);
}

}  // namespace dsbfa

#endif  // DSBFA_FACTOR_MODEL_HPP
