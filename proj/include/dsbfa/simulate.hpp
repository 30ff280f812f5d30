#ifndef DSBFA_SIMULATE_HPP
#define DSBFA_SIMULATE_HPP

// Synthetic longitudinal datasets with known loadings and factor correlations.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "dsbfa/alignment.hpp"
#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/io.hpp"
#include "dsbfa/random.hpp"

namespace dsbfa {

/// Pairwise 0.5 between factors 1-2 and 3-4, zero elsewhere (truncated to k).
/// A stand-in chosen for this library; it is not a published matrix.
inline Eigen::MatrixXd default_factor_correlation(int k) {
  detail::require(k >= 1, "default_factor_correlation: k must be positive");
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(k, k);
  for (int a = 0; a + 1 < k; a += 2) R(a, a + 1) = R(a + 1, a) = 0.5;
  return R;
}

struct SimConfig {
  int n = 50;
  int p = 100;
  int k = 4;
  int q = 8;
  std::vector<double> times;        ///< empty: q evenly spaced points on [0, 1]
  Eigen::MatrixXd correlation;      ///< k x k factor correlation; empty: default_factor_correlation
  double temporal_precision = 3.0;  ///< B of the within-factor kernel exp(-(B dt)^2 / 2)
  double temporal_nugget = 0.01;    ///< share of unit factor variance that is white noise
  double loading_mean = 4.0;
  double loading_sd = 1.0;
  double sparsity = 0.1;            ///< E[pi_a]; pi_a ~ Beta(sparsity p, (1 - sparsity) p)
  double mu_low = 4.0;
  double mu_high = 16.0;
  double sigma = 0.5;               ///< sd of subject means around mu_g
  double phi = 0.5;                 ///< residual sd
  int replicates = 1;
  std::uint64_t seed = 1;

  TimeGrid grid() const {
    if (!times.empty()) return TimeGrid(times);
    std::vector<double> t(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j) t[static_cast<std::size_t>(j)] = q == 1 ? 0.0 : double(j) / (q - 1);
    return TimeGrid(std::move(t));
  }

  Eigen::MatrixXd factor_correlation() const {
    return correlation.size() == 0 ? default_factor_correlation(k) : correlation;
  }

  void validate() const {
    detail::require(n >= 1 && p >= 1 && k >= 1 && q >= 1, "SimConfig: n, p, k and q must be positive");
    detail::require(times.empty() || static_cast<int>(times.size()) == q,
                    "SimConfig: times must list q points");
    grid();
    const Eigen::MatrixXd R = factor_correlation();
    detail::require(R.rows() == k && R.cols() == k, "SimConfig: correlation must be k x k");
    detail::require((R - R.transpose()).cwiseAbs().maxCoeff() == 0.0, "SimConfig: correlation must be symmetric");
    detail::require((R.diagonal().array() == 1.0).all(), "SimConfig: correlation must have unit diagonal");
    if (Eigen::LLT<Eigen::MatrixXd>(R).info() != Eigen::Success) {
      throw InvalidArgument("SimConfig: correlation matrix is not positive definite");
    }
    detail::require(temporal_precision > 0 && loading_sd > 0 && sigma > 0 && phi > 0,
                    "SimConfig: scale parameters must be positive");
    detail::require(temporal_nugget >= 0 && temporal_nugget < 1, "SimConfig: temporal_nugget must be in [0, 1)");
    detail::require(sparsity > 0 && sparsity < 1, "SimConfig: sparsity must be in (0, 1)");
    detail::require(mu_low <= mu_high, "SimConfig: mu_low must not exceed mu_high");
    detail::require(replicates >= 1, "SimConfig: replicates must be positive");
  }
};

/// k q x k q covariance of vec(Y_i) in factor-major order: R (x) K_time.
inline Eigen::MatrixXd simulation_score_covariance(const SimConfig& cfg) {
  const TimeGrid grid = cfg.grid();
  const int q = grid.size();
  Eigen::MatrixXd K(q, q);
  for (int s = 0; s < q; ++s) {
    for (int t = 0; t < q; ++t) {
      const double d = cfg.temporal_precision * (grid[s] - grid[t]);
      K(s, t) = (1.0 - cfg.temporal_nugget) * std::exp(-0.5 * d * d) + (s == t ? cfg.temporal_nugget : 0.0);
    }
  }
  const Eigen::MatrixXd R = cfg.factor_correlation();
  Eigen::MatrixXd out(cfg.k * q, cfg.k * q);
  for (int a = 0; a < cfg.k; ++a) {
    for (int b = 0; b < cfg.k; ++b) out.block(a * q, b * q, q, q) = R(a, b) * K;
  }
  return out;
}

struct SimTruth {
  Eigen::MatrixXd L;               ///< p x k loadings
  Eigen::MatrixXi Z;               ///< p x k inclusion
  Eigen::VectorXd pi;              ///< k inclusion probabilities
  std::vector<Eigen::MatrixXd> Y;  ///< per subject k x q scores
  Eigen::MatrixXd M;               ///< n x p subject means
  Eigen::VectorXd mu;              ///< p biomarker-level means
  Eigen::MatrixXd correlation;     ///< k x k factor correlation
  Eigen::MatrixXd score_covariance;
  std::vector<double> times;
};

struct Simulated {
  Dataset data;
  SimTruth truth;
};

inline Simulated generate(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  const TimeGrid grid = cfg.grid();
  const int n = cfg.n, p = cfg.p, k = cfg.k, q = grid.size();
  SimTruth truth;
  truth.times = grid.values();
  truth.correlation = cfg.factor_correlation();
  truth.score_covariance = simulation_score_covariance(cfg);
  const Eigen::LLT<Eigen::MatrixXd> llt(truth.score_covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("simulation score covariance is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  truth.pi.resize(k);
  truth.Z.resize(p, k);
  truth.L = Eigen::MatrixXd::Zero(p, k);
  const double c0 = cfg.sparsity * p, d0 = (1.0 - cfg.sparsity) * p;
  for (int a = 0; a < k; ++a) {
    truth.pi(a) = rng.beta(c0, d0);
    for (int g = 0; g < p; ++g) {
      truth.Z(g, a) = rng.uniform() < truth.pi(a) ? 1 : 0;
      if (truth.Z(g, a)) truth.L(g, a) = rng.normal(cfg.loading_mean, cfg.loading_sd);
    }
  }
  truth.mu = Eigen::VectorXd::LinSpaced(p, cfg.mu_low, cfg.mu_high);

  std::vector<std::string> biomarkers;
  for (int g = 0; g < p; ++g) biomarkers.push_back(fmt::format("g{}", g + 1));
  std::vector<Subject> subjects;
  truth.M.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < p; ++g) truth.M(i, g) = rng.normal(truth.mu(g), cfg.sigma);
    const Eigen::VectorXd v = chol * rng.normal_vector(k * q);
    Eigen::MatrixXd Yi(k, q);
    for (int a = 0; a < k; ++a) Yi.row(a) = v.segment(a * q, q).transpose();
    Subject s;
    s.id = fmt::format("s{}", i + 1);
    s.times = grid;
    s.X = truth.L * Yi;
    for (int j = 0; j < q; ++j) {
      for (int g = 0; g < p; ++g) s.X(g, j) += truth.M(i, g) + rng.normal(0.0, cfg.phi);
    }
    truth.Y.push_back(std::move(Yi));
    subjects.push_back(std::move(s));
  }
  return {Dataset(std::move(biomarkers), std::move(subjects)), std::move(truth)};
}

/// Replicate r draws from its own stream derived from the config seed.
inline Simulated generate_replicate(const SimConfig& cfg, int replicate) {
  Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(replicate));
  return generate(cfg, rng);
}

/// Mean |est - truth| over the strictly lower triangle.
inline double mad_cross_correlation(const Eigen::MatrixXd& estimated, const Eigen::MatrixXd& truth) {
  detail::require(estimated.rows() == estimated.cols() && truth.rows() == truth.cols(),
                  "mad_cross_correlation: matrices must be square");
  detail::require(estimated.rows() == truth.rows(), "mad_cross_correlation: dimension mismatch");
  detail::require((estimated.diagonal().array() - 1.0).abs().maxCoeff() < 1e-8 &&
                      (truth.diagonal().array() - 1.0).abs().maxCoeff() < 1e-8,
                  "mad_cross_correlation: correlation matrices need unit diagonals");
  const Eigen::Index k = truth.rows();
  if (k < 2) return 0.0;
  double s = 0.0;
  for (Eigen::Index a = 1; a < k; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) s += std::abs(estimated(a, b) - truth(a, b));
  }
  return s / static_cast<double>(k * (k - 1) / 2);
}

struct RecoveryScore {
  SignedPermutation sp;  ///< maps estimated factors onto truth factors
  double loading_mad = 0.0;
  double correlation_mad = 0.0;
  Eigen::MatrixXd aligned_correlation;
};

/// Align estimated loadings to the truth, carry the signed permutation onto
/// the estimated correlation matrix, then score it.
inline RecoveryScore score_recovery(const Eigen::MatrixXd& estimated_loadings,
                                    const Eigen::MatrixXd& estimated_correlation, const SimTruth& truth) {
  const Alignment al = align_to_reference(estimated_loadings, truth.L);
  RecoveryScore out;
  out.sp = al.sp;
  out.loading_mad = al.mad;
  out.aligned_correlation = apply_to_correlation(al.sp, estimated_correlation);
  out.correlation_mad = mad_cross_correlation(out.aligned_correlation, truth.correlation);
  return out;
}

inline Json sim_config_to_json(const SimConfig& cfg) {
  Json j;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["k"] = cfg.k;
  j["q"] = cfg.q;
  j["times"] = cfg.grid().values();
  j["correlation"] = detail::matrix_to_json(cfg.factor_correlation());
  j["temporal_precision"] = cfg.temporal_precision;
  j["temporal_nugget"] = cfg.temporal_nugget;
  j["loading_mean"] = cfg.loading_mean;
  j["loading_sd"] = cfg.loading_sd;
  j["sparsity"] = cfg.sparsity;
  j["mu_low"] = cfg.mu_low;
  j["mu_high"] = cfg.mu_high;
  j["sigma"] = cfg.sigma;
  j["phi"] = cfg.phi;
  j["replicates"] = cfg.replicates;
  j["seed"] = cfg.seed;
  return j;
}

/// Missing keys keep their defaults.
inline SimConfig sim_config_from_json(const Json& j) {
  SimConfig cfg;
  try {
    cfg.n = j.value("n", cfg.n);
    cfg.p = j.value("p", cfg.p);
    cfg.k = j.value("k", cfg.k);
    cfg.q = j.value("q", cfg.q);
    if (j.contains("times")) cfg.times = j.at("times").get<std::vector<double>>();
    if (j.contains("correlation")) cfg.correlation = detail::matrix_from_json<double>(j.at("correlation"));
    cfg.temporal_precision = j.value("temporal_precision", cfg.temporal_precision);
    cfg.temporal_nugget = j.value("temporal_nugget", cfg.temporal_nugget);
    cfg.loading_mean = j.value("loading_mean", cfg.loading_mean);
    cfg.loading_sd = j.value("loading_sd", cfg.loading_sd);
    cfg.sparsity = j.value("sparsity", cfg.sparsity);
    cfg.mu_low = j.value("mu_low", cfg.mu_low);
    cfg.mu_high = j.value("mu_high", cfg.mu_high);
    cfg.sigma = j.value("sigma", cfg.sigma);
    cfg.phi = j.value("phi", cfg.phi);
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("simulation config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline Json truth_to_json(const SimTruth& t) {
  Json j;
  j["L"] = detail::matrix_to_json(t.L);
  j["Z"] = detail::matrix_to_json(t.Z);
  j["pi"] = detail::vector_to_json(t.pi);
  j["M"] = detail::matrix_to_json(t.M);
  j["mu"] = detail::vector_to_json(t.mu);
  j["correlation"] = detail::matrix_to_json(t.correlation);
  j["times"] = t.times;
  Json ys = Json::array();
  for (const auto& Yi : t.Y) ys.push_back(detail::matrix_to_json(Yi));
  j["Y"] = std::move(ys);
  return j;
}

inline SimTruth truth_from_json(const Json& j) {
  try {
    SimTruth t;
    t.L = detail::matrix_from_json<double>(j.at("L"));
    t.Z = detail::matrix_from_json<int>(j.at("Z"));
    t.pi = detail::vector_from_json(j.at("pi"));
    t.M = detail::matrix_from_json<double>(j.at("M"));
    t.mu = detail::vector_from_json(j.at("mu"));
    t.correlation = detail::matrix_from_json<double>(j.at("correlation"));
    t.times = j.at("times").get<std::vector<double>>();
    for (const auto& y : j.at("Y")) t.Y.push_back(detail::matrix_from_json<double>(y));
    return t;
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed truth record: ") + e.what());
  }
}

}  // namespace dsbfa

#endif  // DSBFA_SIMULATE_HPP
