#ifndef DSBFA_TESTS_GIBBS_ORACLE_HPP
#define DSBFA_TESTS_GIBBS_ORACLE_HPP

// Dense-grid numerical posteriors for every Gibbs full conditional on the
// minimal instance (n=2, p=3, k=1, two observations per subject at different
// times). The unnormalized conditional density is the complete-data density
// with everything else held fixed, integrated by quadrature.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsbfa/factor_model.hpp"
#include "dsbfa/gibbs.hpp"
#include "test_support.hpp"

namespace dsbfa::testing {

struct MomentCheck {
  std::string name;
  double empirical_mean = 0.0, empirical_var = 0.0;
  double oracle_mean = 0.0, oracle_var = 0.0;
  double se_mean = 0.0, se_var = 0.0;

  bool pass(double nse = 3.0) const {
    return std::abs(empirical_mean - oracle_mean) <= nse * se_mean &&
           std::abs(empirical_var - oracle_var) <= nse * se_var;
  }
};

struct MinimalInstance {
  Dataset ds;
  MogpHyperparams hp;
  PriorConfig prior;
  LatentState state;
};

inline MinimalInstance minimal_instance() {
  Rng rng(424242);
  MinimalInstance inst;
  inst.ds = random_dataset(3, {{0.0, 0.4}, {0.2, 0.7}}, rng);
  inst.hp = MogpHyperparams::uniform(1, 0.8, 0.6, 3.0, 5.0, 0.1);
  inst.hp.c(0) = 0.2;
  inst.prior = PriorConfig::defaults(inst.ds);
  inst.prior.c0 = 2.0;
  inst.prior.d0 = 3.0;
  inst.prior.c1 = 5.0;
  inst.prior.d1 = 4.0;
  inst.prior.c2 = 5.0;
  inst.prior.d2 = 2.0;
  inst.prior.c3 = 5.0;
  inst.prior.d3 = 2.0;
  LatentState& st = inst.state;
  st = initial_state(inst.ds, 1, inst.prior, rng);
  st.Z.setOnes();
  st.A << 0.9, -0.6, 0.4;
  st.rho2 << 0.8;
  st.pi << 0.35;
  st.sigma2 << 0.6, 0.9, 1.3;
  st.phi2 << 0.5, 0.7, 0.4;
  for (int i = 0; i < 2; ++i)
    for (int g = 0; g < 3; ++g) st.M(i, g) = inst.prior.mu(g) + 0.3 * rng.normal();
  for (auto& Yi : st.Y)
    for (Eigen::Index r = 0; r < Yi.size(); ++r) Yi.data()[r] = 0.5 * rng.normal();
  return inst;
}

namespace detail_oracle {

inline void sample_moments(const std::vector<double>& x, double& mean, double& var, double& se_mean,
                           double& se_var) {
  const double n = static_cast<double>(x.size());
  mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  var = m2 * n / (n - 1.0);
  se_mean = std::sqrt(m2 / n);
  se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
}

/// Mean and variance of the density proportional to exp(logf) by trapezoid
/// quadrature on [lo, hi].
inline void grid_moments_1d(const std::function<double(double)>& logf, double lo, double hi,
                            int points, double& mean, double& var) {
  std::vector<double> x(static_cast<std::size_t>(points)), lf(x.size());
  double top = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < points; ++j) {
    x[static_cast<std::size_t>(j)] = lo + (hi - lo) * j / (points - 1.0);
    lf[static_cast<std::size_t>(j)] = logf(x[static_cast<std::size_t>(j)]);
    top = std::max(top, lf[static_cast<std::size_t>(j)]);
  }
  double z = 0.0, s1 = 0.0, s2 = 0.0;
  for (int j = 0; j < points; ++j) {
    const double w = (j == 0 || j == points - 1 ? 0.5 : 1.0) *
                     std::exp(lf[static_cast<std::size_t>(j)] - top);
    z += w;
    s1 += w * x[static_cast<std::size_t>(j)];
    s2 += w * x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
  }
  mean = s1 / z;
  var = s2 / z - mean * mean;
}

}  // namespace detail_oracle

/// Check one scalar block: draws from the sampler against the grid oracle.
inline MomentCheck check_scalar(const std::string& name, const std::vector<double>& draws,
                                const std::function<double(double)>& logf, bool positive) {
  MomentCheck c;
  c.name = name;
  detail_oracle::sample_moments(draws, c.empirical_mean, c.empirical_var, c.se_mean, c.se_var);
  const auto [mn, mx] = std::minmax_element(draws.begin(), draws.end());
  const double range = *mx - *mn;
  double lo = *mn - 2.0 * range;
  const double hi = *mx + 2.0 * range;
  if (positive) lo = std::max(lo, 1e-12);
  detail_oracle::grid_moments_1d(logf, lo, hi, 40001, c.oracle_mean, c.oracle_var);
  return c;
}

/// Moments of every full conditional of the minimal instance.
inline std::vector<MomentCheck> run_conditional_checks(int draws, std::uint64_t seed,
                                                       int grid_points_4d = 24) {
  const MinimalInstance inst = minimal_instance();
  const Dataset& ds = inst.ds;
  const GibbsSampler sampler(ds, inst.hp, inst.prior);
  Rng rng(seed);
  std::vector<MomentCheck> out;
  auto cdl = [&](const LatentState& st) { return complete_data_loglik(ds, st, inst.hp, inst.prior); };

  // Factor scores: 4-dimensional block per subject (two observed, two augmented).
  for (int i = 0; i < ds.n(); ++i) {
    const int dim = ds.q();
    std::vector<Eigen::VectorXd> samples;
    samples.reserve(static_cast<std::size_t>(draws));
    LatentState st = inst.state;
    for (int d = 0; d < draws; ++d) {
      sampler.sample_factor_scores(i, st, rng);
      samples.push_back(st.Y[static_cast<std::size_t>(i)].row(0).transpose());
    }
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    for (const auto& s : samples) mu += s;
    mu /= draws;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& s : samples) cov += (s - mu) * (s - mu).transpose();
    cov /= draws - 1.0;
    // Quadrature on an empirically whitened box of +-7 units per axis.
    const Eigen::MatrixXd W = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
    const int m = grid_points_4d;
    std::vector<double> axis(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) axis[static_cast<std::size_t>(j)] = -7.0 + 14.0 * j / (m - 1.0);
    std::vector<double> logw;
    std::vector<Eigen::VectorXd> pts;
    long total = 1;
    for (int d = 0; d < dim; ++d) total *= m;
    logw.reserve(static_cast<std::size_t>(total));
    pts.reserve(static_cast<std::size_t>(total));
    LatentState probe = inst.state;
    double top = -std::numeric_limits<double>::infinity();
    for (long idx = 0; idx < total; ++idx) {
      Eigen::VectorXd u(dim);
      long rest = idx;
      for (int d = 0; d < dim; ++d) {
        u(d) = axis[static_cast<std::size_t>(rest % m)];
        rest /= m;
      }
      const Eigen::VectorXd y = mu + W * u;
      probe.Y[static_cast<std::size_t>(i)].row(0) = y.transpose();
      const double lw = cdl(probe);
      top = std::max(top, lw);
      logw.push_back(lw);
      pts.push_back(y);
    }
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(dim), s2 = Eigen::VectorXd::Zero(dim);
    double z = 0.0;
    for (std::size_t r = 0; r < pts.size(); ++r) {
      const double w = std::exp(logw[r] - top);
      z += w;
      s1 += w * pts[r];
      s2 += w * pts[r].cwiseProduct(pts[r]);
    }
    for (int t = 0; t < dim; ++t) {
      MomentCheck c;
      c.name = "Y[" + std::to_string(i + 1) + "](t=" + std::to_string(ds.grid()[t]).substr(0, 4) + ")";
      std::vector<double> coord(samples.size());
      for (std::size_t r = 0; r < samples.size(); ++r) coord[r] = samples[r](t);
      detail_oracle::sample_moments(coord, c.empirical_mean, c.empirical_var, c.se_mean, c.se_var);
      c.oracle_mean = s1(t) / z;
      c.oracle_var = s2(t) / z - c.oracle_mean * c.oracle_mean;
      out.push_back(c);
    }
  }

  std::vector<double> buf(static_cast<std::size_t>(draws));

  // Coefficient rows.
  for (int g = 0; g < ds.p(); ++g) {
    LatentState st = inst.state;
    for (int d = 0; d < draws; ++d) {
      sampler.sample_coefficient_row(g, st, rng);
      buf[static_cast<std::size_t>(d)] = st.A(g, 0);
    }
    LatentState probe = inst.state;
    out.push_back(check_scalar("A[" + std::to_string(g + 1) + "]", buf,
                               [&](double x) {
                                 probe.A(g, 0) = x;
                                 return cdl(probe);
                               },
                               false));
  }

  // Subject means.
  for (int i = 0; i < ds.n(); ++i) {
    for (int g = 0; g < ds.p(); ++g) {
      LatentState st = inst.state;
      for (int d = 0; d < draws; ++d) {
        sampler.sample_subject_means(st, rng);
        buf[static_cast<std::size_t>(d)] = st.M(i, g);
      }
      LatentState probe = inst.state;
      out.push_back(check_scalar("mu[" + std::to_string(i + 1) + "," + std::to_string(g + 1) + "]", buf,
                                 [&](double x) {
                                   probe.M(i, g) = x;
                                   return cdl(probe);
                                 },
                                 false));
    }
  }

  // Inclusion indicators (k = 1): Bernoulli frequency against the exact
  // two-point conditional.
  for (int g = 0; g < ds.p(); ++g) {
    LatentState st = inst.state;
    for (int d = 0; d < draws; ++d) {
      sampler.sample_inclusion_row(g, st, rng);
      buf[static_cast<std::size_t>(d)] = st.Z(g, 0);
    }
    LatentState probe = inst.state;
    probe.Z(g, 0) = 1;
    const double l1 = cdl(probe);
    probe.Z(g, 0) = 0;
    const double l0 = cdl(probe);
    const double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
    MomentCheck c;
    c.name = "Z[" + std::to_string(g + 1) + "]";
    detail_oracle::sample_moments(buf, c.empirical_mean, c.empirical_var, c.se_mean, c.se_var);
    c.oracle_mean = p1;
    c.oracle_var = p1 * (1.0 - p1);
    out.push_back(c);
  }

  // Conjugate scalars; all drawn jointly by one call, checked marginally.
  {
    const int p = ds.p();
    std::vector<std::vector<double>> series(static_cast<std::size_t>(2 + 2 * p),
                                            std::vector<double>(static_cast<std::size_t>(draws)));
    LatentState st = inst.state;
    for (int d = 0; d < draws; ++d) {
      sampler.sample_conjugate_scalars(st, rng);
      const auto sd = static_cast<std::size_t>(d);
      series[0][sd] = st.pi(0);
      series[1][sd] = st.rho2(0);
      for (int g = 0; g < p; ++g) {
        series[static_cast<std::size_t>(2 + g)][sd] = st.sigma2(g);
        series[static_cast<std::size_t>(2 + p + g)][sd] = st.phi2(g);
      }
    }
    LatentState probe = inst.state;
    out.push_back(check_scalar("pi", series[0],
                               [&](double x) {
                                 if (x <= 0.0 || x >= 1.0) return -1e300;
                                 probe.pi(0) = x;
                                 return cdl(probe);
                               },
                               true));
    probe = inst.state;
    out.push_back(check_scalar("rho2", series[1],
                               [&](double x) {
                                 probe.rho2(0) = x;
                                 return cdl(probe);
                               },
                               true));
    for (int g = 0; g < p; ++g) {
      probe = inst.state;
      out.push_back(check_scalar("sigma2[" + std::to_string(g + 1) + "]",
                                 series[static_cast<std::size_t>(2 + g)],
                                 [&](double x) {
                                   probe.sigma2(g) = x;
                                   return cdl(probe);
                                 },
                                 true));
      probe = inst.state;
      out.push_back(check_scalar("phi2[" + std::to_string(g + 1) + "]",
                                 series[static_cast<std::size_t>(2 + p + g)],
                                 [&](double x) {
                                   probe.phi2(g) = x;
                                   return cdl(probe);
                                 },
                                 true));
    }
  }
  return out;
}

}  // namespace dsbfa::testing

#endif  // DSBFA_TESTS_GIBBS_ORACLE_HPP
