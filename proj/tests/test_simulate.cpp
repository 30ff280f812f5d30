#include <cmath>

#include <gtest/gtest.h>

#include "dsbfa/simulate.hpp"

namespace dsbfa {
namespace {

TEST(Simulate, DefaultsFollowTheDesign) {
  const SimConfig cfg;
  EXPECT_EQ(cfg.p, 100);
  EXPECT_EQ(cfg.k, 4);
  EXPECT_EQ(cfg.q, 8);
  const Eigen::MatrixXd R = cfg.factor_correlation();
  EXPECT_EQ(R(0, 1), 0.5);
  EXPECT_EQ(R(2, 3), 0.5);
  EXPECT_EQ(R(0, 2), 0.0);
  EXPECT_EQ(R(1, 3), 0.0);
}

TEST(Simulate, ShapesAndUnitScoreVariance) {
  SimConfig cfg;
  cfg.n = 10;
  Rng rng(1);
  const Simulated sim = generate(cfg, rng);
  EXPECT_EQ(sim.data.n(), 10);
  EXPECT_EQ(sim.data.p(), 100);
  EXPECT_EQ(sim.data.total_observations() * sim.data.p(), 8000);
  EXPECT_EQ(sim.truth.L.rows(), 100);
  EXPECT_EQ(sim.truth.L.cols(), 4);
  const Eigen::VectorXd d = sim.truth.score_covariance.diagonal();
  EXPECT_LT((d.array() - 1.0).abs().maxCoeff(), 1e-15);
  for (int g = 0; g < 100; ++g) {
    for (int a = 0; a < 4; ++a) EXPECT_EQ(sim.truth.L(g, a) != 0.0, sim.truth.Z(g, a) == 1);
  }
}

TEST(Simulate, BitReproducible) {
  SimConfig cfg;
  cfg.n = 5;
  cfg.p = 12;
  Rng a(7), b(7);
  const Simulated x = generate(cfg, a), y = generate(cfg, b);
  EXPECT_TRUE(x.data == y.data);
  EXPECT_EQ(x.truth.L, y.truth.L);
  EXPECT_TRUE(generate_replicate(cfg, 3).data == generate_replicate(cfg, 3).data);
  EXPECT_FALSE(generate_replicate(cfg, 3).data == generate_replicate(cfg, 4).data);
}

TEST(Simulate, SparsityConcentratesAtTenPercent) {
  SimConfig cfg;
  cfg.n = 1;
  cfg.q = 1;
  Eigen::VectorXd frac = Eigen::VectorXd::Zero(cfg.k);
  for (int r = 0; r < 100; ++r) {
    const Simulated sim = generate_replicate(cfg, r);
    frac += sim.truth.Z.cast<double>().colwise().mean().transpose();
  }
  frac /= 100.0;
  for (int a = 0; a < cfg.k; ++a) EXPECT_NEAR(frac(a), 0.10, 0.03);
}

TEST(Simulate, IdentityCorrelationGivesUncorrelatedFactors) {
  SimConfig cfg;
  cfg.n = 250;
  cfg.p = 4;
  cfg.k = 2;
  cfg.correlation = Eigen::MatrixXd::Identity(2, 2);
  Rng rng(3);
  const Simulated sim = generate(cfg, rng);
  double sxy = 0, sxx = 0, syy = 0;
  for (const auto& Yi : sim.truth.Y) {
    for (int j = 0; j < Yi.cols(); ++j) {
      sxy += Yi(0, j) * Yi(1, j);
      sxx += Yi(0, j) * Yi(0, j);
      syy += Yi(1, j) * Yi(1, j);
    }
  }
  EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.05);
}

TEST(Simulate, ResidualVarianceMatchesPhi) {
  SimConfig cfg;
  cfg.n = 100;
  cfg.p = 20;
  Rng rng(4);
  const Simulated sim = generate(cfg, rng);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(cfg.p);
  int count = 0;
  for (int i = 0; i < sim.data.n(); ++i) {
    const Subject& s = sim.data.subject(i);
    const Eigen::MatrixXd r = s.X - sim.truth.L * sim.truth.Y[static_cast<std::size_t>(i)] -
                              sim.truth.M.row(i).transpose().replicate(1, s.q());
    ss += r.rowwise().squaredNorm();
    count += s.q();
  }
  for (int g = 0; g < cfg.p; ++g) EXPECT_NEAR(ss(g) / count, 0.25, 0.025) << "g" << g;
}

TEST(Simulate, EmpiricalFactorCorrelationMatchesConfig) {
  SimConfig cfg;
  cfg.n = 400;
  cfg.p = 4;
  Rng rng(5);
  const Simulated sim = generate(cfg, rng);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(4, 4);
  for (const auto& Yi : sim.truth.Y) S += Yi * Yi.transpose();
  const Eigen::VectorXd d = S.diagonal().cwiseSqrt();
  const Eigen::MatrixXd R = S.array() / (d * d.transpose()).array();
  EXPECT_LT((R - cfg.factor_correlation()).cwiseAbs().maxCoeff(), 0.06);
}

TEST(Simulate, RejectsInvalidConfig) {
  SimConfig cfg;
  cfg.correlation = Eigen::MatrixXd::Identity(4, 4);
  cfg.correlation(0, 1) = cfg.correlation(1, 0) = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = SimConfig{};
  cfg.phi = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = SimConfig{};
  cfg.correlation = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Simulate, ConfigAndTruthRoundTrip) {
  SimConfig cfg;
  cfg.n = 3;
  cfg.p = 6;
  cfg.k = 2;
  cfg.seed = 99;
  const SimConfig back = sim_config_from_json(sim_config_to_json(cfg));
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.factor_correlation(), cfg.factor_correlation());
  const Simulated sim = generate_replicate(cfg, 0);
  const SimTruth t = truth_from_json(Json::parse(truth_to_json(sim.truth).dump()));
  EXPECT_EQ(t.L, sim.truth.L);
  EXPECT_EQ(t.Y[2], sim.truth.Y[2]);
  EXPECT_EQ(t.correlation, sim.truth.correlation);
}

TEST(MadCrossCorrelation, Examples) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2), b = a;
  EXPECT_EQ(mad_cross_correlation(a, a), 0.0);
  a(0, 1) = a(1, 0) = 0.3;
  b(0, 1) = b(1, 0) = 0.5;
  EXPECT_NEAR(mad_cross_correlation(a, b), 0.2, 1e-15);
  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(3, 3);
  e(1, 0) = e(0, 1) = 0.1;
  e(2, 0) = e(0, 2) = 0.2;
  e(2, 1) = e(1, 2) = 0.3;
  EXPECT_NEAR(mad_cross_correlation(e, Eigen::MatrixXd::Identity(3, 3)), 0.2, 1e-15);
  EXPECT_THROW(mad_cross_correlation(e, a), InvalidArgument);
}

TEST(MadCrossCorrelation, RecoveryScoreUndoesRelabelling) {
  SimConfig cfg;
  cfg.n = 2;
  cfg.p = 40;
  cfg.k = 3;
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(3, 3);
  R(0, 1) = R(1, 0) = 0.4;
  R(1, 2) = R(2, 1) = -0.3;
  cfg.correlation = R;
  const Simulated sim = generate_replicate(cfg, 0);
  SignedPermutation sp = SignedPermutation::identity(3);
  sp.perm = {1, 2, 0};
  sp.sign = {1, -1, -1};
  const RecoveryScore s = score_recovery(apply_columns(sp, sim.truth.L), apply_to_correlation(sp, R), sim.truth);
  EXPECT_EQ(s.sp, sp.inverse());
  EXPECT_NEAR(s.correlation_mad, 0.0, 1e-15);
}

}  // namespace
}  // namespace dsbfa
