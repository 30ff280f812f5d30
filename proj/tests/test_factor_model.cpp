#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dsbfa/factor_model.hpp"
#include "test_support.hpp"

namespace dsbfa {
namespace {

using testing::random_dataset;
using testing::random_grid;
using testing::random_hyperparams;

LatentState random_state(const Dataset& ds, int k, Rng& rng) {
  PriorConfig prior = PriorConfig::defaults(ds);
  LatentState st = initial_state(ds, k, prior, rng);
  for (int a = 0; a < k; ++a) {
    st.rho2(a) = 0.5 + rng.uniform();
    st.pi(a) = 0.1 + 0.8 * rng.uniform();
  }
  for (int g = 0; g < ds.p(); ++g) {
    st.sigma2(g) = 0.5 + rng.uniform();
    st.phi2(g) = 0.2 + rng.uniform();
    st.Z(g, 0) = 1;
  }
  for (int i = 0; i < ds.n(); ++i) {
    for (int g = 0; g < ds.p(); ++g) st.M(i, g) += rng.normal();
  }
  return st;
}

// Dense covariance built entry by entry, inverted with a full-pivot LU.
double dense_mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                        const Eigen::MatrixXd& cov) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(cov);
  const Eigen::VectorXd r = y - mean;
  const double quad = r.dot(lu.solve(r));
  return -0.5 * (y.size() * std::log(2.0 * std::numbers::pi) + std::log(lu.determinant()) + quad);
}

Eigen::MatrixXd dense_normalized_covariance(const MogpHyperparams& hp, const TimeGrid& grid) {
  const int k = hp.k();
  const int q = grid.size();
  Eigen::MatrixXd out(k * q, k * q);
  for (int a = 0; a < k; ++a) {
    const double da = auto_covariance(hp, a, 0.0, true);
    for (int b = 0; b < k; ++b) {
      const double db = auto_covariance(hp, b, 0.0, true);
      for (int j = 0; j < q; ++j) {
        for (int l = 0; l < q; ++l) {
          const double dt = grid[j] - grid[l];
          double v = 0.0;
          if (a == b) {
            v = auto_covariance(hp, a, dt, j == l);
          } else {
            v = cross_covariance(hp, a, b, dt);
          }
          out(a * q + j, b * q + l) = v / std::sqrt(da * db);
        }
      }
    }
  }
  return out;
}

TEST(CompleteDataLoglik, ZeroResidualObservationTerm) {
  Rng rng(1);
  Dataset ds = random_dataset(1, {{0.0}}, rng);
  PriorConfig prior = PriorConfig::defaults(ds);
  LatentState st = initial_state(ds, 1, prior, rng);
  st.M(0, 0) = ds.subject(0).X(0, 0);
  st.A.setZero();
  st.phi2(0) = 0.37;
  EXPECT_NEAR(observation_loglik(ds, st), -0.5 * std::log(2.0 * std::numbers::pi * 0.37), 1e-14);
  const auto terms = complete_data_terms(ds, st, MogpHyperparams::uniform(1, 1, 1, 1, 1, 0.1), prior);
  EXPECT_NEAR(terms.observation, -0.5 * std::log(2.0 * std::numbers::pi * 0.37), 1e-14);
}

TEST(CompleteDataLoglik, StandardNormalScoreTerm) {
  Rng rng(2);
  Dataset ds = random_dataset(1, {{0.0}}, rng);
  PriorConfig prior = PriorConfig::defaults(ds);
  LatentState st = initial_state(ds, 1, prior, rng);
  st.Y[0].setZero();
  const auto terms = complete_data_terms(ds, st, MogpHyperparams::uniform(1, 0.7, 1.3, 2, 3, 0.2), prior);
  EXPECT_NEAR(terms.factor_scores, -0.9189385332046727, 1e-12);
}

TEST(CompleteDataLoglik, MatchesTermByTermOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 3;
    const int p = 2 + trial % 4;
    Dataset ds = random_dataset(p, {{0.0, 0.3, 0.9}, {0.1, 0.3}, {0.5}}, rng);
    PriorConfig prior = PriorConfig::defaults(ds);
    prior.c1 = 1.5;
    prior.d2 = 0.7;
    prior.c3 = 2.0;
    prior.d3 = 0.4;
    LatentState st = random_state(ds, k, rng);
    const MogpHyperparams hp = random_hyperparams(k, rng);

    double obs = 0.0;
    const Eigen::MatrixXd L = st.A.cwiseProduct(st.Z.cast<double>());
    for (int i = 0; i < ds.n(); ++i) {
      const auto& s = ds.subject(i);
      for (int j = 0; j < s.q(); ++j) {
        const int col = s.grid_index[static_cast<std::size_t>(j)];
        for (int g = 0; g < p; ++g) {
          double m = st.M(i, g);
          for (int a = 0; a < k; ++a) m += L(g, a) * st.Y[static_cast<std::size_t>(i)](a, col);
          const double r = s.X(g, j) - m;
          obs += -0.5 * std::log(2.0 * std::numbers::pi * st.phi2(g)) - r * r / (2.0 * st.phi2(g));
        }
      }
    }
    const Eigen::MatrixXd cov = dense_normalized_covariance(hp, ds.grid());
    double scores = 0.0;
    for (const auto& Yi : st.Y) {
      Eigen::VectorXd y(k * ds.q()), mean(k * ds.q());
      for (int a = 0; a < k; ++a) {
        for (int j = 0; j < ds.q(); ++j) {
          y(a * ds.q() + j) = Yi(a, j);
          mean(a * ds.q() + j) = hp.c(a);
        }
      }
      scores += dense_mvn_logpdf(y, mean, cov);
    }
    auto normal = [](double x, double m, double v) {
      return -0.5 * std::log(2.0 * std::numbers::pi * v) - (x - m) * (x - m) / (2.0 * v);
    };
    auto inv_gamma = [](double x, double a, double b) {
      return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
    };
    double means = 0.0, coef = 0.0, ind = 0.0, hyper = 0.0;
    for (int i = 0; i < ds.n(); ++i) {
      for (int g = 0; g < p; ++g) means += normal(st.M(i, g), prior.mu(g), st.sigma2(g));
    }
    for (int g = 0; g < p; ++g) {
      for (int a = 0; a < k; ++a) {
        coef += normal(st.A(g, a), 0.0, st.rho2(a));
        ind += st.Z(g, a) ? std::log(st.pi(a)) : std::log(1.0 - st.pi(a));
      }
      hyper += inv_gamma(st.sigma2(g), prior.c2, prior.d2) + inv_gamma(st.phi2(g), prior.c3, prior.d3);
    }
    for (int a = 0; a < k; ++a) {
      const double x = st.pi(a);
      hyper += std::lgamma(prior.c0 + prior.d0) - std::lgamma(prior.c0) - std::lgamma(prior.d0) +
               (prior.c0 - 1.0) * std::log(x) + (prior.d0 - 1.0) * std::log(1.0 - x);
      hyper += inv_gamma(st.rho2(a), prior.c1, prior.d1);
    }
    const auto terms = complete_data_terms(ds, st, hp, prior);
    EXPECT_NEAR(terms.observation, obs, 1e-9 * std::abs(obs));
    EXPECT_NEAR(terms.factor_scores, scores, 1e-7 * std::max(1.0, std::abs(scores)));
    EXPECT_NEAR(terms.means, means, 1e-10 * std::max(1.0, std::abs(means)));
    EXPECT_NEAR(terms.coefficients, coef, 1e-10 * std::max(1.0, std::abs(coef)));
    EXPECT_NEAR(terms.indicators, ind, 1e-12 * std::max(1.0, std::abs(ind)));
    EXPECT_NEAR(terms.hyperpriors, hyper, 1e-10 * std::max(1.0, std::abs(hyper)));
    EXPECT_NEAR(complete_data_loglik(ds, st, hp, prior),
                obs + scores + means + coef + ind + hyper, 1e-7 * std::abs(obs + scores));
  }
}

TEST(CompleteDataLoglik, RejectsDimensionMismatch) {
  Rng rng(4);
  Dataset ds = random_dataset(2, {{0.0, 1.0}}, rng);
  PriorConfig prior = PriorConfig::defaults(ds);
  LatentState st = initial_state(ds, 2, prior, rng);
  EXPECT_THROW(complete_data_loglik(ds, st, MogpHyperparams::uniform(1, 1, 1, 1, 1, 0.1), prior),
               InvalidArgument);
  st.M.resize(3, 2);
  EXPECT_THROW(complete_data_loglik(ds, st, MogpHyperparams::uniform(2, 1, 1, 1, 1, 0.1), prior),
               InvalidArgument);
}

TEST(CompleteDataLoglik, ObservationTermInvariantUnderSignedPermutation) {
  Rng rng(5);
  Dataset ds = random_dataset(4, {{0.0, 0.4, 0.8}, {0.2, 0.4}}, rng);
  LatentState st = random_state(ds, 3, rng);
  st.Z.setOnes();
  const double before = observation_loglik(ds, st);
  const std::vector<int> perm = {2, 0, 1};
  const std::vector<double> sign = {-1.0, 1.0, -1.0};
  LatentState moved = st;
  for (int a = 0; a < 3; ++a) {
    moved.A.col(a) = sign[static_cast<std::size_t>(a)] * st.A.col(perm[static_cast<std::size_t>(a)]);
    for (std::size_t i = 0; i < st.Y.size(); ++i) {
      moved.Y[i].row(a) = sign[static_cast<std::size_t>(a)] * st.Y[i].row(perm[static_cast<std::size_t>(a)]);
    }
  }
  EXPECT_NEAR(observation_loglik(ds, moved), before, 1e-10 * std::abs(before));
}

TEST(CompleteDataLoglik, SignTransformLeavesMarginalCovarianceUnchanged) {
  Rng rng(6);
  const int k = 2, q = 2, p = 3;
  const MogpHyperparams hp = random_hyperparams(k, rng);
  const TimeGrid grid({0.1, 0.6});
  const Eigen::MatrixXd sy = assemble_normalized_covariance(hp, grid);
  Eigen::MatrixXd L(p, k);
  for (Eigen::Index r = 0; r < L.size(); ++r) L.data()[r] = rng.normal();
  // L* = L (x) I_q acting on vec(Y^T) in factor-major layout.
  auto lift = [&](const Eigen::MatrixXd& M) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p * q, k * q);
    for (int g = 0; g < p; ++g)
      for (int a = 0; a < k; ++a)
        for (int j = 0; j < q; ++j) out(g * q + j, a * q + j) = M(g, a);
    return out;
  };
  const Eigen::MatrixXd sx = 0.3 * Eigen::MatrixXd::Identity(p * q, p * q);
  const Eigen::MatrixXd base = lift(L) * sy * lift(L).transpose() + sx;
  for (int mask = 0; mask < 4; ++mask) {
    Eigen::VectorXd d(k);
    for (int a = 0; a < k; ++a) d(a) = (mask >> a) & 1 ? -1.0 : 1.0;
    Eigen::VectorXd dq(k * q);
    for (int a = 0; a < k; ++a) dq.segment(a * q, q).setConstant(d(a));
    const Eigen::MatrixXd sy2 = dq.asDiagonal() * sy * dq.asDiagonal();
    const Eigen::MatrixXd L2 = L * d.asDiagonal();
    const Eigen::MatrixXd moved = lift(L2) * sy2 * lift(L2).transpose() + sx;
    EXPECT_LT((moved - base).cwiseAbs().maxCoeff(), 1e-12);
  }
}

MogpHyperparams unit_variance_single(double v0, double B0, double B1, double psi2, double c) {
  // v1 chosen so that the total variance is exactly one.
  const double rest = 1.0 - psi2 - v0 * v0 * std::sqrt(std::numbers::pi) / B0;
  const double v1 = std::sqrt(rest * B1 / std::sqrt(std::numbers::pi));
  MogpHyperparams hp = MogpHyperparams::uniform(1, v0, v1, B0, B1, psi2);
  hp.c(0) = c;
  return hp;
}

TEST(PenalizedObjective, SingleStandardNormalMinusPenalty) {
  const MogpHyperparams hp = unit_variance_single(0.0, 0.5, 0.5, 0.5, 0.0);
  EXPECT_NEAR(auto_covariance(hp, 0, 0.0, true), 1.0, 1e-14);
  const std::vector<Eigen::MatrixXd> ys = {Eigen::MatrixXd::Zero(1, 1)};
  EXPECT_NEAR(penalized_objective(ys, hp, TimeGrid({0.0}), 1.0), -1.9189385332046727, 1e-12);
}

TEST(PenalizedObjective, ZeroLambdaIsSumOfMvnLogDensities) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 1 + trial % 3;
    const TimeGrid grid = random_grid(4, rng);
    const MogpHyperparams hp = random_hyperparams(k, rng);
    std::vector<Eigen::MatrixXd> ys;
    double expected = 0.0;
    Eigen::MatrixXd cov(k * 4, k * 4);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int j = 0; j < 4; ++j)
          for (int l = 0; l < 4; ++l)
            cov(a * 4 + j, b * 4 + l) = covariance(hp, a, b, grid[j] - grid[l], a == b && j == l);
    for (int i = 0; i < 3; ++i) {
      Eigen::MatrixXd Y(k, 4);
      for (Eigen::Index r = 0; r < Y.size(); ++r) Y.data()[r] = rng.normal();
      ys.push_back(Y);
      Eigen::VectorXd y(k * 4), m(k * 4);
      for (int a = 0; a < k; ++a)
        for (int j = 0; j < 4; ++j) {
          y(a * 4 + j) = Y(a, j);
          m(a * 4 + j) = hp.c(a);
        }
      expected += dense_mvn_logpdf(y, m, cov);
    }
    EXPECT_NEAR(penalized_objective(ys, hp, grid, 0.0), expected, 1e-7 * std::abs(expected));
  }
}

TEST(PenalizedObjective, ZeroLambdaMatchesScoreTermAtUnitVariance) {
  Rng rng(8);
  Dataset ds = random_dataset(2, {{0.0, 0.5}, {0.25, 1.0}}, rng);
  PriorConfig prior = PriorConfig::defaults(ds);
  LatentState st = initial_state(ds, 1, prior, rng);
  const MogpHyperparams hp = unit_variance_single(0.4, 3.0, 5.0, 0.1, 0.3);
  const auto terms = complete_data_terms(ds, st, hp, prior);
  EXPECT_NEAR(penalized_objective(st.Y, hp, ds.grid(), 0.0), terms.factor_scores,
              1e-10 * std::abs(terms.factor_scores));
}

TEST(PenalizedObjective, StrictlyDecreasingInLambda) {
  Rng rng(9);
  const TimeGrid grid = random_grid(5, rng);
  const MogpHyperparams hp = random_hyperparams(2, rng);
  std::vector<Eigen::MatrixXd> ys(3, Eigen::MatrixXd::Zero(2, 5));
  for (auto& Y : ys)
    for (Eigen::Index r = 0; r < Y.size(); ++r) Y.data()[r] = rng.normal();
  double prev = penalized_objective(ys, hp, grid, 0.0);
  for (double lambda : {0.01, 0.1, 1.0, 3.0, 10.0, 100.0}) {
    const double v = penalized_objective(ys, hp, grid, lambda);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(PenalizedObjective, RejectsBadInputs) {
  const std::vector<Eigen::MatrixXd> ys = {Eigen::MatrixXd::Zero(1, 2)};
  const TimeGrid grid({0.0, 1.0});
  EXPECT_THROW(PenalizedObjective(ys, grid, -1.0), InvalidArgument);
  EXPECT_THROW(PenalizedObjective(ys, TimeGrid({0.0}), 1.0), InvalidArgument);
  EXPECT_THROW(PenalizedObjective({}, grid, 1.0), InvalidArgument);
  const MogpHyperparams degenerate = MogpHyperparams::uniform(1, 0.0, 0.0, 1.0, 1.0, 0.0);
  EXPECT_THROW(penalized_objective(ys, degenerate, grid, 0.0), NumericalError);
}

TEST(PenalizedObjective, PackUnpackRoundTrip) {
  Rng rng(10);
  const MogpHyperparams hp = random_hyperparams(3, rng);
  const Eigen::VectorXd theta = pack_parameters(hp);
  ASSERT_EQ(theta.size(), parameter_count(3));
  const MogpHyperparams back = unpack_parameters(theta, 3);
  EXPECT_LT((back.v0 - hp.v0).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((back.B0 - hp.B0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.B1 - hp.B1).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.v1 - hp.v1).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.c - hp.c).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(back.psi2, hp.psi2, 1e-14);
  int logs = 0;
  for (int i = 0; i < theta.size(); ++i) logs += is_log_coordinate(i, 3) ? 1 : 0;
  EXPECT_EQ(logs, 3 * 3 + 1);
}

double relative_gradient_error(const PenalizedObjective& obj, const Eigen::VectorXd& theta) {
  Eigen::VectorXd grad;
  obj.value_and_gradient(theta, grad);
  Eigen::VectorXd fd(theta.size());
  for (int c = 0; c < theta.size(); ++c) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(c)));
    Eigen::VectorXd up = theta, down = theta;
    up(c) += h;
    down(c) -= h;
    fd(c) = (obj.value(unpack_parameters(up, obj.k())) - obj.value(unpack_parameters(down, obj.k()))) /
            (2.0 * h);
  }
  return (grad - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff();
}

TEST(PenalizedObjective, GradientMatchesCentralDifferences) {
  Rng rng(11);
  for (int point = 0; point < 50; ++point) {
    const int k = 1 + point % 3;
    const int q = 3 + point % 4;
    const TimeGrid grid = random_grid(q, rng);
    MogpHyperparams hp = random_hyperparams(k, rng);
    for (int a = 0; a < k; ++a) {
      hp.B0(a) = 0.5 + 4.0 * rng.uniform();
      hp.B1(a) = 0.5 + 4.0 * rng.uniform();
    }
    hp.psi2 = 0.05 + 0.3 * rng.uniform();
    std::vector<Eigen::MatrixXd> ys(4, Eigen::MatrixXd::Zero(k, q));
    for (auto& Y : ys)
      for (Eigen::Index r = 0; r < Y.size(); ++r) Y.data()[r] = rng.normal();
    const PenalizedObjective obj(ys, grid, rng.uniform() * 3.0);
    const double err = relative_gradient_error(obj, pack_parameters(hp));
    EXPECT_LT(err, 1e-4) << "point " << point << " hp " << hp.to_string();
  }
}

TEST(PenalizedObjective, GradientValueAgreesWithValue) {
  Rng rng(12);
  const TimeGrid grid = random_grid(5, rng);
  const MogpHyperparams hp = random_hyperparams(2, rng);
  std::vector<Eigen::MatrixXd> ys(2, Eigen::MatrixXd::Ones(2, 5));
  const PenalizedObjective obj(ys, grid, 1.5);
  Eigen::VectorXd grad;
  const Eigen::VectorXd theta = pack_parameters(hp);
  EXPECT_NEAR(obj.value_and_gradient(theta, grad), obj.value(unpack_parameters(theta, 2)), 1e-9);
}

}  // namespace
}  // namespace dsbfa
