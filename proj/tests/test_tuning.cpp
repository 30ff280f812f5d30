#include <cmath>

#include <gtest/gtest.h>

#include "dsbfa/simulate.hpp"
#include "dsbfa/tuning.hpp"
#include "test_support.hpp"

namespace dsbfa {
namespace {

using testing::random_dataset;

Dataset ten_subjects(Rng& rng) {
  std::vector<std::vector<double>> times;
  for (int i = 0; i < 10; ++i) times.push_back({0.0, 0.3, 0.6 + 0.02 * i, 1.0});
  return random_dataset(3, times, rng);
}

TEST(CvPlan, FoldsPartitionSubjects) {
  Rng rng(1);
  const Dataset ds = ten_subjects(rng);
  const CvPlan plan = make_plan(ds, 5);
  std::vector<int> seen(10, 0);
  for (const auto& f : plan.fold_subjects) {
    EXPECT_EQ(f.size(), 2u);
    for (int i : f) ++seen[static_cast<std::size_t>(i)];
  }
  for (int c : seen) EXPECT_EQ(c, 1);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(plan.held_out[static_cast<std::size_t>(i)], 3);
    EXPECT_GE(plan.fold_of(i), 0);
  }
}

TEST(CvPlan, UnevenSizesDifferByAtMostOne) {
  Rng rng(2);
  std::vector<std::vector<double>> times(13, {0.0, 1.0});
  const CvPlan plan = make_plan(random_dataset(2, times, rng), 4);
  std::size_t lo = 99, hi = 0;
  for (const auto& f : plan.fold_subjects) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
  }
  EXPECT_LE(hi - lo, 1u);
}

TEST(CvPlan, DefaultGridHasSeventeenValues) {
  const auto g = default_lambda_grid();
  ASSERT_EQ(g.size(), 17u);
  EXPECT_NEAR(g.front(), 0.0183, 5e-5);
  EXPECT_NEAR(g.back(), 54.598, 5e-4);
  EXPECT_DOUBLE_EQ(std::log(g[8]), 0.0);
}

TEST(CvPlan, SeedDeterministicAndValidated) {
  Rng rng(3);
  const Dataset ds = ten_subjects(rng);
  EXPECT_EQ(make_plan(ds, 5, default_lambda_grid(), 9).fold_subjects,
            make_plan(ds, 5, default_lambda_grid(), 9).fold_subjects);
  EXPECT_NE(make_plan(ds, 5, default_lambda_grid(), 9).fold_subjects,
            make_plan(ds, 5, default_lambda_grid(), 10).fold_subjects);
  EXPECT_THROW(make_plan(ds, 11), InvalidArgument);
  EXPECT_THROW(make_plan(ds, 1), InvalidArgument);
}

TEST(Mae, HandExamples) {
  const Eigen::MatrixXd truth = (Eigen::MatrixXd(2, 1) << 3.0, 1.0).finished();
  EXPECT_EQ(mean_absolute_error(truth, truth), 0.0);
  EXPECT_EQ(mean_absolute_error(Eigen::MatrixXd::Constant(2, 1, 2.0), truth), 1.0);
  const Eigen::MatrixXd a = (Eigen::MatrixXd(2, 2) << 1, -2, 0.5, 4).finished();
  const Eigen::MatrixXd b = (Eigen::MatrixXd(2, 2) << 0, 1, 0.5, 3).finished();
  EXPECT_DOUBLE_EQ(mean_absolute_error(a, b), (1 + 3 + 0 + 1) / 4.0);
}

TEST(SelectLambda, TiesGoToLargerLambda) {
  const std::vector<double> lambdas{0.1, 1.0, 10.0};
  EXPECT_EQ(*select_lambda({0.5, 0.3, 0.3}, lambdas), 2u);
  EXPECT_EQ(*select_lambda({0.2, 0.3, 0.4}, lambdas), 0u);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(*select_lambda({nan, 0.9, nan}, lambdas), 1u);
  EXPECT_FALSE(select_lambda({nan, nan, nan}, lambdas).has_value());
}

TEST(SplitFold, HeldOutValuesNeverSeen) {
  Rng rng(4);
  const Dataset ds = ten_subjects(rng);
  const CvPlan plan = make_plan(ds, 5);
  for (int f = 0; f < 5; ++f) {
    const FoldData fd = split_fold(ds, plan, f);
    EXPECT_EQ(fd.training.n(), 8);
    EXPECT_EQ(fd.conditioning.n(), 10);
    for (std::size_t t = 0; t < fd.test_subjects.size(); ++t) {
      const int i = fd.test_subjects[t];
      EXPECT_EQ(fd.training.find_subject(ds.subject(i).id), -1);
      const Subject& kept = fd.conditioning.subject(fd.test_positions[t]);
      EXPECT_EQ(kept.q(), ds.subject(i).q() - 1);
      EXPECT_FALSE(kept.times.index_of(fd.held_times[t]).has_value());
      EXPECT_EQ(fd.held_times[t], ds.subject(i).times.values().back());
      // The held-out values appear nowhere in the data the fold sees.
      for (const auto* d : {&fd.training, &fd.conditioning}) {
        for (const auto& s : d->subjects()) {
          for (int j = 0; j < s.q(); ++j) EXPECT_NE(s.X.col(j), fd.held_values[t]);
        }
      }
    }
  }
}

TEST(CvLambda, SmallRunIsDeterministicAndWellFormed) {
  SimConfig sc;
  sc.n = 10;
  sc.p = 6;
  sc.k = 1;
  sc.q = 5;
  sc.sparsity = 0.5;
  const Simulated sim = generate_replicate(sc, 0);
  const CvPlan plan = make_plan(sim.data, 2, {0.1, 10.0}, 3);
  CvSettings st;
  st.k = 1;
  st.stem.iterations = 4;
  st.stem.sstep_sweeps = 6;
  st.chain.iterations = 40;
  st.chain.burnin_fraction = 0.5;
  st.chain.stride = 2;
  const PriorConfig prior = PriorConfig::defaults(sim.data);
  const CvResult a = cv_lambda(sim.data, prior, plan, st);
  ASSERT_EQ(a.cells.size(), 4u);
  for (const auto& c : a.cells) {
    EXPECT_TRUE(c.ok()) << c.error;
    EXPECT_EQ(c.points, 5 * 6);
    EXPECT_GE(c.mae, 0.0);
  }
  EXPECT_TRUE(a.lambda_opt == 0.1 || a.lambda_opt == 10.0);
  st.threads = 2;
  const CvResult b = cv_lambda(sim.data, prior, plan, st);
  for (std::size_t c = 0; c < a.cells.size(); ++c) EXPECT_EQ(a.cells[c].mae, b.cells[c].mae);
  EXPECT_EQ(cv_curve_table(a, plan.lambdas).rows(), 2u);
  EXPECT_EQ(cv_cells_table(a, plan.lambdas).rows(), 4u);
}

TEST(CvLambda, FailedCellsInvalidateTheirLambda) {
  Rng rng(5);
  const Dataset ds = ten_subjects(rng);
  const CvPlan plan = make_plan(ds, 2, {1.0}, 1);
  CvSettings st;
  st.k = 1;
  st.stem.iterations = 2;
  st.stem.sstep_sweeps = 2;
  st.chain.iterations = 1;  // stores no draws
  st.chain.burnin_fraction = 0.5;
  st.chain.stride = 5;
  EXPECT_THROW(cv_lambda(ds, PriorConfig::defaults(ds), plan, st), NumericalError);
}

}  // namespace
}  // namespace dsbfa
