#ifndef DSBFA_TUNING_HPP
#define DSBFA_TUNING_HPP

// Cross-validated choice of the roughness penalty.

#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/gibbs.hpp"
#include "dsbfa/io.hpp"
#include "dsbfa/stem.hpp"

namespace dsbfa {

/// ln(lambda) = -4, -3.5, ..., 4.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int s = -8; s <= 8; ++s) g.push_back(std::exp(0.5 * s));
  return g;
}

struct CvPlan {
  int folds = 5;
  std::vector<std::vector<int>> fold_subjects;  ///< test subjects of each fold
  std::vector<double> lambdas;
  std::vector<int> held_out;  ///< per subject: held-out column (last time), -1 if q_i < 2
  std::uint64_t seed = 1;

  /// Fold that holds subject i out.
  int fold_of(int i) const {
    for (int f = 0; f < folds; ++f) {
      for (int s : fold_subjects[static_cast<std::size_t>(f)]) {
        if (s == i) return f;
      }
    }
    return -1;
  }
};

/// Shuffle subjects with the seed and deal them round-robin into l folds.
inline CvPlan make_plan(const Dataset& ds, int folds, std::vector<double> lambdas = default_lambda_grid(),
                        std::uint64_t seed = 1) {
  detail::require(folds >= 2, "make_plan: need at least two folds");
  if (ds.n() < folds) {
    throw InvalidArgument("make_plan: " + std::to_string(ds.n()) + " subjects cannot fill " +
                          std::to_string(folds) + " folds");
  }
  detail::require(!lambdas.empty(), "make_plan: empty lambda grid");
  for (double l : lambdas) detail::require(l >= 0 && std::isfinite(l), "make_plan: lambda values must be >= 0");
  CvPlan plan;
  plan.folds = folds;
  plan.lambdas = std::move(lambdas);
  plan.seed = seed;
  std::vector<int> order(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (std::size_t j = order.size() - 1; j > 0; --j) std::swap(order[j], order[rng.index(j + 1)]);
  plan.fold_subjects.assign(static_cast<std::size_t>(folds), {});
  for (std::size_t j = 0; j < order.size(); ++j) {
    plan.fold_subjects[j % static_cast<std::size_t>(folds)].push_back(order[j]);
  }
  for (auto& f : plan.fold_subjects) std::sort(f.begin(), f.end());
  for (const auto& s : ds.subjects()) plan.held_out.push_back(s.q() >= 2 ? s.q() - 1 : -1);
  return plan;
}

inline double mean_absolute_error(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth) {
  detail::require(predicted.rows() == truth.rows() && predicted.cols() == truth.cols(),
                  "mean_absolute_error: shapes differ");
  detail::require(predicted.size() > 0, "mean_absolute_error: no values");
  return (predicted - truth).cwiseAbs().mean();
}

/// The data a fold may see: training subjects whole, test subjects without
/// their held-out column. Test subjects come last, in fold order.
struct FoldData {
  Dataset training;
  Dataset conditioning;
  std::vector<int> test_subjects;   ///< original indices of predicted subjects
  std::vector<int> test_positions;  ///< their indices in `conditioning`
  std::vector<double> held_times;
  std::vector<Eigen::VectorXd> held_values;
};

inline FoldData split_fold(const Dataset& ds, const CvPlan& plan, int fold) {
  detail::require(fold >= 0 && fold < plan.folds, "split_fold: fold out of range");
  const auto& test = plan.fold_subjects[static_cast<std::size_t>(fold)];
  std::vector<int> train;
  for (int i = 0; i < ds.n(); ++i) {
    if (std::find(test.begin(), test.end(), i) == test.end()) train.push_back(i);
  }
  FoldData out;
  out.training = ds.subset(train);
  std::vector<Subject> cond = out.training.subjects();
  for (int i : test) {
    const int h = plan.held_out[static_cast<std::size_t>(i)];
    if (h < 0) continue;
    const Subject& s = ds.subject(i);
    Subject kept;
    kept.id = s.id;
    std::vector<double> t;
    kept.X.resize(ds.p(), s.q() - 1);
    for (int j = 0, c = 0; j < s.q(); ++j) {
      if (j == h) continue;
      t.push_back(s.times[j]);
      kept.X.col(c++) = s.X.col(j);
    }
    kept.times = TimeGrid(std::move(t));
    out.test_subjects.push_back(i);
    out.test_positions.push_back(static_cast<int>(cond.size()));
    out.held_times.push_back(s.times[h]);
    out.held_values.push_back(s.X.col(h));
    cond.push_back(std::move(kept));
  }
  out.conditioning = Dataset(ds.biomarkers(), std::move(cond));
  return out;
}

/// `prior` with mu recomputed from the data a stage is allowed to see.
inline PriorConfig prior_for(const PriorConfig& prior, const Dataset& ds) {
  PriorConfig p = prior;
  p.mu = ds.biomarker_means();
  return p;
}

struct CvCell {
  double lambda = 0.0;
  int fold = 0;
  double mae = std::numeric_limits<double>::quiet_NaN();
  int points = 0;  ///< held-out values predicted
  std::string error;

  bool ok() const { return error.empty(); }
};

struct CvSettings {
  int k = 2;
  StemConfig stem;
  ChainConfig chain;
  int threads = 1;
};

struct CvResult {
  std::vector<CvCell> cells;      ///< lambda-major, then fold
  std::vector<double> mean_mae;   ///< per lambda; NaN when any fold failed
  std::vector<std::string> errors;  ///< per lambda diagnostic, empty when valid
  std::size_t best = 0;
  double lambda_opt = 0.0;
};

/// Fit StEM on the training subjects, then run the Gibbs sampler under the
/// fitted hyperparameters on training plus truncated test subjects and
/// predict each held-out column by the posterior-predictive median.
inline CvCell run_cv_cell(const Dataset& ds, const PriorConfig& prior, const CvPlan& plan, std::size_t lambda_index,
                          int fold, const CvSettings& settings) {
  CvCell cell;
  cell.lambda = plan.lambdas[lambda_index];
  cell.fold = fold;
  Rng streams = Rng::derive(plan.seed, lambda_index * static_cast<std::size_t>(plan.folds) +
                                           static_cast<std::size_t>(fold) + 1);
  try {
    const FoldData fd = split_fold(ds, plan, fold);
    if (fd.test_subjects.empty()) throw InvalidArgument("fold has no subject with two or more observations");
    StemConfig sc = settings.stem;
    sc.seed = streams.next_seed();
    sc.checkpoint_every = 0;
    const StemResult fit = run_stem(fd.training, prior_for(prior, fd.training), cell.lambda, settings.k, sc);
    const PriorConfig cp = prior_for(prior, fd.conditioning);
    ChainConfig cc = settings.chain;
    cc.seed = streams.next_seed();
    Rng rng(streams.next_seed());
    const ChainSamples chain =
        run_chain(fd.conditioning, fit.estimate, cp, cc, initial_state(fd.conditioning, settings.k, cp, rng));
    if (chain.draws.empty()) throw InvalidArgument("Gibbs configuration stores no draws");
    double abs_sum = 0.0;
    for (std::size_t t = 0; t < fd.test_subjects.size(); ++t) {
      const auto draws = posterior_predictive(fd.conditioning, fd.test_positions[t], TimeGrid{fd.held_times[t]},
                                              chain.draws, fit.estimate, rng);
      const Eigen::VectorXd pred = summarize_predictive(draws).median.col(0);
      abs_sum += (pred - fd.held_values[t]).cwiseAbs().sum();
      cell.points += static_cast<int>(pred.size());
    }
    cell.mae = abs_sum / cell.points;
  } catch (const Error& e) {
    cell.error = e.what();
  }
  return cell;
}

/// Index of the smallest finite mean MAE; ties go to the larger lambda.
inline std::optional<std::size_t> select_lambda(const std::vector<double>& mean_mae,
                                                const std::vector<double>& lambdas) {
  detail::require(mean_mae.size() == lambdas.size(), "select_lambda: size mismatch");
  std::optional<std::size_t> best;
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    if (!std::isfinite(mean_mae[l])) continue;
    if (!best || mean_mae[l] < mean_mae[*best] ||
        (mean_mae[l] == mean_mae[*best] && lambdas[l] > lambdas[*best])) {
      best = l;
    }
  }
  return best;
}

/// Every (lambda, fold) cell, averaged per lambda. lambda_opt minimizes the
/// mean MAE; ties go to the larger lambda.
inline CvResult cv_lambda(const Dataset& ds, const PriorConfig& prior, const CvPlan& plan,
                          const CvSettings& settings) {
  detail::require(static_cast<int>(plan.fold_subjects.size()) == plan.folds && !plan.lambdas.empty() &&
                      static_cast<int>(plan.held_out.size()) == ds.n(),
                  "cv_lambda: plan does not match the dataset");
  settings.stem.validate();
  settings.chain.validate();
  const std::size_t nl = plan.lambdas.size();
  const std::size_t nf = static_cast<std::size_t>(plan.folds);
  CvResult out;
  out.cells.resize(nl * nf);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < out.cells.size(); c = next++) {
      out.cells[c] = run_cv_cell(ds, prior, plan, c / nf, static_cast<int>(c % nf), settings);
    }
  };
  const int threads = std::max(1, settings.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  out.mean_mae.assign(nl, std::numeric_limits<double>::quiet_NaN());
  out.errors.assign(nl, "");
  for (std::size_t l = 0; l < nl; ++l) {
    double sum = 0.0;
    for (std::size_t f = 0; f < nf; ++f) {
      const CvCell& c = out.cells[l * nf + f];
      if (!c.ok()) {
        if (out.errors[l].empty()) out.errors[l] = "fold " + std::to_string(f + 1) + ": " + c.error;
        continue;
      }
      sum += c.mae;
    }
    if (out.errors[l].empty()) out.mean_mae[l] = sum / static_cast<double>(nf);
  }
  const auto best = select_lambda(out.mean_mae, plan.lambdas);
  if (!best) throw NumericalError("cv_lambda: every lambda failed; first error: " + out.errors.front());
  out.best = *best;
  out.lambda_opt = plan.lambdas[*best];
  return out;
}

inline CsvTable cv_cells_table(const CvResult& r, const std::vector<double>& lambdas) {
  CsvTable t({"lambda", "fold", "mae", "mean_mae", "error"});
  const std::size_t nf = r.cells.size() / lambdas.size();
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    const CvCell& cell = r.cells[c];
    t.add({format_number(cell.lambda), std::to_string(cell.fold + 1), cell.ok() ? format_number(cell.mae) : "",
           std::isnan(r.mean_mae[c / nf]) ? "" : format_number(r.mean_mae[c / nf]), cell.error});
  }
  return t;
}

inline CsvTable cv_curve_table(const CvResult& r, const std::vector<double>& lambdas) {
  CsvTable t({"lambda", "log_lambda", "mean_mae", "selected"});
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    t.add({format_number(lambdas[l]), format_number(std::log(lambdas[l])),
           std::isnan(r.mean_mae[l]) ? "" : format_number(r.mean_mae[l]), l == r.best ? "1" : "0"});
  }
  return t;
}

}  // namespace dsbfa

#endif  // DSBFA_TUNING_HPP
