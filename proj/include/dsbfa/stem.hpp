#ifndef DSBFA_STEM_HPP
#define DSBFA_STEM_HPP

// Stochastic EM over the MOGP hyperparameters. Each iteration runs a short
// Gibbs chain under the current hyperparameters, keeps one uniformly chosen
// post-burn-in state (S-step), and maximizes the penalized score likelihood
// on that state's augmented scores (M-step).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/dataset.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/factor_model.hpp"
#include "dsbfa/gibbs.hpp"
#include "dsbfa/io.hpp"
#include "dsbfa/random.hpp"

namespace dsbfa {

/// Lower bound of B and v in natural space.
inline constexpr double kPositivityFloor = 1e-6;

struct MStepOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-5;
};

struct MStepResult {
  MogpHyperparams hp;
  double objective = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

namespace detail {

// Packed coordinates theta with log coordinates kept above log(floor) by
// theta = log(floor) + exp(u); other coordinates are used directly.
class MStepProblem final : public ceres::FirstOrderFunction {
 public:
  MStepProblem(const PenalizedObjective& objective, int k) : objective_(objective), k_(k) {}

  int NumParameters() const override { return parameter_count(k_); }

  Eigen::VectorXd to_theta(const double* u) const {
    Eigen::VectorXd theta(NumParameters());
    for (int i = 0; i < theta.size(); ++i) {
      theta(i) = is_log_coordinate(i, k_) ? log_floor() + std::exp(u[i]) : u[i];
    }
    return theta;
  }

  Eigen::VectorXd from_theta(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd u(theta.size());
    for (int i = 0; i < theta.size(); ++i) {
      // Start strictly inside the feasible region.
      u(i) = is_log_coordinate(i, k_) ? std::log(std::max(theta(i) - log_floor(), 1e-8)) : theta(i);
    }
    return u;
  }

  bool Evaluate(const double* u, double* cost, double* gradient) const override {
    const Eigen::VectorXd theta = to_theta(u);
    if (!theta.allFinite() || theta.maxCoeff() > 700.0) return false;
    Eigen::VectorXd g;
    double value = 0.0;
    try {
      value = objective_.value_and_gradient(theta, g);
    } catch (const Error&) {
      return false;  // non-PD covariance or overflow: the line search backs off
    }
    if (!std::isfinite(value) || !g.allFinite()) return false;
    cost[0] = -value;
    if (gradient != nullptr) {
      for (int i = 0; i < theta.size(); ++i) {
        const double chain = is_log_coordinate(i, k_) ? theta(i) - log_floor() : 1.0;
        gradient[i] = -g(i) * chain;
      }
    }
    return true;
  }

  static double log_floor() { return std::log(kPositivityFloor); }

 private:
  const PenalizedObjective& objective_;
  int k_;
};

}  // namespace detail

/// Maximize the penalized objective from `hp_init` with L-BFGS. Convergence
/// is declared when the max-norm of the gradient in the optimizer's
/// coordinates falls below the tolerance.
inline MStepResult m_step(const std::vector<Eigen::MatrixXd>& scores, const TimeGrid& grid, double lambda,
                          const MogpHyperparams& hp_init, const MStepOptions& opt = {}) {
  hp_init.validate();
  const PenalizedObjective objective(scores, grid, lambda);
  const int k = hp_init.k();
  auto* fn = new detail::MStepProblem(objective, k);
  const ceres::GradientProblem problem(fn);  // takes ownership of fn
  Eigen::VectorXd u = fn->from_theta(pack_parameters(hp_init, kPositivityFloor));
  MStepResult start;
  start.hp = unpack_parameters(fn->to_theta(u.data()), k);
  start.objective = objective.value(start.hp);

  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = opt.max_iterations;
  options.gradient_tolerance = opt.gradient_tolerance;
  options.function_tolerance = 1e-15;
  options.parameter_tolerance = 1e-15;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, u.data(), &summary);

  MStepResult out;
  out.hp = unpack_parameters(fn->to_theta(u.data()), k);
  out.objective = -summary.final_cost;
  out.iterations = static_cast<int>(summary.iterations.size()) - 1;
  Eigen::VectorXd grad(u.size());
  double cost = 0.0;
  if (fn->Evaluate(u.data(), &cost, grad.data())) {
    out.gradient_norm = grad.cwiseAbs().maxCoeff();
    out.objective = -cost;
  }
  out.converged = out.gradient_norm < opt.gradient_tolerance;
  if (!(out.objective >= start.objective)) {
    start.iterations = out.iterations;
    start.gradient_norm = out.gradient_norm;
    return start;
  }
  return out;
}

struct StemConfig {
  int iterations = 200;           ///< L_stem
  double burnin_fraction = 0.5;   ///< StEM iterates discarded before averaging
  int average_window = 0;         ///< m; 0 means every post-burn-in iterate
  long sstep_sweeps = 2000;       ///< Gibbs sweeps per S-step
  double sstep_burnin_fraction = 0.5;
  std::uint64_t seed = 1;
  MStepOptions mstep;
  int checkpoint_every = 0;       ///< 0 disables checkpoints
  std::string checkpoint_path;

  int burnin() const { return static_cast<int>(std::floor(iterations * burnin_fraction)); }
  int window() const { return average_window > 0 ? average_window : iterations - burnin(); }

  void validate() const {
    detail::require(iterations >= 1, "StemConfig: iterations must be positive");
    detail::require(burnin_fraction >= 0.0 && burnin_fraction < 1.0,
                    "StemConfig: burn-in fraction must lie in [0, 1)");
    detail::require(window() >= 1 && window() <= iterations - burnin(),
                    "StemConfig: averaging window must fit inside the post-burn-in iterates");
    detail::require(sstep_sweeps >= 1, "StemConfig: S-step sweeps must be positive");
    detail::require(sstep_burnin_fraction >= 0.0 && sstep_burnin_fraction < 1.0,
                    "StemConfig: S-step burn-in fraction must lie in [0, 1)");
    detail::require(checkpoint_every >= 0, "StemConfig: checkpoint interval must be >= 0");
    detail::require(checkpoint_every == 0 || !checkpoint_path.empty(),
                    "StemConfig: checkpoint path required when checkpointing");
  }
};

/// Per-iteration record of the StEM chain.
struct StemIterate {
  MogpHyperparams hp;
  double objective = 0.0;
  int mstep_iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  long sstep_sweep = 0;  ///< sweep index of the retained S-step state
};

struct StemTrace {
  std::vector<StemIterate> iterates;
  int burnin = 0;
  int window = 0;
};

/// Element-wise mean of the last `window` iterates. Iterates whose v0 vector
/// points against the last iterate's are flipped first (the objective is
/// invariant to a global sign change of v0).
inline MogpHyperparams average_iterates(const StemTrace& trace) {
  detail::require(!trace.iterates.empty(), "average_iterates: empty trace");
  const auto total = static_cast<int>(trace.iterates.size());
  detail::require(trace.window >= 1 && trace.window <= total, "average_iterates: bad window");
  const MogpHyperparams& last = trace.iterates.back().hp;
  const int k = last.k();
  MogpHyperparams mean = MogpHyperparams::uniform(k, 0, 0, 0, 0, 0);
  for (int l = total - trace.window; l < total; ++l) {
    const MogpHyperparams& h = trace.iterates[static_cast<std::size_t>(l)].hp;
    const double s = h.v0.dot(last.v0) < 0.0 ? -1.0 : 1.0;
    mean.v0 += s * h.v0;
    mean.v1 += h.v1.cwiseAbs();
    mean.B0 += h.B0;
    mean.B1 += h.B1;
    mean.c += h.c;
    mean.psi2 += h.psi2;
  }
  const double w = trace.window;
  mean.v0 /= w;
  mean.v1 /= w;
  mean.B0 /= w;
  mean.B1 /= w;
  mean.c /= w;
  mean.psi2 /= w;
  return mean;
}

struct StemResult {
  StemTrace trace;
  MogpHyperparams estimate;
  LatentState last_state;
};

/// Everything needed to continue a run exactly where it stopped.
struct StemCheckpoint {
  int completed = 0;
  MogpHyperparams hp;
  LatentState state;
  std::string rng_state;
  StemTrace trace;
};

inline Json trace_to_json(const StemTrace& trace) {
  Json j;
  j["burnin"] = trace.burnin;
  j["window"] = trace.window;
  Json its = Json::array();
  for (const auto& it : trace.iterates) {
    Json e;
    e["hp"] = hyperparams_to_json(it.hp);
    e["objective"] = it.objective;
    e["mstep_iterations"] = it.mstep_iterations;
    e["gradient_norm"] = it.gradient_norm;
    e["converged"] = it.converged;
    e["sstep_sweep"] = it.sstep_sweep;
    its.push_back(std::move(e));
  }
  j["iterates"] = std::move(its);
  return j;
}

inline StemTrace trace_from_json(const Json& j) {
  StemTrace trace;
  trace.burnin = j.at("burnin").get<int>();
  trace.window = j.at("window").get<int>();
  for (const auto& e : j.at("iterates")) {
    StemIterate it;
    it.hp = hyperparams_from_json(e.at("hp"));
    it.objective = e.at("objective").get<double>();
    it.mstep_iterations = e.at("mstep_iterations").get<int>();
    it.gradient_norm = e.at("gradient_norm").get<double>();
    it.converged = e.at("converged").get<bool>();
    it.sstep_sweep = e.at("sstep_sweep").get<long>();
    trace.iterates.push_back(std::move(it));
  }
  return trace;
}

inline void write_checkpoint(const std::string& path, const StemCheckpoint& cp) {
  Json j;
  j["completed"] = cp.completed;
  j["hp"] = hyperparams_to_json(cp.hp);
  j["state"] = state_to_json(cp.state);
  j["rng"] = cp.rng_state;
  j["trace"] = trace_to_json(cp.trace);
  write_json(path, j);
}

inline StemCheckpoint read_checkpoint(const std::string& path) {
  const Json j = read_json(path);
  try {
    StemCheckpoint cp;
    cp.completed = j.at("completed").get<int>();
    cp.hp = hyperparams_from_json(j.at("hp"));
    cp.state = state_from_json(j.at("state"));
    cp.rng_state = j.at("rng").get<std::string>();
    cp.trace = trace_from_json(j.at("trace"));
    return cp;
  } catch (const Json::exception& e) {
    throw IoError(path + ": malformed checkpoint: " + e.what());
  }
}

/// Starting hyperparameters: moderately smooth, weakly correlated factors.
inline MogpHyperparams default_initial_hyperparams(int k) {
  return MogpHyperparams::uniform(k, 0.3, 1.0, 2.0, 2.0, 0.05);
}

/// Thrown when an M-step fails; carries the trace accumulated so far.
class StemFailure : public NumericalError {
 public:
  StemFailure(const std::string& what, StemTrace trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const StemTrace& trace() const { return trace_; }

 private:
  StemTrace trace_;
};

namespace detail {

inline StemResult run_stem_loop(const Dataset& ds, const PriorConfig& prior, double lambda,
                                const StemConfig& cfg, StemCheckpoint cp, Rng& rng) {
  const long s_burn = static_cast<long>(std::floor(cfg.sstep_sweeps * cfg.sstep_burnin_fraction));
  for (int l = cp.completed; l < cfg.iterations; ++l) {
    const GibbsSampler sampler(ds, cp.hp, prior);
    // S-step: stop at one uniformly chosen post-burn-in sweep.
    const long target = s_burn + static_cast<long>(rng.index(static_cast<std::size_t>(cfg.sstep_sweeps - s_burn)));
    for (long s = 0; s <= target; ++s) sampler.sweep(cp.state, rng);

    StemIterate it;
    try {
      const MStepResult m = m_step(cp.state.Y, ds.grid(), lambda, cp.hp, cfg.mstep);
      it.hp = m.hp;
      it.objective = m.objective;
      it.mstep_iterations = m.iterations;
      it.gradient_norm = m.gradient_norm;
      it.converged = m.converged;
    } catch (const NumericalError& e) {
      throw StemFailure("StEM iteration " + std::to_string(l + 1) + ": " + e.what(), cp.trace);
    }
    it.sstep_sweep = target + 1;
    cp.hp = it.hp;
    cp.trace.iterates.push_back(std::move(it));
    cp.completed = l + 1;
    if (cfg.checkpoint_every > 0 && cp.completed % cfg.checkpoint_every == 0) {
      cp.rng_state = rng.state();
      write_checkpoint(cfg.checkpoint_path, cp);
    }
  }
  StemResult out;
  out.estimate = average_iterates(cp.trace);
  out.trace = std::move(cp.trace);
  out.last_state = std::move(cp.state);
  return out;
}

}  // namespace detail

/// Run StEM for a k-factor model. Deterministic given cfg.seed.
inline StemResult run_stem(const Dataset& ds, const PriorConfig& prior, double lambda, int k,
                           const StemConfig& cfg,
                           const std::optional<MogpHyperparams>& hp_init = std::nullopt) {
  cfg.validate();
  prior.validate(ds.p());
  detail::require(lambda >= 0.0 && std::isfinite(lambda), "run_stem: lambda must be >= 0");
  Rng rng(cfg.seed);
  StemCheckpoint cp;
  cp.hp = hp_init ? *hp_init : default_initial_hyperparams(k);
  detail::require(cp.hp.k() == k, "run_stem: initial hyperparameters have wrong k");
  cp.state = initial_state(ds, k, prior, rng);
  cp.trace.burnin = cfg.burnin();
  cp.trace.window = cfg.window();
  return detail::run_stem_loop(ds, prior, lambda, cfg, std::move(cp), rng);
}

/// Continue a run from a checkpoint written with the same configuration.
inline StemResult resume_stem(const Dataset& ds, const PriorConfig& prior, double lambda,
                              const StemConfig& cfg, const StemCheckpoint& cp) {
  cfg.validate();
  detail::require(cp.completed <= cfg.iterations, "resume_stem: checkpoint is past the configured length");
  cp.state.validate(ds);
  Rng rng(cfg.seed);
  rng.restore(cp.rng_state);
  return detail::run_stem_loop(ds, prior, lambda, cfg, cp, rng);
}

// ---------------------------------------------------------------------------
// Trace diagnostics

struct ParameterDiagnostics {
  std::string name;
  std::vector<double> running_mean;  ///< over the post-burn-in window
  double lag1_autocorrelation = 0.0;
  double geweke_z = 0.0;
  bool stationary = true;
};

struct TraceDiagnostics {
  std::vector<ParameterDiagnostics> parameters;
  bool all_stationary() const {
    for (const auto& p : parameters) {
      if (!p.stationary) return false;
    }
    return true;
  }
};

/// Named natural-space series of every hyperparameter along the trace.
inline std::vector<std::pair<std::string, std::vector<double>>> trace_series(const StemTrace& trace) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  if (trace.iterates.empty()) return out;
  const int k = trace.iterates.front().hp.k();
  auto add = [&](const std::string& name, auto get) {
    std::vector<double> v;
    v.reserve(trace.iterates.size());
    for (const auto& it : trace.iterates) v.push_back(get(it.hp));
    out.emplace_back(name, std::move(v));
  };
  for (int a = 0; a < k; ++a) {
    const std::string s = fmt::format("[{}]", a + 1);
    add("v0" + s, [a](const MogpHyperparams& h) { return h.v0(a); });
    add("v1" + s, [a](const MogpHyperparams& h) { return std::abs(h.v1(a)); });
    add("B0" + s, [a](const MogpHyperparams& h) { return h.B0(a); });
    add("B1" + s, [a](const MogpHyperparams& h) { return h.B1(a); });
    add("c" + s, [a](const MogpHyperparams& h) { return h.c(a); });
  }
  add("psi2", [](const MogpHyperparams& h) { return h.psi2; });
  return out;
}

namespace detail {

inline double mean_of(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += x[i];
  return s / static_cast<double>(hi - lo);
}

/// Sum of squared deviations below rounding level counts as zero.
inline bool negligible_spread(double ss, double mean, std::size_t n) {
  const double scale = 1e-12 * std::max(1.0, std::abs(mean));
  return ss <= static_cast<double>(n) * scale * scale;
}

inline double lag1(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  const double m = mean_of(x, lo, hi);
  double num = 0.0, den = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    den += (x[i] - m) * (x[i] - m);
    if (i + 1 < hi) num += (x[i] - m) * (x[i + 1] - m);
  }
  return negligible_spread(den, m, hi - lo) ? 0.0 : num / den;
}

/// Variance of a segment mean, inflated by the AR(1) factor (1 + r)/(1 - r).
inline double mean_variance(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  const double n = static_cast<double>(hi - lo);
  const double m = mean_of(x, lo, hi);
  double v = 0.0;
  for (std::size_t i = lo; i < hi; ++i) v += (x[i] - m) * (x[i] - m);
  if (negligible_spread(v, m, hi - lo)) return 0.0;
  v /= std::max(n - 1.0, 1.0);
  const double r = std::clamp(lag1(x, lo, hi), -0.99, 0.99);
  return v / n * (1.0 + r) / (1.0 - r);
}

}  // namespace detail

/// Running means, lag-1 autocorrelations and a Geweke-style stationarity flag
/// (first 10% against last 50% of the post-burn-in iterates, |z| < 2).
inline TraceDiagnostics trace_diagnostics(const StemTrace& trace) {
  detail::require(!trace.iterates.empty(), "trace_diagnostics: empty trace");
  const auto total = trace.iterates.size();
  const auto start = static_cast<std::size_t>(trace.burnin);
  detail::require(start < total && total - start >= 20,
                  "trace_diagnostics: need at least 20 post-burn-in iterates");
  const std::size_t n = total - start;
  const std::size_t first_end = start + std::max<std::size_t>(1, n / 10);
  const std::size_t last_begin = total - n / 2;
  TraceDiagnostics out;
  for (auto& [name, x] : trace_series(trace)) {
    ParameterDiagnostics d;
    d.name = name;
    double s = 0.0;
    for (std::size_t i = start; i < total; ++i) {
      s += x[i];
      d.running_mean.push_back(s / static_cast<double>(i - start + 1));
    }
    d.lag1_autocorrelation = detail::lag1(x, start, total);
    const double diff = detail::mean_of(x, start, first_end) - detail::mean_of(x, last_begin, total);
    const double var = detail::mean_variance(x, start, first_end) + detail::mean_variance(x, last_begin, total);
    if (var > 0.0) {
      d.geweke_z = diff / std::sqrt(var);
    } else {
      const double tol = 1e-12 * std::max(1.0, std::abs(detail::mean_of(x, start, total)));
      d.geweke_z = std::abs(diff) <= tol ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    }
    d.stationary = std::abs(d.geweke_z) < 2.0;
    out.parameters.push_back(std::move(d));
  }
  return out;
}

}  // namespace dsbfa

#endif  // DSBFA_STEM_HPP
