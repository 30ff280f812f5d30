// dsbfa: simulate, preprocess, fit, cv, predict and align from one JSON config.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <ceres/version.h>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "run_config.hpp"

#ifndef DSBFA_VERSION
#define DSBFA_VERSION "unknown"
#endif

namespace {

using namespace dsbfa;
using namespace dsbfa::cli;

constexpr const char* kThreadsEnv = "DSBFA_THREADS";

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool resume = false;
  std::string subject;
  std::vector<double> times;
};

Json versions_json() {
  return {{"dsbfa", DSBFA_VERSION},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
          {"ceres", CERES_VERSION_STRING},
          {"fmt", FMT_VERSION},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION},
          {"compiler", __VERSION__}};
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  return "internal";
}

// Output directory of one command. Wall time goes to timing.json only, so
// every other file is a pure function of config and seeds.
class Run {
 public:
  Run(std::string command, const RunConfig& rc, const std::string& out) : command_(std::move(command)), dir_(out) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    write_json(file("config.resolved.json"), resolved_json(rc, command_));
    write_json(file("versions.json"), versions_json());
    fs::remove(file("error.json"), ec);
  }

  std::string file(const std::string& name) const { return (dir_ / name).string(); }
  const std::string& stage() const { return stage_; }

  template <typename F>
  void stage(const std::string& name, F&& body) {
    stage_ = name;
    const auto t0 = std::chrono::steady_clock::now();
    body();
    timing_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(file("timing.json"), {{"command", command_}, {"seconds", timing_}});
  }

  void fail(const std::exception& e) const {
    write_json(file("error.json"), {{"command", command_},
                                    {"stage", stage_},
                                    {"kind", error_kind(e)},
                                    {"message", e.what()},
                                    {"completed_stages", timing_}});
  }

 private:
  std::string command_;
  fs::path dir_;
  std::string stage_ = "setup";
  Json timing_ = Json::object();
};

CsvTable matrix_table(const Eigen::MatrixXd& m, const std::string& corner, const std::vector<std::string>& rows,
                      const std::vector<std::string>& cols) {
  std::vector<std::string> header{corner};
  header.insert(header.end(), cols.begin(), cols.end());
  CsvTable t(header);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<std::string> row{rows[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(format_number(m(r, c)));
    t.add(std::move(row));
  }
  return t;
}

std::vector<std::string> factor_labels(int k) {
  std::vector<std::string> out;
  for (int a = 0; a < k; ++a) out.push_back(fmt::format("factor{}", a + 1));
  return out;
}

std::string require_path(const RunConfig& rc, const std::string& p, const std::string& what) {
  if (p.empty()) throw InvalidArgument("config: '" + what + "' is required for this command");
  const std::string full = rc.path(p);
  if (!fs::exists(full)) throw IoError(what + " not found: " + full);
  return full;
}

std::optional<TimeScale> load_time_scale(const RunConfig& rc) {
  if (rc.time_scale.empty()) return std::nullopt;
  const Json j = read_json(require_path(rc, rc.time_scale, "time_scale"));
  return TimeScale(j.at("scale").get<double>(), j.at("original_times").get<std::vector<double>>());
}

// Plain decimal with a true minus sign, as in published loading tables.
std::string report_number(double x) {
  const std::string s = fmt::format("{:.2f}", x);
  if (s == "-0.00") return "0.00";
  return s.front() == '-' ? "−" + s.substr(1) : s;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& rc, Run& run) {
  SimConfig cfg = rc.simulate;
  cfg.validate();
  run.stage("simulate", [&] {
    for (int r = 0; r < cfg.replicates; ++r) {
      const Simulated sim = generate_replicate(cfg, r);
      fs::path dir = run.file("");
      if (cfg.replicates > 1) {
        dir /= fmt::format("rep{:03d}", r + 1);
        fs::create_directories(dir);
      }
      write_dataset((dir / "data.csv").string(), sim.data);
      write_json((dir / "truth.json").string(), truth_to_json(sim.truth));
      const auto labels = factor_labels(cfg.k);
      matrix_table(sim.truth.correlation, "factor", labels, labels).write((dir / "truth_correlation.csv").string());
      const Eigen::VectorXd realized = sim.truth.Z.cast<double>().colwise().mean();
      std::string rates;
      for (int a = 0; a < cfg.k; ++a) rates += fmt::format("{}{:.3f}", a ? " " : "", realized(a));
      std::cout << fmt::format("replicate {}: n={} p={} k={} q={} rows={} realized sparsity={:.3f} (per factor: {})\n",
                               r + 1, cfg.n, cfg.p, cfg.k, cfg.q, sim.data.total_observations() * cfg.p,
                               realized.mean(), rates);
    }
  });
  return 0;
}

int cmd_preprocess(const RunConfig& rc, Run& run) {
  Dataset ds;
  run.stage("load", [&] { ds = read_dataset(require_path(rc, rc.data, "data")); });
  Json summary = {{"n", ds.n()}, {"p", ds.p()}};
  if (rc.preprocess.regress_age) {
    run.stage("age", [&] {
      const auto ages = read_ages(require_path(rc, rc.ages, "ages"), ds);
      ds = regress_out_age(ds, ages);
    });
  }
  if (!rc.preprocess.reference_grid.empty()) {
    run.stage("reference_grid", [&] {
      MappedDataset m = map_dataset_to_reference_grid(ds, rc.preprocess.reference_grid);
      mapping_table(m).write(run.file("mapping.csv"));
      summary["merged_observations"] = m.merges;
      summary["icc"] = icc_distance_diagnostic(m);
      ds = std::move(m.data);
      std::cout << fmt::format("reference grid: {} merged observations, ICC {:.4f}\n", summary["merged_observations"].get<int>(),
                               summary["icc"].get<double>());
    });
  }
  if (rc.preprocess.standardize) {
    run.stage("standardize", [&] {
      StandardizedData s = standardize_times(ds);
      write_json(run.file("time_scale.json"), {{"scale", s.scale.scale()}, {"original_times", ds.grid().values()}});
      summary["time_scale"] = s.scale.scale();
      ds = std::move(s.data);
    });
  }
  run.stage("write", [&] {
    summary["q"] = ds.q();
    write_dataset(run.file("data.csv"), ds);
    write_json(run.file("preprocess.json"), summary);
  });
  return 0;
}

struct PosteriorSummary {
  Eigen::MatrixXd median, lower, upper, inclusion;
};

PosteriorSummary summarize_loadings(const std::vector<AlignedChain>& chains, int p, int k) {
  PosteriorSummary out;
  out.median.resize(p, k);
  out.lower.resize(p, k);
  out.upper.resize(p, k);
  out.inclusion = Eigen::MatrixXd::Zero(p, k);
  std::vector<Eigen::MatrixXd> draws;
  for (const auto& c : chains) {
    for (const auto& st : c.samples.draws) {
      draws.push_back(st.loadings());
      out.inclusion += st.Z.cast<double>();
    }
  }
  out.inclusion /= static_cast<double>(draws.size());
  std::vector<double> v(draws.size());
  for (int g = 0; g < p; ++g) {
    for (int a = 0; a < k; ++a) {
      for (std::size_t d = 0; d < draws.size(); ++d) v[d] = draws[d](g, a);
      out.median(g, a) = quantile(v, 0.5);
      out.lower(g, a) = quantile(v, 0.025);
      out.upper(g, a) = quantile(v, 0.975);
    }
  }
  return out;
}

CsvTable stem_trace_table(const StemTrace& trace) {
  std::vector<std::string> header{"iteration", "objective", "mstep_iterations", "gradient_norm", "converged"};
  const auto series = trace_series(trace);
  for (const auto& [name, values] : series) header.push_back(name);
  CsvTable t(header);
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    const auto& it = trace.iterates[i];
    std::vector<std::string> row{std::to_string(i + 1), format_number(it.objective), std::to_string(it.mstep_iterations),
                                 format_number(it.gradient_norm), it.converged ? "1" : "0"};
    for (const auto& [name, values] : series) row.push_back(format_number(values[i]));
    t.add(std::move(row));
  }
  return t;
}

int cmd_fit(const RunConfig& rc, Run& run, const Options& opt) {
  Dataset ds;
  PriorConfig prior;
  std::optional<TimeScale> scale;
  std::optional<SimTruth> truth;
  run.stage("load", [&] {
    ds = read_dataset(require_path(rc, rc.data, "data"));
    prior = rc.prior.resolve(ds);
    scale = load_time_scale(rc);
    if (!rc.truth.empty()) truth = truth_from_json(read_json(require_path(rc, rc.truth, "truth")));
  });
  const int k = rc.k;
  const auto labels = factor_labels(k);

  StemResult stem;
  run.stage("stem", [&] {
    StemConfig cfg = rc.stem;
    cfg.seed = Rng::derive(rc.seed, 1).next_seed();
    if (cfg.checkpoint_every > 0) cfg.checkpoint_path = run.file("stem_checkpoint.json");
    try {
      if (opt.resume && cfg.checkpoint_every > 0 && fs::exists(cfg.checkpoint_path)) {
        stem = resume_stem(ds, prior, rc.lambda, cfg, read_checkpoint(cfg.checkpoint_path));
      } else {
        stem = run_stem(ds, prior, rc.lambda, k, cfg);
      }
    } catch (const StemFailure& e) {
      stem_trace_table(e.trace()).write(run.file("stem_trace.csv"));
      throw;
    }
    stem_trace_table(stem.trace).write(run.file("stem_trace.csv"));
    const auto& last = stem.trace.iterates.back();
    write_json(run.file("hyperparameters.json"), {{"k", k},
                                                  {"lambda", rc.lambda},
                                                  {"estimate", hyperparams_to_json(stem.estimate)},
                                                  {"final_objective", last.objective},
                                                  {"final_gradient_norm", last.gradient_norm}});
    matrix_table(correlation_matrix(stem.estimate), "factor", labels, labels).write(run.file("cross_correlation.csv"));
    CsvTable diag({"parameter", "lag1_autocorrelation", "geweke_z", "stationary"});
    try {
      for (const auto& d : trace_diagnostics(stem.trace).parameters) {
        diag.add({d.name, format_number(d.lag1_autocorrelation), format_number(d.geweke_z), d.stationary ? "1" : "0"});
      }
    } catch (const InvalidArgument& e) {
      std::cerr << "warning: no trace diagnostics: " << e.what() << "\n";
    }
    diag.write(run.file("diagnostics.csv"));
  });

  std::vector<ChainSamples> chains(static_cast<std::size_t>(rc.gibbs.chains));
  run.stage("gibbs", [&] {
    std::vector<std::exception_ptr> errors(chains.size());
    auto work = [&](std::size_t c) {
      try {
        ChainConfig cc = rc.gibbs.chain;
        cc.seed = Rng::derive(rc.seed, 100 + c).next_seed();
        Rng init_rng = Rng::derive(rc.seed, 200 + c);
        chains[c] = run_chain(ds, stem.estimate, prior, cc, initial_state(ds, k, prior, init_rng));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(rc.threads), chains.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c; (c = next++) < chains.size();) work(c);
      });
    }
    for (std::size_t c; (c = next++) < chains.size();) work(c);
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  });

  std::vector<AlignedChain> aligned;
  run.stage("align", [&] { aligned = align_chains(ds, chains, stem.estimate, prior); });

  run.stage("summaries", [&] {
    const PosteriorSummary s = summarize_loadings(aligned, ds.p(), k);
    CsvTable table({"biomarker", "factor", "median", "lower", "upper", "inclusion_probability", "summary"});
    for (int g = 0; g < ds.p(); ++g) {
      for (int a = 0; a < k; ++a) {
        table.add({ds.biomarkers()[static_cast<std::size_t>(g)], std::to_string(a + 1), format_number(s.median(g, a)),
                   format_number(s.lower(g, a)), format_number(s.upper(g, a)), format_number(s.inclusion(g, a)),
                   fmt::format("median {}, CI ({}, {})", report_number(s.median(g, a)), report_number(s.lower(g, a)),
                               report_number(s.upper(g, a)))});
      }
    }
    table.write(run.file("loadings.csv"));
    const Eigen::MatrixXd R = correlation_matrix(stem.estimate);
    write_json(run.file("estimates.json"), {{"biomarkers", ds.biomarkers()},
                                            {"L", dsbfa::detail::matrix_to_json(s.median)},
                                            {"correlation", dsbfa::detail::matrix_to_json(R)}});

    CsvTable traj({"subject_id", "chain", "draw", "factor", "time", "value"});
    Json draws = Json::array();
    for (std::size_t c = 0; c < aligned.size(); ++c) {
      const auto& chain = aligned[c].samples;
      for (std::size_t d = 0; d < chain.draws.size(); ++d) {
        const auto& st = chain.draws[d];
        draws.push_back(state_to_json(st));
        for (int i = 0; i < ds.n(); ++i) {
          const auto& Yi = st.Y[static_cast<std::size_t>(i)];
          for (int a = 0; a < k; ++a) {
            for (int j = 0; j < ds.q(); ++j) {
              const double t = scale ? scale->to_original(ds.grid()[j]) : ds.grid()[j];
              traj.add({ds.subject(i).id, std::to_string(c + 1), std::to_string(chain.sweeps[d]), std::to_string(a + 1),
                        format_number(t), format_number(Yi(a, j))});
            }
          }
        }
      }
    }
    traj.write(run.file("factor_trajectories.csv"));
    write_text_atomic(run.file("posterior_draws.json"),
                      Json{{"hyperparameters", hyperparams_to_json(stem.estimate)}, {"draws", std::move(draws)}}.dump() +
                          "\n");

    if (truth) {
      const RecoveryScore score = score_recovery(s.median, R, *truth);
      write_json(run.file("truth_mad.json"), {{"correlation_mad", score.correlation_mad},
                                              {"loading_mad", score.loading_mad},
                                              {"signed_permutation", score.sp.to_string()}});
      std::cout << fmt::format("truth-aligned MAD: cross-correlation {:.4f}, loadings {:.4f}\n", score.correlation_mad,
                               score.loading_mad);
    }
  });
  std::cout << fmt::format("fit: k={} lambda={} {}\n", k, rc.lambda, stem.estimate.to_string());
  return 0;
}

int cmd_cv(const RunConfig& rc, Run& run) {
  Dataset ds;
  PriorConfig prior;
  run.stage("load", [&] {
    ds = read_dataset(require_path(rc, rc.data, "data"));
    prior = rc.prior.resolve(ds);
  });
  run.stage("cv", [&] {
    const CvPlan plan = make_plan(ds, rc.cv.folds, rc.cv.lambdas, rc.seed);
    CvSettings settings;
    settings.k = rc.k;
    settings.stem = rc.cv.stem;
    settings.chain = rc.cv.chain;
    settings.threads = rc.threads;
    const CvResult r = cv_lambda(ds, prior, plan, settings);
    cv_cells_table(r, plan.lambdas).write(run.file("cv_cells.csv"));
    cv_curve_table(r, plan.lambdas).write(run.file("cv_curve.csv"));
    Json folds = Json::array();
    for (const auto& f : plan.fold_subjects) {
      Json ids = Json::array();
      for (int i : f) ids.push_back(ds.subject(i).id);
      folds.push_back(std::move(ids));
    }
    write_json(run.file("cv_result.json"), {{"lambda_opt", r.lambda_opt}, {"best_index", r.best}, {"folds", folds}});
    std::size_t failed = 0;
    for (const auto& c : r.cells) failed += c.ok() ? 0 : 1;
    std::cout << fmt::format("lambda_opt = {} (log {:.2f}); {} of {} cells failed\n", r.lambda_opt,
                             std::log(r.lambda_opt), failed, r.cells.size());
  });
  return 0;
}

// Validated before the output directory exists: a bad request writes nothing.
struct PredictRequest {
  std::string fit_dir;
  std::string subject;
  std::vector<double> times;
};

PredictRequest predict_request(const RunConfig& rc, const Options& opt) {
  PredictRequest q;
  q.subject = opt.subject.empty() ? rc.predict.subject : opt.subject;
  q.times = opt.times.empty() ? rc.predict.times : opt.times;
  if (q.times.empty()) throw InvalidArgument("predict: empty time list");
  if (q.subject.empty()) throw InvalidArgument("predict: no subject given");
  for (double t : q.times) dsbfa::detail::require(std::isfinite(t), "predict: non-finite time");
  std::sort(q.times.begin(), q.times.end());
  q.times.erase(std::unique(q.times.begin(), q.times.end()), q.times.end());
  q.fit_dir = require_path(rc, rc.predict.fit, "predict.fit");
  if (!fs::exists(fs::path(q.fit_dir) / "posterior_draws.json")) {
    throw IoError("predict: " + q.fit_dir + " has no posterior_draws.json; run fit first");
  }
  return q;
}

int cmd_predict(const RunConfig& rc, Run& run, const PredictRequest& q) {
  Dataset ds;
  MogpHyperparams hp;
  std::vector<LatentState> draws;
  std::optional<TimeScale> scale;
  int i = -1;
  run.stage("load", [&] {
    ds = read_dataset(require_path(rc, rc.data, "data"));
    i = ds.find_subject(q.subject);
    if (i < 0) throw InvalidArgument("predict: unknown subject " + q.subject);
    const Json j = read_json((fs::path(q.fit_dir) / "posterior_draws.json").string());
    hp = hyperparams_from_json(j.at("hyperparameters"));
    for (const auto& d : j.at("draws")) draws.push_back(state_from_json(d));
    for (const auto& st : draws) st.validate(ds);
    scale = load_time_scale(rc);
  });
  run.stage("predict", [&] {
    std::vector<double> standard;
    for (double t : q.times) standard.push_back(scale ? scale->to_standard(t) : t);
    Rng rng = Rng::derive(rc.seed, 300);
    const auto samples = posterior_predictive(ds, i, TimeGrid(standard), draws, hp, rng);
    const PredictiveSummary s = summarize_predictive(samples);
    CsvTable t({"subject_id", "biomarker", "time", "median", "lower", "upper"});
    for (int g = 0; g < ds.p(); ++g) {
      for (std::size_t m = 0; m < q.times.size(); ++m) {
        const auto c = static_cast<Eigen::Index>(m);
        t.add({q.subject, ds.biomarkers()[static_cast<std::size_t>(g)], format_number(q.times[m]),
               format_number(s.median(g, c)), format_number(s.lower(g, c)), format_number(s.upper(g, c))});
      }
    }
    t.write(run.file("predictions.csv"));
  });
  return 0;
}

struct Estimates {
  Eigen::MatrixXd L;
  std::optional<Eigen::MatrixXd> correlation;
};

Estimates load_estimates(const RunConfig& rc, const std::string& p, const std::string& what) {
  fs::path path = require_path(rc, p, what);
  if (fs::is_directory(path)) path /= "estimates.json";
  const Json j = read_json(path.string());
  if (!j.contains("L")) throw IoError(path.string() + ": no loading matrix 'L'");
  Estimates e;
  e.L = dsbfa::detail::matrix_from_json<double>(j.at("L"));
  if (j.contains("correlation")) e.correlation = dsbfa::detail::matrix_from_json<double>(j.at("correlation"));
  return e;
}

int cmd_align(const RunConfig& rc, Run& run) {
  Estimates est, ref;
  run.stage("load", [&] {
    est = load_estimates(rc, rc.align.estimate, "align.estimate");
    ref = load_estimates(rc, rc.align.reference, "align.reference");
  });
  run.stage("align", [&] {
    const Alignment al = align_to_reference(est.L, ref.L);
    Json out = {{"perm", al.sp.perm},
                {"sign", al.sp.sign},
                {"signed_permutation", al.sp.to_string()},
                {"loading_mad", al.mad},
                {"unaligned_loading_mad", al.unaligned_mad}};
    const auto labels = factor_labels(static_cast<int>(est.L.cols()));
    std::vector<std::string> rows;
    for (Eigen::Index g = 0; g < est.L.rows(); ++g) rows.push_back(fmt::format("{}", g + 1));
    matrix_table(al.aligned, "biomarker", rows, labels).write(run.file("aligned_loadings.csv"));
    if (est.correlation) {
      const Eigen::MatrixXd R = apply_to_correlation(al.sp, *est.correlation);
      matrix_table(R, "factor", labels, labels).write(run.file("aligned_correlation.csv"));
      if (ref.correlation) out["correlation_mad"] = mad_cross_correlation(R, *ref.correlation);
    }
    write_json(run.file("alignment.json"), out);
    std::cout << fmt::format("alignment {}: loading MAD {:.4f} (unaligned {:.4f})\n", al.sp.to_string(), al.mad,
                             al.unaligned_mad);
  });
  return 0;
}

int resolve_threads(int flag, int config) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv(kThreadsEnv)) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument(std::string(kThreadsEnv) + " must be a positive integer");
  }
  return config;
}

void report_error(const std::string& command, const std::string& stage, const std::exception& e) {
  std::cerr << Json{{"error", {{"command", command}, {"stage", stage}, {"kind", error_kind(e)}, {"message", e.what()}}}}
                   .dump()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic sparse Bayesian factor analysis of longitudinal biomarkers"};
  app.require_subcommand(1);
  Options opt;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", opt.out, "output directory")->required();
    sub->add_option("--seed", opt.seed, "override every seed in the config");
    sub->add_option("--threads", opt.threads, std::string("worker threads (else $") + kThreadsEnv + ", else config)")
        ->check(CLI::PositiveNumber);
  };
  auto* sim = app.add_subcommand("simulate", "generate synthetic data with known truth");
  auto* pre = app.add_subcommand("preprocess", "age adjustment, reference-grid mapping, time scaling");
  auto* fit = app.add_subcommand("fit", "StEM hyperparameters, then aligned Gibbs chains");
  auto* cv = app.add_subcommand("cv", "cross-validate the roughness penalty");
  auto* pred = app.add_subcommand("predict", "posterior-predictive trajectories of one subject");
  auto* align = app.add_subcommand("align", "align estimated loadings to a reference");
  for (auto* s : {sim, pre, fit, cv, pred, align}) common(s);
  fit->add_flag("--resume", opt.resume, "continue StEM from the checkpoint in the output directory");
  pred->add_option("--subject", opt.subject, "subject id");
  pred->add_option("--times", opt.times, "prediction times in original units")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  std::optional<Run> run;
  try {
    RunConfig rc = load_run_config(opt.config);
    if (opt.seed) rc.seed = rc.simulate.seed = *opt.seed;
    rc.threads = resolve_threads(opt.threads, rc.threads);
    std::optional<PredictRequest> request;
    if (command == "predict") request = predict_request(rc, opt);
    run.emplace(command, rc, opt.out);
    try {
      if (command == "simulate") return cmd_simulate(rc, *run);
      if (command == "preprocess") return cmd_preprocess(rc, *run);
      if (command == "fit") return cmd_fit(rc, *run, opt);
      if (command == "cv") return cmd_cv(rc, *run);
      if (command == "predict") return cmd_predict(rc, *run, *request);
      return cmd_align(rc, *run);
    } catch (const std::exception& e) {
      run->fail(e);
      throw;
    }
  } catch (const std::exception& e) {
    report_error(command, run ? run->stage() : "setup", e);
    return 1;
  }
}
