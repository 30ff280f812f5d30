#ifndef DSBFA_TOOLS_RUN_CONFIG_HPP
#define DSBFA_TOOLS_RUN_CONFIG_HPP

// Run configuration of the command-line tool: one JSON document with a
// section per command. Relative paths resolve against the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dsbfa/dsbfa.hpp"

namespace dsbfa::cli {

namespace fs = std::filesystem;

/// Reads keys of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j.is_null() ? Json::object() : j), name_(std::move(name)) {
    if (!j_.is_object()) throw InvalidArgument("config: section '" + name_ + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  Json sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : Json::object();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw InvalidArgument("config: unknown key '" + key + "' in section '" + name_ + "'");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw InvalidArgument("config: key '" + key + "' in section '" + name_ + "' has the wrong type");
    }
  }

  Json j_;
  std::string name_;
  std::set<std::string> seen_;
};

struct PriorSettings {
  std::optional<double> c0, d0, c1, d1, c2, d2, c3, d3;
  std::vector<double> mu;  ///< empty: empirical biomarker means

  PriorConfig resolve(const Dataset& ds) const {
    PriorConfig p = PriorConfig::defaults(ds);
    if (c0) p.c0 = *c0;
    if (d0) p.d0 = *d0;
    if (c1) p.c1 = *c1;
    if (d1) p.d1 = *d1;
    if (c2) p.c2 = *c2;
    if (d2) p.d2 = *d2;
    if (c3) p.c3 = *c3;
    if (d3) p.d3 = *d3;
    if (!mu.empty()) p.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    p.validate(ds.p());
    return p;
  }
};

struct GibbsSettings {
  int chains = 3;
  ChainConfig chain;  ///< seed unused; chains derive their own
};

struct CvSection {
  int folds = 5;
  std::vector<double> lambdas = default_lambda_grid();
  StemConfig stem;
  ChainConfig chain;

  CvSection() {
    stem.iterations = 40;
    stem.sstep_sweeps = 200;
    chain.iterations = 2000;
    chain.stride = 10;
  }
};

struct PreprocessSection {
  std::vector<double> reference_grid;  ///< empty: no grid mapping
  bool regress_age = false;
  bool standardize = false;
};

struct PredictSection {
  std::string fit;  ///< directory written by `fit`
  std::string subject;
  std::vector<double> times;  ///< original time units
};

struct AlignSection {
  std::string estimate;   ///< estimates.json of a fit, or its directory
  std::string reference;  ///< truth.json, or another fit's estimates
};

struct RunConfig {
  fs::path base;  ///< directory of the config file
  std::string data, ages, truth, time_scale;
  int k = 2;
  double lambda = 3.0;
  std::uint64_t seed = 1;
  int threads = 1;
  PriorSettings prior;
  StemConfig stem;
  GibbsSettings gibbs;
  CvSection cv;
  SimConfig simulate;
  PreprocessSection preprocess;
  PredictSection predict;
  AlignSection align;

  std::string path(const std::string& p) const {
    if (p.empty()) return p;
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).lexically_normal().string();
  }
};

namespace config_detail {

inline StemConfig read_stem(Json j, const std::string& name, StemConfig s) {
  Section sec(j, name);
  s.iterations = sec.get("iterations", s.iterations);
  s.burnin_fraction = sec.get("burnin_fraction", s.burnin_fraction);
  s.average_window = sec.get("average_window", s.average_window);
  s.sstep_sweeps = sec.get("sstep_sweeps", s.sstep_sweeps);
  s.sstep_burnin_fraction = sec.get("sstep_burnin_fraction", s.sstep_burnin_fraction);
  s.mstep.max_iterations = sec.get("mstep_max_iterations", s.mstep.max_iterations);
  s.mstep.gradient_tolerance = sec.get("gradient_tolerance", s.mstep.gradient_tolerance);
  s.checkpoint_every = sec.get("checkpoint_every", s.checkpoint_every);
  sec.finish();
  return s;
}

inline ChainConfig read_chain(Section& sec, ChainConfig c) {
  c.iterations = sec.get("iterations", c.iterations);
  c.burnin_fraction = sec.get("burnin_fraction", c.burnin_fraction);
  c.stride = sec.get("stride", c.stride);
  return c;
}

inline Json stem_json(const StemConfig& s) {
  return {{"iterations", s.iterations},
          {"burnin_fraction", s.burnin_fraction},
          {"average_window", s.window()},
          {"sstep_sweeps", s.sstep_sweeps},
          {"sstep_burnin_fraction", s.sstep_burnin_fraction},
          {"mstep_max_iterations", s.mstep.max_iterations},
          {"gradient_tolerance", s.mstep.gradient_tolerance},
          {"checkpoint_every", s.checkpoint_every}};
}

inline Json chain_json(const ChainConfig& c) {
  return {{"iterations", c.iterations}, {"burnin_fraction", c.burnin_fraction}, {"stride", c.stride}};
}

}  // namespace config_detail

inline RunConfig parse_run_config(const Json& j, const fs::path& base) {
  RunConfig rc;
  rc.base = base;
  Section top(j, "top level");
  rc.data = top.get<std::string>("data", "");
  rc.ages = top.get<std::string>("ages", "");
  rc.truth = top.get<std::string>("truth", "");
  rc.time_scale = top.get<std::string>("time_scale", "");
  rc.k = top.get("k", rc.k);
  rc.lambda = top.get("lambda", rc.lambda);
  rc.seed = top.get("seed", rc.seed);
  rc.threads = top.get("threads", rc.threads);

  Section prior(top.sub("prior"), "prior");
  rc.prior.c0 = prior.optional<double>("c0");
  rc.prior.d0 = prior.optional<double>("d0");
  rc.prior.c1 = prior.optional<double>("c1");
  rc.prior.d1 = prior.optional<double>("d1");
  rc.prior.c2 = prior.optional<double>("c2");
  rc.prior.d2 = prior.optional<double>("d2");
  rc.prior.c3 = prior.optional<double>("c3");
  rc.prior.d3 = prior.optional<double>("d3");
  rc.prior.mu = prior.get("mu", rc.prior.mu);
  prior.finish();

  rc.stem = config_detail::read_stem(top.sub("stem"), "stem", rc.stem);

  Section gibbs(top.sub("gibbs"), "gibbs");
  rc.gibbs.chains = gibbs.get("chains", rc.gibbs.chains);
  rc.gibbs.chain = config_detail::read_chain(gibbs, rc.gibbs.chain);
  gibbs.finish();

  Section cv(top.sub("cv"), "cv");
  rc.cv.folds = cv.get("folds", rc.cv.folds);
  rc.cv.lambdas = cv.get("lambdas", rc.cv.lambdas);
  rc.cv.stem = config_detail::read_stem(cv.sub("stem"), "cv.stem", rc.cv.stem);
  Section cvg(cv.sub("gibbs"), "cv.gibbs");
  rc.cv.chain = config_detail::read_chain(cvg, rc.cv.chain);
  cvg.finish();
  cv.finish();

  if (top.has("simulate")) rc.simulate = sim_config_from_json(top.sub("simulate"));

  Section pre(top.sub("preprocess"), "preprocess");
  rc.preprocess.reference_grid = pre.get("reference_grid", rc.preprocess.reference_grid);
  rc.preprocess.regress_age = pre.get("regress_age", rc.preprocess.regress_age);
  rc.preprocess.standardize = pre.get("standardize", rc.preprocess.standardize);
  pre.finish();

  Section pred(top.sub("predict"), "predict");
  rc.predict.fit = pred.get<std::string>("fit", "");
  rc.predict.subject = pred.get<std::string>("subject", "");
  rc.predict.times = pred.get("times", rc.predict.times);
  pred.finish();

  Section al(top.sub("align"), "align");
  rc.align.estimate = al.get<std::string>("estimate", "");
  rc.align.reference = al.get<std::string>("reference", "");
  al.finish();
  top.finish();

  dsbfa::detail::require(rc.k >= 1, "config: k must be >= 1");
  dsbfa::detail::require(rc.lambda >= 0, "config: lambda must be >= 0");
  dsbfa::detail::require(rc.threads >= 1, "config: threads must be >= 1");
  dsbfa::detail::require(rc.gibbs.chains >= 1, "config: gibbs.chains must be >= 1");
  rc.stem.validate();
  rc.gibbs.chain.validate();
  rc.cv.stem.validate();
  rc.cv.chain.validate();
  dsbfa::detail::require(rc.cv.folds >= 2, "config: cv.folds must be >= 2");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  const Json j = read_json(path);
  return parse_run_config(j, fs::absolute(path).parent_path());
}

/// Every value the run used, paths resolved.
inline Json resolved_json(const RunConfig& rc, const std::string& command) {
  Json j;
  j["command"] = command;
  j["data"] = rc.path(rc.data);
  j["ages"] = rc.path(rc.ages);
  j["truth"] = rc.path(rc.truth);
  j["time_scale"] = rc.path(rc.time_scale);
  j["k"] = rc.k;
  j["lambda"] = rc.lambda;
  j["seed"] = rc.seed;
  Json prior = Json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    prior[key] = v ? Json(*v) : Json("default");
  };
  put("c0", rc.prior.c0);
  put("d0", rc.prior.d0);
  put("c1", rc.prior.c1);
  put("d1", rc.prior.d1);
  put("c2", rc.prior.c2);
  put("d2", rc.prior.d2);
  put("c3", rc.prior.c3);
  put("d3", rc.prior.d3);
  prior["mu"] = rc.prior.mu.empty() ? Json("empirical biomarker means") : Json(rc.prior.mu);
  j["prior"] = prior;
  j["stem"] = config_detail::stem_json(rc.stem);
  j["gibbs"] = config_detail::chain_json(rc.gibbs.chain);
  j["gibbs"]["chains"] = rc.gibbs.chains;
  j["cv"] = {{"folds", rc.cv.folds},
             {"lambdas", rc.cv.lambdas},
             {"stem", config_detail::stem_json(rc.cv.stem)},
             {"gibbs", config_detail::chain_json(rc.cv.chain)}};
  j["simulate"] = sim_config_to_json(rc.simulate);
  j["preprocess"] = {{"reference_grid", rc.preprocess.reference_grid},
                     {"regress_age", rc.preprocess.regress_age},
                     {"standardize", rc.preprocess.standardize}};
  j["predict"] = {{"fit", rc.path(rc.predict.fit)}, {"subject", rc.predict.subject}, {"times", rc.predict.times}};
  j["align"] = {{"estimate", rc.path(rc.align.estimate)}, {"reference", rc.path(rc.align.reference)}};
  return j;
}

}  // namespace dsbfa::cli

#endif  // DSBFA_TOOLS_RUN_CONFIG_HPP
