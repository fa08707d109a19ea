#pragma once

// Command-line front end. dispatch() parses argv, resolves the config, runs
// one subcommand and writes its outputs into a single directory. Exit codes:
// 0 success, 1 operation error, 2 usage or config error.

#include <chrono>
#include <ctime>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "obsmult/config.hpp"
#include "obsmult/serialize.hpp"

namespace obsmult::cli {

inline constexpr std::pair<const char*, const char*> kCommands[] = {
    {"fit", "fit a logistic model (model.json)"},
    {"regret", "Monte Carlo regret from the fitted model's own probabilities (regret.csv)"},
    {"true-regret", "regret under the true probabilities of semi-synthetic data (regret.csv)"},
    {"bootstrap", "bootstrap-resampling baseline (regret.csv)"},
    {"enumerate", "exact regret by enumerating every labeling, n <= 22 (regret.csv)"},
    {"theory", "closed-form variance Q_i and error bound (theory.csv, theory.json)"},
    {"semisynth", "build a semi-synthetic dataset (semisynth.csv, semisynth.json)"},
    {"selective", "coverage vs mean KL when abstaining on high regret (curves.csv)"},
    {"active", "active learning by regret vs uniform acquisition (trace.csv)"},
    {"trials", "repeat an experiment over redrawn labels (trials.csv, summary.json)"}};

namespace detail {

/// Config keys settable from the command line. A value is emitted into the
/// flag layer only if the option appeared on the command line.
class FlagLayer {
 public:
  explicit FlagLayer(CLI::App& app) : app_(app) {}

  template <typename T>
  void option(const std::string& names, const char* key, const std::string& desc) {
    auto slot = std::make_shared<T>();
    CLI::Option* opt = app_.add_option(names, *slot, desc);
    emit_.push_back([slot, opt, key](Json& j) {
      if (opt->count() > 0) j[key] = *slot;
    });
  }

  void flag(const std::string& names, const char* key, const std::string& desc) {
    auto slot = std::make_shared<bool>(false);
    CLI::Option* opt = app_.add_flag(names, *slot, desc);
    emit_.push_back([slot, opt, key](Json& j) {
      if (opt->count() > 0) j[key] = *slot;
    });
  }

  Json collect() const {
    Json j = Json::object();
    for (const auto& e : emit_) e(j);
    return j;
  }

 private:
  CLI::App& app_;
  std::vector<std::function<void(Json&)>> emit_;
};

inline void add_config_flags(FlagLayer& f) {
  f.option<std::string>("--profile", "profile", "named preset: default, desk or paper");
  f.option<std::uint64_t>("--seed", "master_seed", "master seed");
  f.option<std::int64_t>("--k", "k", "number of label resamples K");
  f.option<std::int64_t>("--trials", "n_trials", "number of trials");
  f.option<double>("--ridge", "ridge", "L2 penalty of the trained model");
  f.flag("--intercept,!--no-intercept", "include_intercept", "fit an intercept");
  f.option<std::int64_t>("--max-iters", "max_iters", "Newton iteration cap");
  f.option<double>("--grad-tol", "grad_tol", "gradient infinity-norm tolerance");
  f.option<std::string>("--data", "data", "input CSV");
  f.option<std::string>("--label-column", "label_column", "label column name");
  f.flag("--standardize,!--no-standardize", "standardize", "standardize CSV features");
  f.option<std::string>("--semisynth", "semisynth", "directory written by the semisynth command");
  f.option<std::string>("--model", "model", "model.json to analyse instead of fitting one");
  f.option<double>("--gt-ridge", "gt_ridge", "L2 penalty of the ground-truth fit");
  f.flag("--gt-intercept,!--no-gt-intercept", "gt_intercept", "ground-truth model has an intercept");
  f.option<std::string>("--generator", "generator", "two_cluster, isotropic or annulus");
  f.option<std::int64_t>("--n", "n_points", "generated points");
  f.option<std::int64_t>("--dims", "dims", "generated dimensions (isotropic, annulus)");
  f.option<double>("--separation", "separation", "two_cluster centre distance");
  f.option<double>("--jitter", "jitter", "two_cluster spread");
  f.option<std::vector<double>>("--theta", "theta_true", "ground-truth parameters (isotropic, annulus)");
  f.option<std::int64_t>("--levels", "cutoff_levels", "number of quantile cutoffs");
  f.option<std::vector<double>>("--cutoffs", "cutoffs", "explicit regret cutoffs");
  f.option<std::int64_t>("--batch", "batch", "points acquired per step");
  f.option<double>("--initial-fraction", "initial_fraction", "initially labeled fraction");
  f.option<std::int64_t>("--max-batches", "max_batches", "acquisition steps (negative: until the pool is empty)");
  f.option<std::string>("--strategy", "strategy", "estimated_regret, true_regret, uniform or all");
  f.option<std::string>("--ranking", "ranking", "estimated_regret, true_regret, oracle_error or all");
  f.option<std::string>("--experiment", "experiment", "theory_vs_actual, selective or active");
  f.option<double>("--constant", "constant", "constant in the epsilon bound");
  f.option<double>("--fallback-ridge", "fallback_ridge", "first extra ridge for separable resamples");
  f.option<double>("--fallback-factor", "fallback_factor", "extra ridge growth per escalation");
  f.option<std::int64_t>("--fallback-escalations", "fallback_escalations", "escalations before giving up");
  f.option<std::string>("--out", "out", "output directory");
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Inputs

inline Matrix maybe_standardize(const ExperimentConfig& cfg, const Matrix& x) {
  return cfg.standardize ? fit_standardization(x).apply(x) : x;
}

inline Dataset load_data(const ExperimentConfig& cfg) {
  Dataset d = load_csv(cfg.data, cfg.label_column);
  if (!cfg.standardize) return d;
  return Dataset(maybe_standardize(cfg, d.features()), d.labels(), d.feature_names());
}

inline SemiSyntheticDataset generate_semisynthetic(const ExperimentConfig& cfg) {
  const LabelDrawSeed draw{cfg.master_seed, 0};
  if (cfg.generator == "two_cluster") {
    const RawProblem raw = two_cluster_problem({cfg.n_points / 2, cfg.separation, cfg.jitter}, cfg.master_seed);
    return make_semisynthetic(raw.features, raw.raw_labels, {cfg.gt_ridge, cfg.gt_intercept}, draw);
  }
  const auto dist = cfg.generator == "annulus" ? FeatureDistribution::Annulus : FeatureDistribution::StandardNormal;
  Vector theta(cfg.dims);
  if (cfg.theta_true.empty()) {
    for (Index j = 0; j < theta.size(); ++j) theta(j) = j % 2 == 0 ? 0.6 : -0.6;
  } else if (static_cast<std::int64_t>(cfg.theta_true.size()) == cfg.dims) {
    theta = from_list(cfg.theta_true);
  } else {
    throw Error(ErrorKind::InvalidConfig, "theta_true has " + std::to_string(cfg.theta_true.size()) +
                                              " entries but dims is " + std::to_string(cfg.dims));
  }
  const Matrix x = sample_features(cfg.n_points, cfg.dims, dist, cfg.master_seed);
  return semisynthetic_from_model(x, LogisticModel{theta, false, {}}, draw);
}

/// --semisynth directory, else ground truth fit to --data, else a generator.
inline SemiSyntheticDataset load_semisynthetic(const ExperimentConfig& cfg) {
  if (!cfg.semisynth.empty()) return read_semisynthetic(cfg.semisynth);
  if (!cfg.data.empty()) {
    const Dataset d = load_data(cfg);
    return make_semisynthetic(d.features(), d.labels(), {cfg.gt_ridge, cfg.gt_intercept},
                              {cfg.master_seed, 0}, d.feature_names());
  }
  return generate_semisynthetic(cfg);
}

/// --data, else the labels of the semi-synthetic source.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data.empty()) return load_data(cfg);
  return load_semisynthetic(cfg).base;
}

inline RegretOptions regret_options(const ExperimentConfig& cfg, unsigned threads) {
  return RegretOptions{threads, cfg.fallback()};
}

template <typename Tag, std::size_t N>
std::vector<Tag> select(const std::string& choice, const std::pair<const char*, Tag> (&all)[N]) {
  std::vector<Tag> out;
  for (const auto& [name, tag] : all) {
    if (choice == "all" || choice == name) out.push_back(tag);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct Run {
  ExperimentConfig cfg;
  unsigned threads = 1;
  fs::path dir;
  Json meta = Json::object();
  std::vector<fs::path> written;
  std::string summary;

  void write(const std::string& name, std::string_view content) {
    io::write_file_atomic(dir / name, content);
    written.push_back(dir / name);
  }
};

inline void run_fit(Run& r) {
  const Dataset data = load_dataset(r.cfg);
  const FitTrace trace = fit_logistic_traced(data, r.cfg.fit_options());
  r.write("model.json", dump_json(model_to_json(trace.model)));
  r.meta["fit"] = Json{{"iterations", trace.iterations},
                       {"gradient_norm", trace.gradient_norm},
                       {"loss", trace.losses.empty() ? 0.0 : trace.losses.back()}};
  r.summary = "fitted n=" + std::to_string(data.n()) + " d=" + std::to_string(data.d()) + " in " +
              std::to_string(trace.iterations) + " iterations";
}

inline void finish_regret(Run& r, const RegretReport& report) {
  r.write("regret.csv", regret_csv(report));
  r.meta["regret"] = regret_metadata(report);
  r.summary = std::string(estimator_name(report.estimator)) + ": " + std::to_string(report.regret.size()) +
              " points, max regret " + io::format_double(report.regret.size() ? report.regret.maxCoeff() : 0.0) +
              ", fallback refits " + std::to_string(report.fallback.refits);
}

inline void run_regret(Run& r) {
  finish_regret(r, estimate_regret(load_dataset(r.cfg), logistic_trainer(r.cfg.fit_options()), r.cfg.k,
                                   r.cfg.master_seed, regret_options(r.cfg, r.threads)));
}

inline void run_true_regret(Run& r) {
  finish_regret(r, true_regret(load_semisynthetic(r.cfg), logistic_trainer(r.cfg.fit_options()), r.cfg.k,
                               r.cfg.master_seed, regret_options(r.cfg, r.threads)));
}

inline void run_bootstrap(Run& r) {
  finish_regret(r, bootstrap_regret(load_dataset(r.cfg), logistic_trainer(r.cfg.fit_options()), r.cfg.k,
                                    r.cfg.master_seed, regret_options(r.cfg, r.threads)));
}

/// Label probabilities: the fitted model's on --data, else the true ones.
inline void run_enumerate(Run& r) {
  const auto trainer = logistic_trainer(r.cfg.fit_options());
  Matrix features;
  Vector probs;
  if (!r.cfg.data.empty()) {
    const Dataset data = load_data(r.cfg);
    features = data.features();
    probs = fit_logistic(data, r.cfg.fit_options()).predict_all(features);
  } else {
    const auto ss = load_semisynthetic(r.cfg);
    features = ss.base.features();
    probs = ss.true_probs;
  }
  finish_regret(r, exact_regret_enumeration(features, probs, trainer, regret_options(r.cfg, r.threads)));
}

inline void run_theory(Run& r) {
  const Dataset data = load_dataset(r.cfg);
  const LogisticModel model =
      r.cfg.model.empty() ? fit_logistic(data, r.cfg.fit_options()) : model_from_json(read_json(r.cfg.model));
  const TheoryReport t = theory_report(model, data.features(), r.cfg.constant);
  r.write("theory.csv", theory_csv(t));
  r.write("theory.json", dump_json(theory_metadata(t)));
  r.write("model.json", dump_json(model_to_json(model)));
  r.meta["theory"] = theory_metadata(t);
  r.summary = "epsilon " + io::format_double(t.epsilon) + (t.bound_applies ? " (bound applies)" : " (bound vacuous)");
}

inline void run_semisynth(Run& r) {
  const auto ss = load_semisynthetic(r.cfg);
  write_semisynthetic(ss, r.dir);
  r.written.push_back(r.dir / "semisynth.csv");
  r.written.push_back(r.dir / "semisynth.json");
  r.summary = "semi-synthetic n=" + std::to_string(ss.base.n()) + ", mean true probability " +
              io::format_double(ss.true_probs.mean());
}

inline constexpr std::pair<const char*, Ranking> kRankings[] = {{"true_regret", Ranking::TrueRegret},
                                                                {"estimated_regret", Ranking::EstimatedRegret},
                                                                {"oracle_error", Ranking::OracleError}};
inline constexpr std::pair<const char*, Acquisition> kStrategies[] = {
    {"true_regret", Acquisition::TrueRegret},
    {"estimated_regret", Acquisition::EstimatedRegret},
    {"uniform", Acquisition::Uniform}};

inline void run_selective(Run& r) {
  const auto ss = load_semisynthetic(r.cfg);
  const auto trainer = logistic_trainer(r.cfg.fit_options());
  const LogisticModel model = fit_logistic(ss.base, r.cfg.fit_options());
  const auto opts = regret_options(r.cfg, r.threads);
  std::vector<SelectiveCurve> curves;
  FallbackStats fallback;
  for (Ranking ranking : select(r.cfg.ranking, kRankings)) {
    if (ranking == Ranking::OracleError) {
      curves.push_back(oracle_error_curve(ss, model, r.cfg.grid()));
      continue;
    }
    const RegretReport scores = ranking == Ranking::TrueRegret
                                    ? true_regret(ss, trainer, r.cfg.k, r.cfg.master_seed, opts)
                                    : estimate_regret(ss.base, trainer, r.cfg.k, r.cfg.master_seed, opts);
    fallback.merge(scores.fallback);
    curves.push_back(selective_prediction_curve(ss, model, scores.regret, r.cfg.grid(), ranking));
  }
  r.write("curves.csv", curves_csv(curves));
  r.meta["fallback_refits"] = fallback.refits;
  r.meta["fallback_max_extra_ridge"] = fallback.max_extra_ridge;
  r.summary = std::to_string(curves.size()) + " selective curves, full-data mean KL " +
              io::format_double(curves.front().points.back().mean_kl);
}

inline void run_active(Run& r) {
  const auto ss = load_semisynthetic(r.cfg);
  const auto trainer = logistic_trainer(r.cfg.fit_options());
  ActiveLearningOptions opts;
  opts.initial_fraction = r.cfg.initial_fraction;
  opts.batch = r.cfg.batch;
  opts.max_batches = r.cfg.max_batches;
  opts.K = r.cfg.k;
  opts.seed = r.cfg.master_seed;
  opts.regret = regret_options(r.cfg, r.threads);
  std::vector<ActiveLearningTrace> traces;
  FallbackStats fallback;
  std::string finals;
  for (Acquisition strategy : select(r.cfg.strategy, kStrategies)) {
    traces.push_back(active_learning_run(ss, strategy, trainer, opts));
    fallback.merge(traces.back().fallback);
    finals += std::string(finals.empty() ? "" : ", ") + std::string(acquisition_name(strategy)) + " " +
              io::format_double(traces.back().steps.back().mean_kl);
  }
  r.write("trace.csv", trace_csv(traces));
  r.meta["fallback_refits"] = fallback.refits;
  r.meta["fallback_max_extra_ridge"] = fallback.max_extra_ridge;
  r.summary = "final mean KL: " + finals;
}

inline void run_trials_command(Run& r) {
  const auto ss = load_semisynthetic(r.cfg);
  Experiment experiment = Experiment::Selective;
  if (r.cfg.experiment == "theory_vs_actual") experiment = Experiment::TheoryVsActual;
  if (r.cfg.experiment == "active") experiment = Experiment::Active;
  const TrialResults results = run_trials(ss, r.cfg.trial_settings(r.threads), experiment);
  r.write("trials.csv", trials_csv(results));
  if (!results.points.empty()) r.write("points.csv", points_csv(results));
  r.write("summary.json", dump_json(trials_summary_json(results, r.cfg)));
  r.meta["fallback_refits"] = results.fallback.refits;
  r.summary = std::to_string(r.cfg.n_trials) + " " + r.cfg.experiment + " trials, " +
              std::to_string(results.summaries.size()) + " tracked metrics";
}

inline void execute(Run& r) {
  const std::string& c = r.cfg.command;
  if (c == "fit") return run_fit(r);
  if (c == "regret") return run_regret(r);
  if (c == "true-regret") return run_true_regret(r);
  if (c == "bootstrap") return run_bootstrap(r);
  if (c == "enumerate") return run_enumerate(r);
  if (c == "theory") return run_theory(r);
  if (c == "semisynth") return run_semisynth(r);
  if (c == "selective") return run_selective(r);
  if (c == "active") return run_active(r);
  if (c == "trials") return run_trials_command(r);
  throw Error(ErrorKind::InvalidConfig, "unknown command '" + c + "'");
}

}  // namespace detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Per-point regret of probabilistic classifiers under label resampling", "obsmult-cli"};
  app.require_subcommand(1, 1);
  std::string config_path;
  unsigned threads = 1;
  app.add_option("--config", config_path, "JSON config (a previous meta.json also works)");
  app.add_option("--threads", threads, "worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
  detail::FlagLayer flags(app);
  detail::add_config_flags(flags);
  for (const auto& [name, desc] : kCommands) app.add_subcommand(name, desc)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return 2;
  }

  detail::Run run;
  try {
    Json file = Json::object();
    if (!config_path.empty()) file = config_from_document(read_json(config_path));
    Json layer = flags.collect();
    layer["command"] = app.get_subcommands().front()->get_name();
    run.cfg = resolve_config(file, layer);
  } catch (const Error& e) {
    err << e.what() << "\n\n" << app.help();
    return 2;
  }

  run.threads = threads;
  run.dir = run.cfg.out;
  try {
    detail::execute(run);
    Json meta{{"command", run.cfg.command}, {"config", config_to_json(run.cfg)}};
    for (const auto& item : run.meta.items()) meta[item.key()] = item.value();
    Json outputs = Json::array();
    for (const auto& p : run.written) outputs.push_back(p.filename().string());
    meta["outputs"] = outputs;
    meta["created_at"] = detail::utc_timestamp();
    run.write("meta.json", dump_json(meta));
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "IoError: " << e.what() << "\n";
    return 1;
  }

  out << run.cfg.command << ": " << run.summary << "\n";
  for (const auto& p : run.written) out << "  " << p.string() << "\n";
  return 0;
}

}  // namespace obsmult::cli
