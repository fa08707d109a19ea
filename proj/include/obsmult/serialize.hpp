#pragma once

// On-disk formats for models, semi-synthetic datasets, regret and theory
// reports, and harness outputs. CSV for per-point / per-trial tables, JSON for
// everything else. All writers are atomic.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "obsmult/config.hpp"
#include "obsmult/dataset.hpp"
#include "obsmult/glm.hpp"
#include "obsmult/harness.hpp"
#include "obsmult/io.hpp"
#include "obsmult/regret.hpp"
#include "obsmult/semisynthetic.hpp"
#include "obsmult/theory.hpp"

namespace obsmult {

namespace fs = std::filesystem;

inline std::vector<double> to_list(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector from_list(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline Json read_json(const fs::path& path) {
  const std::string text = io::read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// LogisticModel

inline Json model_to_json(const LogisticModel& m) {
  return Json{{"theta", to_list(m.theta)}, {"includes_intercept", m.includes_intercept},
              {"feature_names", m.feature_names}};
}

inline LogisticModel model_from_json(const Json& j) {
  try {
    LogisticModel m;
    m.theta = from_list(j.at("theta").get<std::vector<double>>());
    m.includes_intercept = j.at("includes_intercept").get<bool>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    if (m.feature_dim() < 0 || static_cast<Index>(m.feature_names.size()) != m.feature_dim()) {
      throw Error(ErrorKind::DimensionMismatch, "model has " + std::to_string(m.theta.size()) +
                                                    " parameters but " + std::to_string(m.feature_names.size()) +
                                                    " feature names");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// SemiSyntheticDataset: <dir>/semisynth.csv (features, label, true_prob) and
// <dir>/semisynth.json (ground truth, ridge, seed, feature names).

inline constexpr const char* kTrueProbColumn = "true_prob";

inline void write_semisynthetic(const SemiSyntheticDataset& ss, const fs::path& dir) {
  write_csv(ss.base, dir / "semisynth.csv", "label", {{kTrueProbColumn, ss.true_probs}});
  const Json side{{"ground_truth", model_to_json(ss.ground_truth)},
                  {"ridge", ss.ridge},
                  {"seed", {{"master_seed", ss.seed.master_seed}, {"stream_index", ss.seed.stream_index}}},
                  {"feature_names", ss.base.feature_names()}};
  io::write_file_atomic(dir / "semisynth.json", dump_json(side));
}

inline SemiSyntheticDataset read_semisynthetic(const fs::path& dir) {
  const CsvTable table = read_csv_table(dir / "semisynth.csv");
  const Index prob_col = table.column(kTrueProbColumn);
  if (prob_col < 0) throw Error(ErrorKind::InvalidDataset, "semisynth.csv has no true_prob column");
  Dataset base = dataset_from_table(table, "label", {kTrueProbColumn});
  Vector probs = table.values.col(prob_col);
  for (Index i = 0; i < probs.size(); ++i) {
    if (!(probs(i) >= 0.0 && probs(i) <= 1.0)) {
      throw Error(ErrorKind::ProbOutOfRange, "true_prob at row " + std::to_string(i + 1));
    }
  }
  const Json side = read_json(dir / "semisynth.json");
  try {
    SemiSyntheticDataset ss{std::move(base), std::move(probs), model_from_json(side.at("ground_truth")),
                            LabelDrawSeed{side.at("seed").at("master_seed").get<std::uint64_t>(),
                                          side.at("seed").at("stream_index").get<std::uint32_t>()},
                            side.at("ridge").get<double>()};
    if (ss.ground_truth.feature_dim() != ss.base.d()) {
      throw Error(ErrorKind::DimensionMismatch, "ground truth does not match semisynth.csv columns");
    }
    return ss;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed semisynth.json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// RegretReport

inline std::string regret_csv(const RegretReport& r) {
  std::string out = "point_index,base_pred,mean_pred,regret\n";
  for (Index i = 0; i < r.regret.size(); ++i) {
    out += std::to_string(i) + "," + io::format_double(r.base_pred(i)) + "," + io::format_double(r.mean_pred(i)) +
           "," + io::format_double(r.regret(i)) + "\n";
  }
  return out;
}

inline Json regret_metadata(const RegretReport& r) {
  return Json{{"estimator", std::string(estimator_name(r.estimator))},
              {"K", r.n_resamples},
              {"seed", r.seed},
              {"trainer", r.trainer_name},
              {"fallback_refits", r.fallback.refits},
              {"fallback_max_extra_ridge", r.fallback.max_extra_ridge}};
}

// ---------------------------------------------------------------------------
// TheoryReport

inline std::string theory_csv(const TheoryReport& t) {
  std::string out = "point_index,q\n";
  for (Index i = 0; i < t.q.size(); ++i) out += std::to_string(i) + "," + io::format_double(t.q(i)) + "\n";
  return out;
}

inline Json theory_metadata(const TheoryReport& t) {
  return Json{{"lambda_min", t.lambda_min}, {"lambda_max", t.lambda_max}, {"x_max", t.x_max},
              {"x_min", t.x_min},           {"theta_norm", t.theta_norm}, {"epsilon", t.epsilon},
              {"bound_applies", t.bound_applies}, {"constant", t.constant}};
}

// ---------------------------------------------------------------------------
// Harness

inline std::string curves_csv(const std::vector<SelectiveCurve>& curves) {
  std::string out = "ranking,level,cutoff,coverage,mean_kl,n_kept\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out += std::string(ranking_name(c.ranking)) + "," + (std::isnan(p.level) ? "" : io::format_double(p.level)) +
             "," + io::format_double(p.cutoff) + "," + io::format_double(p.coverage) + "," +
             io::format_double(p.mean_kl) + "," + std::to_string(p.n_kept) + "\n";
    }
  }
  return out;
}

inline std::string trace_csv(const std::vector<ActiveLearningTrace>& traces) {
  std::string out = "strategy,step,n_labeled,mean_kl,acquired\n";
  for (const auto& t : traces) {
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      std::string acquired;
      for (Index i : t.steps[s].acquired) acquired += (acquired.empty() ? "" : " ") + std::to_string(i);
      out += std::string(acquisition_name(t.strategy)) + "," + std::to_string(s) + "," +
             std::to_string(t.steps[s].n_labeled) + "," + io::format_double(t.steps[s].mean_kl) + "," + acquired +
             "\n";
    }
  }
  return out;
}

inline std::string trials_csv(const TrialResults& r) {
  std::string out = "trial,metric,value\n";
  for (const auto& rec : r.records) {
    out += std::to_string(rec.trial) + "," + rec.metric + "," + io::format_double(rec.value) + "\n";
  }
  return out;
}

inline std::string points_csv(const TrialResults& r) {
  std::string out = "trial,point,estimated_regret,q,base_pred\n";
  for (const auto& p : r.points) {
    out += std::to_string(p.trial) + "," + std::to_string(p.point) + "," + io::format_double(p.estimated_regret) +
           "," + io::format_double(p.q) + "," + io::format_double(p.base_pred) + "\n";
  }
  return out;
}

inline Json summary_to_json(const TrialSummary& s) {
  return Json{{"median", s.median}, {"q25", s.q25}, {"q75", s.q75},
              {"min", s.min},       {"max", s.max}, {"n_trials", s.n_trials}};
}

inline Json trials_summary_json(const TrialResults& r, const ExperimentConfig& cfg) {
  Json metrics = Json::object();
  for (const auto& [name, s] : r.summaries) metrics[name] = summary_to_json(s);
  Json per_point = Json::array();
  for (const auto& [i, s] : r.per_point_estimates) {
    Json entry = summary_to_json(s);
    entry["point"] = i;
    entry["true_regret"] = r.true_regret.size() > i ? r.true_regret(i) : 0.0;
    per_point.push_back(entry);
  }
  return Json{{"experiment", std::string(experiment_name(r.experiment))},
              {"master_seed", cfg.master_seed},
              {"metrics", metrics},
              {"per_point_estimated_regret", per_point},
              {"fallback_refits", r.fallback.refits},
              {"fallback_max_extra_ridge", r.fallback.max_extra_ridge},
              {"config", config_to_json(cfg)}};
}

}  // namespace obsmult
