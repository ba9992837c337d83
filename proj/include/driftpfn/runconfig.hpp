// Run configuration: one JSON file fully describes a run. Unknown keys are
// rejected so silent typos cannot change an experiment.
#pragma once

#include <json.hpp>
#include <fstream>
#include <optional>

#include "driftpfn/config.hpp"
#include "driftpfn/evaluation.hpp"

namespace driftpfn {

using nlohmann::json;

struct TrainSection {
  long steps = 2000;
  std::vector<std::string> models = {"drift", "static"};
  bool resume = false;
};

struct GenSection {
  int count = 4;
  std::string benchmark;  // when set, generate this instead of prior samples
};

struct EvalSection {
  std::vector<std::string> models = {"drift", "static"};
  std::vector<std::string> benchmarks = {"two_moons", "sliding_circle",
                                         "binary_label_shift"};
  std::vector<std::string> datasets;  // extra CSV paths
  std::uint64_t benchmark_seed = 7777;
  std::string drift_checkpoint;   // default <out>/drift.ckpt
  std::string static_checkpoint;  // default <out>/static.ckpt
  std::vector<std::string> variants = {"all_dom_w_ind", "all_dom_wo_ind",
                                       "last_dom_wo_ind"};
  std::vector<std::uint64_t> split_seeds = {11, 22, 33};
  int ece_bins = 10;
  bool weighted_auc = false;
};

struct BoundarySection {
  std::string dataset = "two_moons";  // benchmark name or CSV path
  std::string checkpoint;             // default <out>/drift.ckpt
  int grid = 50;
  std::vector<double> domains;        // empty: every domain in the dataset
  double context_max_domain = 1e300;  // context = rows with c <= this
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;  // seed is mandatory; no wall-clock entropy
  std::string output_dir = "run_out";
  int workers = 0;
  PriorConfig prior;
  ModelConfig model;
  OptimConfig optim;
  TrainSection train;
  GenSection gen;
  EvalSection eval;
  BoundarySection boundary;
};

namespace cfgio {

inline void expect_keys(const json& j, std::initializer_list<const char*> keys,
                        const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known |= k == key;
    if (!known)
      throw ConfigError("config: unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline json prior_to_json(const PriorConfig& p) {
  return json{{"min_nodes", p.min_nodes},
              {"max_nodes", p.max_nodes},
              {"density_min", p.density_min},
              {"density_max", p.density_max},
              {"subnode_min", p.subnode_min},
              {"subnode_max", p.subnode_max},
              {"intermediate_min", p.intermediate_min},
              {"intermediate_max", p.intermediate_max},
              {"weight_std_min", p.weight_std_min},
              {"weight_std_max", p.weight_std_max},
              {"noise_scale_min", p.noise_scale_min},
              {"noise_scale_max", p.noise_scale_max},
              {"clip_bound", p.clip_bound},
              {"feature_min", p.feature_min},
              {"feature_max", p.feature_max},
              {"max_classes", p.max_classes},
              {"label_jitter", p.label_jitter},
              {"min_domains", p.min_domains},
              {"max_domains", p.max_domains},
              {"max_total_samples", p.max_total_samples},
              {"gap_log_std", p.gap_log_std},
              {"shift_sparsity_min", p.shift_sparsity_min},
              {"shift_sparsity_max", p.shift_sparsity_max},
              {"shift_scale_min", p.shift_scale_min},
              {"shift_scale_max", p.shift_scale_max},
              {"static_fraction", p.static_fraction},
              {"sscm_min_nodes", p.sscm_min_nodes},
              {"sscm_max_nodes", p.sscm_max_nodes},
              {"max_resample_attempts", p.max_resample_attempts}};
}

inline PriorConfig prior_from_json(const json& j) {
  expect_keys(j,
              {"min_nodes", "max_nodes", "density_min", "density_max",
               "subnode_min", "subnode_max", "intermediate_min",
               "intermediate_max", "weight_std_min", "weight_std_max",
               "noise_scale_min", "noise_scale_max", "clip_bound",
               "feature_min", "feature_max", "max_classes", "label_jitter",
               "min_domains", "max_domains", "max_total_samples",
               "gap_log_std", "shift_sparsity_min", "shift_sparsity_max",
               "shift_scale_min", "shift_scale_max", "static_fraction",
               "sscm_min_nodes", "sscm_max_nodes", "max_resample_attempts"},
              "prior");
  PriorConfig p;
  get_if(j, "min_nodes", p.min_nodes);
  get_if(j, "max_nodes", p.max_nodes);
  get_if(j, "density_min", p.density_min);
  get_if(j, "density_max", p.density_max);
  get_if(j, "subnode_min", p.subnode_min);
  get_if(j, "subnode_max", p.subnode_max);
  get_if(j, "intermediate_min", p.intermediate_min);
  get_if(j, "intermediate_max", p.intermediate_max);
  get_if(j, "weight_std_min", p.weight_std_min);
  get_if(j, "weight_std_max", p.weight_std_max);
  get_if(j, "noise_scale_min", p.noise_scale_min);
  get_if(j, "noise_scale_max", p.noise_scale_max);
  get_if(j, "clip_bound", p.clip_bound);
  get_if(j, "feature_min", p.feature_min);
  get_if(j, "feature_max", p.feature_max);
  get_if(j, "max_classes", p.max_classes);
  get_if(j, "label_jitter", p.label_jitter);
  get_if(j, "min_domains", p.min_domains);
  get_if(j, "max_domains", p.max_domains);
  get_if(j, "max_total_samples", p.max_total_samples);
  get_if(j, "gap_log_std", p.gap_log_std);
  get_if(j, "shift_sparsity_min", p.shift_sparsity_min);
  get_if(j, "shift_sparsity_max", p.shift_sparsity_max);
  get_if(j, "shift_scale_min", p.shift_scale_min);
  get_if(j, "shift_scale_max", p.shift_scale_max);
  get_if(j, "static_fraction", p.static_fraction);
  get_if(j, "sscm_min_nodes", p.sscm_min_nodes);
  get_if(j, "sscm_max_nodes", p.sscm_max_nodes);
  get_if(j, "max_resample_attempts", p.max_resample_attempts);
  return p;
}

inline json model_to_json(const ModelConfig& m) {
  return json{{"embed_dim", m.embed_dim},
              {"num_layers", m.num_layers},
              {"num_heads", m.num_heads},
              {"ff_dim", m.ff_dim},
              {"max_features", m.max_features},
              {"max_classes", m.max_classes},
              {"t2v_dim", m.t2v_dim},
              {"use_t2v", m.use_t2v},
              {"train_t2v", m.train_t2v},
              {"domain_as_feature", m.domain_as_feature}};
}

inline ModelConfig model_from_json(const json& j) {
  expect_keys(j,
              {"embed_dim", "num_layers", "num_heads", "ff_dim",
               "max_features", "max_classes", "t2v_dim", "use_t2v",
               "train_t2v", "domain_as_feature"},
              "model");
  ModelConfig m;
  get_if(j, "embed_dim", m.embed_dim);
  get_if(j, "num_layers", m.num_layers);
  get_if(j, "num_heads", m.num_heads);
  get_if(j, "ff_dim", m.ff_dim);
  get_if(j, "max_features", m.max_features);
  get_if(j, "max_classes", m.max_classes);
  get_if(j, "t2v_dim", m.t2v_dim);
  get_if(j, "use_t2v", m.use_t2v);
  get_if(j, "train_t2v", m.train_t2v);
  get_if(j, "domain_as_feature", m.domain_as_feature);
  return m;
}

inline json optim_to_json(const OptimConfig& o) {
  return json{{"lr", o.lr},       {"beta1", o.beta1},
              {"beta2", o.beta2}, {"eps", o.eps},
              {"clip_norm", o.clip_norm}, {"warmup_frac", o.warmup_frac},
              {"batch", o.batch}};
}

inline OptimConfig optim_from_json(const json& j) {
  expect_keys(j,
              {"lr", "beta1", "beta2", "eps", "clip_norm", "warmup_frac",
               "batch"},
              "optim");
  OptimConfig o;
  get_if(j, "lr", o.lr);
  get_if(j, "beta1", o.beta1);
  get_if(j, "beta2", o.beta2);
  get_if(j, "eps", o.eps);
  get_if(j, "clip_norm", o.clip_norm);
  get_if(j, "warmup_frac", o.warmup_frac);
  get_if(j, "batch", o.batch);
  return o;
}

}  // namespace cfgio

inline json runconfig_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["prior"] = cfgio::prior_to_json(c.prior);
  j["model"] = cfgio::model_to_json(c.model);
  j["optim"] = cfgio::optim_to_json(c.optim);
  j["train"] = json{{"steps", c.train.steps},
                    {"models", c.train.models},
                    {"resume", c.train.resume}};
  j["gen"] = json{{"count", c.gen.count}, {"benchmark", c.gen.benchmark}};
  j["eval"] = json{{"models", c.eval.models},
                   {"benchmarks", c.eval.benchmarks},
                   {"datasets", c.eval.datasets},
                   {"benchmark_seed", c.eval.benchmark_seed},
                   {"drift_checkpoint", c.eval.drift_checkpoint},
                   {"static_checkpoint", c.eval.static_checkpoint},
                   {"variants", c.eval.variants},
                   {"split_seeds", c.eval.split_seeds},
                   {"ece_bins", c.eval.ece_bins},
                   {"weighted_auc", c.eval.weighted_auc}};
  j["boundary"] = json{{"dataset", c.boundary.dataset},
                       {"checkpoint", c.boundary.checkpoint},
                       {"grid", c.boundary.grid},
                       {"domains", c.boundary.domains},
                       {"context_max_domain", c.boundary.context_max_domain}};
  return j;
}

inline RunConfig runconfig_from_json(const json& j) {
  cfgio::expect_keys(j,
                     {"seed", "output_dir", "workers", "prior", "model",
                      "optim", "train", "gen", "eval", "boundary"},
                     "top level");
  RunConfig c;
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.has_seed = true;
  }
  cfgio::get_if(j, "output_dir", c.output_dir);
  cfgio::get_if(j, "workers", c.workers);
  if (j.contains("prior")) c.prior = cfgio::prior_from_json(j.at("prior"));
  if (j.contains("model")) c.model = cfgio::model_from_json(j.at("model"));
  if (j.contains("optim")) c.optim = cfgio::optim_from_json(j.at("optim"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    cfgio::expect_keys(t, {"steps", "models", "resume"}, "train");
    cfgio::get_if(t, "steps", c.train.steps);
    cfgio::get_if(t, "models", c.train.models);
    cfgio::get_if(t, "resume", c.train.resume);
  }
  if (j.contains("gen")) {
    const json& g = j.at("gen");
    cfgio::expect_keys(g, {"count", "benchmark"}, "gen");
    cfgio::get_if(g, "count", c.gen.count);
    cfgio::get_if(g, "benchmark", c.gen.benchmark);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    cfgio::expect_keys(e,
                       {"models", "benchmarks", "datasets", "benchmark_seed",
                        "drift_checkpoint", "static_checkpoint", "variants",
                        "split_seeds", "ece_bins", "weighted_auc"},
                       "eval");
    cfgio::get_if(e, "models", c.eval.models);
    cfgio::get_if(e, "benchmarks", c.eval.benchmarks);
    cfgio::get_if(e, "datasets", c.eval.datasets);
    cfgio::get_if(e, "benchmark_seed", c.eval.benchmark_seed);
    cfgio::get_if(e, "drift_checkpoint", c.eval.drift_checkpoint);
    cfgio::get_if(e, "static_checkpoint", c.eval.static_checkpoint);
    cfgio::get_if(e, "variants", c.eval.variants);
    cfgio::get_if(e, "split_seeds", c.eval.split_seeds);
    cfgio::get_if(e, "ece_bins", c.eval.ece_bins);
    cfgio::get_if(e, "weighted_auc", c.eval.weighted_auc);
  }
  if (j.contains("boundary")) {
    const json& b = j.at("boundary");
    cfgio::expect_keys(
        b, {"dataset", "checkpoint", "grid", "domains", "context_max_domain"},
        "boundary");
    cfgio::get_if(b, "dataset", c.boundary.dataset);
    cfgio::get_if(b, "checkpoint", c.boundary.checkpoint);
    cfgio::get_if(b, "grid", c.boundary.grid);
    cfgio::get_if(b, "domains", c.boundary.domains);
    cfgio::get_if(b, "context_max_domain", c.boundary.context_max_domain);
  }
  return c;
}

inline RunConfig load_runconfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  try {
    return runconfig_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value in " + path + ": " + e.what());
  }
}

inline void save_runconfig(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("config: cannot open " + path + " for writing");
  out << runconfig_to_json(c).dump(2) << "\n";
}

inline InputVariant variant_from_name(const std::string& s) {
  if (s == "all_dom_w_ind") return InputVariant::kAllWithIndices;
  if (s == "all_dom_wo_ind") return InputVariant::kAllWithoutIndices;
  if (s == "last_dom_wo_ind") return InputVariant::kLastDomain;
  throw ConfigError("config: unknown variant '" + s + "'");
}

}  // namespace driftpfn
