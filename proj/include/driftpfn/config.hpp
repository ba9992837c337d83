// Configuration structs for the prior, the model, and the optimizer.
//
// Every knob that the sampling distributions leave open is surfaced here so a
// run is fully described by one config plus one seed.
#pragma once

#include <string>

#include "driftpfn/common.hpp"

namespace driftpfn {

enum class NoiseKind { kGaussian };

struct PriorConfig {
  // Causal-level graph.
  int min_nodes = 2;
  int max_nodes = 8;
  double density_min = 0.2;
  double density_max = 0.9;

  // Functional expansion.
  int subnode_min = 1;        // k_i range: subnodes per causal node
  int subnode_max = 3;
  int intermediate_min = 1;   // l_j range: intermediate subnodes per node
  int intermediate_max = 4;
  double weight_std_min = 0.3;   // log-uniform weight std, drawn per graph
  double weight_std_max = 3.0;
  double noise_scale_min = 1e-3;  // log-uniform noise std, drawn per subnode
  double noise_scale_max = 0.3;
  double clip_bound = 1e4;

  // Feature / target selection and labeling.
  int feature_min = 1;
  int feature_max = 8;
  int max_classes = 10;        // class count drawn uniformly from {2..max}
  double label_jitter = 0.6;   // quantile-boundary jitter, in bin widths

  // Temporal domain schedule.
  int min_domains = 4;
  int max_domains = 12;
  int max_total_samples = 300;
  double gap_log_std = 1.0;    // lognormal shape of inter-domain gaps

  // Drift.
  double shift_sparsity_min = 0.05;
  double shift_sparsity_max = 0.4;
  double shift_scale_min = 0.05;  // log-uniform; set both to 0 for no drift
  double shift_scale_max = 2.0;
  double static_fraction = 0.0;   // fraction of stream datasets with scale 0

  // Second-order SCM graph size.
  int sscm_min_nodes = 2;
  int sscm_max_nodes = 6;

  int max_resample_attempts = 16;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("prior: " + m); };
    if (min_nodes < 1 || max_nodes < min_nodes) fail("bad node range");
    if (density_min < 0 || density_max > 1 || density_max < density_min)
      fail("bad density range");
    if (subnode_min < 1 || subnode_max < subnode_min) fail("bad subnode range");
    if (intermediate_min < 1 || intermediate_max < intermediate_min)
      fail("bad intermediate range");
    if (weight_std_min <= 0 || weight_std_max < weight_std_min)
      fail("bad weight std range");
    if (noise_scale_min < 0 || noise_scale_max < noise_scale_min)
      fail("bad noise scale range");
    if (clip_bound <= 0) fail("clip bound must be positive");
    if (feature_min < 1 || feature_max < feature_min) fail("bad feature range");
    if (max_classes < 2) fail("max_classes must be >= 2");
    if (label_jitter < 0 || label_jitter >= 1) fail("label_jitter in [0, 1)");
    if (min_domains < 1 || max_domains < min_domains) fail("bad domain range");
    if (max_total_samples < min_domains)
      fail("max_total_samples below min_domains");
    if (gap_log_std < 0) fail("gap_log_std must be >= 0");
    if (shift_sparsity_min < 0 || shift_sparsity_max > 1 ||
        shift_sparsity_max < shift_sparsity_min)
      fail("bad shift sparsity range");
    if (shift_scale_min < 0 || shift_scale_max < shift_scale_min)
      fail("bad shift scale range");
    if (static_fraction < 0 || static_fraction > 1)
      fail("static_fraction in [0, 1]");
    if (sscm_min_nodes < 2 || sscm_max_nodes < sscm_min_nodes)
      fail("bad sscm node range");
    if (max_resample_attempts < 1) fail("max_resample_attempts must be >= 1");
  }

  // Copy with drift disabled; apply_shifts then leaves weights bit-identical.
  PriorConfig with_zero_shift() const {
    PriorConfig c = *this;
    c.shift_scale_min = 0.0;
    c.shift_scale_max = 0.0;
    return c;
  }
};

struct ModelConfig {
  int embed_dim = 128;
  int num_layers = 4;
  int num_heads = 4;
  int ff_dim = 0;          // 0 -> 4 * embed_dim
  int max_features = 8;
  int max_classes = 10;
  int t2v_dim = 8;         // m of the temporal encoding
  bool use_t2v = true;     // false -> normalized scalar domain channel
  bool train_t2v = true;   // freeze omega/phi when false
  bool domain_as_feature = false;  // pass c as a plain feature column instead

  int ff() const { return ff_dim > 0 ? ff_dim : 4 * embed_dim; }
  int domain_channels() const { return use_t2v ? t2v_dim : 1; }
  int input_dim() const { return max_features + domain_channels(); }
  int head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
    if (embed_dim < 2) fail("embed_dim must be >= 2");
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (num_heads < 1 || embed_dim % num_heads != 0)
      fail("num_heads must divide embed_dim");
    if (ff_dim < 0) fail("ff_dim must be >= 0");
    if (max_features < 1) fail("max_features must be >= 1");
    if (max_classes < 2) fail("max_classes must be >= 2");
    if (t2v_dim < 1) fail("t2v_dim must be >= 1");
  }
};

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;     // global gradient-norm clip; <= 0 disables
  double warmup_frac = 0.02;
  int batch = 8;              // datasets per step
  int workers = 0;            // 0 -> hardware concurrency

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("optim: " + m); };
    if (lr <= 0) fail("lr must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      fail("betas in [0, 1)");
    if (eps <= 0) fail("eps must be positive");
    if (warmup_frac < 0 || warmup_frac >= 1) fail("warmup_frac in [0, 1)");
    if (batch < 1) fail("batch must be >= 1");
    if (workers < 0) fail("workers must be >= 0");
  }
};

}  // namespace driftpfn
