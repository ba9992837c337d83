// The drift prior: temporal-domain schedules, sparse shifted-edge selection,
// a second-order SCM driving edge-weight deltas, and assembly of labeled
// drift datasets (per-domain loop: compute shifts, update weights, sample
// rows, then discretize targets over the full dataset).
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "driftpfn/dataset.hpp"
#include "driftpfn/scm.hpp"

namespace driftpfn {

// ------------------------------------------------------------- schedule ----

// Domain indices grow by lognormal gaps (heavy-tailed, so gap sizes vary by
// orders of magnitude across draws) and the whole axis gets a random scale
// and offset. Per-domain counts are drawn proportional to exponential
// weights, each at least one, with the total capped by the budget.
inline TemporalDomainSchedule sample_schedule(const PriorConfig& cfg,
                                              RngState& rng) {
  cfg.validate();
  if (cfg.max_total_samples < cfg.min_domains)
    throw ConfigError("sample_schedule: budget below min_domains");

  TemporalDomainSchedule s;
  // Every domain needs at least one sample, so the count is budget-capped.
  const int t = std::min(
      static_cast<int>(rng.uniform_int(cfg.min_domains, cfg.max_domains)),
      cfg.max_total_samples);
  const double scale = std::exp(rng.uniform(-1.0, 4.0));
  const double offset = rng.normal() * 3.0 * scale;
  double c = offset;
  for (int k = 0; k < t; ++k) {
    s.domains.push_back(c);
    c += scale * std::exp(rng.normal() * cfg.gap_log_std);
  }

  const int budget = static_cast<int>(
      rng.uniform_int(std::max(t, (2 * cfg.max_total_samples) / 5),
                      cfg.max_total_samples));
  std::vector<double> w(t);
  double wsum = 0.0;
  for (double& wi : w) wsum += wi = 0.25 - std::log(rng.uniform_pos());
  s.counts.resize(t);
  int total = 0;
  for (int k = 0; k < t; ++k)
    total += s.counts[k] =
        std::max<int>(1, static_cast<int>(std::llround(budget * w[k] / wsum)));
  while (total > budget) {
    int big = static_cast<int>(std::max_element(s.counts.begin(), s.counts.end()) -
                               s.counts.begin());
    if (s.counts[big] <= 1) break;
    s.counts[big]--;
    total--;
  }
  s.validate();
  return s;
}

// --------------------------------------------------- shifted-edge choice ----

// Each causal edge is selected independently with a sparsity drawn from the
// configured range; if nothing comes up, one edge is forced so a drift prior
// with zero drift only ever arises through static_fraction.
inline std::vector<int> select_shifted_edges(const ScmGraph& scm,
                                             const FunctionalGraph& fg,
                                             const PriorConfig& cfg,
                                             RngState& rng) {
  (void)fg;
  DRIFTPFN_CHECK(!scm.edges.empty(), "select_shifted_edges needs >= 1 edge");
  const double p = rng.uniform(cfg.shift_sparsity_min, cfg.shift_sparsity_max);
  std::vector<int> out;
  for (int e = 0; e < static_cast<int>(scm.edges.size()); ++e)
    if (rng.bernoulli(p)) out.push_back(e);
  if (out.empty())
    out.push_back(static_cast<int>(
        rng.uniform_int(0, static_cast<std::int64_t>(scm.edges.size()) - 1)));
  return out;
}

// ----------------------------------------------------- second-order SCM ----

// An auxiliary functional graph mapping a (normalized) domain value to one
// weight delta per shifted edge. Noise is frozen at construction, so shifts
// are a deterministic function of the domain value.
struct SecondOrderSCM {
  FunctionalGraph graph;
  std::vector<double> frozen_noise;   // per subnode
  int input_subnode = -1;             // clamped to the normalized domain value
  std::vector<int> shifted_edges;     // functional edge ids in the primary graph
  std::vector<int> output_subnodes;   // aligned with shifted_edges
  double shift_scale = 0.0;
  // Affine domain normalization applied before the forward pass; identity by
  // default, set to map the sampled schedule onto [-1, 1].
  double input_center = 0.0;
  double input_halfwidth = 1.0;

  void set_input_range(double c_min, double c_max) {
    input_center = 0.5 * (c_min + c_max);
    input_halfwidth = c_max > c_min ? 0.5 * (c_max - c_min) : 1.0;
  }

  double normalize_input(double c) const {
    return (c - input_center) / input_halfwidth;
  }
};

namespace detail {
// Reachable-node counts; used to clamp the input at the most influential
// subnode so domain changes actually propagate.
inline std::vector<int> descendant_counts(const FunctionalGraph& fg) {
  std::vector<std::vector<int>> out(fg.num_subnodes);
  for (const auto& e : fg.edges) out[e.from].push_back(e.to);
  std::vector<int> counts(fg.num_subnodes, 0);
  std::vector<char> mark(fg.num_subnodes);
  for (int v = 0; v < fg.num_subnodes; ++v) {
    std::fill(mark.begin(), mark.end(), 0);
    std::vector<int> stack = {v};
    mark[v] = 1;
    int cnt = 0;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int w : out[u])
        if (!mark[w]) {
          mark[w] = 1;
          cnt++;
          stack.push_back(w);
        }
    }
    counts[v] = cnt;
  }
  return counts;
}

inline std::vector<int> descendants_of(const FunctionalGraph& fg, int root) {
  std::vector<std::vector<int>> out(fg.num_subnodes);
  for (const auto& e : fg.edges) out[e.from].push_back(e.to);
  std::vector<char> mark(fg.num_subnodes);
  std::vector<int> stack = {root}, res;
  mark[root] = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int w : out[u])
      if (!mark[w]) {
        mark[w] = 1;
        res.push_back(w);
        stack.push_back(w);
      }
  }
  std::sort(res.begin(), res.end());
  return res;
}
}  // namespace detail

inline SecondOrderSCM build_second_order_scm(
    const std::vector<int>& shifted_functional_edges, const PriorConfig& cfg,
    RngState& rng) {
  DRIFTPFN_CHECK(!shifted_functional_edges.empty(),
                 "second-order SCM needs >= 1 shifted edge");
  SecondOrderSCM h;
  ScmGraph scm = sample_scm_sized(cfg.sscm_min_nodes, cfg.sscm_max_nodes, cfg, rng);
  h.graph = expand_to_functional(scm, cfg, rng, /*with_features=*/false);
  h.frozen_noise.resize(h.graph.num_subnodes);
  for (int v = 0; v < h.graph.num_subnodes; ++v)
    h.frozen_noise[v] = rng.normal() * h.graph.noise_specs[v].scale;

  auto counts = detail::descendant_counts(h.graph);
  h.input_subnode = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());

  std::vector<int> eligible = detail::descendants_of(h.graph, h.input_subnode);
  if (eligible.empty()) {
    for (int v = 0; v < h.graph.num_subnodes; ++v)
      if (v != h.input_subnode) eligible.push_back(v);
  }
  DRIFTPFN_CHECK(!eligible.empty(), "second-order SCM has a single subnode");

  h.shifted_edges = shifted_functional_edges;
  h.output_subnodes.reserve(h.shifted_edges.size());
  for (std::size_t i = 0; i < h.shifted_edges.size(); ++i)
    h.output_subnodes.push_back(eligible[rng.uniform_int(
        0, static_cast<std::int64_t>(eligible.size()) - 1)]);

  h.shift_scale = cfg.shift_scale_max <= 0.0
                      ? 0.0
                      : rng.log_uniform(std::max(cfg.shift_scale_min, 1e-12),
                                        cfg.shift_scale_max);
  return h;
}

// Deterministic forward pass of the second-order SCM at domain value c:
// the input subnode is clamped to the normalized c (its own activation and
// noise are skipped), every other subnode applies its activation to the
// weighted sum plus its frozen noise. Returns (edge id, delta) pairs aligned
// with the shifted-edge list.
inline std::vector<std::pair<int, double>> compute_edge_shifts(
    const SecondOrderSCM& h, double c) {
  std::vector<double> val(h.graph.num_subnodes, 0.0);
  auto in = h.graph.incoming();
  const double x = h.normalize_input(c);
  for (int v : h.graph.topo_order) {
    if (v == h.input_subnode) {
      val[v] = x;
      continue;
    }
    double acc = h.frozen_noise[v];
    for (int e : in[v])
      acc += h.graph.edges[e].weight * val[h.graph.edges[e].from];
    val[v] = std::clamp(apply_activation(h.graph.activations[v], acc),
                        -h.graph.clip_bound, h.graph.clip_bound);
  }
  std::vector<std::pair<int, double>> deltas;
  deltas.reserve(h.shifted_edges.size());
  for (std::size_t i = 0; i < h.shifted_edges.size(); ++i) {
    const double d = h.shift_scale * val[h.output_subnodes[i]];
    DRIFTPFN_CHECK(std::isfinite(d), "non-finite edge shift");
    deltas.push_back({h.shifted_edges[i], d});
  }
  return deltas;
}

// Additive weight update on a copy; the base graph stays untouched and
// un-shifted edges remain bit-identical.
inline FunctionalGraph apply_shifts(
    const FunctionalGraph& fg,
    const std::vector<std::pair<int, double>>& deltas) {
  FunctionalGraph out = fg;
  for (const auto& [e, d] : deltas) {
    DRIFTPFN_CHECK(e >= 0 && e < static_cast<int>(out.edges.size()),
                   "delta key is not an edge");
    out.edges[e].weight += d;
  }
  return out;
}

// ----------------------------------------------------------- discretize ----

// Rank-based binning of raw target values into num_classes classes. Bin
// boundaries sit at jittered quantiles of the full value multiset (never per
// domain, so label drift is attributable to the SCM) and are nudged to gaps
// between distinct values so every class is non-empty.
inline std::vector<int> discretize_target(const std::vector<double>& raw,
                                          int num_classes, RngState& rng,
                                          double jitter = 0.6) {
  const int n = static_cast<int>(raw.size());
  DRIFTPFN_CHECK(num_classes >= 2, "need at least two classes");
  std::vector<double> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  int distinct = n > 0 ? 1 : 0;
  for (int i = 1; i < n; ++i)
    if (sorted[i] != sorted[i - 1]) distinct++;
  if (distinct < num_classes)
    throw SamplingError("discretize_target: too few distinct values");

  auto gap_at = [&](int r) { return sorted[r - 1] != sorted[r]; };  // r in [1, n)
  std::vector<double> thresholds;
  int prev_rank = 0;
  for (int b = 1; b < num_classes; ++b) {
    double q = (b + jitter * (rng.uniform() - 0.5)) / num_classes;
    int r = std::clamp(static_cast<int>(std::llround(q * n)), prev_rank + 1,
                       n - (num_classes - b));
    // Nudge to the nearest rank with a value gap, preferring lower.
    int found = -1;
    for (int d = 0; d < n && found < 0; ++d) {
      if (r - d > prev_rank && gap_at(r - d)) found = r - d;
      else if (r + d <= n - (num_classes - b) && gap_at(r + d)) found = r + d;
    }
    if (found < 0) {
      // Gaps exist (distinct >= num_classes) but not in the allowed window;
      // fall back to the next gap above prev_rank.
      for (int r2 = prev_rank + 1; r2 < n; ++r2)
        if (gap_at(r2)) {
          found = r2;
          break;
        }
    }
    if (found < 0) throw SamplingError("discretize_target: no usable boundary");
    thresholds.push_back(0.5 * (sorted[found - 1] + sorted[found]));
    prev_rank = found;
  }

  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    int cls = static_cast<int>(
        std::upper_bound(thresholds.begin(), thresholds.end(), raw[i]) -
        thresholds.begin());
    labels[i] = cls;
  }
  return labels;
}

// -------------------------------------------------------------- assembly ----

// Hooks for observing the per-domain loop order (tests record calls).
struct SampleObserver {
  virtual ~SampleObserver() = default;
  virtual void on_compute_shifts(double /*c*/) {}
  virtual void on_apply_shifts(double /*c*/) {}
  virtual void on_row(double /*c*/) {}
};

// Per-domain sampling loop shared by the prior and the handcrafted shift
// witnesses: for each domain compute shifts, update weights, then sample the
// domain's rows; labels come from a full-dataset quantile binning at the end.
inline DriftDataset assemble_drift_dataset(const FunctionalGraph& fg,
                                           const SecondOrderSCM& sscm,
                                           const TemporalDomainSchedule& sched,
                                           int num_classes, double label_jitter,
                                           RngState& rng,
                                           SampleObserver* obs = nullptr) {
  const int n = sched.total();
  const int d = static_cast<int>(fg.feature_subnodes.size());
  DRIFTPFN_CHECK(fg.target_subnode >= 0 && d > 0, "features/target unset");

  DriftDataset ds;
  ds.features.resize(n, d);
  ds.domains.resize(n);
  ds.num_classes = num_classes;
  ds.schedule = sched;
  std::vector<double> raw_targets(n);

  int row = 0;
  for (int k = 0; k < sched.num_domains(); ++k) {
    const double c = sched.domains[k];
    if (obs) obs->on_compute_shifts(c);
    auto deltas = compute_edge_shifts(sscm, c);
    if (obs) obs->on_apply_shifts(c);
    FunctionalGraph shifted = apply_shifts(fg, deltas);
    for (int i = 0; i < sched.counts[k]; ++i, ++row) {
      if (obs) obs->on_row(c);
      NodeValues vals = forward(shifted, rng);
      for (int f = 0; f < d; ++f)
        ds.features(row, f) = vals.values[fg.feature_subnodes[f]];
      raw_targets[row] = vals.values[fg.target_subnode];
      ds.domains[row] = c;
    }
  }
  ds.labels = discretize_target(raw_targets, num_classes, rng, label_jitter);
  ds.validate();
  return ds;
}

namespace detail {
// Degenerate-draw probe: a functional graph whose target or features show no
// variation across a handful of forward passes cannot carry a classification
// task.
inline bool probe_has_variance(const FunctionalGraph& fg, RngState& rng,
                               int passes = 32) {
  const int d = static_cast<int>(fg.feature_subnodes.size());
  std::vector<double> lo(d + 1, 0.0), hi(d + 1, 0.0);
  for (int p = 0; p < passes; ++p) {
    NodeValues vals = forward(fg, rng);
    for (int f = 0; f <= d; ++f) {
      const double v = f < d ? vals.values[fg.feature_subnodes[f]]
                             : vals.values[fg.target_subnode];
      if (p == 0) {
        lo[f] = hi[f] = v;
      } else {
        lo[f] = std::min(lo[f], v);
        hi[f] = std::max(hi[f], v);
      }
    }
  }
  for (int f = 0; f <= d; ++f)
    if (!(hi[f] - lo[f] > 1e-9)) return false;
  return true;
}
}  // namespace detail

// Algorithm: sample the data-generating SCM and expand it, sample the
// second-order SCM, sample the temporal domains, then per domain compute and
// apply the edge shifts and draw that domain's rows. Degenerate draws
// (constant targets, too few subnodes, too few distinct target values) are
// resampled up to cfg.max_resample_attempts times.
inline DriftDataset sample_dataset(const PriorConfig& cfg, RngState& rng,
                                   SampleObserver* obs = nullptr) {
  cfg.validate();
  for (int attempt = 1; attempt <= cfg.max_resample_attempts; ++attempt) {
    try {
      ScmGraph scm = sample_scm(cfg, rng);
      FunctionalGraph fg = expand_to_functional(scm, cfg, rng);
      {
        RngState probe_rng = rng;  // probe draws must not shift the stream
        if (!detail::probe_has_variance(fg, probe_rng))
          throw SamplingError("degenerate target/features");
      }
      std::vector<int> causal_sel;
      if (!scm.edges.empty())
        causal_sel = select_shifted_edges(scm, fg, cfg, rng);
      SecondOrderSCM sscm;
      if (!causal_sel.empty()) {
        std::vector<int> func_sel = fg.edges_with_origin(causal_sel);
        DRIFTPFN_CHECK(!func_sel.empty(), "causal selection maps to no edges");
        sscm = build_second_order_scm(func_sel, cfg, rng);
      } else {
        // Single-node SCM: nothing to shift; use an inert second-order SCM.
        sscm.graph.num_subnodes = 1;
        sscm.graph.z_groups = {{0}};
        sscm.graph.f_groups = {{}};
        sscm.graph.activations = {Activation::kIdentity};
        sscm.graph.noise_specs = {{NoiseKind::kGaussian, 0.0}};
        sscm.graph.topo_order = {0};
        sscm.frozen_noise = {0.0};
        sscm.input_subnode = 0;
      }
      const int num_classes =
          static_cast<int>(rng.uniform_int(2, cfg.max_classes));
      TemporalDomainSchedule sched = sample_schedule(cfg, rng);
      sscm.set_input_range(sched.domains.front(), sched.domains.back());
      return assemble_drift_dataset(fg, sscm, sched, num_classes,
                                    cfg.label_jitter, rng, obs);
    } catch (const SamplingError&) {
      if (attempt == cfg.max_resample_attempts)
        throw DataError("sample_dataset: degenerate draws exhausted " +
                        std::to_string(cfg.max_resample_attempts) +
                        " resample attempts");
    }
  }
  throw DataError("sample_dataset: unreachable");
}

// ---------------------------------------------------------- perturbation ----

enum class PerturbMode { kBoundaryShift, kMerge, kNoise };

// Domain-index perturbations used to study robustness to approximate domain
// information: probabilistic boundary reassignment, probabilistic merging of
// adjacent domains, and additive index noise. Features and labels are never
// touched; rows are canonically regrouped afterwards.
inline DriftDataset perturb_domains(const DriftDataset& ds, PerturbMode mode,
                                    double strength, RngState& rng) {
  if (strength < 0) throw ConfigError("perturb_domains: negative strength");
  if (mode != PerturbMode::kNoise && strength > 1)
    throw ConfigError("perturb_domains: strength must be in [0, 1]");
  const int t = ds.schedule.num_domains();
  if (mode != PerturbMode::kNoise && t < 2)
    throw ConfigError("perturb_domains: needs >= 2 domains");
  if (strength == 0.0) return ds;

  std::vector<double> c = ds.domains;
  switch (mode) {
    case PerturbMode::kBoundaryShift: {
      // Rows in the quarter of a domain block adjacent to a boundary move to
      // the neighboring domain with probability = strength.
      for (int k = 0; k < t; ++k) {
        auto [begin, end] = ds.domain_rows(k);
        const int near = (ds.schedule.counts[k] + 3) / 4;
        for (int r = begin; r < std::min(begin + near, end); ++r)
          if (k > 0 && rng.bernoulli(strength))
            c[r] = ds.schedule.domains[k - 1];
        for (int r = std::max(end - near, begin); r < end; ++r)
          if (k + 1 < t && c[r] == ds.schedule.domains[k] &&
              rng.bernoulli(strength))
            c[r] = ds.schedule.domains[k + 1];
      }
      break;
    }
    case PerturbMode::kMerge: {
      // Walk adjacent pairs; a merged domain collapses onto the earlier
      // (possibly already merged) index.
      std::vector<double> target(t);
      target[0] = ds.schedule.domains[0];
      for (int k = 1; k < t; ++k)
        target[k] = rng.bernoulli(strength) ? target[k - 1]
                                            : ds.schedule.domains[k];
      int k = 0, row = 0;
      for (; k < t; ++k)
        for (int i = 0; i < ds.schedule.counts[k]; ++i, ++row)
          c[row] = target[k];
      break;
    }
    case PerturbMode::kNoise: {
      double mean_gap = 1.0;
      if (t >= 2)
        mean_gap = (ds.schedule.domains.back() - ds.schedule.domains.front()) /
                   (t - 1);
      for (double& ci : c) ci += rng.normal() * strength * mean_gap;
      break;
    }
    default:
      throw ConfigError("perturb_domains: unknown mode");
  }

  DriftDataset out =
      DriftDataset::regroup(ds.features, ds.labels, c, ds.num_classes);
  out.validate();
  return out;
}

}  // namespace driftpfn
