// Causal-level SCM graphs, their scalar functional expansion, and forward
// propagation of sampled noise through the expanded graph.
//
// A causal graph is a DAG over mechanism nodes. Each causal node i expands
// into k_i scalar subnodes Z_i; each causal node j with parents additionally
// gets l_j intermediate subnodes F_j, and the functional edge set for j is
// ({Z_i | i in PA_j} x F_j) u (F_j x Z_j). Every subnode applies an
// activation to a weighted sum of its parents plus per-pass Gaussian noise.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "driftpfn/config.hpp"
#include "driftpfn/rng.hpp"

namespace driftpfn {

// ---------------------------------------------------------------- types ----

struct CausalEdge {
  int parent = -1;
  int child = -1;
  friend bool operator==(const CausalEdge&, const CausalEdge&) = default;
};

struct ScmGraph {
  int num_nodes = 0;
  std::vector<CausalEdge> edges;
  std::vector<int> topo_order;  // permutation of 0..num_nodes-1

  std::vector<std::vector<int>> parents() const {
    std::vector<std::vector<int>> pa(num_nodes);
    for (const auto& e : edges) pa[e.child].push_back(e.parent);
    return pa;
  }
};

enum class Activation : std::uint8_t { kIdentity, kTanh, kAbs, kSin, kSoftplus };

inline constexpr Activation kAllActivations[] = {
    Activation::kIdentity, Activation::kTanh, Activation::kAbs,
    Activation::kSin, Activation::kSoftplus};

inline double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kAbs: return std::abs(x);
    case Activation::kSin: return std::sin(x);
    case Activation::kSoftplus: return x > 30.0 ? x : std::log1p(std::exp(x));
  }
  return x;
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kGaussian;
  double scale = 0.0;  // >= 0
};

struct FunctionalEdge {
  int from = -1;
  int to = -1;
  double weight = 0.0;
  int origin = -1;  // index into the parent ScmGraph's edges, or -1
};

struct FunctionalGraph {
  int num_subnodes = 0;
  std::vector<std::vector<int>> z_groups;  // causal node -> Z subnode ids
  std::vector<std::vector<int>> f_groups;  // causal node -> F subnode ids
  std::vector<FunctionalEdge> edges;
  std::vector<Activation> activations;     // per subnode
  std::vector<NoiseSpec> noise_specs;      // per subnode
  std::vector<int> feature_subnodes;
  int target_subnode = -1;
  std::vector<int> topo_order;             // subnode topological order
  double clip_bound = 1e4;

  // Incoming edge ids per subnode, in edge-insertion order.
  std::vector<std::vector<int>> incoming() const {
    std::vector<std::vector<int>> in(num_subnodes);
    for (int e = 0; e < static_cast<int>(edges.size()); ++e)
      in[edges[e].to].push_back(e);
    return in;
  }

  std::vector<int> edges_with_origin(const std::vector<int>& causal_edges) const {
    std::vector<int> out;
    for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
      if (edges[e].origin < 0) continue;
      if (std::find(causal_edges.begin(), causal_edges.end(),
                    edges[e].origin) != causal_edges.end())
        out.push_back(e);
    }
    return out;
  }
};

struct NodeValues {
  std::vector<double> values;  // indexed by subnode id
};

// ----------------------------------------------------------- validation ----

// Throws DataError on any structural violation. Used by tests and by the
// acceptance suite; sampling code is expected to produce graphs that pass.
inline void validate_scm(const ScmGraph& g) {
  auto fail = [](const std::string& m) { throw DataError("scm: " + m); };
  if (g.num_nodes < 1) fail("empty graph");
  if (static_cast<int>(g.topo_order.size()) != g.num_nodes)
    fail("topo_order size mismatch");
  std::vector<int> pos(g.num_nodes, -1);
  for (int i = 0; i < g.num_nodes; ++i) {
    int n = g.topo_order[i];
    if (n < 0 || n >= g.num_nodes || pos[n] != -1)
      fail("topo_order is not a permutation");
    pos[n] = i;
  }
  std::vector<std::vector<bool>> seen(g.num_nodes,
                                      std::vector<bool>(g.num_nodes, false));
  for (const auto& e : g.edges) {
    if (e.parent < 0 || e.parent >= g.num_nodes || e.child < 0 ||
        e.child >= g.num_nodes)
      fail("edge endpoint out of range");
    if (e.parent == e.child) fail("self loop");
    if (seen[e.parent][e.child]) fail("duplicate edge");
    seen[e.parent][e.child] = true;
    if (pos[e.parent] >= pos[e.child]) fail("edge violates topo_order");
  }
}

inline void validate_functional(const ScmGraph& scm, const FunctionalGraph& fg) {
  auto fail = [](const std::string& m) { throw DataError("functional: " + m); };
  const int s = fg.num_subnodes;
  if (s < 1) fail("empty graph");
  if (static_cast<int>(fg.z_groups.size()) != scm.num_nodes ||
      static_cast<int>(fg.f_groups.size()) != scm.num_nodes)
    fail("group count mismatch");
  if (static_cast<int>(fg.activations.size()) != s ||
      static_cast<int>(fg.noise_specs.size()) != s)
    fail("per-subnode spec size mismatch");
  for (const auto& ns : fg.noise_specs)
    if (ns.scale < 0) fail("negative noise scale");

  // Group membership: every subnode belongs to exactly one group.
  std::vector<int> group_of(s, -1);   // causal node id
  std::vector<bool> is_f(s, false);
  auto mark = [&](const std::vector<int>& ids, int node, bool f) {
    for (int id : ids) {
      if (id < 0 || id >= s) fail("subnode id out of range");
      if (group_of[id] != -1) fail("subnode in two groups");
      group_of[id] = node;
      is_f[id] = f;
    }
  };
  for (int n = 0; n < scm.num_nodes; ++n) {
    mark(fg.z_groups[n], n, false);
    mark(fg.f_groups[n], n, true);
  }
  for (int id = 0; id < s; ++id)
    if (group_of[id] == -1) fail("orphan subnode");

  // topo_order valid and edges respect it (acyclicity at the subnode level).
  if (static_cast<int>(fg.topo_order.size()) != s)
    fail("topo_order size mismatch");
  std::vector<int> pos(s, -1);
  for (int i = 0; i < s; ++i) {
    int n = fg.topo_order[i];
    if (n < 0 || n >= s || pos[n] != -1) fail("topo_order not a permutation");
    pos[n] = i;
  }

  auto pa = scm.parents();
  for (const auto& e : fg.edges) {
    if (e.from < 0 || e.from >= s || e.to < 0 || e.to >= s)
      fail("edge endpoint out of range");
    if (pos[e.from] >= pos[e.to]) fail("edge violates topo_order");
    // Bipartite law: Z_i -> F_j with i in PA_j, or F_j -> Z_j.
    if (!is_f[e.from] && is_f[e.to]) {
      int i = group_of[e.from], j = group_of[e.to];
      if (std::find(pa[j].begin(), pa[j].end(), i) == pa[j].end())
        fail("Z->F edge from a non-parent group");
    } else if (is_f[e.from] && !is_f[e.to]) {
      if (group_of[e.from] != group_of[e.to]) fail("F->Z edge across groups");
    } else {
      fail("edge does not connect a Z group to an F group");
    }
    if (e.origin >= static_cast<int>(scm.edges.size()))
      fail("edge origin out of range");
    if (e.origin >= 0) {
      const CausalEdge& ce = scm.edges[e.origin];
      int jg = is_f[e.to] ? group_of[e.to] : group_of[e.from];
      bool matches = is_f[e.to] ? (group_of[e.from] == ce.parent && jg == ce.child)
                                : (jg == ce.child);
      if (!matches) fail("edge origin does not match its causal edge");
    }
  }

  // Expansion cardinality: |E_j| = |union of parent Z|*|F_j| + |F_j|*|Z_j|.
  std::vector<int> edge_count(scm.num_nodes, 0);
  for (const auto& e : fg.edges) edge_count[group_of[is_f[e.to] ? e.to : e.from]]++;
  for (int j = 0; j < scm.num_nodes; ++j) {
    std::size_t parent_z = 0;
    for (int i : pa[j]) parent_z += fg.z_groups[i].size();
    const std::size_t want =
        parent_z * fg.f_groups[j].size() +
        fg.f_groups[j].size() * fg.z_groups[j].size();
    if (static_cast<std::size_t>(edge_count[j]) != want)
      fail("expansion cardinality violated");
    if (!pa[j].empty() && fg.f_groups[j].empty())
      fail("node with parents has no intermediate group");
    if (pa[j].empty() && !fg.f_groups[j].empty())
      fail("parentless node has an intermediate group");
  }

  // Feature / target wiring (skipped if not selected yet).
  if (fg.target_subnode >= 0 || !fg.feature_subnodes.empty()) {
    if (fg.target_subnode < 0 || fg.target_subnode >= s)
      fail("target subnode out of range");
    if (is_f[fg.target_subnode]) fail("target is an intermediate subnode");
    std::vector<bool> used(s, false);
    for (int f : fg.feature_subnodes) {
      if (f < 0 || f >= s) fail("feature subnode out of range");
      if (is_f[f]) fail("feature is an intermediate subnode");
      if (used[f]) fail("duplicate feature subnode");
      used[f] = true;
    }
    if (used[fg.target_subnode]) fail("target overlaps features");
  }
}

// ------------------------------------------------------------- sampling ----

inline ScmGraph sample_scm_sized(int min_nodes, int max_nodes,
                                 const PriorConfig& cfg, RngState& rng) {
  if (min_nodes < 1 || max_nodes < min_nodes)
    throw ConfigError("sample_scm: bad node range");
  const int n = static_cast<int>(rng.uniform_int(min_nodes, max_nodes));
  ScmGraph g;
  g.num_nodes = n;
  g.topo_order.resize(n);
  for (int i = 0; i < n; ++i) g.topo_order[i] = i;
  rng.shuffle(g.topo_order);

  const double density = rng.uniform(cfg.density_min, cfg.density_max);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(density))
        g.edges.push_back({g.topo_order[i], g.topo_order[j]});

  // A usable SCM needs at least one mechanism with parents.
  if (n >= 2 && g.edges.empty()) {
    int i = static_cast<int>(rng.uniform_int(0, n - 2));
    int j = static_cast<int>(rng.uniform_int(i + 1, n - 1));
    g.edges.push_back({g.topo_order[i], g.topo_order[j]});
  }
  return g;
}

inline ScmGraph sample_scm(const PriorConfig& cfg, RngState& rng) {
  cfg.validate();
  return sample_scm_sized(cfg.min_nodes, cfg.max_nodes, cfg, rng);
}

// Uniformly pick feature subnodes and a target among the Z subnodes (features
// and targets live on mechanism outputs, never on intermediates). Throws
// SamplingError when the graph is too small; callers resample the SCM.
inline void select_features_target(FunctionalGraph& fg, const PriorConfig& cfg,
                                   RngState& rng) {
  std::vector<int> z_all;
  for (const auto& g : fg.z_groups) z_all.insert(z_all.end(), g.begin(), g.end());
  const int want =
      static_cast<int>(rng.uniform_int(cfg.feature_min, cfg.feature_max));
  if (static_cast<int>(z_all.size()) < want + 1)
    throw SamplingError("select_features_target: too few subnodes");
  rng.shuffle(z_all);
  fg.feature_subnodes.assign(z_all.begin(), z_all.begin() + want);
  fg.target_subnode =
      z_all[static_cast<std::size_t>(want) +
            static_cast<std::size_t>(rng.uniform_int(
                0, static_cast<std::int64_t>(z_all.size()) - want - 1))];
}

// Expand a causal graph into its scalar functional representation.
//
// Edge origins record which causal edge a functional edge realizes: Z_i x F_j
// edges carry origin (i -> j); F_j x Z_j edges carry it only when j has a
// single parent (with several parents those edges are shared plumbing and get
// origin -1, so shifting one causal relationship never touches a sibling's).
inline FunctionalGraph expand_to_functional(const ScmGraph& scm,
                                            const PriorConfig& cfg,
                                            RngState& rng,
                                            bool with_features = true) {
  FunctionalGraph fg;
  fg.clip_bound = cfg.clip_bound;
  fg.z_groups.resize(scm.num_nodes);
  fg.f_groups.resize(scm.num_nodes);

  auto pa = scm.parents();
  std::vector<std::vector<std::pair<int, int>>> in_causal(scm.num_nodes);
  for (int e = 0; e < static_cast<int>(scm.edges.size()); ++e)
    in_causal[scm.edges[e].child].push_back({scm.edges[e].parent, e});

  const double weight_std =
      rng.log_uniform(cfg.weight_std_min, cfg.weight_std_max);

  auto new_subnode = [&]() {
    fg.activations.push_back(
        kAllActivations[rng.uniform_int(0, std::size(kAllActivations) - 1)]);
    fg.noise_specs.push_back(
        {NoiseKind::kGaussian,
         cfg.noise_scale_min <= 0.0
             ? cfg.noise_scale_min
             : rng.log_uniform(cfg.noise_scale_min, cfg.noise_scale_max)});
    fg.topo_order.push_back(fg.num_subnodes);
    return fg.num_subnodes++;
  };

  // Emit subnodes in causal topological order: F_j before Z_j, so creation
  // order is already a valid subnode topological order.
  for (int j : scm.topo_order) {
    const bool has_parents = !pa[j].empty();
    if (has_parents) {
      const int l =
          static_cast<int>(rng.uniform_int(cfg.intermediate_min,
                                           cfg.intermediate_max));
      for (int t = 0; t < l; ++t) fg.f_groups[j].push_back(new_subnode());
    }
    const int k = static_cast<int>(rng.uniform_int(cfg.subnode_min,
                                                   cfg.subnode_max));
    for (int t = 0; t < k; ++t) fg.z_groups[j].push_back(new_subnode());

    if (has_parents) {
      const bool single_parent = in_causal[j].size() == 1;
      for (auto [i, ce] : in_causal[j])
        for (int zi : fg.z_groups[i])
          for (int f : fg.f_groups[j])
            fg.edges.push_back({zi, f, rng.normal(0.0, weight_std), ce});
      const int fz_origin = single_parent ? in_causal[j][0].second : -1;
      for (int f : fg.f_groups[j])
        for (int zj : fg.z_groups[j])
          fg.edges.push_back({f, zj, rng.normal(0.0, weight_std), fz_origin});
    }
  }

  if (with_features) select_features_target(fg, cfg, rng);
  return fg;
}

// -------------------------------------------------------------- forward ----

// One forward propagation: fresh noise at every subnode, values clipped to
// [-clip_bound, clip_bound]. Roots see only their noise.
inline NodeValues forward(const FunctionalGraph& fg, RngState& rng) {
  NodeValues out;
  out.values.assign(fg.num_subnodes, 0.0);
  auto in = fg.incoming();
  for (int v : fg.topo_order) {
    double acc = 0.0;
    for (int e : in[v]) acc += fg.edges[e].weight * out.values[fg.edges[e].from];
    acc += rng.normal() * fg.noise_specs[v].scale;
    double val = apply_activation(fg.activations[v], acc);
    val = std::clamp(val, -fg.clip_bound, fg.clip_bound);
    DRIFTPFN_CHECK(std::isfinite(val), "non-finite value during forward");
    out.values[v] = val;
  }
  return out;
}

}  // namespace driftpfn
