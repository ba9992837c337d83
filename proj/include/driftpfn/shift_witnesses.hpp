// Handcrafted SCM fixtures that realize the three classic shift types through
// edge drift alone:
//
//   covariate          z_y -> z_X, drift on that relationship: P(X) moves
//                      while the label mechanism never changes, so P(Y) is
//                      domain-invariant.
//   concept            z_X -> z_y, drift on the X->Y relationship: feature
//                      marginals stay put while P(y|x) moves.
//   prior probability  z_u -> z_y -> z_X with drift on the root edge feeding
//                      y: the label marginal P(Y) sweeps across domains.
//
// Each fixture pairs the functional graph with a minimal second-order SCM
// whose single path is linear, so the per-domain delta is amplitude times the
// normalized domain value.
#pragma once

#include "driftpfn/prior.hpp"

namespace driftpfn {

enum class ShiftWitnessKind { kCovariate, kConcept, kPriorProbability };

struct ShiftWitness {
  ScmGraph scm;
  FunctionalGraph fg;
  SecondOrderSCM sscm;
};

namespace detail {

// input subnode 0 clamped to the normalized domain, identity output subnode
// 1; every shifted edge reads output 1, so deltas equal amplitude * c_norm.
inline SecondOrderSCM linear_sscm(const std::vector<int>& shifted_edges,
                                  double amplitude) {
  SecondOrderSCM h;
  h.graph.num_subnodes = 2;
  h.graph.z_groups = {{0}, {1}};
  h.graph.f_groups = {{}, {}};
  h.graph.edges = {{0, 1, 1.0, -1}};
  h.graph.activations = {Activation::kIdentity, Activation::kIdentity};
  h.graph.noise_specs = {{NoiseKind::kGaussian, 0.0},
                         {NoiseKind::kGaussian, 0.0}};
  h.graph.topo_order = {0, 1};
  h.frozen_noise = {0.0, 0.0};
  h.input_subnode = 0;
  h.shifted_edges = shifted_edges;
  h.output_subnodes.assign(shifted_edges.size(), 1);
  h.shift_scale = amplitude;
  return h;
}

}  // namespace detail

inline ShiftWitness make_shift_witness(ShiftWitnessKind kind,
                                       double amplitude = 1.5) {
  ShiftWitness w;
  auto& fg = w.fg;
  fg.clip_bound = 1e4;
  auto gauss = [](double s) { return NoiseSpec{NoiseKind::kGaussian, s}; };

  switch (kind) {
    case ShiftWitnessKind::kCovariate: {
      // y = eps (node 0); features are downstream of the drifting edge.
      w.scm = {2, {{0, 1}}, {0, 1}};
      fg.num_subnodes = 4;
      fg.z_groups = {{0}, {2, 3}};
      fg.f_groups = {{}, {1}};
      fg.edges = {{0, 1, 1.0, 0}, {1, 2, 1.0, 0}, {1, 3, -0.8, 0}};
      fg.activations.assign(4, Activation::kIdentity);
      fg.noise_specs = {gauss(1.0), gauss(0.15), gauss(0.25), gauss(0.25)};
      fg.feature_subnodes = {2, 3};
      fg.target_subnode = 0;
      fg.topo_order = {0, 1, 2, 3};
      w.sscm = detail::linear_sscm(fg.edges_with_origin({0}), amplitude);
      break;
    }
    case ShiftWitnessKind::kConcept: {
      // Features are i.i.d. roots; only their relationship to y drifts.
      w.scm = {2, {{0, 1}}, {0, 1}};
      fg.num_subnodes = 4;
      fg.z_groups = {{0, 1}, {3}};
      fg.f_groups = {{}, {2}};
      fg.edges = {{0, 2, 1.0, 0}, {1, 2, -1.0, 0}, {2, 3, 1.0, 0}};
      fg.activations.assign(4, Activation::kIdentity);
      fg.noise_specs = {gauss(1.0), gauss(1.0), gauss(0.1), gauss(0.25)};
      fg.feature_subnodes = {0, 1};
      fg.target_subnode = 3;
      fg.topo_order = {0, 1, 2, 3};
      w.sscm = detail::linear_sscm(fg.edges_with_origin({0}), amplitude);
      break;
    }
    case ShiftWitnessKind::kPriorProbability: {
      // |eps| root feeds y, so drifting that edge moves E[y] and with it the
      // label marginal; X hangs off y through a fixed mechanism.
      w.scm = {3, {{0, 1}, {1, 2}}, {0, 1, 2}};
      fg.num_subnodes = 6;
      fg.z_groups = {{0}, {2}, {4, 5}};
      fg.f_groups = {{}, {1}, {3}};
      fg.edges = {{0, 1, 1.0, 0},
                  {1, 2, 1.0, 0},
                  {2, 3, 1.0, 1},
                  {3, 4, 1.0, 1},
                  {3, 5, 0.7, 1}};
      fg.activations = {Activation::kAbs,      Activation::kIdentity,
                        Activation::kIdentity, Activation::kIdentity,
                        Activation::kIdentity, Activation::kIdentity};
      fg.noise_specs = {gauss(1.0), gauss(0.1), gauss(0.2),
                        gauss(0.1), gauss(0.3), gauss(0.3)};
      fg.feature_subnodes = {4, 5};
      fg.target_subnode = 2;
      fg.topo_order = {0, 1, 2, 3, 4, 5};
      w.sscm = detail::linear_sscm(fg.edges_with_origin({0}), amplitude);
      break;
    }
  }
  validate_scm(w.scm);
  validate_functional(w.scm, w.fg);
  return w;
}

// Drive the fixture through the standard per-domain sampling loop: integer
// domains 0..num_domains-1, two classes, unjittered median binning.
inline DriftDataset sample_witness_dataset(const ShiftWitness& w,
                                           int num_domains, int per_domain,
                                           std::uint64_t seed) {
  DRIFTPFN_CHECK(num_domains >= 2 && per_domain >= 2);
  TemporalDomainSchedule sched;
  for (int k = 0; k < num_domains; ++k) {
    sched.domains.push_back(k);
    sched.counts.push_back(per_domain);
  }
  SecondOrderSCM sscm = w.sscm;
  sscm.set_input_range(0.0, num_domains - 1.0);
  RngState rng(seed);
  return assemble_drift_dataset(w.fg, sscm, sched, /*num_classes=*/2,
                                /*label_jitter=*/0.0, rng);
}

}  // namespace driftpfn
