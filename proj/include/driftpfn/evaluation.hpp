// Eval-Fix splitting and the drift-vs-static comparison runner.
//
// A split fixes a boundary domain c_t: pre-boundary rows become train plus a
// ~10% per-domain in-distribution test subsample, post-boundary rows are the
// out-of-distribution test set. Feasible boundaries keep the pre-boundary
// block between 30% and 80% of both total domains and total samples, and
// every class must appear in train, ID and OOD alike.
#pragma once

#include <fstream>
#include <map>
#include <optional>

#include "driftpfn/dataset.hpp"
#include "driftpfn/metrics.hpp"
#include "driftpfn/model.hpp"
#include "driftpfn/rng.hpp"
#include "driftpfn/text.hpp"

namespace driftpfn {

struct SplitPart {
  Eigen::MatrixXd x;
  std::vector<int> y;
  Eigen::VectorXd c;

  int rows() const { return static_cast<int>(x.rows()); }

  void append_row(const DriftDataset& ds, int r, int at) {
    x.row(at) = ds.features.row(r);
    y[static_cast<std::size_t>(at)] = ds.labels[r];
    c[at] = ds.domains[r];
  }
};

struct EvalFixSplit {
  SplitPart train, id_test, ood_test;
  double boundary_domain = 0.0;  // c_t: last training domain value
  std::uint64_t seed = 0;
};

namespace detail {

inline SplitPart make_part(const DriftDataset& ds,
                           const std::vector<int>& rows) {
  SplitPart p;
  p.x.resize(static_cast<int>(rows.size()), ds.num_features());
  p.y.resize(rows.size());
  p.c.resize(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    p.append_row(ds, rows[i], static_cast<int>(i));
  return p;
}

inline std::vector<char> classes_of(const std::vector<int>& rows,
                                    const DriftDataset& ds) {
  std::vector<char> seen(ds.num_classes, 0);
  for (int r : rows) seen[ds.labels[r]] = 1;
  return seen;
}

}  // namespace detail

// Draw one Eval-Fix split. Boundary candidates satisfying the 30-80% rule on
// domains and samples are tried in random order; within a candidate the ID
// subsample is round(0.1 * n_k) rows per pre-boundary domain, repaired by
// same-domain swaps (or, failing that, single-row moves) until classes cover
// both sides. Throws DataError when no candidate works.
inline EvalFixSplit eval_fix_split(const DriftDataset& ds, RngState& rng,
                                   std::uint64_t seed_tag = 0) {
  const int t = ds.schedule.num_domains();
  if (t < 2) throw DataError("eval_fix_split: needs >= 2 domains");
  if (ds.num_classes < 2) throw DataError("eval_fix_split: needs >= 2 classes");
  const int n = ds.rows();

  std::vector<int> candidates;  // boundary = number of pre-boundary domains
  int cum = 0;
  for (int k = 0; k + 1 < t; ++k) {
    cum += ds.schedule.counts[k];
    const double dom_frac = static_cast<double>(k + 1) / t;
    const double smp_frac = static_cast<double>(cum) / n;
    if (dom_frac >= 0.3 && dom_frac <= 0.8 && smp_frac >= 0.3 && smp_frac <= 0.8)
      candidates.push_back(k + 1);
  }
  if (candidates.empty())
    throw DataError("eval_fix_split: no feasible boundary");
  rng.shuffle(candidates);

  for (int boundary : candidates) {
    const int pre_rows = [&] {
      int s = 0;
      for (int k = 0; k < boundary; ++k) s += ds.schedule.counts[k];
      return s;
    }();

    // OOD coverage is fixed by the boundary; check it first.
    std::vector<int> ood_rows(n - pre_rows);
    for (int r = pre_rows; r < n; ++r) ood_rows[r - pre_rows] = r;
    auto ood_seen = detail::classes_of(ood_rows, ds);
    std::vector<int> pre(pre_rows);
    for (int r = 0; r < pre_rows; ++r) pre[r] = r;
    auto pre_seen = detail::classes_of(pre, ds);
    bool coverable = true;
    for (int c = 0; c < ds.num_classes; ++c)
      coverable &= ood_seen[c] == pre_seen[c];
    if (!coverable) continue;

    // Per-domain 10% ID subsample.
    std::vector<char> in_id(pre_rows, 0);
    int row0 = 0;
    for (int k = 0; k < boundary; ++k) {
      const int nk = ds.schedule.counts[k];
      const int take = static_cast<int>(std::llround(0.1 * nk));
      std::vector<int> idx(nk);
      for (int i = 0; i < nk; ++i) idx[i] = row0 + i;
      rng.shuffle(idx);
      for (int i = 0; i < take; ++i) in_id[idx[i]] = 1;
      row0 += nk;
    }

    // Coverage repair between train and ID.
    auto count_side = [&](int cls, bool id_side) {
      int cnt = 0;
      for (int r = 0; r < pre_rows; ++r)
        if (ds.labels[r] == cls && (in_id[r] == 1) == id_side) cnt++;
      return cnt;
    };
    auto domain_of_row = [&](int r) {
      int k = 0, acc = ds.schedule.counts[0];
      while (r >= acc) acc += ds.schedule.counts[++k];
      return k;
    };
    bool ok = true;
    for (int c = 0; c < ds.num_classes && ok; ++c) {
      if (!pre_seen[c]) continue;
      for (int side = 0; side < 2 && ok; ++side) {
        const bool id_side = side == 1;
        while (count_side(c, id_side) == 0) {
          // Need a row of class c on this side; prefer swapping with a
          // same-domain row whose class stays covered on the other side.
          int donor = -1;
          for (int r = 0; r < pre_rows && donor < 0; ++r)
            if (ds.labels[r] == c && (in_id[r] == 1) != id_side &&
                count_side(c, !id_side) > 1)
              donor = r;
          if (donor < 0) {
            ok = false;
            break;
          }
          int swap_with = -1;
          for (int r = 0; r < pre_rows && swap_with < 0; ++r)
            if ((in_id[r] == 1) == id_side &&
                domain_of_row(r) == domain_of_row(donor) &&
                count_side(ds.labels[r], id_side) > 1)
              swap_with = r;
          in_id[donor] = id_side ? 1 : 0;
          if (swap_with >= 0) in_id[swap_with] = id_side ? 0 : 1;
        }
      }
    }
    if (!ok) continue;

    std::vector<int> train_rows, id_rows;
    for (int r = 0; r < pre_rows; ++r)
      (in_id[r] ? id_rows : train_rows).push_back(r);
    if (train_rows.size() < 2 || id_rows.empty()) continue;

    auto train_seen = detail::classes_of(train_rows, ds);
    auto id_seen = detail::classes_of(id_rows, ds);
    bool covered = true;
    for (int c = 0; c < ds.num_classes; ++c) {
      if (pre_seen[c])
        covered &= train_seen[c] && id_seen[c] && ood_seen[c];
      else
        covered &= !ood_seen[c];
    }
    if (!covered) continue;

    EvalFixSplit split;
    split.train = detail::make_part(ds, train_rows);
    split.id_test = detail::make_part(ds, id_rows);
    split.ood_test = detail::make_part(ds, ood_rows);
    split.boundary_domain = ds.schedule.domains[boundary - 1];
    split.seed = seed_tag;
    return split;
  }
  throw DataError("eval_fix_split: class coverage unsatisfiable at every boundary");
}

// Structural checks for a split against its source dataset; throws on any
// violation. |ID_k - round(0.1 n_k)| <= 1 accounts for coverage repair.
inline void validate_eval_fix(const EvalFixSplit& s, const DriftDataset& ds) {
  auto fail = [](const std::string& m) { throw DataError("eval_fix: " + m); };
  const int t = ds.schedule.num_domains();
  const int n = ds.rows();
  const double ct = s.boundary_domain;

  for (int i = 0; i < s.train.rows(); ++i)
    if (s.train.c[i] > ct) fail("train row beyond boundary");
  for (int i = 0; i < s.id_test.rows(); ++i)
    if (s.id_test.c[i] > ct) fail("id row beyond boundary");
  for (int i = 0; i < s.ood_test.rows(); ++i)
    if (s.ood_test.c[i] <= ct) fail("ood row before boundary");

  int pre_domains = 0, pre_rows = 0;
  std::map<double, int> id_per_domain;
  for (int k = 0; k < t; ++k)
    if (ds.schedule.domains[k] <= ct) {
      pre_domains++;
      pre_rows += ds.schedule.counts[k];
      id_per_domain[ds.schedule.domains[k]] = 0;
    }
  const double dom_frac = static_cast<double>(pre_domains) / t;
  const double smp_frac = static_cast<double>(pre_rows) / n;
  if (dom_frac < 0.3 - 1e-12 || dom_frac > 0.8 + 1e-12)
    fail("domain fraction outside [0.3, 0.8]");
  if (smp_frac < 0.3 - 1e-12 || smp_frac > 0.8 + 1e-12)
    fail("sample fraction outside [0.3, 0.8]");
  if (s.train.rows() + s.id_test.rows() != pre_rows)
    fail("pre-boundary rows not partitioned");
  if (s.ood_test.rows() != n - pre_rows) fail("ood row count mismatch");

  // Coverage repair can move a handful of rows, at most one per class.
  for (int i = 0; i < s.id_test.rows(); ++i) id_per_domain[s.id_test.c[i]]++;
  const int slack = std::max(1, ds.num_classes);
  for (int k = 0; k < t; ++k) {
    if (ds.schedule.domains[k] > ct) continue;
    const int expect =
        static_cast<int>(std::llround(0.1 * ds.schedule.counts[k]));
    const int got = id_per_domain[ds.schedule.domains[k]];
    if (std::abs(got - expect) > slack)
      fail("id subsample is not ~10% per domain");
  }

  std::vector<char> tr(ds.num_classes, 0), id(ds.num_classes, 0),
      ood(ds.num_classes, 0);
  for (int y : s.train.y) tr[y] = 1;
  for (int y : s.id_test.y) id[y] = 1;
  for (int y : s.ood_test.y) ood[y] = 1;
  for (int c = 0; c < ds.num_classes; ++c)
    if (!(tr[c] == id[c] && id[c] == ood[c]))
      fail("class coverage differs between train/id/ood");
}

// ------------------------------------------------------------ comparison ----

enum class InputVariant { kAllWithIndices, kAllWithoutIndices, kLastDomain };

inline const char* variant_name(InputVariant v) {
  switch (v) {
    case InputVariant::kAllWithIndices: return "all_dom_w_ind";
    case InputVariant::kAllWithoutIndices: return "all_dom_wo_ind";
    case InputVariant::kLastDomain: return "last_dom_wo_ind";
  }
  return "?";
}

struct MetricsReport {
  double accuracy = 0.0, f1 = 0.0, auc = 0.0, ece = 0.0;
  int n = 0;
};

inline MetricsReport score(const std::vector<int>& y_true,
                           const Eigen::MatrixXd& probs, int ece_bins,
                           bool weighted_auc) {
  MetricsReport r;
  const auto pred = argmax_rows(probs);
  r.accuracy = accuracy(y_true, pred);
  r.f1 = macro_f1(y_true, pred);
  r.auc = roc_auc(y_true, probs, weighted_auc);
  r.ece = ece(y_true, probs, ece_bins);
  r.n = static_cast<int>(y_true.size());
  return r;
}

// Evaluate one model on one split under an input variant. With-indices feeds
// the true domain column; without-indices replaces it by a constant;
// last-domain additionally restricts the context to rows of the boundary
// domain c_t.
inline std::pair<MetricsReport, MetricsReport> evaluate_split(
    const IclModel& model, const EvalFixSplit& split, InputVariant variant,
    int ece_bins = 10, bool weighted_auc = false) {
  Eigen::MatrixXd ctx_x = split.train.x;
  std::vector<int> ctx_y = split.train.y;
  Eigen::VectorXd ctx_c = split.train.c;

  if (variant == InputVariant::kLastDomain) {
    std::vector<int> keep;
    for (int i = 0; i < split.train.rows(); ++i)
      if (split.train.c[i] == split.boundary_domain) keep.push_back(i);
    if (keep.empty()) throw DataError("last-domain variant: empty context");
    Eigen::MatrixXd x(static_cast<int>(keep.size()), ctx_x.cols());
    Eigen::VectorXd c(static_cast<int>(keep.size()));
    std::vector<int> y(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      x.row(static_cast<int>(i)) = ctx_x.row(keep[i]);
      c[static_cast<int>(i)] = ctx_c[keep[i]];
      y[i] = ctx_y[keep[i]];
    }
    ctx_x = std::move(x);
    ctx_c = std::move(c);
    ctx_y = std::move(y);
  }

  Eigen::VectorXd id_c = split.id_test.c, ood_c = split.ood_test.c;
  if (variant != InputVariant::kAllWithIndices) {
    ctx_c.setZero();
    id_c.setZero();
    ood_c.setZero();
  }

  // One forward pass serves both query sets: queries never attend to each
  // other, so concatenation does not change any prediction.
  const int n_id = split.id_test.rows(), n_ood = split.ood_test.rows();
  Eigen::MatrixXd qx(n_id + n_ood, ctx_x.cols());
  qx.topRows(n_id) = split.id_test.x;
  qx.bottomRows(n_ood) = split.ood_test.x;
  Eigen::VectorXd qc(n_id + n_ood);
  qc.head(n_id) = id_c;
  qc.tail(n_ood) = ood_c;

  Eigen::MatrixXd probs = predict(model, ctx_x, ctx_y, ctx_c, qx, qc);

  // Metrics are computed over the classes the dataset uses.
  const auto id_probs = probs.topRows(n_id);
  const auto ood_probs = probs.bottomRows(n_ood);
  int num_classes = 0;
  for (int y : split.train.y) num_classes = std::max(num_classes, y + 1);
  for (int y : split.ood_test.y) num_classes = std::max(num_classes, y + 1);
  return {score(split.id_test.y, id_probs.leftCols(num_classes), ece_bins,
                weighted_auc),
          score(split.ood_test.y, ood_probs.leftCols(num_classes), ece_bins,
                weighted_auc)};
}

// Two-sided 97.5% Student-t quantile (95% interval half-width multiplier).
inline double t_quantile_975(int dof) {
  DRIFTPFN_CHECK(dof >= 1);
  static constexpr double table[] = {12.706204736432095, 4.302652729696973,
                                     3.182446305284263,  2.7764451051977987,
                                     2.5705818366147395, 2.4469118487916806,
                                     2.3646242510102993, 2.306004135033371,
                                     2.2621571627409915, 2.2281388519649385};
  if (dof <= 10) return table[dof - 1];
  // Beyond the table: monotone approach to the normal quantile.
  return 1.959963984540054 + 2.426 / dof;
}

struct ReportRow {
  std::string dataset;
  std::string variant;  // "<model>.<input variant>"
  std::string split;    // "ID" or "OOD"
  std::string metric;
  double mean = 0.0;
  double ci95 = 0.0;
  int n_seeds = 0;
};

struct ComparisonOptions {
  std::vector<InputVariant> variants = {InputVariant::kAllWithIndices,
                                        InputVariant::kAllWithoutIndices,
                                        InputVariant::kLastDomain};
  std::vector<std::uint64_t> split_seeds = {11, 22, 33};
  int ece_bins = 10;
  bool weighted_auc = false;
};

// Full comparison grid: dataset x model x variant x split seed, aggregated to
// means with 95% t-intervals across the split seeds.
inline std::vector<ReportRow> run_comparison(
    const std::vector<std::pair<std::string, const IclModel*>>& models,
    const std::vector<std::pair<std::string, DriftDataset>>& datasets,
    const ComparisonOptions& opt = {}) {
  std::vector<ReportRow> rows;
  static constexpr const char* kMetrics[] = {"accuracy", "f1", "roc_auc", "ece"};
  for (const auto& [ds_name, ds] : datasets) {
    // Splits are shared across models and variants.
    std::vector<EvalFixSplit> splits;
    for (std::uint64_t s : opt.split_seeds) {
      RngState rng(s);
      splits.push_back(eval_fix_split(ds, rng, s));
    }
    for (const auto& [model_name, model] : models) {
      for (InputVariant v : opt.variants) {
        std::vector<MetricsReport> id_runs, ood_runs;
        for (const EvalFixSplit& split : splits) {
          auto [id_rep, ood_rep] =
              evaluate_split(*model, split, v, opt.ece_bins, opt.weighted_auc);
          id_runs.push_back(id_rep);
          ood_runs.push_back(ood_rep);
        }
        auto emit = [&](const std::string& split_name,
                        const std::vector<MetricsReport>& runs) {
          for (int m = 0; m < 4; ++m) {
            auto value = [&](const MetricsReport& r) {
              switch (m) {
                case 0: return r.accuracy;
                case 1: return r.f1;
                case 2: return r.auc;
                default: return r.ece;
              }
            };
            const int k = static_cast<int>(runs.size());
            double mean = 0.0;
            for (const auto& r : runs) mean += value(r);
            mean /= k;
            double ci = 0.0;
            if (k >= 2) {
              double ss = 0.0;
              for (const auto& r : runs) {
                const double d = value(r) - mean;
                ss += d * d;
              }
              const double sd = std::sqrt(ss / (k - 1));
              ci = t_quantile_975(k - 1) * sd / std::sqrt(k);
            }
            rows.push_back({ds_name, model_name + "." + variant_name(v),
                            split_name, kMetrics[m], mean, ci, k});
          }
        };
        emit("ID", id_runs);
        emit("OOD", ood_runs);
      }
    }
  }
  return rows;
}

inline void write_report(const std::vector<ReportRow>& rows,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_report: cannot open " + path);
  out << "dataset\tvariant\tsplit\tmetric\tmean\tci95\tn_seeds\n";
  for (const ReportRow& r : rows)
    out << r.dataset << "\t" << r.variant << "\t" << r.split << "\t" << r.metric
        << "\t" << fmt(r.mean) << "\t" << fmt(r.ci95) << "\t" << r.n_seeds
        << "\n";
  if (!out) throw DataError("write_report: write failed");
}

}  // namespace driftpfn
