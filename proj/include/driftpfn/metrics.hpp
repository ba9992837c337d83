// Classification metrics: accuracy, macro-F1, ROC AUC (binary Mann-Whitney
// with tie handling, multiclass one-vs-rest), and expected calibration error.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <span>
#include <vector>

#include "driftpfn/common.hpp"

namespace driftpfn {

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  DRIFTPFN_CHECK(y_true.size() == y_pred.size() && !y_true.empty());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i)
    if (y_true[i] == y_pred[i]) hit++;
  return static_cast<double>(hit) / y_true.size();
}

// Mean per-class F1 over the classes present in y_true; a class with no true
// and no predicted positives contributes 0.
inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred) {
  DRIFTPFN_CHECK(y_true.size() == y_pred.size() && !y_true.empty());
  int max_class = 0;
  for (int y : y_true) max_class = std::max(max_class, y);
  for (int y : y_pred) max_class = std::max(max_class, y);
  std::vector<long> tp(max_class + 1, 0), fp(max_class + 1, 0),
      fn(max_class + 1, 0);
  std::vector<char> present(max_class + 1, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    present[y_true[i]] = 1;
    if (y_true[i] == y_pred[i]) tp[y_true[i]]++;
    else {
      fp[y_pred[i]]++;
      fn[y_true[i]]++;
    }
  }
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c <= max_class; ++c) {
    if (!present[c]) continue;
    classes++;
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    sum += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return sum / classes;
}

// Binary AUC as the Mann-Whitney statistic with midranks, so tied scores
// count one half.
inline double roc_auc_binary(std::span<const int> y_true,
                             std::span<const double> scores) {
  DRIFTPFN_CHECK(y_true.size() == scores.size() && !y_true.empty());
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  long n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (y_true[order[k]] == 1) {
        rank_sum_pos += midrank;
        n_pos++;
      }
    i = j;
  }
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_auc: needs both classes");
  return (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) /
         (static_cast<double>(n_pos) * n_neg);
}

// One-vs-rest AUC averaged over the classes present in y_true; weighted=true
// weighs by class prevalence instead of uniformly.
inline double roc_auc_ovr(std::span<const int> y_true,
                          const Eigen::MatrixXd& probs, bool weighted = false) {
  DRIFTPFN_CHECK(static_cast<std::size_t>(probs.rows()) == y_true.size() &&
                 !y_true.empty());
  const int num_classes = static_cast<int>(probs.cols());
  const std::size_t n = y_true.size();
  std::vector<long> count(num_classes, 0);
  for (int y : y_true) {
    DRIFTPFN_CHECK(y >= 0 && y < num_classes, "label outside probability matrix");
    count[y]++;
  }
  double sum = 0.0, weight_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (count[c] == 0 || count[c] == static_cast<long>(n)) continue;
    std::vector<int> bin(n);
    std::vector<double> sc(n);
    for (std::size_t i = 0; i < n; ++i) {
      bin[i] = y_true[i] == c ? 1 : 0;
      sc[i] = probs(static_cast<Eigen::Index>(i), c);
    }
    const double auc = roc_auc_binary(bin, sc);
    const double w = weighted ? static_cast<double>(count[c]) : 1.0;
    sum += w * auc;
    weight_sum += w;
  }
  if (weight_sum == 0.0) throw DataError("roc_auc_ovr: fewer than two classes");
  return sum / weight_sum;
}

// Convenience dispatch: binary inputs use the positive-class column.
inline double roc_auc(std::span<const int> y_true, const Eigen::MatrixXd& probs,
                      bool weighted = false) {
  int max_class = 0;
  for (int y : y_true) max_class = std::max(max_class, y);
  if (max_class <= 1 && probs.cols() >= 2) {
    std::vector<double> sc(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i)
      sc[i] = probs(static_cast<Eigen::Index>(i), 1);
    return roc_auc_binary(y_true, sc);
  }
  return roc_auc_ovr(y_true, probs, weighted);
}

// Expected calibration error with equal-width confidence bins on [0, 1].
// Confidence is the maximum class probability; the last bin is closed.
inline double ece(std::span<const int> y_true, const Eigen::MatrixXd& probs,
                  int num_bins = 10) {
  DRIFTPFN_CHECK(static_cast<std::size_t>(probs.rows()) == y_true.size() &&
                 !y_true.empty());
  DRIFTPFN_CHECK(num_bins >= 1);
  std::vector<long> count(num_bins, 0);
  std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    Eigen::Index argmax = 0;
    const double conf =
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&argmax);
    int b = std::min(static_cast<int>(conf * num_bins), num_bins - 1);
    if (b < 0) b = 0;
    count[b]++;
    conf_sum[b] += conf;
    acc_sum[b] += argmax == y_true[i] ? 1.0 : 0.0;
  }
  double e = 0.0;
  const double n = static_cast<double>(y_true.size());
  for (int b = 0; b < num_bins; ++b) {
    if (count[b] == 0) continue;
    e += (count[b] / n) *
         std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
  }
  return e;
}

// Predicted class per row (ties resolve to the lowest class id, matching
// Eigen's maxCoeff).
inline std::vector<int> argmax_rows(const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index c = 0;
    probs.row(r).maxCoeff(&c);
    out[static_cast<std::size_t>(r)] = static_cast<int>(c);
  }
  return out;
}

}  // namespace driftpfn
