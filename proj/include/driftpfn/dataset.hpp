// Labeled drift datasets: rows of (features, class, domain index) grouped by
// a temporal domain schedule.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "driftpfn/common.hpp"

namespace driftpfn {

struct TemporalDomainSchedule {
  std::vector<double> domains;  // strictly increasing
  std::vector<int> counts;      // aligned, all >= 1

  int num_domains() const { return static_cast<int>(domains.size()); }

  int total() const {
    int t = 0;
    for (int c : counts) t += c;
    return t;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw DataError("schedule: " + m); };
    if (domains.empty()) fail("no domains");
    if (domains.size() != counts.size()) fail("domain/count size mismatch");
    for (std::size_t k = 0; k < domains.size(); ++k) {
      if (!std::isfinite(domains[k])) fail("non-finite domain index");
      if (k > 0 && !(domains[k - 1] < domains[k]))
        fail("domain indices not strictly increasing");
      if (counts[k] < 1) fail("domain with no samples");
    }
  }
};

struct DriftDataset {
  Eigen::MatrixXd features;     // rows x feature columns
  std::vector<int> labels;      // class ids in [0, num_classes)
  std::vector<double> domains;  // per-row domain index, grouped per schedule
  int num_classes = 0;
  TemporalDomainSchedule schedule;

  int rows() const { return static_cast<int>(features.rows()); }
  int num_features() const { return static_cast<int>(features.cols()); }

  // Row index range [begin, end) of domain k.
  std::pair<int, int> domain_rows(int k) const {
    int begin = 0;
    for (int i = 0; i < k; ++i) begin += schedule.counts[i];
    return {begin, begin + schedule.counts[k]};
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw DataError("dataset: " + m); };
    schedule.validate();
    const int n = rows();
    if (n != schedule.total()) fail("row count does not match schedule");
    if (static_cast<int>(labels.size()) != n ||
        static_cast<int>(domains.size()) != n)
      fail("column length mismatch");
    if (num_classes < 2) fail("need at least two classes");
    if (!features.allFinite()) fail("non-finite feature value");

    std::vector<int> class_seen(num_classes, 0);
    int row = 0;
    for (int k = 0; k < schedule.num_domains(); ++k) {
      for (int i = 0; i < schedule.counts[k]; ++i, ++row) {
        if (domains[row] != schedule.domains[k])
          fail("row domain does not match schedule grouping");
        if (labels[row] < 0 || labels[row] >= num_classes)
          fail("label out of range");
        class_seen[labels[row]]++;
      }
    }
    for (int c = 0; c < num_classes; ++c)
      if (class_seen[c] == 0) fail("class never appears");
  }

  // Canonical regrouping after per-row domain edits: stable-sort rows by
  // domain and rebuild the schedule from observed values.
  static DriftDataset regroup(const Eigen::MatrixXd& x,
                              const std::vector<int>& y,
                              const std::vector<double>& c, int num_classes) {
    const int n = static_cast<int>(x.rows());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return c[a] < c[b]; });

    DriftDataset out;
    out.features.resize(n, x.cols());
    out.labels.resize(n);
    out.domains.resize(n);
    out.num_classes = num_classes;
    for (int i = 0; i < n; ++i) {
      out.features.row(i) = x.row(order[i]);
      out.labels[i] = y[order[i]];
      out.domains[i] = c[order[i]];
    }
    for (int i = 0; i < n; ++i) {
      if (i == 0 || out.domains[i] != out.domains[i - 1]) {
        out.schedule.domains.push_back(out.domains[i]);
        out.schedule.counts.push_back(1);
      } else {
        out.schedule.counts.back()++;
      }
    }
    return out;
  }
};

}  // namespace driftpfn
