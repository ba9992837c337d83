// Deterministic generators for the synthetic drift benchmarks, plus a
// delimited-text loader for external tabular data.
//
// Dataset file format (shared with the CLI): UTF-8 comma-separated text with
// header f0,...,f{d-1},label,domain; label is a non-negative integer, domain
// a decimal real, no missing values.
#pragma once

#include <fstream>
#include <numbers>
#include <sstream>

#include "driftpfn/dataset.hpp"
#include "driftpfn/rng.hpp"
#include "driftpfn/text.hpp"

namespace driftpfn {

// ------------------------------------------------------------ generators ----

namespace two_moons {
inline constexpr int kDomains = 10;
inline constexpr int kPerDomain = 220;        // 110 per moon
inline constexpr double kRotationDeg = 18.0;  // per domain, counter-clockwise
inline constexpr double kNoiseStd = 0.1;
// Centroid of the two-moon configuration; rotation pivots here.
inline constexpr double kCenterX = 0.5;
inline constexpr double kCenterY = 0.25;

inline void base_point(int cls, double t, double& x, double& y) {
  if (cls == 0) {
    x = std::cos(t);
    y = std::sin(t);
  } else {
    x = 1.0 - std::cos(t);
    y = 0.5 - std::sin(t);
  }
}

inline void rotate(double deg, double& x, double& y) {
  const double a = deg * std::numbers::pi / 180.0;
  const double dx = x - kCenterX, dy = y - kCenterY;
  x = kCenterX + dx * std::cos(a) - dy * std::sin(a);
  y = kCenterY + dx * std::sin(a) + dy * std::cos(a);
}
}  // namespace two_moons

// Two interleaved half-moons; domain i is the base layout rotated by 18*i
// degrees about the configuration centroid.
inline DriftDataset gen_rotated_two_moons(std::uint64_t seed) {
  RngState rng(seed);
  DriftDataset ds;
  const int n = two_moons::kDomains * two_moons::kPerDomain;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = 2;
  int row = 0;
  for (int dom = 0; dom < two_moons::kDomains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(two_moons::kPerDomain);
    for (int i = 0; i < two_moons::kPerDomain; ++i, ++row) {
      const int cls = i % 2;
      const double t = rng.uniform(0.0, std::numbers::pi);
      double x, y;
      two_moons::base_point(cls, t, x, y);
      x += rng.normal() * two_moons::kNoiseStd;
      y += rng.normal() * two_moons::kNoiseStd;
      two_moons::rotate(two_moons::kRotationDeg * dom, x, y);
      ds.features(row, 0) = x;
      ds.features(row, 1) = y;
      ds.labels[row] = cls;
      ds.domains[row] = dom;
    }
  }
  ds.validate();
  return ds;
}

namespace blobs {
inline constexpr int kDomains = 14;
inline constexpr int kPerClass = 40;  // 3 classes, 120 samples per domain

// Scripted piecewise-linear center paths; the three blobs pass close to one
// another around domains 4-6.
inline void center(int cls, int dom, double& x, double& y) {
  const double s = static_cast<double>(dom) / (kDomains - 1);
  switch (cls) {
    case 0: x = -4.0 + 8.0 * s; y = -2.0 + 4.0 * s; break;
    case 1: x = 4.0 - 8.0 * s; y = -2.5 + 3.5 * s; break;
    default: x = 0.3 - 0.6 * s; y = 4.0 - 7.0 * s; break;
  }
}

inline double stddev(int cls, int dom) {
  const double s = static_cast<double>(dom) / (kDomains - 1);
  return 0.55 + 0.25 * std::sin(std::numbers::pi * s + cls);
}
}  // namespace blobs

// Three Gaussian blobs whose centers travel and nearly intersect mid-way.
inline DriftDataset gen_intersecting_blobs(std::uint64_t seed) {
  RngState rng(seed);
  DriftDataset ds;
  const int per_domain = 3 * blobs::kPerClass;
  const int n = blobs::kDomains * per_domain;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = 3;
  int row = 0;
  for (int dom = 0; dom < blobs::kDomains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(per_domain);
    for (int cls = 0; cls < 3; ++cls) {
      double cx, cy;
      blobs::center(cls, dom, cx, cy);
      const double sd = blobs::stddev(cls, dom);
      for (int i = 0; i < blobs::kPerClass; ++i, ++row) {
        ds.features(row, 0) = cx + rng.normal() * sd;
        ds.features(row, 1) = cy + rng.normal() * sd;
        ds.labels[row] = cls;
        ds.domains[row] = dom;
      }
    }
  }
  ds.validate();
  return ds;
}

namespace label_shift {
inline constexpr int kDomains = 10;
inline constexpr int kPerDomain = 200;
inline constexpr double kStartP1 = 0.95;  // class-1 prior, fades to 0.05
inline constexpr double kMeanX = 1.5;     // class-conditional mean at (+-1.5, 0)

inline double class1_prior(int dom) {
  return kStartP1 - (2.0 * kStartP1 - 1.0) * dom / (kDomains - 1);
}
}  // namespace label_shift

// Fixed class-conditional Gaussians; only the class prior moves, linearly
// from 0.95 to 0.05 across domains. Per-domain counts are exact.
inline DriftDataset gen_binary_label_shift(std::uint64_t seed) {
  RngState rng(seed);
  DriftDataset ds;
  const int n = label_shift::kDomains * label_shift::kPerDomain;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = 2;
  int row = 0;
  for (int dom = 0; dom < label_shift::kDomains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(label_shift::kPerDomain);
    const int n1 = static_cast<int>(
        std::llround(label_shift::kPerDomain * label_shift::class1_prior(dom)));
    std::vector<int> order(label_shift::kPerDomain);
    for (int i = 0; i < label_shift::kPerDomain; ++i) order[i] = i < n1 ? 1 : 0;
    rng.shuffle(order);
    for (int i = 0; i < label_shift::kPerDomain; ++i, ++row) {
      const int cls = order[i];
      const double mean = cls == 1 ? label_shift::kMeanX : -label_shift::kMeanX;
      ds.features(row, 0) = mean + rng.normal();
      ds.features(row, 1) = rng.normal();
      ds.labels[row] = cls;
      ds.domains[row] = dom;
    }
  }
  ds.validate();
  return ds;
}

namespace sliding_circle {
inline constexpr int kDomains = 10;
inline constexpr int kPerDomain = 200;
inline constexpr double kBigRadius = 1.0;
inline constexpr double kSmallRadius = 0.4;

// The small circle's center slides along the inner perimeter.
inline void center(int dom, double& x, double& y) {
  const double theta = 2.0 * std::numbers::pi * dom / kDomains;
  const double rho = kBigRadius - kSmallRadius;
  x = rho * std::cos(theta);
  y = rho * std::sin(theta);
}

inline int label_of(int dom, double x, double y) {
  double cx, cy;
  center(dom, cx, cy);
  const double dx = x - cx, dy = y - cy;
  return dx * dx + dy * dy < kSmallRadius * kSmallRadius ? 1 : 0;
}
}  // namespace sliding_circle

// Points uniform in the big circle, labeled by membership in a smaller circle
// that slides around the inner perimeter as domains advance.
inline DriftDataset gen_sliding_circle(std::uint64_t seed) {
  RngState rng(seed);
  DriftDataset ds;
  const int n = sliding_circle::kDomains * sliding_circle::kPerDomain;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = 2;
  int row = 0;
  for (int dom = 0; dom < sliding_circle::kDomains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(sliding_circle::kPerDomain);
    for (int i = 0; i < sliding_circle::kPerDomain; ++i, ++row) {
      const double r = sliding_circle::kBigRadius * std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double x = r * std::cos(a), y = r * std::sin(a);
      ds.features(row, 0) = x;
      ds.features(row, 1) = y;
      ds.labels[row] = sliding_circle::label_of(dom, x, y);
      ds.domains[row] = dom;
    }
  }
  ds.validate();
  return ds;
}

namespace hyperplane {
inline constexpr int kDomains = 15;
inline constexpr int kPerDomain = 100;
inline constexpr int kFeatures = 5;   // components 0..2 drift, 3..4 fixed
inline constexpr double kMargin = 0.1;

inline Eigen::VectorXd normal_at(int dom) {
  const double a = std::numbers::pi / 12.0 * dom;  // 15 degrees per domain
  Eigen::VectorXd w(kFeatures);
  w << std::cos(a), std::sin(a), 0.6 * std::sin(a + std::numbers::pi / 3.0),
      0.7, -0.7;
  return w;
}
}  // namespace hyperplane

// Gaussian features labeled by the sign of a rotating hyperplane; a small
// margin band around the boundary is excluded by rejection.
inline DriftDataset gen_rotating_hyperplane(std::uint64_t seed) {
  RngState rng(seed);
  DriftDataset ds;
  const int n = hyperplane::kDomains * hyperplane::kPerDomain;
  ds.features.resize(n, hyperplane::kFeatures);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = 2;
  int row = 0;
  for (int dom = 0; dom < hyperplane::kDomains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(hyperplane::kPerDomain);
    const Eigen::VectorXd w = hyperplane::normal_at(dom);
    const double wn = w.norm();
    for (int i = 0; i < hyperplane::kPerDomain; ++i, ++row) {
      Eigen::VectorXd x(hyperplane::kFeatures);
      double signed_dist = 0.0;
      do {
        for (int j = 0; j < hyperplane::kFeatures; ++j) x[j] = rng.normal();
        signed_dist = w.dot(x) / wn;
      } while (std::abs(signed_dist) < hyperplane::kMargin);
      ds.features.row(row) = x.transpose();
      ds.labels[row] = signed_dist > 0 ? 1 : 0;
      ds.domains[row] = dom;
    }
  }
  ds.validate();
  return ds;
}

// Moving-cluster fixture: each cluster starts at a corner of a square and
// walks one full edge over the domains (the validation-style "moving square"
// layout by default).
struct MovingBlobsSpec {
  int num_domains = 6;
  int per_domain = 200;  // split evenly across clusters
  double half_width = 2.0;
  double stddev = 0.4;
  int num_clusters = 4;
};

inline DriftDataset gen_moving_blobs(std::uint64_t seed,
                                     const MovingBlobsSpec& spec = {}) {
  if (spec.num_clusters < 2 || spec.num_domains < 1 || spec.per_domain < spec.num_clusters)
    throw ConfigError("gen_moving_blobs: bad spec");
  RngState rng(seed);
  DriftDataset ds;
  const int per_cluster = spec.per_domain / spec.num_clusters;
  const int per_domain = per_cluster * spec.num_clusters;
  const int n = spec.num_domains * per_domain;
  ds.features.resize(n, 2);
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.num_classes = spec.num_clusters;
  auto corner = [&](int k, double& x, double& y) {
    const double hw = spec.half_width;
    switch (k % 4) {
      case 0: x = -hw; y = -hw; break;
      case 1: x = hw; y = -hw; break;
      case 2: x = hw; y = hw; break;
      default: x = -hw; y = hw; break;
    }
  };
  int row = 0;
  for (int dom = 0; dom < spec.num_domains; ++dom) {
    ds.schedule.domains.push_back(dom);
    ds.schedule.counts.push_back(per_domain);
    const double s = spec.num_domains > 1
                         ? static_cast<double>(dom) / (spec.num_domains - 1)
                         : 0.0;
    for (int cls = 0; cls < spec.num_clusters; ++cls) {
      double x0, y0, x1, y1;
      corner(cls, x0, y0);
      corner(cls + 1, x1, y1);
      const double cx = x0 + s * (x1 - x0), cy = y0 + s * (y1 - y0);
      for (int i = 0; i < per_cluster; ++i, ++row) {
        ds.features(row, 0) = cx + rng.normal() * spec.stddev;
        ds.features(row, 1) = cy + rng.normal() * spec.stddev;
        ds.labels[row] = cls;
        ds.domains[row] = dom;
      }
    }
  }
  ds.validate();
  return ds;
}

// --------------------------------------------------------------- file io ----

inline void save_dataset_csv(const DriftDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_dataset_csv: cannot open " + path);
  for (int j = 0; j < ds.num_features(); ++j) out << "f" << j << ",";
  out << "label,domain\n";
  for (int r = 0; r < ds.rows(); ++r) {
    for (int j = 0; j < ds.num_features(); ++j)
      out << fmt(ds.features(r, j)) << ",";
    out << ds.labels[r] << "," << fmt(ds.domains[r]) << "\n";
  }
  if (!out) throw DataError("save_dataset_csv: write failed for " + path);
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

// Generic loader: any numeric delimited file with a header row. Rows are
// stably sorted by ascending domain; class ids follow sorted label order
// (numeric when every label parses as a number, else lexicographic).
inline DriftDataset load_csv(const std::string& path,
                             const std::string& domain_column,
                             const std::string& target_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_csv: empty file " + path);
  const auto header = detail::split_csv_line(line);
  int dom_col = -1, tgt_col = -1;
  std::vector<int> feat_cols;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == domain_column) dom_col = j;
    else if (header[j] == target_column) tgt_col = j;
    else feat_cols.push_back(j);
  }
  if (dom_col < 0)
    throw DataError("load_csv: missing domain column '" + domain_column + "'");
  if (tgt_col < 0)
    throw DataError("load_csv: missing target column '" + target_column + "'");
  if (feat_cols.empty()) throw DataError("load_csv: no feature columns");

  std::vector<std::vector<double>> feats;
  std::vector<std::string> raw_labels;
  std::vector<double> doms;
  int rownum = 1;
  while (std::getline(in, line)) {
    ++rownum;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("load_csv: row " + std::to_string(rownum) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    std::vector<double> f(feat_cols.size());
    for (std::size_t k = 0; k < feat_cols.size(); ++k) {
      if (!parse_double(cells[feat_cols[k]], f[k]))
        throw DataError("load_csv: row " + std::to_string(rownum) +
                        ", column '" + header[feat_cols[k]] +
                        "': not numeric: '" + cells[feat_cols[k]] + "'");
    }
    double d;
    if (!parse_double(cells[dom_col], d))
      throw DataError("load_csv: row " + std::to_string(rownum) +
                      ", column '" + domain_column + "': not numeric");
    feats.push_back(std::move(f));
    raw_labels.push_back(cells[tgt_col]);
    doms.push_back(d);
  }
  if (feats.empty()) throw DataError("load_csv: no data rows in " + path);

  // Label dictionary in sorted order.
  std::vector<std::string> dict = raw_labels;
  std::sort(dict.begin(), dict.end());
  dict.erase(std::unique(dict.begin(), dict.end()), dict.end());
  bool all_numeric = true;
  std::vector<double> numeric(dict.size());
  for (std::size_t i = 0; i < dict.size() && all_numeric; ++i)
    all_numeric = parse_double(dict[i], numeric[i]);
  if (all_numeric) {
    std::vector<std::size_t> ord(dict.size());
    for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
    std::sort(ord.begin(), ord.end(),
              [&](std::size_t a, std::size_t b) { return numeric[a] < numeric[b]; });
    std::vector<std::string> sorted_dict(dict.size());
    for (std::size_t i = 0; i < ord.size(); ++i) sorted_dict[i] = dict[ord[i]];
    dict = std::move(sorted_dict);
  }
  if (dict.size() < 2)
    throw DataError("load_csv: target column '" + target_column +
                    "' has a single class");

  auto label_id = [&](const std::string& s) {
    for (std::size_t i = 0; i < dict.size(); ++i)
      if (dict[i] == s) return static_cast<int>(i);
    return -1;
  };

  const int n = static_cast<int>(feats.size());
  Eigen::MatrixXd x(n, static_cast<int>(feat_cols.size()));
  std::vector<int> y(n);
  for (int r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < feat_cols.size(); ++k)
      x(r, static_cast<int>(k)) = feats[r][k];
    y[r] = label_id(raw_labels[r]);
  }
  DriftDataset ds =
      DriftDataset::regroup(x, y, doms, static_cast<int>(dict.size()));
  ds.validate();
  return ds;
}

// Loader for the canonical dataset format written by save_dataset_csv.
inline DriftDataset load_dataset_csv(const std::string& path) {
  return load_csv(path, "domain", "label");
}

}  // namespace driftpfn
