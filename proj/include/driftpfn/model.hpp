// In-context-learning transformer over tabular episodes.
//
// A single forward pass ingests an entire labeled context set plus unlabeled
// query rows. Tokens are per-row projections of [padded features || domain
// encoding], with a label embedding added on context rows and a shared mask
// embedding on query rows. Attention policy: context tokens attend to all
// context tokens; query tokens attend to the context and to themselves only,
// never to other queries. Pre-LN blocks, exact-erf GELU feed-forward, and a
// class head whose logits are masked to the classes present in the context.
//
// Gradients are reverse-mode, derived by hand per block, and cover every
// parameter including the Time2Vec frequencies and phases. All math is double
// precision; parameters are kept exactly float32-representable so checkpoints
// (which store float32 blobs) round-trip bitwise.
#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "driftpfn/config.hpp"
#include "driftpfn/time2vec.hpp"

namespace driftpfn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Normalized feature values are clipped here when building episodes, before
// they ever reach the model.
inline constexpr double kEpisodeFeatureClip = 20.0;

// ------------------------------------------------------------- episodes ----

struct Episode {
  MatrixXd ctx_x;          // Tc x f, f <= max_features, normalized
  std::vector<int> ctx_y;
  VectorXd ctx_c;          // normalized domain values
  MatrixXd qry_x;          // Tq x f
  VectorXd qry_c;
  std::vector<int> qry_y;  // training targets; empty at pure inference

  int context_size() const { return static_cast<int>(ctx_x.rows()); }
  int query_size() const { return static_cast<int>(qry_x.rows()); }

  void validate(const ModelConfig& cfg) const {
    if (ctx_x.cols() != qry_x.cols())
      throw DataError("episode: context/query feature width mismatch");
    if (ctx_x.cols() > cfg.max_features)
      throw CapacityError("episode: feature count exceeds max_features");
    if (static_cast<int>(ctx_y.size()) != context_size() ||
        ctx_c.size() != context_size() || qry_c.size() != query_size())
      throw DataError("episode: column length mismatch");
    std::vector<char> present(cfg.max_classes, 0);
    for (int y : ctx_y) {
      if (y < 0 || y >= cfg.max_classes)
        throw CapacityError("episode: class id exceeds max_classes");
      present[y] = 1;
    }
    for (int y : qry_y) {
      if (y < 0 || y >= cfg.max_classes)
        throw CapacityError("episode: class id exceeds max_classes");
      if (!present[y])
        throw DataError("episode: query class absent from context");
    }
  }

  std::vector<char> classes_present(int max_classes) const {
    std::vector<char> present(max_classes, 0);
    for (int y : ctx_y) present[y] = 1;
    return present;
  }
};

// Normalize with context statistics only, clip, and assemble an episode.
// Passing query labels is optional (training needs them).
inline Episode make_episode(const MatrixXd& ctx_x, std::vector<int> ctx_y,
                            const VectorXd& ctx_c, const MatrixXd& qry_x,
                            const VectorXd& qry_c,
                            std::vector<int> qry_y = {}) {
  Normalizer norm = Normalizer::fit(ctx_x, ctx_c);
  Episode ep;
  ep.ctx_x = norm.apply(ctx_x).cwiseMax(-kEpisodeFeatureClip)
                 .cwiseMin(kEpisodeFeatureClip);
  ep.qry_x = norm.apply(qry_x).cwiseMax(-kEpisodeFeatureClip)
                 .cwiseMin(kEpisodeFeatureClip);
  ep.ctx_c = norm.apply_domain(ctx_c);
  ep.qry_c = norm.apply_domain(qry_c);
  ep.ctx_y = std::move(ctx_y);
  ep.qry_y = std::move(qry_y);
  return ep;
}

// ----------------------------------------------------------- parameters ----

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  long offset = 0;
  long size() const { return static_cast<long>(rows) * cols; }
};

class IclModel {
 public:
  explicit IclModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_specs();
    params_ = VectorXd::Zero(total_size_);
  }

  static IclModel random_init(const ModelConfig& cfg, RngState& rng) {
    IclModel m(cfg);
    const int d = cfg.embed_dim;
    const double resid = 1.0 / std::sqrt(2.0 * cfg.num_layers);
    Time2VecParams t2v = Time2VecParams::init(cfg.t2v_dim, rng);
    m.tensor("t2v.omega") = t2v.omega;
    m.tensor("t2v.phi") = t2v.phi;
    m.fill_normal("embed.w_in", rng, 1.0 / std::sqrt(cfg.input_dim()));
    m.fill_normal("embed.label", rng, 1.0);
    m.fill_normal("embed.mask", rng, 1.0);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      m.tensor(p + "ln1.gamma").setOnes();
      m.tensor(p + "ln2.gamma").setOnes();
      m.fill_normal(p + "attn.wq", rng, 1.0 / std::sqrt(d));
      m.fill_normal(p + "attn.wk", rng, 1.0 / std::sqrt(d));
      m.fill_normal(p + "attn.wv", rng, 1.0 / std::sqrt(d));
      m.fill_normal(p + "attn.wo", rng, resid / std::sqrt(d));
      m.fill_normal(p + "ff.w1", rng, 1.0 / std::sqrt(d));
      m.fill_normal(p + "ff.w2", rng, resid / std::sqrt(cfg.ff()));
    }
    m.tensor("final.ln.gamma").setOnes();
    m.fill_normal("head.w", rng, 1.0 / std::sqrt(d));
    m.quantize_to_f32();
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  std::span<const TensorSpec> tensors() const { return specs_; }
  long num_params() const { return total_size_; }
  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }

  Eigen::Map<MatrixXd> tensor(int i) {
    const TensorSpec& s = specs_[static_cast<std::size_t>(i)];
    return {params_.data() + s.offset, s.rows, s.cols};
  }

  Eigen::Map<MatrixXd> tensor(const std::string& name) {
    return tensor(index_of(name));
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].name == name) return static_cast<int>(i);
    throw DataError("unknown tensor: " + name);
  }

  Time2VecParams t2v_params() const {
    Time2VecParams p;
    p.omega = params_.segment(specs_[0].offset, cfg_.t2v_dim);
    p.phi = params_.segment(specs_[1].offset, cfg_.t2v_dim);
    return p;
  }

  // Round every parameter to the nearest float32 value; keeps in-memory state
  // identical to what a checkpoint stores.
  void quantize_to_f32() { quantize_to_f32(params_); }

  static void quantize_to_f32(VectorXd& v) {
    for (long i = 0; i < v.size(); ++i)
      v[i] = static_cast<double>(static_cast<float>(v[i]));
  }

 private:
  void fill_normal(const std::string& name, RngState& rng, double std) {
    auto t = tensor(name);
    for (long i = 0; i < t.size(); ++i)
      t.data()[i] = rng.normal() * std;
  }

  void add_spec(const std::string& name, int rows, int cols) {
    specs_.push_back({name, rows, cols, total_size_});
    total_size_ += static_cast<long>(rows) * cols;
  }

  void build_specs() {
    const int d = cfg_.embed_dim;
    add_spec("t2v.omega", cfg_.t2v_dim, 1);
    add_spec("t2v.phi", cfg_.t2v_dim, 1);
    add_spec("embed.w_in", cfg_.input_dim(), d);
    add_spec("embed.b_in", d, 1);
    add_spec("embed.label", cfg_.max_classes, d);
    add_spec("embed.mask", d, 1);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add_spec(p + "ln1.gamma", d, 1);
      add_spec(p + "ln1.beta", d, 1);
      add_spec(p + "attn.wq", d, d);
      add_spec(p + "attn.bq", d, 1);
      add_spec(p + "attn.wk", d, d);
      add_spec(p + "attn.bk", d, 1);
      add_spec(p + "attn.wv", d, d);
      add_spec(p + "attn.bv", d, 1);
      add_spec(p + "attn.wo", d, d);
      add_spec(p + "attn.bo", d, 1);
      add_spec(p + "ln2.gamma", d, 1);
      add_spec(p + "ln2.beta", d, 1);
      add_spec(p + "ff.w1", d, cfg_.ff());
      add_spec(p + "ff.b1", cfg_.ff(), 1);
      add_spec(p + "ff.w2", cfg_.ff(), d);
      add_spec(p + "ff.b2", d, 1);
    }
    add_spec("final.ln.gamma", d, 1);
    add_spec("final.ln.beta", d, 1);
    add_spec("head.w", d, cfg_.max_classes);
    add_spec("head.b", cfg_.max_classes, 1);
  }

  ModelConfig cfg_;
  std::vector<TensorSpec> specs_;
  long total_size_ = 0;
  VectorXd params_;
};

// ------------------------------------------------------ forward/backward ----

namespace nn {

inline constexpr double kLnEps = 1e-5;
inline constexpr double kMaskedLogit = -1e30;

struct ConstViews {
  const ModelConfig& cfg;
  const double* p;

  explicit ConstViews(const IclModel& m)
      : cfg(m.config()), p(m.params().data()), specs_(m.tensors()) {}

  Eigen::Map<const MatrixXd> t(int idx) const {
    const TensorSpec& s = specs_[static_cast<std::size_t>(idx)];
    return {p + s.offset, s.rows, s.cols};
  }

 private:
  std::span<const TensorSpec> specs_;
};

// Tensor indices follow registration order in IclModel::build_specs.
struct Idx {
  static constexpr int kT2vOmega = 0, kT2vPhi = 1, kWIn = 2, kBIn = 3,
                       kLabel = 4, kMask = 5, kLayerBase = 6,
                       kPerLayer = 16;
  static int layer(int l, int j) { return kLayerBase + kPerLayer * l + j; }
  static int final_ln_gamma(int layers) { return kLayerBase + kPerLayer * layers; }
  static int final_ln_beta(int layers) { return final_ln_gamma(layers) + 1; }
  static int head_w(int layers) { return final_ln_gamma(layers) + 2; }
  static int head_b(int layers) { return final_ln_gamma(layers) + 3; }
  // Per-layer tensor slots.
  static constexpr int kLn1G = 0, kLn1B = 1, kWq = 2, kBq = 3, kWk = 4,
                       kBk = 5, kWv = 6, kBv = 7, kWo = 8, kBo = 9, kLn2G = 10,
                       kLn2B = 11, kW1 = 12, kB1 = 13, kW2 = 14, kB2 = 15;
};

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Row-wise layernorm; writes normalized rows and keeps (xhat, inv_std) for
// the backward pass.
inline void layernorm(const MatrixXd& x, Eigen::Map<const MatrixXd> gamma,
                      Eigen::Map<const MatrixXd> beta, MatrixXd& xhat,
                      VectorXd& inv_std, MatrixXd& out) {
  const auto n = x.cols();
  xhat.resize(x.rows(), n);
  inv_std.resize(x.rows());
  out.resize(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    inv_std[r] = inv;
    xhat.row(r) = (x.row(r).array() - mu) * inv;
    out.row(r) = xhat.row(r).cwiseProduct(gamma.col(0).transpose()) +
                 beta.col(0).transpose();
  }
}

// dx for a layernorm given upstream dy; accumulates dgamma/dbeta.
inline MatrixXd layernorm_backward(const MatrixXd& dy, const MatrixXd& xhat,
                                   const VectorXd& inv_std,
                                   Eigen::Map<const MatrixXd> gamma,
                                   double* dgamma, double* dbeta) {
  const auto n = xhat.cols();
  Eigen::Map<VectorXd> dg(dgamma, n), db(dbeta, n);
  MatrixXd dx(dy.rows(), n);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    dg += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    db += dy.row(r).transpose();
    Eigen::RowVectorXd g = dy.row(r).cwiseProduct(gamma.col(0).transpose());
    const double m1 = g.mean();
    const double m2 = g.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (g.array() - m1 - xhat.row(r).array() * m2) * inv_std[r];
  }
  return dx;
}

struct LayerCache {
  MatrixXd n1, xhat1;
  VectorXd inv1;
  MatrixXd q, k, v;          // T x d
  std::vector<MatrixXd> ac;  // per head: Tc x Tc
  std::vector<MatrixXd> aq;  // per head: Tq x Tc
  std::vector<VectorXd> aself;
  MatrixXd z;                // concatenated head outputs
  MatrixXd n2, xhat2;
  VectorXd inv2;
  MatrixXd ff_pre, ff_act;
};

struct ForwardCache {
  MatrixXd u;        // T x input_dim
  MatrixXd dom_arg;  // T x m: omega_i * c + phi_i per row (t2v backward)
  std::vector<LayerCache> layers;
  MatrixXd h_final;
  MatrixXd nf, xhatf;
  VectorXd invf;
  MatrixXd logits;   // Tq x Cpresent-masked
  MatrixXd probs;
  std::vector<char> present;
};

// Builds the (T x input_dim) network input: zero-padded features followed by
// the domain channel (Time2Vec, or the normalized scalar, or zeros when the
// domain rides along as a plain feature column).
inline void build_input(const ConstViews& w, const Episode& ep, MatrixXd& u,
                        MatrixXd* dom_arg) {
  const ModelConfig& cfg = w.cfg;
  const int tc = ep.context_size(), tq = ep.query_size(), t = tc + tq;
  const int f = static_cast<int>(ep.ctx_x.cols());
  const int fx = cfg.max_features;
  u.setZero(t, cfg.input_dim());
  u.block(0, 0, tc, f) = ep.ctx_x;
  u.block(tc, 0, tq, f) = ep.qry_x;

  auto dom_of = [&](int r) { return r < tc ? ep.ctx_c[r] : ep.qry_c[r - tc]; };
  if (cfg.domain_as_feature) {
    if (f + 1 > fx)
      throw CapacityError("domain_as_feature needs a free feature column");
    for (int r = 0; r < t; ++r) u(r, f) = dom_of(r);
    if (dom_arg) dom_arg->setZero(t, cfg.domain_channels());
    return;
  }
  if (!cfg.use_t2v) {
    for (int r = 0; r < t; ++r) u(r, fx) = dom_of(r);
    if (dom_arg) dom_arg->setZero(t, 1);
    return;
  }
  const auto omega = w.t(Idx::kT2vOmega), phi = w.t(Idx::kT2vPhi);
  if (dom_arg) dom_arg->resize(t, cfg.t2v_dim);
  for (int r = 0; r < t; ++r) {
    const double c = dom_of(r);
    for (int i = 0; i < cfg.t2v_dim; ++i) {
      const double arg = omega(i, 0) * c + phi(i, 0);
      if (dom_arg) (*dom_arg)(r, i) = arg;
      u(r, fx + i) = i == 0 ? arg : std::sin(arg);
    }
  }
}

// Full forward pass with cached intermediates (training path). Returns the
// sum of query cross-entropies in *loss_sum when query labels are present.
inline void forward_cached(const ConstViews& w, const Episode& ep,
                           ForwardCache& fc, double* loss_sum) {
  const ModelConfig& cfg = w.cfg;
  const int tc = ep.context_size(), tq = ep.query_size(), t = tc + tq;
  const int d = cfg.embed_dim, nh = cfg.num_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  DRIFTPFN_CHECK(tc >= 1 && tq >= 1, "episode needs context and query rows");

  build_input(w, ep, fc.u, &fc.dom_arg);

  MatrixXd h = fc.u * w.t(Idx::kWIn);
  h.rowwise() += w.t(Idx::kBIn).col(0).transpose();
  const auto label = w.t(Idx::kLabel);
  for (int r = 0; r < tc; ++r) h.row(r) += label.row(ep.ctx_y[r]);
  h.bottomRows(tq).rowwise() += w.t(Idx::kMask).col(0).transpose();

  fc.layers.resize(cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerCache& lc = fc.layers[l];
    layernorm(h, w.t(Idx::layer(l, Idx::kLn1G)), w.t(Idx::layer(l, Idx::kLn1B)),
              lc.xhat1, lc.inv1, lc.n1);

    lc.q = lc.n1 * w.t(Idx::layer(l, Idx::kWq));
    lc.q.rowwise() += w.t(Idx::layer(l, Idx::kBq)).col(0).transpose();
    lc.k = lc.n1 * w.t(Idx::layer(l, Idx::kWk));
    lc.k.rowwise() += w.t(Idx::layer(l, Idx::kBk)).col(0).transpose();
    lc.v = lc.n1 * w.t(Idx::layer(l, Idx::kWv));
    lc.v.rowwise() += w.t(Idx::layer(l, Idx::kBv)).col(0).transpose();

    lc.ac.resize(nh);
    lc.aq.resize(nh);
    lc.aself.resize(nh);
    lc.z.resize(t, d);
    for (int hd = 0; hd < nh; ++hd) {
      const auto qh = lc.q.middleCols(hd * dh, dh);
      const auto kh = lc.k.middleCols(hd * dh, dh);
      const auto vh = lc.v.middleCols(hd * dh, dh);

      // Context rows: full self-attention within the context.
      MatrixXd sc = qh.topRows(tc) * kh.topRows(tc).transpose() * scale;
      for (int r = 0; r < tc; ++r) {
        const double mx = sc.row(r).maxCoeff();
        sc.row(r) = (sc.row(r).array() - mx).exp().matrix();
        sc.row(r) /= sc.row(r).sum();
      }
      lc.ac[hd] = std::move(sc);
      lc.z.block(0, hd * dh, tc, dh).noalias() =
          lc.ac[hd] * vh.topRows(tc);

      // Query rows: attend to the context plus themselves.
      MatrixXd sq = qh.bottomRows(tq) * kh.topRows(tc).transpose() * scale;
      VectorXd sself = (qh.bottomRows(tq).array() * kh.bottomRows(tq).array())
                           .rowwise()
                           .sum()
                           .matrix() *
                       scale;
      VectorXd aself(tq);
      for (int r = 0; r < tq; ++r) {
        const double mx = std::max(sq.row(r).maxCoeff(), sself[r]);
        sq.row(r) = (sq.row(r).array() - mx).exp().matrix();
        const double es = std::exp(sself[r] - mx);
        const double denom = sq.row(r).sum() + es;
        sq.row(r) /= denom;
        aself[r] = es / denom;
      }
      lc.aq[hd] = std::move(sq);
      lc.aself[hd] = std::move(aself);
      lc.z.block(tc, hd * dh, tq, dh).noalias() =
          lc.aq[hd] * vh.topRows(tc);
      lc.z.block(tc, hd * dh, tq, dh) +=
          lc.aself[hd].asDiagonal() * vh.bottomRows(tq);
    }

    h.noalias() += lc.z * w.t(Idx::layer(l, Idx::kWo));
    h.rowwise() += w.t(Idx::layer(l, Idx::kBo)).col(0).transpose();

    layernorm(h, w.t(Idx::layer(l, Idx::kLn2G)), w.t(Idx::layer(l, Idx::kLn2B)),
              lc.xhat2, lc.inv2, lc.n2);
    lc.ff_pre.noalias() = lc.n2 * w.t(Idx::layer(l, Idx::kW1));
    lc.ff_pre.rowwise() += w.t(Idx::layer(l, Idx::kB1)).col(0).transpose();
    lc.ff_act = lc.ff_pre.unaryExpr([](double x) { return gelu(x); });
    h.noalias() += lc.ff_act * w.t(Idx::layer(l, Idx::kW2));
    h.rowwise() += w.t(Idx::layer(l, Idx::kB2)).col(0).transpose();
  }
  fc.h_final = h;

  const int nl = cfg.num_layers;
  MatrixXd hq = h.bottomRows(tq);
  layernorm(hq, w.t(Idx::final_ln_gamma(nl)), w.t(Idx::final_ln_beta(nl)),
            fc.xhatf, fc.invf, fc.nf);
  fc.logits.noalias() = fc.nf * w.t(Idx::head_w(nl));
  fc.logits.rowwise() += w.t(Idx::head_b(nl)).col(0).transpose();

  fc.present = ep.classes_present(cfg.max_classes);
  for (int c = 0; c < cfg.max_classes; ++c)
    if (!fc.present[c]) fc.logits.col(c).setConstant(kMaskedLogit);

  fc.probs.resize(tq, cfg.max_classes);
  double total = 0.0;
  for (int r = 0; r < tq; ++r) {
    const double mx = fc.logits.row(r).maxCoeff();
    fc.probs.row(r) = (fc.logits.row(r).array() - mx).exp().matrix();
    const double denom = fc.probs.row(r).sum();
    fc.probs.row(r) /= denom;
    if (!ep.qry_y.empty())
      total -= fc.logits(r, ep.qry_y[r]) - mx - std::log(denom);
  }
  if (loss_sum) *loss_sum = total;
}

// Reverse pass over a cached forward. Adds gradients (scaled by grad_scale)
// into grad, which must have one slot per parameter in registration order.
inline void backward_cached(const ConstViews& w, const Episode& ep,
                            const ForwardCache& fc, double grad_scale,
                            double* grad, std::span<const TensorSpec> specs) {
  const ModelConfig& cfg = w.cfg;
  const int tc = ep.context_size(), tq = ep.query_size(), t = tc + tq;
  const int d = cfg.embed_dim, nh = cfg.num_heads, hs = cfg.head_dim();
  const int nl = cfg.num_layers;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));

  auto g = [&](int idx) -> Eigen::Map<MatrixXd> {
    const TensorSpec& s = specs[static_cast<std::size_t>(idx)];
    return {grad + s.offset, s.rows, s.cols};
  };

  // d(sum CE)/d logits = probs - onehot, zero on masked classes.
  MatrixXd dlogits = fc.probs;
  for (int r = 0; r < tq; ++r) dlogits(r, ep.qry_y[r]) -= 1.0;
  dlogits *= grad_scale;

  g(Idx::head_b(nl)).col(0) += dlogits.colwise().sum().transpose();
  g(Idx::head_w(nl)).noalias() += fc.nf.transpose() * dlogits;
  MatrixXd dnf = dlogits * w.t(Idx::head_w(nl)).transpose();

  MatrixXd dh = MatrixXd::Zero(t, d);
  dh.bottomRows(tq) = layernorm_backward(
      dnf, fc.xhatf, fc.invf, w.t(Idx::final_ln_gamma(nl)),
      g(Idx::final_ln_gamma(nl)).data(), g(Idx::final_ln_beta(nl)).data());

  for (int l = nl - 1; l >= 0; --l) {
    const LayerCache& lc = fc.layers[l];

    // Feed-forward block.
    g(Idx::layer(l, Idx::kB2)).col(0) += dh.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kW2)).noalias() += lc.ff_act.transpose() * dh;
    MatrixXd dact = dh * w.t(Idx::layer(l, Idx::kW2)).transpose();
    MatrixXd dpre =
        dact.cwiseProduct(lc.ff_pre.unaryExpr([](double x) { return gelu_grad(x); }));
    g(Idx::layer(l, Idx::kB1)).col(0) += dpre.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kW1)).noalias() += lc.n2.transpose() * dpre;
    MatrixXd dn2 = dpre * w.t(Idx::layer(l, Idx::kW1)).transpose();
    dh += layernorm_backward(dn2, lc.xhat2, lc.inv2,
                             w.t(Idx::layer(l, Idx::kLn2G)),
                             g(Idx::layer(l, Idx::kLn2G)).data(),
                             g(Idx::layer(l, Idx::kLn2B)).data());

    // Attention block.
    g(Idx::layer(l, Idx::kBo)).col(0) += dh.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kWo)).noalias() += lc.z.transpose() * dh;
    MatrixXd dz = dh * w.t(Idx::layer(l, Idx::kWo)).transpose();

    MatrixXd dq = MatrixXd::Zero(t, d), dk = MatrixXd::Zero(t, d),
             dv = MatrixXd::Zero(t, d);
    for (int head = 0; head < nh; ++head) {
      const int c0 = head * hs;
      const auto qh = lc.q.middleCols(c0, hs);
      const auto kh = lc.k.middleCols(c0, hs);
      const auto vh = lc.v.middleCols(c0, hs);
      const auto dzh = dz.middleCols(c0, hs);
      const MatrixXd& ac = lc.ac[head];
      const MatrixXd& aq = lc.aq[head];
      const VectorXd& aself = lc.aself[head];

      // Query block: joint softmax over [context | self] columns.
      MatrixXd daq = dzh.bottomRows(tq) * vh.topRows(tc).transpose();
      VectorXd daself = (dzh.bottomRows(tq).array() * vh.bottomRows(tq).array())
                            .rowwise()
                            .sum()
                            .matrix();
      dv.block(0, c0, tc, hs).noalias() += aq.transpose() * dzh.bottomRows(tq);
      dv.block(tc, c0, tq, hs).noalias() +=
          aself.asDiagonal() * dzh.bottomRows(tq);
      VectorXd srow = (daq.array() * aq.array()).rowwise().sum().matrix();
      srow += daself.cwiseProduct(aself);
      MatrixXd dsq =
          (aq.array() * (daq.array().colwise() - srow.array())).matrix();
      VectorXd dsself =
          (aself.array() * (daself.array() - srow.array())).matrix();
      dq.block(tc, c0, tq, hs).noalias() += dsq * kh.topRows(tc) * scale;
      dq.block(tc, c0, tq, hs).noalias() +=
          (dsself.asDiagonal() * kh.bottomRows(tq)) * scale;
      dk.block(0, c0, tc, hs).noalias() +=
          dsq.transpose() * qh.bottomRows(tq) * scale;
      dk.block(tc, c0, tq, hs).noalias() +=
          (dsself.asDiagonal() * qh.bottomRows(tq)) * scale;

      // Context block: plain row softmax.
      MatrixXd dac = dzh.topRows(tc) * vh.topRows(tc).transpose();
      dv.block(0, c0, tc, hs).noalias() += ac.transpose() * dzh.topRows(tc);
      VectorXd sc_row = (dac.array() * ac.array()).rowwise().sum().matrix();
      MatrixXd dsc =
          (ac.array() * (dac.array().colwise() - sc_row.array())).matrix();
      dq.block(0, c0, tc, hs).noalias() += dsc * kh.topRows(tc) * scale;
      dk.block(0, c0, tc, hs).noalias() +=
          dsc.transpose() * qh.topRows(tc) * scale;
    }

    g(Idx::layer(l, Idx::kBq)).col(0) += dq.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kBk)).col(0) += dk.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kBv)).col(0) += dv.colwise().sum().transpose();
    g(Idx::layer(l, Idx::kWq)).noalias() += lc.n1.transpose() * dq;
    g(Idx::layer(l, Idx::kWk)).noalias() += lc.n1.transpose() * dk;
    g(Idx::layer(l, Idx::kWv)).noalias() += lc.n1.transpose() * dv;
    MatrixXd dn1 = dq * w.t(Idx::layer(l, Idx::kWq)).transpose();
    dn1.noalias() += dk * w.t(Idx::layer(l, Idx::kWk)).transpose();
    dn1.noalias() += dv * w.t(Idx::layer(l, Idx::kWv)).transpose();
    dh += layernorm_backward(dn1, lc.xhat1, lc.inv1,
                             w.t(Idx::layer(l, Idx::kLn1G)),
                             g(Idx::layer(l, Idx::kLn1G)).data(),
                             g(Idx::layer(l, Idx::kLn1B)).data());
  }

  // Embedding.
  for (int r = 0; r < tc; ++r)
    g(Idx::kLabel).row(ep.ctx_y[r]) += dh.row(r);
  g(Idx::kMask).col(0) += dh.bottomRows(tq).colwise().sum().transpose();
  g(Idx::kBIn).col(0) += dh.colwise().sum().transpose();
  g(Idx::kWIn).noalias() += fc.u.transpose() * dh;

  // Time2Vec parameters (skipped when the domain is not routed through it).
  if (cfg.use_t2v && !cfg.domain_as_feature) {
    MatrixXd du = dh * w.t(Idx::kWIn).transpose();
    const int fx = cfg.max_features;
    auto gomega = g(Idx::kT2vOmega), gphi = g(Idx::kT2vPhi);
    for (int r = 0; r < t; ++r) {
      const double c = r < tc ? ep.ctx_c[r] : ep.qry_c[r - tc];
      for (int i = 0; i < cfg.t2v_dim; ++i) {
        const double gi = du(r, fx + i);
        const double slope = i == 0 ? 1.0 : std::cos(fc.dom_arg(r, i));
        gomega(i, 0) += gi * slope * c;
        gphi(i, 0) += gi * slope;
      }
    }
  }
}

}  // namespace nn

// --------------------------------------------------------- public surface ----

// Token matrix exactly as the transformer consumes it (one row per input row,
// context first).
inline MatrixXd encode_tokens(const IclModel& model, const Episode& ep) {
  ep.validate(model.config());
  nn::ConstViews w(model);
  MatrixXd u;
  nn::build_input(w, ep, u, nullptr);
  MatrixXd h = u * w.t(nn::Idx::kWIn);
  h.rowwise() += w.t(nn::Idx::kBIn).col(0).transpose();
  const int tc = ep.context_size();
  for (int r = 0; r < tc; ++r)
    h.row(r) += w.t(nn::Idx::kLabel).row(ep.ctx_y[r]);
  h.bottomRows(ep.query_size()).rowwise() +=
      w.t(nn::Idx::kMask).col(0).transpose();
  return h;
}

// Probabilities for every query row; classes absent from the context get
// exactly zero mass.
inline MatrixXd forward_icl(const IclModel& model, const Episode& ep) {
  ep.validate(model.config());
  nn::ForwardCache fc;
  nn::ConstViews w(model);
  nn::forward_cached(w, ep, fc, nullptr);
  return fc.probs;
}

struct EpisodeLoss {
  double loss_sum = 0.0;
  long queries = 0;
};

// Sum of query cross-entropies for one episode; when grad is non-null the
// parameter gradient of that sum (times grad_scale) is accumulated into it.
inline EpisodeLoss episode_loss(const IclModel& model, const Episode& ep,
                                VectorXd* grad, double grad_scale = 1.0) {
  ep.validate(model.config());
  if (ep.qry_y.empty()) throw DataError("episode_loss: queries need labels");
  nn::ForwardCache fc;
  nn::ConstViews w(model);
  double loss_sum = 0.0;
  nn::forward_cached(w, ep, fc, &loss_sum);
  if (grad) {
    DRIFTPFN_CHECK(grad->size() == model.num_params());
    nn::backward_cached(w, ep, fc, grad_scale, grad->data(), model.tensors());
  }
  return {loss_sum, ep.query_size()};
}

// Mean cross-entropy over all query positions of the batch plus its gradient.
// Episodes are processed in parallel lanes but reduced in batch order, so the
// result is independent of the worker count.
inline double loss_and_grads(const IclModel& model,
                             std::span<const Episode> batch, VectorXd& grad,
                             int workers = 1) {
  if (batch.empty()) throw DataError("loss_and_grads: empty batch");
  grad = VectorXd::Zero(model.num_params());
  const int n = static_cast<int>(batch.size());
  std::vector<VectorXd> grads(n);
  std::vector<double> losses(n, 0.0);
  std::vector<long> counts(n, 0);

  auto run = [&](int i) {
    grads[i] = VectorXd::Zero(model.num_params());
    EpisodeLoss el = episode_loss(model, batch[i], &grads[i]);
    losses[i] = el.loss_sum;
    counts[i] = el.queries;
  };
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int lanes = std::min(workers, n);
    for (int wk = 0; wk < lanes; ++wk)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run(i);
      });
    for (auto& th : pool) th.join();
  }

  double loss_sum = 0.0;
  long total = 0;
  for (int i = 0; i < n; ++i) {
    loss_sum += losses[i];
    total += counts[i];
    grad += grads[i];
  }
  DRIFTPFN_CHECK(total > 0, "batch has no query rows");
  grad /= static_cast<double>(total);
  const double loss = loss_sum / static_cast<double>(total);
  if (!std::isfinite(loss))
    throw TrainingFault("non-finite loss over batch of " + std::to_string(n) +
                        " episodes");
  return loss;
}

inline double batch_loss(const IclModel& model, std::span<const Episode> batch) {
  if (batch.empty()) throw DataError("batch_loss: empty batch");
  double loss_sum = 0.0;
  long total = 0;
  for (const Episode& ep : batch) {
    EpisodeLoss el = episode_loss(model, ep, nullptr);
    loss_sum += el.loss_sum;
    total += el.queries;
  }
  return loss_sum / static_cast<double>(total);
}

// Fit normalization on the train rows, encode, and run the masked forward
// pass. Deterministic: no sampling happens at inference time.
inline MatrixXd predict(const IclModel& model, const MatrixXd& train_x,
                        const std::vector<int>& train_y,
                        const VectorXd& train_c, const MatrixXd& query_x,
                        const VectorXd& query_c) {
  if (query_x.rows() == 0)
    return MatrixXd(0, model.config().max_classes);
  Episode ep = make_episode(train_x, train_y, train_c, query_x, query_c);
  return forward_icl(model, ep);
}

}  // namespace driftpfn
