// Streaming pre-training on synthetic drift datasets, Adam with cosine decay,
// and the checkpoint file format.
//
// Dataset seeds derive from (run seed, step, slot, attempt), so the stream is
// reproducible for any worker count and a resumed run continues the exact
// same sequence. Parameters and optimizer moments are rounded to float32
// values after every update; checkpoints store float32 blobs, so a
// save/load round-trip is bitwise lossless.
#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <functional>
#include <thread>

#include "driftpfn/model.hpp"
#include "driftpfn/prior.hpp"

namespace driftpfn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

// ------------------------------------------------------------- episodes ----

// Split a drift dataset into a context/query episode at a domain boundary.
// The boundary fraction is drawn from [0.3, 0.8]; single-domain datasets fall
// back to a row split. Query rows whose class is absent from the context are
// dropped; throws SamplingError when nothing usable remains.
inline Episode episode_from_dataset(const DriftDataset& ds, RngState& rng) {
  const int n = ds.rows();
  if (n < 4) throw SamplingError("episode: dataset too small");
  const double frac = rng.uniform(0.3, 0.8);

  int split = 0;
  if (ds.schedule.num_domains() >= 2) {
    int cum = 0, best = -1;
    double best_err = 2.0;
    for (int k = 0; k + 1 < ds.schedule.num_domains(); ++k) {
      cum += ds.schedule.counts[k];
      const double err = std::abs(static_cast<double>(cum) / n - frac);
      if (err < best_err) {
        best_err = err;
        best = cum;
      }
    }
    split = best;
  } else {
    split = static_cast<int>(std::llround(frac * n));
  }
  split = std::clamp(split, 2, n - 1);

  std::vector<char> present(ds.num_classes, 0);
  for (int r = 0; r < split; ++r) present[ds.labels[r]] = 1;
  std::vector<int> keep;
  for (int r = split; r < n; ++r)
    if (present[ds.labels[r]]) keep.push_back(r);
  if (keep.empty()) throw SamplingError("episode: no queries after filtering");

  Eigen::MatrixXd qx(static_cast<int>(keep.size()), ds.num_features());
  Eigen::VectorXd qc(static_cast<int>(keep.size()));
  std::vector<int> qy(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    qx.row(static_cast<int>(i)) = ds.features.row(keep[i]);
    qc[static_cast<int>(i)] = ds.domains[keep[i]];
    qy[i] = ds.labels[keep[i]];
  }
  return make_episode(
      ds.features.topRows(split),
      std::vector<int>(ds.labels.begin(), ds.labels.begin() + split),
      Eigen::Map<const VectorXd>(ds.domains.data(), split), qx, qc,
      std::move(qy));
}

// ----------------------------------------------------------- train state ----

struct TrainState {
  long step = 0;                // also the learning-rate schedule position
  VectorXd adam_m, adam_v;
  std::uint64_t base_seed = 0;  // id of the dataset stream
  double ema_loss = 0.0;
  std::vector<double> loss_trace;  // losses of this invocation only
};

inline double lr_at(const OptimConfig& opt, long step, long total_steps) {
  const long warmup =
      std::max<long>(1, std::llround(opt.warmup_frac * total_steps));
  if (step < warmup)
    return opt.lr * static_cast<double>(step + 1) / warmup;
  if (total_steps <= warmup) return opt.lr;
  const double t = static_cast<double>(step - warmup) /
                   static_cast<double>(total_steps - warmup);
  return 0.5 * opt.lr * (1.0 + std::cos(std::numbers::pi * t));
}

struct TrainHooks {
  std::function<void(long step, double loss, double lr)> on_step;
};

namespace detail {

inline Episode draw_stream_episode(const PriorConfig& prior,
                                   std::uint64_t seed, long step, int slot,
                                   std::uint64_t* used_seed) {
  for (int attempt = 0; attempt < 32; ++attempt) {
    RngState rng = RngState::substream(
        seed, {0xDA7A5E7Dull, static_cast<std::uint64_t>(step),
               static_cast<std::uint64_t>(slot),
               static_cast<std::uint64_t>(attempt)});
    if (used_seed) *used_seed = static_cast<std::uint64_t>(step) << 16 | slot;
    try {
      const bool is_static = rng.uniform() < prior.static_fraction;
      DriftDataset ds =
          sample_dataset(is_static ? prior.with_zero_shift() : prior, rng);
      return episode_from_dataset(ds, rng);
    } catch (const SamplingError&) {
    } catch (const DataError&) {
    }
  }
  throw TrainingFault("stream: no valid episode after 32 attempts at step " +
                      std::to_string(step) + " slot " + std::to_string(slot));
}

}  // namespace detail

// One optimizer loop over a stream of freshly sampled datasets. Trains from
// state.step (0 for a fresh run) up to total_steps. Episode generation and
// gradients run in parallel lanes; reduction order is fixed, so results do
// not depend on the worker count.
inline TrainState train_stream(IclModel& model, const PriorConfig& prior,
                               long total_steps, const OptimConfig& opt,
                               std::uint64_t seed,
                               const TrainHooks& hooks = {},
                               const TrainState* resume = nullptr) {
  if (total_steps < 1) throw ConfigError("train_stream: steps must be >= 1");
  prior.validate();
  opt.validate();
  const int fx_budget =
      model.config().max_features - (model.config().domain_as_feature ? 1 : 0);
  if (prior.feature_max > fx_budget)
    throw ConfigError("train_stream: prior feature_max exceeds model");
  if (prior.max_classes > model.config().max_classes)
    throw ConfigError("train_stream: prior max_classes exceeds model");

  TrainState state;
  if (resume) {
    state = *resume;
    state.loss_trace.clear();
    if (state.adam_m.size() != model.num_params())
      throw DataError("train_stream: resume state does not match model");
    if (state.base_seed != seed)
      throw ConfigError("train_stream: resume seed differs from checkpoint");
  } else {
    state.adam_m = VectorXd::Zero(model.num_params());
    state.adam_v = VectorXd::Zero(model.num_params());
    state.base_seed = seed;
  }

  const int workers = opt.workers > 0
                          ? opt.workers
                          : static_cast<int>(std::max(
                                1u, std::thread::hardware_concurrency()));
  const int b = opt.batch;
  std::vector<VectorXd> grads(b);
  std::vector<double> losses(b);
  std::vector<long> counts(b);
  std::vector<std::uint64_t> slot_seeds(b);

  for (long step = state.step; step < total_steps; ++step) {
    auto run_slot = [&](int slot) {
      Episode ep = detail::draw_stream_episode(prior, seed, step, slot,
                                               &slot_seeds[slot]);
      grads[slot] = VectorXd::Zero(model.num_params());
      EpisodeLoss el = episode_loss(model, ep, &grads[slot]);
      losses[slot] = el.loss_sum;
      counts[slot] = el.queries;
    };
    if (workers <= 1 || b == 1) {
      for (int slot = 0; slot < b; ++slot) run_slot(slot);
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      for (int wk = 0; wk < std::min(workers, b); ++wk)
        pool.emplace_back([&]() {
          for (int s = next.fetch_add(1); s < b; s = next.fetch_add(1))
            run_slot(s);
        });
      for (auto& th : pool) th.join();
    }

    VectorXd grad = VectorXd::Zero(model.num_params());
    double loss_sum = 0.0;
    long total = 0;
    for (int slot = 0; slot < b; ++slot) {
      grad += grads[slot];
      loss_sum += losses[slot];
      total += counts[slot];
    }
    grad /= static_cast<double>(total);
    const double loss = loss_sum / static_cast<double>(total);
    if (!std::isfinite(loss)) {
      std::string dump = "step " + std::to_string(step) + " slots";
      for (int slot = 0; slot < b; ++slot)
        dump += " " + std::to_string(slot_seeds[slot]) +
                ":" + std::to_string(losses[slot]);
      throw TrainingFault("non-finite loss; episode dump: " + dump);
    }

    if (opt.clip_norm > 0) {
      const double gn = grad.norm();
      if (gn > opt.clip_norm) grad *= opt.clip_norm / gn;
    }

    const double lr = lr_at(opt, step, total_steps);
    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    state.adam_m = opt.beta1 * state.adam_m + (1.0 - opt.beta1) * grad;
    state.adam_v.array() = opt.beta2 * state.adam_v.array() +
                           (1.0 - opt.beta2) * grad.array().square();
    if (!model.config().train_t2v) {
      // Frozen temporal encoding: mask its moments so no update flows.
      const auto& specs = model.tensors();
      for (int i = 0; i < 2; ++i) {
        state.adam_m.segment(specs[i].offset, specs[i].size()).setZero();
        state.adam_v.segment(specs[i].offset, specs[i].size()).setZero();
      }
    }
    model.params().array() -=
        lr * (state.adam_m.array() / bc1) /
        ((state.adam_v.array() / bc2).sqrt() + opt.eps);
    model.quantize_to_f32();
    IclModel::quantize_to_f32(state.adam_m);
    IclModel::quantize_to_f32(state.adam_v);

    state.ema_loss = step == 0 ? loss : 0.98 * state.ema_loss + 0.02 * loss;
    state.step = step + 1;
    state.loss_trace.push_back(loss);
    if (hooks.on_step) hooks.on_step(step, loss, lr);
  }
  return state;
}

// ----------------------------------------------------------- checkpoints ----
//
// Layout: magic "DRPFN1", then a u32 little-endian byte length, then that
// many bytes of key=value manifest text, then float32 little-endian blobs for
// every tensor= / opt_tensor= line in manifest order.

namespace detail {

inline void append_kv(std::string& m, const std::string& k,
                      const std::string& v) {
  m += k;
  m += '=';
  m += v;
  m += '\n';
}

inline std::string hex_bits(double v) {
  char buf[17];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf),
                               std::bit_cast<std::uint64_t>(v), 16);
  return std::string(buf, p);
}

inline double bits_hex(const std::string& s) {
  std::uint64_t u = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), u, 16);
  if (ec != std::errc()) throw DataError("checkpoint: bad hex double");
  return std::bit_cast<double>(u);
}

inline void write_f32_blob(std::FILE* f, const VectorXd& v, long offset,
                           long count) {
  std::vector<float> buf(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(v[offset + i]);
  if (std::fwrite(buf.data(), sizeof(float), buf.size(), f) != buf.size())
    throw DataError("checkpoint: short write");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const IclModel& model,
                            const TrainState* state = nullptr) {
  const ModelConfig& cfg = model.config();
  std::string m;
  detail::append_kv(m, "format", "drift-pfn-checkpoint");
  detail::append_kv(m, "version", "1");
  detail::append_kv(m, "embed_dim", std::to_string(cfg.embed_dim));
  detail::append_kv(m, "num_layers", std::to_string(cfg.num_layers));
  detail::append_kv(m, "num_heads", std::to_string(cfg.num_heads));
  detail::append_kv(m, "ff_dim", std::to_string(cfg.ff_dim));
  detail::append_kv(m, "max_features", std::to_string(cfg.max_features));
  detail::append_kv(m, "max_classes", std::to_string(cfg.max_classes));
  detail::append_kv(m, "t2v_dim", std::to_string(cfg.t2v_dim));
  detail::append_kv(m, "use_t2v", cfg.use_t2v ? "1" : "0");
  detail::append_kv(m, "train_t2v", cfg.train_t2v ? "1" : "0");
  detail::append_kv(m, "domain_as_feature", cfg.domain_as_feature ? "1" : "0");
  detail::append_kv(m, "step", std::to_string(state ? state->step : 0));
  detail::append_kv(m, "has_optimizer", state ? "1" : "0");
  if (state) {
    detail::append_kv(m, "base_seed", std::to_string(state->base_seed));
    detail::append_kv(m, "ema_loss_bits", detail::hex_bits(state->ema_loss));
  }
  for (const TensorSpec& s : model.tensors())
    detail::append_kv(m, "tensor", s.name + " " + std::to_string(s.rows) +
                                       " " + std::to_string(s.cols));
  if (state) {
    detail::append_kv(m, "opt_tensor",
                      "adam_m " + std::to_string(model.num_params()) + " 1");
    detail::append_kv(m, "opt_tensor",
                      "adam_v " + std::to_string(model.num_params()) + " 1");
  }

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  const char magic[6] = {'D', 'R', 'P', 'F', 'N', '1'};
  const std::uint32_t len = static_cast<std::uint32_t>(m.size());
  bool ok = std::fwrite(magic, 1, 6, f) == 6 &&
            std::fwrite(&len, 4, 1, f) == 1 &&
            std::fwrite(m.data(), 1, m.size(), f) == m.size();
  if (!ok) {
    std::fclose(f);
    throw DataError("checkpoint: short write");
  }
  detail::write_f32_blob(f, model.params(), 0, model.num_params());
  if (state) {
    detail::write_f32_blob(f, state->adam_m, 0, model.num_params());
    detail::write_f32_blob(f, state->adam_v, 0, model.num_params());
  }
  std::fclose(f);
}

struct LoadedCheckpoint {
  IclModel model;
  TrainState state;     // moments empty when has_optimizer is false
  bool has_optimizer = false;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("checkpoint: cannot open " + path);
  auto fail = [&](const std::string& m) -> DataError {
    std::fclose(f);
    return DataError("checkpoint " + path + ": " + m);
  };
  char magic[6];
  if (std::fread(magic, 1, 6, f) != 6 || std::memcmp(magic, "DRPFN1", 6) != 0)
    throw fail("bad magic");
  std::uint32_t len = 0;
  if (std::fread(&len, 4, 1, f) != 1) throw fail("truncated manifest length");
  std::string manifest(len, '\0');
  if (std::fread(manifest.data(), 1, len, f) != len)
    throw fail("truncated manifest");

  std::vector<std::pair<std::string, std::string>> kv;
  std::size_t pos = 0;
  while (pos < manifest.size()) {
    std::size_t nl = manifest.find('\n', pos);
    if (nl == std::string::npos) nl = manifest.size();
    std::string line = manifest.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw fail("manifest line without '='");
    kv.push_back({line.substr(0, eq), line.substr(eq + 1)});
  }
  auto get = [&](const std::string& key) -> std::string {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw fail("manifest missing key " + key);
  };

  ModelConfig cfg;
  cfg.embed_dim = std::stoi(get("embed_dim"));
  cfg.num_layers = std::stoi(get("num_layers"));
  cfg.num_heads = std::stoi(get("num_heads"));
  cfg.ff_dim = std::stoi(get("ff_dim"));
  cfg.max_features = std::stoi(get("max_features"));
  cfg.max_classes = std::stoi(get("max_classes"));
  cfg.t2v_dim = std::stoi(get("t2v_dim"));
  cfg.use_t2v = get("use_t2v") == "1";
  cfg.train_t2v = get("train_t2v") == "1";
  cfg.domain_as_feature = get("domain_as_feature") == "1";

  LoadedCheckpoint out{IclModel(cfg), {}, get("has_optimizer") == "1"};
  out.state.step = std::stol(get("step"));
  if (out.has_optimizer) {
    out.state.base_seed = std::stoull(get("base_seed"));
    out.state.ema_loss = detail::bits_hex(get("ema_loss_bits"));
  }

  // Verify tensor lines against this build's layout, then read the blobs in
  // manifest order.
  std::vector<std::pair<std::string, long>> blob_order;
  for (const auto& [k, v] : kv) {
    if (k != "tensor" && k != "opt_tensor") continue;
    std::size_t s1 = v.find(' ');
    std::size_t s2 = v.find(' ', s1 + 1);
    if (s1 == std::string::npos || s2 == std::string::npos)
      throw fail("bad tensor line: " + v);
    const std::string name = v.substr(0, s1);
    const long rows = std::stol(v.substr(s1 + 1, s2 - s1 - 1));
    const long cols = std::stol(v.substr(s2 + 1));
    if (k == "tensor") {
      const int idx = out.model.index_of(name);
      const TensorSpec& spec = out.model.tensors()[static_cast<std::size_t>(idx)];
      if (spec.rows != rows || spec.cols != cols)
        throw fail("tensor shape mismatch for " + name);
    }
    blob_order.push_back({(k == "tensor" ? "p." : "o.") + name, rows * cols});
  }

  auto read_into = [&](double* dst, long count) {
    std::vector<float> buf(static_cast<std::size_t>(count));
    if (std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size())
      throw fail("truncated blob");
    for (long i = 0; i < count; ++i)
      dst[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
  };
  if (out.has_optimizer) {
    out.state.adam_m = VectorXd::Zero(out.model.num_params());
    out.state.adam_v = VectorXd::Zero(out.model.num_params());
  }
  for (const auto& [tag, count] : blob_order) {
    if (tag.starts_with("p.")) {
      const int idx = out.model.index_of(tag.substr(2));
      const TensorSpec& spec = out.model.tensors()[static_cast<std::size_t>(idx)];
      read_into(out.model.params().data() + spec.offset, count);
    } else if (tag == "o.adam_m") {
      if (count != out.model.num_params()) throw fail("adam_m size mismatch");
      read_into(out.state.adam_m.data(), count);
    } else if (tag == "o.adam_v") {
      if (count != out.model.num_params()) throw fail("adam_v size mismatch");
      read_into(out.state.adam_v.data(), count);
    } else {
      throw fail("unknown opt tensor " + tag);
    }
  }
  std::fclose(f);
  return out;
}

}  // namespace driftpfn
