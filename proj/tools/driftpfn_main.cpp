// Command-line front-end: init, gen, train, eval, boundary.
//
// Every command is a pure function of (config file, input files, seed);
// re-running reproduces artifacts byte-for-byte. Timestamps only ever go to
// run.log, which the manifest skips.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "driftpfn/driftpfn.hpp"
#include "driftpfn/runconfig.hpp"
#include "driftpfn/sha256.hpp"

namespace fs = std::filesystem;
using namespace driftpfn;

namespace {

struct CliOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = -1;
  long steps = -1;
  std::string benchmark;
};

struct RunContext {
  RunConfig cfg;
  fs::path out_dir;
  std::ofstream log;

  void log_line(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    log << buf << "Z " << msg << "\n";
    log.flush();
  }
};

RunContext open_run(const CliOverrides& ov, bool need_seed = true) {
  if (ov.config_path.empty())
    throw ConfigError("missing --config (run 'driftpfn init' for a template)");
  RunContext ctx{load_runconfig(ov.config_path), {}, {}};
  if (ov.seed) {
    ctx.cfg.seed = *ov.seed;
    ctx.cfg.has_seed = true;
  }
  if (need_seed && !ctx.cfg.has_seed)
    throw ConfigError("a seed is required (config \"seed\" or --seed)");
  if (!ov.out.empty()) ctx.cfg.output_dir = ov.out;
  if (ov.workers >= 0) ctx.cfg.workers = ov.workers;
  if (ov.steps >= 0) ctx.cfg.train.steps = ov.steps;
  if (!ov.benchmark.empty()) {
    ctx.cfg.gen.benchmark = ov.benchmark;
    ctx.cfg.eval.benchmarks = {ov.benchmark};
  }
  ctx.cfg.prior.validate();
  ctx.cfg.model.validate();
  ctx.cfg.optim.validate();
  ctx.out_dir = ctx.cfg.output_dir;
  fs::create_directories(ctx.out_dir);
  ctx.log.open(ctx.out_dir / "run.log", std::ios::app);
  return ctx;
}

// Manifest of artifact hashes; log files and the manifest itself are skipped.
void write_manifest(const fs::path& out_dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), out_dir);
    if (rel.filename() == "manifest.txt" || rel.extension() == ".log") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::ofstream out(out_dir / "manifest.txt", std::ios::binary);
  for (const fs::path& rel : files)
    out << sha256_file_hex((out_dir / rel).string()) << "  "
        << rel.generic_string() << "\n";
}

DriftDataset named_benchmark(const std::string& name, std::uint64_t seed) {
  if (name == "two_moons") return gen_rotated_two_moons(seed);
  if (name == "intersecting_blobs") return gen_intersecting_blobs(seed);
  if (name == "binary_label_shift") return gen_binary_label_shift(seed);
  if (name == "sliding_circle") return gen_sliding_circle(seed);
  if (name == "rotating_hyperplane") return gen_rotating_hyperplane(seed);
  if (name == "moving_blobs") return gen_moving_blobs(seed);
  throw ConfigError("unknown benchmark '" + name + "'");
}

DriftDataset dataset_by_ref(const std::string& ref, std::uint64_t seed) {
  if (fs::exists(ref)) return load_dataset_csv(ref);
  return named_benchmark(ref, seed);
}

int effective_workers(const RunConfig& cfg) {
  return cfg.workers > 0
             ? cfg.workers
             : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// ------------------------------------------------------------------- gen ----

int cmd_gen(const CliOverrides& ov) {
  RunContext ctx = open_run(ov);
  ctx.log_line("gen start");
  if (!ctx.cfg.gen.benchmark.empty()) {
    DriftDataset ds = named_benchmark(ctx.cfg.gen.benchmark, ctx.cfg.seed);
    save_dataset_csv(ds, (ctx.out_dir / (ctx.cfg.gen.benchmark + ".csv")).string());
  } else {
    const int n = ctx.cfg.gen.count;
    if (n < 0) throw ConfigError("gen.count must be >= 0");
    std::vector<DriftDataset> out(static_cast<std::size_t>(n));
    const int lanes = effective_workers(ctx.cfg);
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(lanes, std::max(n, 1)); ++w)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          RngState rng = RngState::substream(
              ctx.cfg.seed, {0x6E5u, static_cast<std::uint64_t>(i)});
          out[static_cast<std::size_t>(i)] = sample_dataset(ctx.cfg.prior, rng);
        }
      });
    for (auto& th : pool) th.join();
    for (int i = 0; i < n; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "prior_%04d.csv", i);
      save_dataset_csv(out[static_cast<std::size_t>(i)],
                       (ctx.out_dir / name).string());
    }
  }
  write_manifest(ctx.out_dir);
  ctx.log_line("gen done");
  return 0;
}

// ----------------------------------------------------------------- train ----

int cmd_train(const CliOverrides& ov) {
  RunContext ctx = open_run(ov);
  for (const std::string& kind : ctx.cfg.train.models) {
    if (kind != "drift" && kind != "static")
      throw ConfigError("train.models entries must be 'drift' or 'static'");
    PriorConfig prior = ctx.cfg.prior;
    if (kind == "static") prior.static_fraction = 1.0;

    OptimConfig opt = ctx.cfg.optim;
    opt.workers = effective_workers(ctx.cfg);
    const std::uint64_t model_seed =
        RngState::substream(ctx.cfg.seed, {kind == "static" ? 2u : 1u})
            .next_u64();

    const fs::path ckpt_path = ctx.out_dir / (kind + ".ckpt");
    const fs::path trace_path = ctx.out_dir / (kind + "_loss.tsv");

    IclModel model(ctx.cfg.model);
    TrainState start_state;
    const TrainState* resume = nullptr;
    if (ctx.cfg.train.resume && fs::exists(ckpt_path)) {
      LoadedCheckpoint lc = load_checkpoint(ckpt_path.string());
      if (!lc.has_optimizer)
        throw DataError("resume: " + ckpt_path.string() +
                        " has no optimizer state");
      model = std::move(lc.model);
      start_state = std::move(lc.state);
      resume = &start_state;
      ctx.log_line("train " + kind + " resume at step " +
                   std::to_string(start_state.step));
    } else {
      RngState init_rng(model_seed);
      model = IclModel::random_init(ctx.cfg.model, init_rng);
    }

    if (resume && resume->step >= ctx.cfg.train.steps)
      throw ConfigError("resume: checkpoint already at or beyond train.steps");

    std::ofstream trace(trace_path, std::ios::app);
    if (!trace) throw DataError("cannot open " + trace_path.string());
    TrainHooks hooks;
    long log_every = std::max<long>(1, ctx.cfg.train.steps / 100);
    hooks.on_step = [&](long step, double loss, double lr) {
      trace << step << "\t" << fmt(loss) << "\t" << fmt(lr) << "\n";
      if (step % log_every == 0)
        ctx.log_line("train " + kind + " step " + std::to_string(step) +
                     " loss " + fmt(loss));
    };

    ctx.log_line("train " + kind + " start, steps " +
                 std::to_string(ctx.cfg.train.steps));
    TrainState state = train_stream(model, prior, ctx.cfg.train.steps, opt,
                                    model_seed, hooks, resume);
    save_checkpoint(ckpt_path.string(), model, &state);
    ctx.log_line("train " + kind + " done, ema loss " + fmt(state.ema_loss));
  }
  write_manifest(ctx.out_dir);
  return 0;
}

// ------------------------------------------------------------------ eval ----

int cmd_eval(const CliOverrides& ov) {
  RunContext ctx = open_run(ov);
  ctx.log_line("eval start");

  std::vector<std::pair<std::string, IclModel>> loaded;
  for (const std::string& kind : ctx.cfg.eval.models) {
    std::string path = kind == "drift" ? ctx.cfg.eval.drift_checkpoint
                                       : ctx.cfg.eval.static_checkpoint;
    if (path.empty()) path = (ctx.out_dir / (kind + ".ckpt")).string();
    if (!fs::exists(path))
      throw DataError("eval: checkpoint not found: " + path +
                      " (run 'driftpfn train' first or set eval." + kind +
                      "_checkpoint)");
    loaded.push_back({kind, load_checkpoint(path).model});
  }

  std::vector<std::pair<std::string, DriftDataset>> datasets;
  for (const std::string& name : ctx.cfg.eval.benchmarks)
    datasets.push_back({name, named_benchmark(name, ctx.cfg.eval.benchmark_seed)});
  for (const std::string& path : ctx.cfg.eval.datasets)
    datasets.push_back({fs::path(path).stem().string(), load_dataset_csv(path)});

  ComparisonOptions opt;
  opt.variants.clear();
  for (const std::string& v : ctx.cfg.eval.variants)
    opt.variants.push_back(variant_from_name(v));
  opt.split_seeds = ctx.cfg.eval.split_seeds;
  opt.ece_bins = ctx.cfg.eval.ece_bins;
  opt.weighted_auc = ctx.cfg.eval.weighted_auc;

  std::vector<std::pair<std::string, const IclModel*>> models;
  for (auto& [name, model] : loaded) models.push_back({name, &model});
  const auto rows = run_comparison(models, datasets, opt);
  write_report(rows, (ctx.out_dir / "report.tsv").string());
  write_manifest(ctx.out_dir);
  ctx.log_line("eval done, " + std::to_string(rows.size()) + " report rows");
  return 0;
}

// -------------------------------------------------------------- boundary ----

int cmd_boundary(const CliOverrides& ov) {
  RunContext ctx = open_run(ov);
  ctx.log_line("boundary start");
  std::string ckpt = ctx.cfg.boundary.checkpoint;
  if (ckpt.empty()) ckpt = (ctx.out_dir / "drift.ckpt").string();
  if (!fs::exists(ckpt))
    throw DataError("boundary: checkpoint not found: " + ckpt);
  IclModel model = load_checkpoint(ckpt).model;

  DriftDataset ds =
      dataset_by_ref(ctx.cfg.boundary.dataset, ctx.cfg.eval.benchmark_seed);
  if (ds.num_features() != 2)
    throw DataError("boundary: needs a 2-feature dataset, got " +
                    std::to_string(ds.num_features()) + " features");

  std::vector<int> ctx_rows;
  for (int r = 0; r < ds.rows(); ++r)
    if (ds.domains[r] <= ctx.cfg.boundary.context_max_domain)
      ctx_rows.push_back(r);
  if (ctx_rows.size() < 2) throw DataError("boundary: empty context");
  Eigen::MatrixXd cx(static_cast<int>(ctx_rows.size()), 2);
  Eigen::VectorXd cc(static_cast<int>(ctx_rows.size()));
  std::vector<int> cy(ctx_rows.size());
  for (std::size_t i = 0; i < ctx_rows.size(); ++i) {
    cx.row(static_cast<int>(i)) = ds.features.row(ctx_rows[i]);
    cc[static_cast<int>(i)] = ds.domains[ctx_rows[i]];
    cy[i] = ds.labels[ctx_rows[i]];
  }

  std::vector<double> domains = ctx.cfg.boundary.domains;
  if (domains.empty()) domains = ds.schedule.domains;
  const int g = ctx.cfg.boundary.grid;
  if (g < 2) throw ConfigError("boundary.grid must be >= 2");

  const double x0 = ds.features.col(0).minCoeff(),
               x1 = ds.features.col(0).maxCoeff();
  const double y0 = ds.features.col(1).minCoeff(),
               y1 = ds.features.col(1).maxCoeff();
  const double mx = 0.1 * (x1 - x0), my = 0.1 * (y1 - y0);

  Eigen::MatrixXd qx(g * g, 2);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      qx(i * g + j, 0) = x0 - mx + (x1 - x0 + 2 * mx) * j / (g - 1);
      qx(i * g + j, 1) = y0 - my + (y1 - y0 + 2 * my) * i / (g - 1);
    }

  std::ofstream out(ctx.out_dir / "boundary.tsv", std::ios::binary);
  out << "x0\tx1\tdomain\tpred_class\tmax_prob\n";
  for (double dom : domains) {
    Eigen::VectorXd qc = Eigen::VectorXd::Constant(g * g, dom);
    Eigen::MatrixXd probs = predict(model, cx, cy, cc, qx, qc);
    for (int r = 0; r < g * g; ++r) {
      Eigen::Index cls = 0;
      const double p = probs.row(r).maxCoeff(&cls);
      out << fmt(qx(r, 0)) << "\t" << fmt(qx(r, 1)) << "\t" << fmt(dom) << "\t"
          << static_cast<int>(cls) << "\t" << fmt(p) << "\n";
    }
  }
  out.close();
  write_manifest(ctx.out_dir);
  ctx.log_line("boundary done");
  return 0;
}

// ------------------------------------------------------------------- init ----

int cmd_init(const std::string& path) {
  RunConfig defaults;
  defaults.has_seed = true;
  defaults.seed = 1;
  save_runconfig(defaults, path);
  std::printf("wrote config template to %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drift-resilient prior-data-fitted network pipeline"};
  app.require_subcommand(1);

  CliOverrides ov;
  std::string init_path = "driftpfn.json";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", ov.config_path, "run config JSON");
    cmd->add_option("--seed", ov.seed, "override config seed");
    cmd->add_option("--out", ov.out, "override output directory");
    cmd->add_option("--workers", ov.workers, "cap parallel lanes");
    cmd->add_option("--benchmark", ov.benchmark, "named benchmark dataset");
  };

  CLI::App* init = app.add_subcommand("init", "write a full-defaults config");
  init->add_option("--config", init_path, "where to write the template");

  CLI::App* gen = app.add_subcommand("gen", "sample datasets to CSV files");
  add_common(gen);
  CLI::App* train =
      app.add_subcommand("train", "train drift/static models from the prior");
  add_common(train);
  train->add_option("--steps", ov.steps, "override train.steps");
  CLI::App* eval =
      app.add_subcommand("eval", "Eval-Fix comparison report over benchmarks");
  add_common(eval);
  CLI::App* boundary =
      app.add_subcommand("boundary", "export a decision-surface grid");
  add_common(boundary);

  try {
    app.parse(argc, argv);
    if (init->parsed()) return cmd_init(init_path);
    if (gen->parsed()) return cmd_gen(ov);
    if (train->parsed()) return cmd_train(ov);
    if (eval->parsed()) return cmd_eval(ov);
    if (boundary->parsed()) return cmd_boundary(ov);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const TrainingFault& e) {
    std::fprintf(stderr, "training fault: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
