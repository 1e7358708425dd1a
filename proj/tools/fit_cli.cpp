// fit: train / evaluate / precompute / bench / ablate workflows over a flat
// key=value config. Every run writes a self-contained directory (config
// echo, metrics, checkpoint/store) so results are reproducible from the
// echoed config alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fit/checkpoint.hpp"
#include "fit/config.hpp"
#include "fit/data.hpp"
#include "fit/metrics.hpp"
#include "fit/model.hpp"
#include "fit/serving.hpp"
#include "fit/store.hpp"
#include "fit/train.hpp"

namespace fs = std::filesystem;
using namespace fit;

namespace {

/// Faults traceable to user input (bad paths, bad keys) exit 1; anything
/// else that throws is an internal error and exits 2.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string out_dir;
  std::string data_dir;
  std::string run_name;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "flat key=value config file");
  sub->add_option("--set", args.sets, "override: key=value (repeatable)");
  sub->add_option("--seed", args.seed, "override the seed key");
  sub->add_option("--out-dir", args.out_dir, "override the out_dir key");
  sub->add_option("--data-dir", args.data_dir, "override the data_dir key");
  sub->add_option("--run-name", args.run_name, "override the run_name key");
}

Config build_config(const CommonArgs& args) {
  Config cfg;
  try {
    if (!args.config_path.empty()) cfg = Config::from_file(args.config_path);
    // The variant key is a macro for (use_mqm, interaction, scorer); when the
    // file selects one, expand it before explicit overrides so --set can
    // still retune individual keys.
    if (!cfg.has_default("variant")) apply_variant(cfg, cfg.str("variant"));
    for (const std::string& kv : args.sets) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (key == "variant") apply_variant(cfg, value);
      else cfg.set(key, value);
    }
    if (!args.seed.empty()) cfg.set("seed", args.seed);
    if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
    if (!args.data_dir.empty()) cfg.set("data_dir", args.data_dir);
    if (!args.run_name.empty()) cfg.set("run_name", args.run_name);
  } catch (const std::exception& e) {
    throw UserError(e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct DatasetBundle {
  Split split;
  std::vector<TrainingExample> all_examples;
  int n_users = 0, n_items = 0, n_cats = 0;
  int max_seq_len = 0;
  std::vector<int> item_cat;  // dense item id -> category id
  std::string name;
};

std::string resolve_data_dir(const Config& cfg) {
  std::string dir = cfg.str("data_dir");
  if (dir.empty()) {
    const char* env = std::getenv("FIT_DATA_DIR");
    dir = env ? env : "data/ml-1m";
  }
  return dir;
}

DatasetBundle load_dataset(const Config& cfg) {
  DatasetBundle bundle;
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer64("seed"));
  Rng base(seed);
  const std::uint64_t s_pipeline = base.fork(11).next_u64();
  const std::uint64_t s_split = base.fork(12).next_u64();

  const std::string dataset = cfg.str("dataset");
  if (dataset == "ml1m") {
    const std::string dir = resolve_data_dir(cfg);
    InteractionLog log;
    try {
      log = load_movielens(dir);
    } catch (const std::exception& e) {
      throw UserError(std::string(e.what()) +
                      " (set data_dir or FIT_DATA_DIR to the MovieLens-1M directory)");
    }
    std::cout << "ml-1m: users=" << log.users.size() << " rated_movies=" << log.rated_movies
              << " listed_movies=" << log.raw_movies << " categories=" << log.n_cats
              << " ratings=" << log.n_ratings << '\n';
    BuildResult built = build_examples(log, cfg.integer("max_seq_len"), s_pipeline);
    std::cout << "examples=" << built.examples.size()
              << " dropped_users=" << built.dropped_users << '\n';
    bundle.all_examples = built.examples;
    bundle.n_users = static_cast<int>(log.users.size());
    bundle.n_items = log.n_items;
    bundle.n_cats = log.n_cats;
    bundle.max_seq_len = cfg.integer("max_seq_len");
    bundle.item_cat = log.item_cat;
    bundle.name = "ml1m";
  } else if (dataset == "synthetic") {
    SyntheticData data = synthetic_planted(
        s_pipeline, cfg.integer("synth_users"), cfg.integer("synth_items"),
        cfg.integer("synth_clusters"), cfg.integer("synth_seq_min"),
        cfg.integer("synth_seq_max"), cfg.number("synth_mix"));
    if (data.degenerate)
      std::cout << "warning: n_clusters=1 makes every label positive (degenerate)\n";
    bundle.all_examples = data.examples;
    bundle.n_users = data.n_users;
    bundle.n_items = data.n_items;
    bundle.n_cats = data.n_cats;
    bundle.max_seq_len = data.max_seq_len;
    bundle.item_cat = data.item_cluster;
    bundle.name = "synthetic";
  } else {
    throw UserError("dataset must be 'ml1m' or 'synthetic', got '" + dataset + "'");
  }
  bundle.split = split_examples(bundle.all_examples, cfg.number("val_frac"), s_split);
  return bundle;
}

ModelConfig model_config_from(const Config& cfg, const DatasetBundle& data) {
  ModelConfig mc;
  mc.use_mqm = cfg.flag("use_mqm");
  mc.interaction = interaction_from_string(cfg.str("interaction"));
  mc.scorer = scorer_from_string(cfg.str("scorer"));
  mc.n_users = data.n_users;
  mc.n_items = data.n_items;
  mc.n_cats = data.n_cats;
  mc.embed_dim = cfg.integer("embed_dim");
  mc.n_meta = cfg.integer("n_meta");
  mc.heads_u = cfg.integer("heads_u");
  mc.heads_v = cfg.integer("heads_v");
  mc.head_dim = cfg.integer("head_dim");
  mc.tower_widths = cfg.int_list("tower_widths");
  mc.lss_dim = cfg.integer("lss_dim");
  mc.din_hidden = cfg.int_list("din_hidden");
  mc.seed = static_cast<std::uint64_t>(cfg.integer64("seed"));
  return mc;
}

TrainConfig train_config_from(const Config& cfg, const DatasetBundle& data) {
  TrainConfig tc;
  tc.model = model_config_from(cfg, data);
  tc.lr = cfg.number("lr");
  tc.batch_size = cfg.integer("batch_size");
  tc.epochs = cfg.integer("epochs");
  tc.max_seq_len = data.max_seq_len;
  tc.early_stop_patience = cfg.integer("early_stop_patience");
  tc.tau_floor = cfg.number("tau_floor");
  tc.deterministic = cfg.flag("deterministic");
  return tc;
}

// ---------------------------------------------------------------------------
// Run directories and reports
// ---------------------------------------------------------------------------

fs::path prepare_run_dir(const Config& cfg, const std::string& command) {
  std::string name = cfg.str("run_name");
  if (name.empty())
    name = command + "-" + cfg.str("variant") + "-s" + cfg.str("seed");
  const fs::path dir = fs::path(cfg.str("out_dir")) / name;
  fs::create_directories(dir);
  std::ofstream echo(dir / "config.echo");
  if (!echo.good()) throw std::runtime_error("cannot write config echo in " + dir.string());
  cfg.echo(echo);
  return dir;
}

void write_metrics(const fs::path& path,
                   const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream f(path);
  if (!f.good()) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : rows) f << k << '\t' << v << '\n';
}

std::map<std::string, std::string> read_metrics(const fs::path& path) {
  std::ifstream f(path);
  if (!f.good()) throw UserError("missing metrics file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("malformed metrics file " + path.string() + " at line " +
                               std::to_string(line_no));
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

void write_epoch_table(const fs::path& path, const TrainResult& result) {
  std::ofstream f(path);
  if (!f.good()) throw std::runtime_error("cannot write " + path.string());
  f << "epoch\tstep\ttau\ttrain_loss\tval_auc\tval_logloss\tqs_median\n";
  for (const EpochStats& e : result.epochs)
    f << e.epoch << '\t' << e.step << '\t' << fmt(e.tau, 6) << '\t' << fmt(e.train_loss, 6)
      << '\t' << fmt(e.val_auc, 6) << '\t' << fmt(e.val_logloss, 6) << '\t'
      << fmt(e.qs_median, 6) << '\n';
}

void write_loss_curve(const fs::path& path, const TrainResult& result) {
  std::ofstream f(path);
  if (!f.good()) throw std::runtime_error("cannot write " + path.string());
  f << "step\tloss\n";
  f.precision(9);
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
    f << i << '\t' << result.loss_curve[i] << '\n';
}

/// Renders the cross-run comparison (text to stdout, TSV beside the runs).
/// RelaImpr base = the two_tower run when present, else the first run.
void emit_report(const std::vector<fs::path>& run_dirs, const fs::path& out_tsv) {
  if (run_dirs.empty()) throw UserError("emit_report: no run directories");
  struct Row {
    std::string variant;
    double auc, ll;
  };
  std::vector<Row> rows;
  for (const fs::path& dir : run_dirs) {
    const auto m = read_metrics(dir / "metrics.tsv");
    const auto need = [&](const std::string& key) -> std::string {
      const auto it = m.find(key);
      if (it == m.end())
        throw std::runtime_error("metrics file " + (dir / "metrics.tsv").string() +
                                 " lacks key " + key);
      return it->second;
    };
    rows.push_back({need("variant"), std::stod(need("test_auc")),
                    std::stod(need("test_logloss"))});
  }
  std::size_t base = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].variant == "two_tower") base = i;

  std::ostringstream table;
  table << "model\tauc\tlogloss\trela_impr_vs_" << rows[base].variant << "\n";
  for (const Row& r : rows)
    table << r.variant << '\t' << fmt(r.auc) << '\t' << fmt(r.ll) << '\t'
          << fmt(rela_impr(r.auc, rows[base].auc), 2) << "%\n";

  std::cout << table.str();
  std::ofstream f(out_tsv);
  if (!f.good()) throw std::runtime_error("cannot write " + out_tsv.string());
  f << table.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct TrainOutcome {
  fs::path run_dir;
  double test_auc = 0.0;
  double test_logloss = 0.0;
};

TrainOutcome run_train(const Config& cfg, const std::string& command_name) {
  const DatasetBundle data = load_dataset(cfg);
  const TrainConfig tc = train_config_from(cfg, data);
  const fs::path run_dir = prepare_run_dir(cfg, command_name);

  if (data.name == "ml1m")
    save_examples((run_dir / "examples.fitd").string(), data.all_examples, data.n_users,
                  data.n_items, data.n_cats, data.max_seq_len);

  FitModel model(tc.model);
  std::cout << "training variant=" << cfg.str("variant") << " scorer=" << cfg.str("scorer")
            << " train=" << data.split.train.size() << " val=" << data.split.val.size()
            << " test=" << data.split.test.size() << '\n';
  const TrainResult result = train(model, data.split, tc, &std::cout);
  restore_state(model, result.best_state);

  const EvalReport test =
      evaluate(model, data.split.test, tc.batch_size, tc.max_seq_len, tc.tau_floor);
  const double qs =
      tc.model.use_mqm
          ? median_query_similarity(model, data.split.test, tc.batch_size, tc.max_seq_len,
                                    tc.tau_floor)
          : 0.0;

  save_checkpoint((run_dir / "checkpoint.fitc").string(), [&] {
    auto all = model.params();
    for (auto& [k, v] : model.buffers()) all.emplace(k, v);
    return all;
  }());
  write_epoch_table(run_dir / "epochs.tsv", result);
  write_loss_curve(run_dir / "loss_curve.tsv", result);
  write_metrics(run_dir / "metrics.tsv",
                {{"command", command_name},
                 {"dataset", data.name},
                 {"variant", cfg.str("variant")},
                 {"scorer", cfg.str("scorer")},
                 {"seed", cfg.str("seed")},
                 {"n_train", std::to_string(data.split.train.size())},
                 {"n_val", std::to_string(data.split.val.size())},
                 {"n_test", std::to_string(data.split.test.size())},
                 {"best_epoch", std::to_string(result.best_epoch)},
                 {"best_val_auc", fmt(result.best_val_auc, 6)},
                 {"test_auc", fmt(test.auc, 6)},
                 {"test_logloss", fmt(test.logloss, 6)},
                 {"test_qs_median", fmt(qs, 6)},
                 {"steps", std::to_string(result.loss_curve.size())}});
  std::cout << "test_auc=" << fmt(test.auc, 6) << " test_logloss=" << fmt(test.logloss, 6)
            << " run_dir=" << run_dir.string() << '\n';
  return {run_dir, test.auc, test.logloss};
}

int cmd_train(const Config& cfg) {
  run_train(cfg, "train");
  return 0;
}

int cmd_eval(const Config& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw UserError("eval requires --checkpoint");
  const DatasetBundle data = load_dataset(cfg);
  const TrainConfig tc = train_config_from(cfg, data);
  FitModel model(tc.model);
  try {
    auto all = model.params();
    for (auto& [k, v] : model.buffers()) all.emplace(k, v);
    copy_into(load_checkpoint(checkpoint), std::move(all));
  } catch (const std::exception& e) {
    throw UserError(e.what());
  }
  const fs::path run_dir = prepare_run_dir(cfg, "eval");
  const EvalReport test =
      evaluate(model, data.split.test, tc.batch_size, tc.max_seq_len, tc.tau_floor);
  write_metrics(run_dir / "metrics.tsv",
                {{"command", "eval"},
                 {"dataset", data.name},
                 {"variant", cfg.str("variant")},
                 {"seed", cfg.str("seed")},
                 {"checkpoint", checkpoint},
                 {"n_test", std::to_string(data.split.test.size())},
                 {"test_auc", fmt(test.auc, 6)},
                 {"test_logloss", fmt(test.logloss, 6)}});
  std::cout << "test_auc=" << fmt(test.auc, 6) << " test_logloss=" << fmt(test.logloss, 6)
            << '\n';
  return 0;
}

int cmd_precompute(const Config& cfg, const std::string& checkpoint) {
  const DatasetBundle data = load_dataset(cfg);
  const ModelConfig mc = model_config_from(cfg, data);
  FitModel model(mc);
  if (!checkpoint.empty()) {
    try {
      auto all = model.params();
      for (auto& [k, v] : model.buffers()) all.emplace(k, v);
      copy_into(load_checkpoint(checkpoint), std::move(all));
    } catch (const std::exception& e) {
      throw UserError(e.what());
    }
  }
  const fs::path run_dir = prepare_run_dir(cfg, "precompute");
  const std::string store_path = (run_dir / "store.fits").string();
  precompute_store(model, data.item_cat, store_path);
  std::cout << "store=" << store_path << " items=" << data.item_cat.size() << '\n';

  if (cfg.flag("export_embeddings")) {
    // One row per item: id, hard-query index, representation values.
    std::vector<int> items, cats;
    for (std::size_t i = 0; i < data.item_cat.size(); ++i) {
      items.push_back(static_cast<int>(i) + 1);
      cats.push_back(data.item_cat[i] + 1);
    }
    FitModel::ItemReps reps = model.item_reps(items, cats);
    const int width = model.store_heads() * model.store_dim();
    std::ofstream f(run_dir / "embeddings.tsv");
    if (!f.good()) throw std::runtime_error("cannot write embeddings.tsv");
    f << "item_id\tquery_index\tvector\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
      f << i << '\t' << reps.s[i] << '\t';
      for (int j = 0; j < width; ++j)
        f << (j ? "," : "") << reps.z.data()[static_cast<std::size_t>(i) * width + j];
      f << '\n';
    }
    std::cout << "embeddings=" << (run_dir / "embeddings.tsv").string() << '\n';
  }
  return 0;
}

int cmd_bench(const Config& cfg, const std::string& checkpoint) {
  const DatasetBundle data = load_dataset(cfg);
  const ModelConfig mc = model_config_from(cfg, data);
  FitModel model(mc);
  if (!checkpoint.empty()) {
    try {
      auto all = model.params();
      for (auto& [k, v] : model.buffers()) all.emplace(k, v);
      copy_into(load_checkpoint(checkpoint), std::move(all));
    } catch (const std::exception& e) {
      throw UserError(e.what());
    }
  }
  const fs::path run_dir = prepare_run_dir(cfg, "bench");
  const std::string store_path = (run_dir / "store.fits").string();
  precompute_store(model, data.item_cat, store_path);
  const ItemStore store = ItemStore::load(store_path);

  // A representative user context from the first example.
  const TrainingExample& ex = data.all_examples.front();
  UserContext user;
  user.user_id = ex.user + 1;
  for (const auto& [it, ct] : ex.seq) {
    user.seq_items.push_back(it + 1);
    user.seq_cats.push_back(ct + 1);
  }

  const int reps = cfg.integer("bench_reps");
  const int k_max = cfg.integer("candidates");
  std::vector<int> ks = {100, 500, k_max};
  std::ostringstream out;
  out << "k\tuser_ms\tcand_ms\ttotal_ms\tsingle_tower_ms\tspeedup\n";
  std::vector<double> xs, ys;
  for (int k : ks) {
    std::vector<std::uint64_t> candidates;
    for (int i = 0; i < k; ++i)
      candidates.push_back(static_cast<std::uint64_t>(i) %
                           static_cast<std::uint64_t>(data.item_cat.size()));
    const BenchReport r = latency_bench(model, store, user, candidates, data.item_cat, reps);
    out << r.k << '\t' << fmt(r.user_ms, 3) << '\t' << fmt(r.cand_ms, 3) << '\t'
        << fmt(r.total_ms, 3) << '\t' << fmt(r.single_tower_ms, 3) << '\t'
        << fmt(r.speedup, 2) << '\n';
    xs.push_back(r.k);
    ys.push_back(r.total_ms);
  }
  out << "affine_r2\t" << fmt(affine_r2(xs, ys), 5) << '\n';

  // Marginal candidate cost across tower depths: the store path only pays
  // the scorer per candidate, so depth should barely move cand_ms.
  for (const std::vector<int>& widths :
       {std::vector<int>{128}, std::vector<int>{300, 300, 128},
        std::vector<int>{300, 300, 300, 300, 128}}) {
    ModelConfig mcd = mc;
    mcd.tower_widths = widths;
    FitModel md(mcd);
    const std::string sp = (run_dir / ("store_L" + std::to_string(widths.size()) + ".fits")).string();
    precompute_store(md, data.item_cat, sp);
    const ItemStore st = ItemStore::load(sp);
    std::vector<std::uint64_t> candidates;
    for (int i = 0; i < k_max; ++i)
      candidates.push_back(static_cast<std::uint64_t>(i) %
                           static_cast<std::uint64_t>(data.item_cat.size()));
    const BenchReport r = latency_bench(md, st, user, candidates, data.item_cat, reps);
    out << "depth_" << widths.size() << "_cand_ms\t" << fmt(r.cand_ms, 3) << '\n';
  }

  std::cout << out.str();
  std::ofstream f(run_dir / "bench.tsv");
  if (!f.good()) throw std::runtime_error("cannot write bench.tsv");
  f << out.str();
  return 0;
}

int cmd_ablate(const Config& cfg, bool report_only) {
  const fs::path out_dir(cfg.str("out_dir"));
  std::vector<fs::path> run_dirs;
  for (const std::string& variant : all_variants()) {
    Config vc = cfg;
    apply_variant(vc, variant);
    vc.set("run_name", "ablate-" + variant + "-s" + cfg.str("seed"));
    const fs::path dir = out_dir / vc.str("run_name");
    if (report_only || (fs::exists(dir / "metrics.tsv"))) {
      run_dirs.push_back(dir);
      continue;
    }
    run_dirs.push_back(run_train(vc, "ablate").run_dir);
  }
  emit_report(run_dirs, out_dir / ("ablate-comparison-s" + cfg.str("seed") + ".tsv"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FIT pre-ranking model: training, evaluation, and serving tools"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, pre_args, bench_args, ablate_args;
  std::string eval_ckpt, pre_ckpt, bench_ckpt;
  bool pre_export = false;
  bool ablate_report_only = false;
  std::string bench_candidates;

  CLI::App* train_cmd = app.add_subcommand("train", "train one model variant");
  add_common(train_cmd, train_args);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file to load");

  CLI::App* pre_cmd =
      app.add_subcommand("precompute", "run the item tower offline and write the store");
  add_common(pre_cmd, pre_args);
  pre_cmd->add_option("--checkpoint", pre_ckpt, "checkpoint file to load");
  pre_cmd->add_flag("--export-embeddings", pre_export,
                    "also write per-item vectors + query indices as TSV");

  CLI::App* bench_cmd = app.add_subcommand("bench", "latency benchmark of the serving path");
  add_common(bench_cmd, bench_args);
  bench_cmd->add_option("--checkpoint", bench_ckpt, "checkpoint file to load");
  bench_cmd->add_option("--candidates", bench_candidates, "largest candidate-list size");

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train every variant and emit a comparison table");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_flag("--report-only", ablate_report_only,
                       "re-render the table from existing run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ? 0
           : code == 0                                                       ? 0
                                                                             : 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(build_config(train_args));
    if (eval_cmd->parsed()) return cmd_eval(build_config(eval_args), eval_ckpt);
    if (pre_cmd->parsed()) {
      Config cfg = build_config(pre_args);
      if (pre_export) cfg.set("export_embeddings", "true");
      return cmd_precompute(cfg, pre_ckpt);
    }
    if (bench_cmd->parsed()) {
      Config cfg = build_config(bench_args);
      if (!bench_candidates.empty()) cfg.set("candidates", bench_candidates);
      return cmd_bench(cfg, bench_ckpt);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(build_config(ablate_args), ablate_report_only);
    std::cerr << "no command given\n";
    return 1;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
