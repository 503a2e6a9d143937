// SPDX-License-Identifier: Apache-2.0

#include "prnn/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "prnn/harness.hpp"

namespace prnn {

namespace {

constexpr double kGradCheckTolerance = 1e-4;

// Every config key doubles as a flag of the same name; a key=value file via
// --config fills whatever the command line leaves unset.
void add_config_flags(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "key=value config file");
  cmd->add_option("--task", cfg.task, "adding | copying | charlm");
  cmd->add_option("--cell", cfg.cell, "cell kind: " + cell_kind_list());
  cmd->add_option("--T", cfg.T, "sequence length for the synthetic tasks");
  cmd->add_option("--n_hidden", cfg.n_hidden, "hidden units (0: task default)");
  cmd->add_option("--batch", cfg.batch, "batch size (0: task default)");
  cmd->add_option("--epochs", cfg.epochs, "training epochs (0: task default)");
  cmd->add_option("--max_iterations", cfg.max_iterations,
                  "iteration cap (-1: derive from epochs)");
  cmd->add_option("--lr", cfg.lr, "Adam learning rate");
  cmd->add_option("--beta1", cfg.beta1, "Adam beta1");
  cmd->add_option("--beta2", cfg.beta2, "Adam beta2");
  cmd->add_option("--eps_adam", cfg.eps_adam, "Adam epsilon");
  cmd->add_option("--seed", cfg.seed, "run seed");
  cmd->add_option("--out_dir", cfg.out_dir, "output directory");
  cmd->add_option("--eval_interval", cfg.eval_interval, "iterations between evaluations");
  cmd->add_option("--eval_batches", cfg.eval_batches, "batches per evaluation");
  cmd->add_option("--patience", cfg.patience,
                  "evaluations without improvement before stopping (0: off)");
  cmd->add_option("--max_len", cfg.max_len, "charlm: prediction steps per sentence");
  cmd->add_option("--corpus", cfg.corpus, "charlm: corpus path (one sentence per line)");
  cmd->add_flag("--paper_scale", cfg.paper_scale, "charlm: 1000 hidden units");
  cmd->add_flag("--timing", cfg.timing, "record wall-clock in the seconds column");
  cmd->add_flag("--forget_bias_one", cfg.forget_bias_one, "initialize forget bias to 1");
  cmd->add_flag("--gru_strict", cfg.gru_strict, "drop the GRU candidate bias");
  cmd->add_option("--threshold", cfg.threshold,
                  "iterations-to-threshold target (0: task baseline)");
}

int64_t parse_i64(const std::string& key, const std::string& value) {
  size_t consumed = 0;
  int64_t v = 0;
  try {
    v = std::stoll(value, &consumed);
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + value + "'");
  }
  if (consumed != value.size()) throw ConfigError("bad integer for " + key + ": '" + value + "'");
  return v;
}

double parse_f64(const std::string& key, const std::string& value) {
  size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &consumed);
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + value + "'");
  }
  if (consumed != value.size()) throw ConfigError("bad number for " + key + ": '" + value + "'");
  return v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "' (use true/false)");
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "task") cfg.task = value;
  else if (key == "cell") cfg.cell = value;
  else if (key == "T") cfg.T = static_cast<int>(parse_i64(key, value));
  else if (key == "n_hidden") cfg.n_hidden = static_cast<int>(parse_i64(key, value));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_i64(key, value));
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_i64(key, value));
  else if (key == "max_iterations") cfg.max_iterations = static_cast<int>(parse_i64(key, value));
  else if (key == "lr") cfg.lr = parse_f64(key, value);
  else if (key == "beta1") cfg.beta1 = parse_f64(key, value);
  else if (key == "beta2") cfg.beta2 = parse_f64(key, value);
  else if (key == "eps_adam") cfg.eps_adam = parse_f64(key, value);
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_i64(key, value));
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "eval_interval") cfg.eval_interval = static_cast<int>(parse_i64(key, value));
  else if (key == "eval_batches") cfg.eval_batches = static_cast<int>(parse_i64(key, value));
  else if (key == "patience") cfg.patience = static_cast<int>(parse_i64(key, value));
  else if (key == "max_len") cfg.max_len = static_cast<int>(parse_i64(key, value));
  else if (key == "corpus") cfg.corpus = value;
  else if (key == "paper_scale") cfg.paper_scale = parse_flag(key, value);
  else if (key == "timing") cfg.timing = parse_flag(key, value);
  else if (key == "forget_bias_one") cfg.forget_bias_one = parse_flag(key, value);
  else if (key == "gru_strict") cfg.gru_strict = parse_flag(key, value);
  else if (key == "threshold") cfg.threshold = parse_f64(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

// Flat key=value lines; blank lines and #-comments allowed. Command-line
// flags win over file values.
void load_config_file(CLI::App* cmd, const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    const CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw ConfigError("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;  // flag overrides file
    apply_config_key(cfg, key, value);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

int cmd_train(const RunConfig& cfg) {
  RunResult r = train(cfg);
  std::cout << "trained " << cfg.cell << " on " << cfg.task << ": iterations=" << r.iterations
            << " best_valid=" << format_double(r.best_valid_loss)
            << " metrics=" << r.metrics_path << " checkpoint=" << r.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& split) {
  Split s;
  if (split == "valid") {
    s = Split::kValid;
  } else if (split == "test") {
    s = Split::kTest;
  } else {
    throw ConfigError("unknown split '" + split + "'; use valid or test");
  }
  Checkpoint ckpt = Checkpoint::load(checkpoint_path);
  const double loss = evaluate(ckpt, cfg, s);
  std::cout << "split=" << split << " loss=" << format_double(loss) << "\n";
  return 0;
}

int cmd_compare(const RunConfig& base, const std::string& cells_arg, const std::string& seeds_arg,
                bool emit_plot_script) {
  std::vector<std::string> cells = split_list(cells_arg);
  std::vector<uint64_t> seeds;
  for (const std::string& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
  CompareResult result = compare(base, cells, seeds);

  const std::string csv_path = base.out_dir + "/compare.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path);
  write_compare_csv(csv, base, result);
  std::cout << "comparison table: " << csv_path << "\n";
  for (const CompareSummary& s : result.summaries) {
    std::cout << s.cell << ": crossed " << s.crossed << "/" << s.runs
              << " median_iters_to_threshold="
              << (std::isfinite(s.median_iters_to_threshold)
                      ? format_double(s.median_iters_to_threshold)
                      : "censored")
              << " median_final_valid=" << format_double(s.median_final_valid) << "\n";
  }
  if (emit_plot_script) {
    const std::string plot_path = base.out_dir + "/plot.gp";
    std::ofstream plot(plot_path, std::ios::trunc);
    if (!plot) throw IoError("cannot write " + plot_path);
    write_plot_script(plot, base, result);
    std::cout << "plot script: " << plot_path << "\n";
  }
  return 0;
}

int cmd_gen_task(const std::string& task, int T, uint64_t seed, int batch,
                 const std::string& out_path) {
  std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  if (task == "adding") {
    write_adding_csv(out, gen_adding(seed, batch, T));
  } else if (task == "copying") {
    write_copying_csv(out, gen_copying(seed, batch, T));
  } else {
    throw ConfigError("gen-task supports the adding and copying tasks");
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& cell, int batch, int steps, int input_dim, int hidden,
                  uint64_t seed) {
  std::vector<CellKind> kinds;
  if (cell == "all") {
    kinds = all_cell_kinds();
  } else {
    auto k = cell_kind_from(cell);
    if (!k) throw ConfigError("unknown cell '" + cell + "'; valid cells: " + cell_kind_list());
    kinds.push_back(*k);
  }
  bool ok = true;
  for (CellKind k : kinds) {
    GradCheckReport rep = gradcheck_cell(k, batch, steps, input_dim, hidden, seed);
    const bool pass = rep.max_rel_err < kGradCheckTolerance;
    ok = ok && pass;
    std::cout << "cell=" << to_string(k) << " entries=" << rep.entries
              << " max_rel_err=" << format_double(rep.max_rel_err) << " "
              << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"prnn: recurrent-network training and long-term-dependency benchmarks"};
  app.require_subcommand(1);

  RunConfig train_cfg;
  std::string train_config_path;
  CLI::App* train_cmd = app.add_subcommand("train", "train one cell on one task");
  add_config_flags(train_cmd, train_cfg, train_config_path);

  RunConfig eval_cfg;
  std::string eval_config_path;
  std::string eval_checkpoint;
  std::string eval_split = "valid";
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  add_config_flags(eval_cmd, eval_cfg, eval_config_path);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, ".prnn checkpoint path")->required();
  eval_cmd->add_option("--split", eval_split, "valid | test");

  RunConfig compare_cfg;
  std::string compare_config_path;
  std::string compare_cells = "lstm,pru";
  std::string compare_seeds = "1,2,3";
  bool emit_plot_script = false;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "train several cells across seeds and tabulate medians");
  add_config_flags(compare_cmd, compare_cfg, compare_config_path);
  compare_cmd->add_option("--cells", compare_cells, "comma-separated cell kinds");
  compare_cmd->add_option("--seeds", compare_seeds, "comma-separated seeds");
  compare_cmd->add_flag("--emit-plot-script", emit_plot_script,
                        "write a gnuplot script next to the table");

  std::string gen_task = "adding";
  int gen_T = 10;
  uint64_t gen_seed = 1;
  int gen_batch = 2;
  std::string gen_out = "task.csv";
  CLI::App* gen_cmd = app.add_subcommand("gen-task", "materialize a task batch as CSV");
  gen_cmd->add_option("--task", gen_task, "adding | copying");
  gen_cmd->add_option("--T", gen_T, "sequence length");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--batch", gen_batch, "sequences to generate");
  gen_cmd->add_option("--out", gen_out, "output CSV path");

  std::string gc_cell = "all";
  int gc_batch = 4, gc_T = 20, gc_input = 8, gc_hidden = 16;
  uint64_t gc_seed = 7;
  CLI::App* gc_cmd = app.add_subcommand(
      "gradcheck", "compare analytic gradients against central finite differences");
  gc_cmd->add_option("--cell", gc_cell, "cell kind or 'all'");
  gc_cmd->add_option("--batch", gc_batch, "batch size");
  gc_cmd->add_option("--T", gc_T, "unrolled steps");
  gc_cmd->add_option("--input_dim", gc_input, "input features");
  gc_cmd->add_option("--n_hidden", gc_hidden, "hidden units");
  gc_cmd->add_option("--seed", gc_seed, "seed");

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (train_cmd->parsed()) {
      if (!train_config_path.empty()) load_config_file(train_cmd, train_config_path, train_cfg);
      return cmd_train(train_cfg);
    }
    if (eval_cmd->parsed()) {
      if (!eval_config_path.empty()) load_config_file(eval_cmd, eval_config_path, eval_cfg);
      return cmd_eval(eval_cfg, eval_checkpoint, eval_split);
    }
    if (compare_cmd->parsed()) {
      if (!compare_config_path.empty())
        load_config_file(compare_cmd, compare_config_path, compare_cfg);
      return cmd_compare(compare_cfg, compare_cells, compare_seeds, emit_plot_script);
    }
    if (gen_cmd->parsed()) return cmd_gen_task(gen_task, gen_T, gen_seed, gen_batch, gen_out);
    if (gc_cmd->parsed())
      return cmd_gradcheck(gc_cell, gc_batch, gc_T, gc_input, gc_hidden, gc_seed);
  } catch (const NanAbortError& e) {
    std::cerr << "runtime abort: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 1;
  } catch (const CorpusError& e) {
    std::cerr << "corpus error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace prnn
