// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: reproducible training runs over (config, seed),
// incremental metrics CSVs, versioned checkpoints and multi-run comparisons.
// Everything emitted is a deterministic function of the config and seed.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "prnn/cells.hpp"
#include "prnn/optim.hpp"
#include "prnn/tasks.hpp"

namespace prnn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted on a non-finite loss; carries the offending iteration.
class NanAbortError : public std::runtime_error {
 public:
  NanAbortError(int64_t iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  int64_t iteration() const { return iteration_; }

 private:
  int64_t iteration_;
};

// User-facing run configuration. Zero/empty means "task default": hidden 128
// for adding/copying and 256 for charlm (1000 under paper_scale), batch 50
// for the synthetic tasks and 32 for charlm.
struct RunConfig {
  std::string task = "adding";  // adding | copying | charlm
  std::string cell = "lstm";
  int T = 100;             // sequence length (synthetic tasks)
  int n_hidden = 0;
  int batch = 0;
  int epochs = 0;           // 0: task default; synthetic epoch = 100 batches
  int max_iterations = -1;  // -1: derived from epochs; 0 trains nothing
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  uint64_t seed = 1;
  std::string out_dir = "runs/run";
  int eval_interval = 50;
  int eval_batches = 4;
  int patience = 10;  // evaluations without improvement before stopping; 0 = off
  int max_len = 80;         // charlm: prediction steps per sentence
  std::string corpus = "data/corpus.txt";
  bool paper_scale = false;
  bool timing = false;  // real wall-clock in the seconds column (breaks
                        // byte-reproducibility of the CSV; off by default)
  bool forget_bias_one = false;
  bool gru_strict = false;
  double threshold = 0.0;  // iterations-to-threshold target; 0: task baseline
};

// Fully defaulted and validated view of a RunConfig.
struct ResolvedConfig {
  RunConfig raw;
  CellKind kind = CellKind::kLstm;
  int n_hidden = 0;
  int batch = 0;
  int input_dim = 0;
  int readout_dim = 0;
  int64_t batches_per_epoch = 0;
  int64_t max_iterations = 0;
  double threshold = 0.0;  // <= 0 disables crossing detection
  std::string units;       // "mse" or "nats"
};

ResolvedConfig resolve(const RunConfig& config);

struct MetricsRecord {
  int64_t iteration = 0;
  double epoch = 0.0;
  double seconds = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::string units;
  std::string cell;
  uint64_t seed = 0;
};

inline constexpr const char* kMetricsHeader =
    "iteration,epoch,seconds,train_loss,valid_loss,units,cell,seed";

// Versioned parameter container: text header (names, shapes) followed by the
// raw little-endian float64 payload. save -> load -> save is byte-identical.
struct Checkpoint {
  int version = 1;
  std::string cell;
  uint64_t seed = 0;
  int64_t iteration = 0;
  AdamConfig adam_config;
  int64_t adam_t = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

struct RunResult {
  int64_t iterations = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_valid_loss = std::numeric_limits<double>::quiet_NaN();
  double best_valid_loss = std::numeric_limits<double>::quiet_NaN();
  int64_t iterations_to_threshold = -1;  // -1: never crossed within budget
  std::string metrics_path;
  std::string checkpoint_path;
};

// Trains per the config: fresh seeded parameters (or the given checkpoint to
// continue from), Adam with [-1, 1] gradient clipping, periodic validation,
// best-checkpoint tracking with optional early stopping. Throws NanAbortError
// on a non-finite loss and IoError when the output directory is unusable.
RunResult train(const RunConfig& config, const Checkpoint* resume_from = nullptr);

// Loss of a checkpoint on the held-out data of a split; pure.
double evaluate(const Checkpoint& checkpoint, const RunConfig& config, Split split);

struct CompareRun {
  std::string cell;
  uint64_t seed = 0;
  bool failed = false;  // run aborted (e.g. NaN); partial table marks it
  RunResult result;
};

struct CompareSummary {
  std::string cell;
  int crossed = 0;
  int runs = 0;
  double median_iters_to_threshold = std::numeric_limits<double>::infinity();
  double median_final_valid = 0.0;
  double median_best_valid = 0.0;
};

struct CompareResult {
  std::vector<CompareRun> runs;
  std::vector<CompareSummary> summaries;
  double threshold = 0.0;
};

// Runs every (cell, seed) combination of the base config and summarizes
// median iterations-to-threshold and final losses per cell.
CompareResult compare(const RunConfig& base, const std::vector<std::string>& cells,
                      const std::vector<uint64_t>& seeds);

void write_compare_csv(std::ostream& os, const RunConfig& base, const CompareResult& result);

// gnuplot script plotting every run's validation-loss curve plus the
// threshold line.
void write_plot_script(std::ostream& os, const RunConfig& base, const CompareResult& result);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t entries = 0;
};

// Central finite differences over every parameter entry of a cell driven
// through an unrolled sequence; returns the worst relative error.
GradCheckReport gradcheck_cell(CellKind kind, int batch, int steps, int input_dim, int hidden_dim,
                               uint64_t seed, double fd_eps = 1e-5);

}  // namespace prnn
