// SPDX-License-Identifier: Apache-2.0

#include "prnn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <variant>

#include "prnn/rng.hpp"

namespace prnn {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kStreamTrain = 0x7472616eull;
constexpr uint64_t kStreamValid = 0x76616c64ull;
constexpr uint64_t kStreamTest = 0x74657374ull;
constexpr uint64_t kStreamGradcheck = 0x67726164ull;

struct Model {
  CellParams cell;
  Tensor readout_w, readout_b;
  std::vector<std::string> names;

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out;
    cell.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
    out.push_back(&readout_w);
    out.push_back(&readout_b);
    return out;
  }
};

Model build_model(const ResolvedConfig& rc) {
  Model m;
  Rng rng(rc.raw.seed);
  CellOptions options{rc.raw.forget_bias_one, !rc.raw.gru_strict};
  m.cell = make_cell(rc.kind, rc.input_dim, rc.n_hidden, rng, options);
  // Small readout init keeps the initial softmax near uniform and the initial
  // regression output near zero.
  m.readout_w = Tensor::uniform(Shape{rc.n_hidden, rc.readout_dim}, rng, -0.01, 0.01);
  m.readout_b = Tensor::zeros(Shape{rc.readout_dim});
  m.cell.for_each_param(
      [&](const std::string& name, const Tensor&) { m.names.push_back("cell." + name); });
  m.names.push_back("readout.W");
  m.names.push_back("readout.b");
  return m;
}

using BatchAny = std::variant<AddingBatch, CopyingBatch, LmBatch>;

// Deterministic batch source for one resolved config. Synthetic batches are
// addressed by (seed, stream, index); charlm batches come from the corpus
// splits.
class TaskData {
 public:
  explicit TaskData(const ResolvedConfig& rc) : rc_(&rc) {
    if (rc.raw.task == "charlm") {
      corpus_ = load_corpus(rc.raw.corpus);
      train_.emplace(corpus_, Split::kTrain, rc.batch, rc.raw.max_len, rc.raw.seed);
      valid_.emplace(corpus_, Split::kValid, rc.batch, rc.raw.max_len, rc.raw.seed);
      test_.emplace(corpus_, Split::kTest, rc.batch, rc.raw.max_len, rc.raw.seed);
    }
  }

  int vocab_size() const { return corpus_.vocab_size(); }

  int64_t batches_per_epoch() const {
    return train_ ? train_->batches_per_epoch() : rc_->batches_per_epoch;
  }

  BatchAny train_batch(int64_t iteration) const {
    if (rc_->raw.task == "adding") {
      return gen_adding(mix_seed(rc_->raw.seed, kStreamTrain, static_cast<uint64_t>(iteration)),
                        rc_->batch, rc_->raw.T);
    }
    if (rc_->raw.task == "copying") {
      return gen_copying(mix_seed(rc_->raw.seed, kStreamTrain, static_cast<uint64_t>(iteration)),
                         rc_->batch, rc_->raw.T);
    }
    return train_->train_batch(iteration);
  }

  int64_t eval_count(Split split) const {
    if (rc_->raw.task == "charlm") {
      const LmStream& s = split == Split::kValid ? *valid_ : *test_;
      // validation stays cheap during training; test is evaluated in full
      if (split == Split::kValid) {
        return std::min<int64_t>(rc_->raw.eval_batches, s.eval_batch_count());
      }
      return s.eval_batch_count();
    }
    return rc_->raw.eval_batches;
  }

  BatchAny eval_batch(Split split, int64_t index) const {
    const uint64_t stream = split == Split::kValid ? kStreamValid : kStreamTest;
    if (rc_->raw.task == "adding") {
      return gen_adding(mix_seed(rc_->raw.seed, stream, static_cast<uint64_t>(index)), rc_->batch,
                        rc_->raw.T);
    }
    if (rc_->raw.task == "copying") {
      return gen_copying(mix_seed(rc_->raw.seed, stream, static_cast<uint64_t>(index)), rc_->batch,
                         rc_->raw.T);
    }
    return (split == Split::kValid ? *valid_ : *test_).eval_batch(index);
  }

 private:
  const ResolvedConfig* rc_;
  CharCorpus corpus_;
  std::optional<LmStream> train_, valid_, test_;
};

Var readout(Tape& t, Var h, Var w, Var b) { return t.add(t.matmul(h, w), b); }

// Loss of one batch plus its weight for corpus-level averaging (number of
// predicted positions for charlm, 1 otherwise).
struct LossBuild {
  Var loss;
  double weight = 1.0;
};

LossBuild build_loss(Tape& t, const CellVars& cv, Var ro_w, Var ro_b, const BatchAny& batch) {
  if (const auto* adding = std::get_if<AddingBatch>(&batch)) {
    auto states = unroll(t, cv, adding->inputs);
    Var pred = readout(t, states.back().h, ro_w, ro_b);
    return {mse(t, pred, adding->targets), 1.0};
  }
  if (const auto* copying = std::get_if<CopyingBatch>(&batch)) {
    Tensor x = one_hot(copying->inputs, copying->batch, copying->length, kCopyDataCategories + 2);
    auto states = unroll(t, cv, x);
    std::vector<Var> logits;
    logits.reserve(states.size());
    for (const VarState& s : states) logits.push_back(readout(t, s.h, ro_w, ro_b));
    Tensor mask = Tensor::full(Shape{copying->batch, copying->length}, 1.0);
    return {seq_cross_entropy(t, logits, copying->targets, mask), 1.0};
  }
  const auto& lm = std::get<LmBatch>(batch);
  auto states = unroll(t, cv, lm.x, &lm.mask);
  std::vector<Var> logits;
  logits.reserve(states.size());
  for (const VarState& s : states) logits.push_back(readout(t, s.h, ro_w, ro_b));
  double weight = 0.0;
  for (int64_t i = 0; i < lm.mask.size(); ++i) weight += lm.mask.data()[i];
  return {seq_cross_entropy(t, logits, lm.targets, lm.mask), weight};
}

// Forward-only loss on the current parameters.
std::pair<double, double> loss_value(Model& m, const BatchAny& batch) {
  Tape t;
  CellVars cv = register_cell(t, m.cell, /*trainable=*/false);
  Var ro_w = t.constant(m.readout_w);
  Var ro_b = t.constant(m.readout_b);
  LossBuild lb = build_loss(t, cv, ro_w, ro_b, batch);
  return {t.value(lb.loss).scalar(), lb.weight};
}

double eval_split(Model& m, const TaskData& data, Split split) {
  const int64_t n = data.eval_count(split);
  double total = 0.0, weight = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto [loss, w] = loss_value(m, data.eval_batch(split, i));
    total += loss * w;
    weight += w;
  }
  return total / weight;
}

// One training step: forward, backward, clip to [-1, 1], Adam update.
double train_step(Model& m, AdamState& adam, const BatchAny& batch) {
  Tape t;
  std::vector<Var> leaves;
  CellVars cv = register_cell(t, m.cell, /*trainable=*/true, &leaves);
  Var ro_w = t.leaf(m.readout_w);
  Var ro_b = t.leaf(m.readout_b);
  leaves.push_back(ro_w);
  leaves.push_back(ro_b);

  LossBuild lb = build_loss(t, cv, ro_w, ro_b, batch);
  const double loss = t.value(lb.loss).scalar();
  if (!std::isfinite(loss)) return loss;  // caller aborts

  Gradient grad = t.backward(lb.loss);
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (Var v : leaves) grads.push_back(grad.of(v));
  clip(grads);
  adam_step(m.params(), grads, adam);
  return loss;
}

Checkpoint snapshot(const Model& m, const AdamState& adam, const ResolvedConfig& rc,
                    int64_t iteration, double best_valid) {
  Checkpoint c;
  c.cell = to_string(rc.kind);
  c.seed = rc.raw.seed;
  c.iteration = iteration;
  c.adam_config = adam.config;
  c.adam_t = adam.t;
  c.best_valid = best_valid;
  Model& mm = const_cast<Model&>(m);
  auto params = mm.params();
  for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back(m.names[i], *params[i]);
  for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back("adam.m." + m.names[i], adam.m[i]);
  for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back("adam.v." + m.names[i], adam.v[i]);
  return c;
}

void apply_checkpoint(const Checkpoint& c, Model& m, AdamState& adam, const ResolvedConfig& rc) {
  if (c.cell != to_string(rc.kind)) {
    throw CheckpointError("checkpoint holds a '" + c.cell + "' cell but the config asks for '" +
                          std::string(to_string(rc.kind)) + "'");
  }
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : c.tensors) {
      if (n == name) return t;
    }
    throw CheckpointError("checkpoint is missing tensor " + name);
  };
  auto params = m.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& stored = find(m.names[i]);
    if (!stored.same_shape(*params[i])) {
      throw CheckpointError("checkpoint tensor " + m.names[i] + " has shape " +
                            stored.shape_str() + " but the config needs " +
                            params[i]->shape_str());
    }
    *params[i] = stored;
    adam.m[i] = find("adam.m." + m.names[i]);
    adam.v[i] = find("adam.v." + m.names[i]);
    if (!adam.m[i].same_shape(*params[i]) || !adam.v[i].same_shape(*params[i])) {
      throw CheckpointError("checkpoint optimizer state for " + m.names[i] +
                            " does not match the parameter shape");
    }
  }
  adam.t = c.adam_t;
  adam.config = c.adam_config;
}

std::string hexfloat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hexfloat(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string csv_number(double v) {
  if (std::isinf(v) || std::isnan(v)) return "";
  return format_double(v);
}

}  // namespace

ResolvedConfig resolve(const RunConfig& config) {
  ResolvedConfig rc;
  rc.raw = config;

  auto kind = cell_kind_from(config.cell);
  if (!kind) {
    throw ConfigError("unknown cell '" + config.cell + "'; valid cells: " + cell_kind_list());
  }
  rc.kind = *kind;

  if (config.lr <= 0) throw ConfigError("lr must be positive");
  if (config.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (config.eval_batches < 1) throw ConfigError("eval_batches must be >= 1");
  if (config.patience < 0) throw ConfigError("patience must be >= 0");
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (config.max_iterations < -1) throw ConfigError("max_iterations must be >= 0 (or -1 for the default)");
  if (config.n_hidden < 0) throw ConfigError("n_hidden must be positive");
  if (config.batch < 0) throw ConfigError("batch must be positive");

  int default_epochs = 0;
  if (config.task == "adding") {
    if (config.T < 2) throw ConfigError("adding task requires T >= 2");
    rc.input_dim = 2;
    rc.readout_dim = 1;
    rc.units = "mse";
    rc.n_hidden = config.n_hidden > 0 ? config.n_hidden : 128;
    rc.batch = config.batch > 0 ? config.batch : 50;
    rc.batches_per_epoch = 100;  // synthetic data is infinite; epoch = 100 batches
    rc.threshold = config.threshold > 0 ? config.threshold : kAddingBaselineMse;
    default_epochs = 60;
  } else if (config.task == "copying") {
    if (config.T < 1) throw ConfigError("copying task requires T >= 1");
    rc.input_dim = kCopyDataCategories + 2;
    rc.readout_dim = kCopyDataCategories + 1;  // C9 never appears in targets
    rc.units = "nats";
    rc.n_hidden = config.n_hidden > 0 ? config.n_hidden : 128;
    rc.batch = config.batch > 0 ? config.batch : 50;
    rc.batches_per_epoch = 100;
    rc.threshold = config.threshold > 0 ? config.threshold : memoryless_copying_cost(config.T);
    default_epochs = 300;
  } else if (config.task == "charlm") {
    if (config.max_len < 2) throw ConfigError("charlm requires max_len >= 2");
    rc.input_dim = 0;  // fixed once the corpus vocabulary is known
    rc.readout_dim = 0;
    rc.units = "nats";
    rc.n_hidden = config.n_hidden > 0 ? config.n_hidden : (config.paper_scale ? 1000 : 256);
    rc.batch = config.batch > 0 ? config.batch : 32;
    rc.batches_per_epoch = 0;  // one pass over the train split; set by data
    rc.threshold = config.threshold;
    default_epochs = 3;
  } else {
    throw ConfigError("unknown task '" + config.task + "'; valid tasks: adding, copying, charlm");
  }

  const int epochs = config.epochs > 0 ? config.epochs : default_epochs;
  if (config.max_iterations >= 0) {
    rc.max_iterations = config.max_iterations;
  } else if (rc.batches_per_epoch > 0) {
    rc.max_iterations = epochs * rc.batches_per_epoch;
  } else {
    rc.max_iterations = -static_cast<int64_t>(epochs);  // resolved against the corpus later
  }
  return rc;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << "prnn-checkpoint " << version << "\n";
  out << "cell " << cell << "\n";
  out << "seed " << seed << "\n";
  out << "iteration " << iteration << "\n";
  out << "adam_t " << adam_t << "\n";
  out << "lr " << hexfloat(adam_config.lr) << "\n";
  out << "beta1 " << hexfloat(adam_config.beta1) << "\n";
  out << "beta2 " << hexfloat(adam_config.beta2) << "\n";
  out << "eps_adam " << hexfloat(adam_config.eps) << "\n";
  out << "best_valid " << hexfloat(best_valid) << "\n";
  for (const auto& [name, t] : tensors) {
    out << "tensor " << name;
    out << " " << t.rank();
    for (int d : t.shape()) out << " " << d;
    out << "\n";
  }
  out << "payload\n";
  static_assert(std::endian::native == std::endian::little,
                "checkpoint payload is little-endian");
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size()) * 8);
  }
  if (!out) throw IoError("failed writing checkpoint payload: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  Checkpoint c;
  std::string line;
  std::vector<std::pair<std::string, Shape>> tensor_meta;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!saw_header) {
      if (key != "prnn-checkpoint") throw CheckpointError("not a prnn checkpoint: " + path);
      ls >> c.version;
      if (c.version != 1) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
      }
      saw_header = true;
      continue;
    }
    if (key == "cell") {
      ls >> c.cell;
    } else if (key == "seed") {
      ls >> c.seed;
    } else if (key == "iteration") {
      ls >> c.iteration;
    } else if (key == "adam_t") {
      ls >> c.adam_t;
    } else if (key == "lr" || key == "beta1" || key == "beta2" || key == "eps_adam" ||
               key == "best_valid") {
      std::string value;
      ls >> value;
      const double v = parse_hexfloat(value);
      if (key == "lr") c.adam_config.lr = v;
      else if (key == "beta1") c.adam_config.beta1 = v;
      else if (key == "beta2") c.adam_config.beta2 = v;
      else if (key == "eps_adam") c.adam_config.eps = v;
      else c.best_valid = v;
    } else if (key == "tensor") {
      std::string name;
      int rank = 0;
      ls >> name >> rank;
      if (rank < 1 || rank > 3) throw CheckpointError("bad tensor rank in checkpoint");
      Shape shape(static_cast<size_t>(rank));
      for (int i = 0; i < rank; ++i) ls >> shape[static_cast<size_t>(i)];
      if (!ls) throw CheckpointError("bad tensor line in checkpoint: " + line);
      tensor_meta.emplace_back(name, shape);
    } else {
      throw CheckpointError("unknown checkpoint field: " + key);
    }
  }
  if (!saw_header) throw CheckpointError("not a prnn checkpoint: " + path);
  for (auto& [name, shape] : tensor_meta) {
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size()) * 8);
    if (in.gcount() != static_cast<std::streamsize>(t.size()) * 8) {
      throw CheckpointError("checkpoint payload is truncated: " + path);
    }
    c.tensors.emplace_back(name, std::move(t));
  }
  char extra;
  if (in.read(&extra, 1)) throw CheckpointError("checkpoint has trailing bytes: " + path);
  return c;
}

namespace {

void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
  os << r.iteration << ',' << format_double(r.epoch) << ',' << format_double(r.seconds) << ','
     << format_double(r.train_loss) << ',' << format_double(r.valid_loss) << ',' << r.units << ','
     << r.cell << ',' << r.seed << '\n';
  os.flush();
}

}  // namespace

RunResult train(const RunConfig& config, const Checkpoint* resume_from) {
  ResolvedConfig rc = resolve(config);

  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.out_dir + ": " + ec.message());
  const std::string metrics_path = config.out_dir + "/metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics file " + metrics_path);
  metrics << kMetricsHeader << '\n';
  metrics.flush();

  TaskData data(rc);
  if (rc.raw.task == "charlm") {
    rc.input_dim = data.vocab_size();
    rc.readout_dim = data.vocab_size();
    rc.batches_per_epoch = data.batches_per_epoch();
    if (rc.max_iterations < 0) rc.max_iterations = -rc.max_iterations * rc.batches_per_epoch;
  }

  Model model = build_model(rc);
  AdamState adam = AdamState::init(
      [&] {
        std::vector<const Tensor*> view;
        for (Tensor* t : model.params()) view.push_back(t);
        return view;
      }(),
      AdamConfig{config.lr, config.beta1, config.beta2, config.eps_adam});

  int64_t start_iteration = 0;
  double best_valid = std::numeric_limits<double>::infinity();
  if (resume_from) {
    apply_checkpoint(*resume_from, model, adam, rc);
    start_iteration = resume_from->iteration;
    best_valid = resume_from->best_valid;
  }

  RunResult result;
  result.metrics_path = metrics_path;
  result.checkpoint_path = config.out_dir + "/best.prnn";
  snapshot(model, adam, rc, start_iteration, best_valid).save(result.checkpoint_path);

  const auto wall_start = std::chrono::steady_clock::now();
  double train_accum = 0.0;
  int64_t train_count = 0;
  int evals_since_improvement = 0;

  for (int64_t iter = start_iteration; iter < rc.max_iterations; ++iter) {
    const double loss = train_step(model, adam, data.train_batch(iter));
    const int64_t done = iter + 1;
    if (!std::isfinite(loss)) {
      throw NanAbortError(done, "training loss became non-finite at iteration " +
                                    std::to_string(done));
    }
    train_accum += loss;
    train_count += 1;
    result.iterations = done;

    if (done % config.eval_interval == 0 || done == rc.max_iterations) {
      const double valid = eval_split(model, data, Split::kValid);
      if (!std::isfinite(valid)) {
        throw NanAbortError(done, "validation loss became non-finite at iteration " +
                                      std::to_string(done));
      }
      MetricsRecord rec;
      rec.iteration = done;
      rec.epoch = static_cast<double>(done) / static_cast<double>(rc.batches_per_epoch);
      rec.seconds = config.timing
                        ? std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                        wall_start)
                              .count()
                        : 0.0;
      rec.train_loss = train_accum / static_cast<double>(train_count);
      rec.valid_loss = valid;
      rec.units = rc.units;
      rec.cell = config.cell;
      rec.seed = config.seed;
      write_metrics_row(metrics, rec);
      train_accum = 0.0;
      train_count = 0;

      result.final_train_loss = rec.train_loss;
      result.final_valid_loss = valid;
      if (rc.threshold > 0 && result.iterations_to_threshold < 0 && valid < rc.threshold) {
        result.iterations_to_threshold = done;
      }
      if (valid < best_valid) {
        best_valid = valid;
        snapshot(model, adam, rc, done, best_valid).save(result.checkpoint_path);
        evals_since_improvement = 0;
      } else {
        evals_since_improvement += 1;
        if (config.patience > 0 && evals_since_improvement >= config.patience) break;
      }
    }
  }
  result.best_valid_loss = std::isinf(best_valid)
                               ? std::numeric_limits<double>::quiet_NaN()
                               : best_valid;
  return result;
}

double evaluate(const Checkpoint& checkpoint, const RunConfig& config, Split split) {
  ResolvedConfig rc = resolve(config);
  TaskData data(rc);
  if (rc.raw.task == "charlm") {
    rc.input_dim = data.vocab_size();
    rc.readout_dim = data.vocab_size();
  }
  Model model = build_model(rc);
  AdamState adam = AdamState::init([&] {
    std::vector<const Tensor*> view;
    for (Tensor* t : model.params()) view.push_back(t);
    return view;
  }());
  apply_checkpoint(checkpoint, model, adam, rc);
  return eval_split(model, data, split);
}

CompareResult compare(const RunConfig& base, const std::vector<std::string>& cells,
                      const std::vector<uint64_t>& seeds) {
  if (cells.size() < 2) throw ConfigError("compare needs at least two cells");
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  CompareResult out;
  out.threshold = resolve(base).threshold;
  for (const std::string& cell : cells) {
    CompareSummary summary;
    summary.cell = cell;
    std::vector<double> iters, finals, bests;
    for (uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.cell = cell;
      cfg.seed = seed;
      cfg.out_dir = base.out_dir + "/" + cell + "_seed" + std::to_string(seed);
      CompareRun run;
      run.cell = cell;
      run.seed = seed;
      try {
        run.result = train(cfg);
        summary.runs += 1;
        if (run.result.iterations_to_threshold >= 0) {
          summary.crossed += 1;
          iters.push_back(static_cast<double>(run.result.iterations_to_threshold));
        } else {
          iters.push_back(std::numeric_limits<double>::infinity());
        }
        finals.push_back(run.result.final_valid_loss);
        bests.push_back(run.result.best_valid_loss);
      } catch (const NanAbortError&) {
        run.failed = true;
        summary.runs += 1;
      }
      out.runs.push_back(std::move(run));
    }
    summary.median_iters_to_threshold = median(iters);
    summary.median_final_valid = median(finals);
    summary.median_best_valid = median(bests);
    out.summaries.push_back(std::move(summary));
  }
  return out;
}

void write_compare_csv(std::ostream& os, const RunConfig& base, const CompareResult& result) {
  ResolvedConfig rc = resolve(base);
  os << "row,cell,task,T,n_hidden,seed,status,iterations,iters_to_threshold,"
        "final_train_loss,final_valid_loss,best_valid_loss\n";
  for (const CompareRun& run : result.runs) {
    os << "run," << run.cell << ',' << base.task << ',' << base.T << ',' << rc.n_hidden << ','
       << run.seed << ',';
    if (run.failed) {
      os << "failed,,,,,\n";
      continue;
    }
    const RunResult& r = run.result;
    os << "ok," << r.iterations << ','
       << (r.iterations_to_threshold >= 0 ? std::to_string(r.iterations_to_threshold) : "") << ','
       << csv_number(r.final_train_loss) << ',' << csv_number(r.final_valid_loss) << ','
       << csv_number(r.best_valid_loss) << '\n';
  }
  for (const CompareSummary& s : result.summaries) {
    os << "median," << s.cell << ',' << base.task << ',' << base.T << ',' << rc.n_hidden << ",,"
       << "crossed_" << s.crossed << "_of_" << s.runs << ",,"
       << csv_number(s.median_iters_to_threshold) << ',' << ',' << csv_number(s.median_final_valid)
       << ',' << csv_number(s.median_best_valid) << '\n';
  }
}

void write_plot_script(std::ostream& os, const RunConfig& base, const CompareResult& result) {
  ResolvedConfig rc = resolve(base);
  os << "# validation-loss curves; run with: gnuplot <script>\n";
  os << "set datafile separator ','\n";
  os << "set xlabel 'iteration'\n";
  os << "set ylabel '" << rc.units << "'\n";
  os << "set key outside right\n";
  os << "plot \\\n";
  bool first = true;
  if (result.threshold > 0) {
    os << "  " << format_double(result.threshold) << " with lines dashtype 2 title 'baseline'";
    first = false;
  }
  for (const CompareRun& run : result.runs) {
    if (run.failed) continue;
    if (!first) os << ", \\\n";
    os << "  '" << base.out_dir << "/" << run.cell << "_seed" << run.seed
       << "/metrics.csv' skip 1 using 1:5 with lines title '" << run.cell << " seed "
       << run.seed << "'";
    first = false;
  }
  os << "\n";
}

GradCheckReport gradcheck_cell(CellKind kind, int batch, int steps, int input_dim, int hidden_dim,
                               uint64_t seed, double fd_eps) {
  Rng rng(mix_seed(seed, kStreamGradcheck, 0));
  CellParams cell = make_cell(kind, input_dim, hidden_dim, rng);
  // Perturb away from the identity/zero init so saturation does not hide
  // adjoint bugs behind tiny derivatives.
  cell.for_each_param([&](const std::string&, Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] += rng.uniform(-0.05, 0.05);
  });
  const Tensor x = Tensor::uniform(Shape{batch, steps, input_dim}, rng, -1.0, 1.0);

  auto loss_of = [&](const CellParams& p) {
    Tape t;
    CellVars cv = register_cell(t, p, /*trainable=*/false);
    auto states = unroll(t, cv, x);
    Var total;
    for (const VarState& s : states) {
      Var sq = t.sum(t.mul(s.h, s.h));
      total = total.valid() ? t.add(total, sq) : sq;
    }
    return t.value(t.scale(total, 1.0 / (batch * steps))).scalar();
  };

  // Analytic gradients.
  Tape t;
  std::vector<Var> leaves;
  CellVars cv = register_cell(t, cell, /*trainable=*/true, &leaves);
  auto states = unroll(t, cv, x);
  Var total;
  for (const VarState& s : states) {
    Var sq = t.sum(t.mul(s.h, s.h));
    total = total.valid() ? t.add(total, sq) : sq;
  }
  Var loss = t.scale(total, 1.0 / (batch * steps));
  Gradient grad = t.backward(loss);

  GradCheckReport report;
  size_t leaf_index = 0;
  cell.for_each_param([&](const std::string&, Tensor& tensor) {
    const Tensor& analytic = grad.of(leaves[leaf_index]);
    for (int64_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.data()[i];
      tensor.data()[i] = saved + fd_eps;
      const double plus = loss_of(cell);
      tensor.data()[i] = saved - fd_eps;
      const double minus = loss_of(cell);
      tensor.data()[i] = saved;
      const double fd = (plus - minus) / (2.0 * fd_eps);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      report.entries += 1;
    }
    leaf_index += 1;
  });
  return report;
}

}  // namespace prnn
