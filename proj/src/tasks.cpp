// SPDX-License-Identifier: Apache-2.0

#include "prnn/tasks.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "prnn/rng.hpp"

namespace prnn {

namespace {

// Stream tags for stateless seeding.
constexpr uint64_t kStreamShuffle = 0x73687566ull;  // epoch shuffles

}  // namespace

AddingBatch gen_adding(uint64_t seed, int batch, int T) {
  if (T < 2) throw ContractError("adding task requires T >= 2");
  if (batch < 1) throw ContractError("adding task requires batch >= 1");
  Rng rng(seed);
  AddingBatch out;
  out.inputs = Tensor::zeros(Shape{batch, T, 2});
  out.targets = Tensor::zeros(Shape{batch, 1});
  const int half = T / 2;
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < T; ++t) {
      out.inputs.at(b, t, 0) = rng.uniform01();
    }
    const int first = rng.uniform_int(half);
    const int second = half + rng.uniform_int(T - half);
    out.inputs.at(b, first, 1) = 1.0;
    out.inputs.at(b, second, 1) = 1.0;
    out.targets.at(b, 0) = out.inputs.at(b, first, 0) + out.inputs.at(b, second, 0);
  }
  return out;
}

CopyingBatch gen_copying(uint64_t seed, int batch, int T) {
  if (T < 1) throw ContractError("copying task requires T >= 1");
  if (batch < 1) throw ContractError("copying task requires batch >= 1");
  Rng rng(seed);
  CopyingBatch out;
  out.batch = batch;
  out.length = T + 20;
  out.inputs.assign(static_cast<size_t>(batch) * out.length, kCopyBlank);
  out.targets.assign(static_cast<size_t>(batch) * out.length, kCopyBlank);
  for (int b = 0; b < batch; ++b) {
    const size_t row = static_cast<size_t>(b) * out.length;
    for (int t = 0; t < kCopyMemorized; ++t) {
      const int symbol = rng.uniform_int(kCopyDataCategories);
      out.inputs[row + t] = symbol;
      out.targets[row + (T + 10 + t)] = symbol;
    }
    out.inputs[row + (T + 9)] = kCopyMarker;  // start-reproducing signal
  }
  return out;
}

double memoryless_copying_cost(int T) {
  return 10.0 * std::log(8.0) / (T + 20);
}

Tensor one_hot(const std::vector<int>& ids, int batch, int steps, int classes) {
  if (static_cast<int64_t>(ids.size()) != static_cast<int64_t>(batch) * steps) {
    throw ContractError("one_hot: id count does not match batch x steps");
  }
  Tensor out = Tensor::zeros(Shape{batch, steps, classes});
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) {
      const int id = ids[static_cast<size_t>(b) * steps + t];
      if (id < 0 || id >= classes) throw ContractError("one_hot: id out of range");
      out.at(b, t, id) = 1.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus.

int CharCorpus::encode(unsigned char c) const {
  auto it = std::lower_bound(id_to_char.begin(), id_to_char.end(), c);
  if (it != id_to_char.end() && *it == c) {
    return static_cast<int>(it - id_to_char.begin());
  }
  return unk_id();
}

std::string CharCorpus::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    out += (id >= 0 && id < static_cast<int>(id_to_char.size()))
               ? static_cast<char>(id_to_char[static_cast<size_t>(id)])
               : '?';
  }
  return out;
}

CharCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file: " + path);

  std::vector<std::string> lines;
  std::array<bool, 256> seen{};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    for (unsigned char c : line) seen[c] = true;
    lines.push_back(line);
  }
  if (lines.empty()) throw CorpusError("corpus file is empty: " + path);

  CharCorpus corpus;
  for (int c = 0; c < 256; ++c) {
    if (seen[static_cast<size_t>(c)]) corpus.id_to_char.push_back(static_cast<unsigned char>(c));
  }

  for (size_t i = 0; i < lines.size(); ++i) {
    std::vector<int> ids;
    ids.reserve(lines[i].size());
    for (unsigned char c : lines[i]) ids.push_back(corpus.encode(c));
    // 8/1/1 interleaved split keeps the three parts statistically alike
    const size_t slot = i % 10;
    if (slot < 8) {
      corpus.train.push_back(std::move(ids));
    } else if (slot == 8) {
      corpus.valid.push_back(std::move(ids));
    } else {
      corpus.test.push_back(std::move(ids));
    }
  }
  if (corpus.train.empty() || corpus.valid.empty() || corpus.test.empty()) {
    throw CorpusError("corpus too small to split into train/valid/test: " + path);
  }
  return corpus;
}

LmStream::LmStream(const CharCorpus& corpus, Split split, int batch, int max_len, uint64_t seed)
    : corpus_(&corpus), batch_(batch), max_len_(max_len), seed_(seed) {
  if (batch < 1) throw ContractError("LmStream requires batch >= 1");
  if (max_len < 2) throw ContractError("LmStream requires max_len >= 2");
  switch (split) {
    case Split::kTrain: sentences_ = &corpus.train; break;
    case Split::kValid: sentences_ = &corpus.valid; break;
    case Split::kTest: sentences_ = &corpus.test; break;
  }
  for (size_t i = 0; i < sentences_->size(); ++i) {
    if ((*sentences_)[i].size() >= 2) usable_.push_back(static_cast<int>(i));
  }
  if (usable_.empty()) throw CorpusError("split has no usable sentences");
}

int64_t LmStream::batches_per_epoch() const {
  return std::max<int64_t>(1, static_cast<int64_t>(usable_.size()) / batch_);
}

int64_t LmStream::eval_batch_count() const {
  return (static_cast<int64_t>(usable_.size()) + batch_ - 1) / batch_;
}

LmBatch LmStream::assemble(const std::vector<int>& members) const {
  const int rows = static_cast<int>(members.size());
  int steps = 1;
  for (int idx : members) {
    const auto& s = (*sentences_)[static_cast<size_t>(usable_[static_cast<size_t>(idx)])];
    steps = std::max(steps, std::min<int>(static_cast<int>(s.size()) - 1, max_len_));
  }
  LmBatch out;
  out.batch = rows;
  out.steps = steps;
  out.x = Tensor::zeros(Shape{rows, steps, corpus_->vocab_size()});
  out.mask = Tensor::zeros(Shape{rows, steps});
  out.targets.assign(static_cast<size_t>(rows) * steps, 0);
  for (int b = 0; b < rows; ++b) {
    const auto& s = (*sentences_)[static_cast<size_t>(usable_[static_cast<size_t>(members[static_cast<size_t>(b)])])];
    const int len = std::min<int>(static_cast<int>(s.size()) - 1, max_len_);
    for (int t = 0; t < len; ++t) {
      out.x.at(b, t, s[static_cast<size_t>(t)]) = 1.0;
      out.targets[static_cast<size_t>(b) * steps + t] = s[static_cast<size_t>(t) + 1];
      out.mask.at(b, t) = 1.0;
    }
  }
  return out;
}

LmBatch LmStream::train_batch(int64_t iteration) const {
  const int64_t bpe = batches_per_epoch();
  const int64_t epoch = iteration / bpe;
  const int64_t slot = iteration % bpe;
  // Fisher-Yates keyed by (seed, epoch); any iteration is addressable without
  // replaying earlier ones.
  std::vector<int> order(usable_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(mix_seed(seed_, kStreamShuffle, static_cast<uint64_t>(epoch)));
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
  }
  std::vector<int> members;
  members.reserve(static_cast<size_t>(batch_));
  for (int64_t k = slot * batch_; k < (slot + 1) * batch_ && k < static_cast<int64_t>(order.size());
       ++k) {
    members.push_back(order[static_cast<size_t>(k)]);
  }
  return assemble(members);
}

LmBatch LmStream::eval_batch(int64_t index) const {
  if (index < 0 || index >= eval_batch_count()) throw ContractError("eval batch index out of range");
  std::vector<int> members;
  for (int64_t k = index * batch_;
       k < (index + 1) * batch_ && k < static_cast<int64_t>(usable_.size()); ++k) {
    members.push_back(static_cast<int>(k));
  }
  return assemble(members);
}

// ---------------------------------------------------------------------------
// Losses.

Var mse(Tape& tape, Var pred, const Tensor& target) {
  Var diff = tape.sub(pred, tape.constant(target));
  return tape.mean(tape.mul(diff, diff));
}

Var seq_cross_entropy(Tape& tape, const std::vector<Var>& step_logits,
                      const std::vector<int>& targets, const Tensor& mask) {
  if (step_logits.empty()) throw ContractError("seq_cross_entropy over an empty sequence");
  if (mask.rank() != 2) throw ShapeError("mask must be [batch x T], got " + mask.shape_str());
  const int batch = mask.dim(0);
  const int steps = mask.dim(1);
  if (static_cast<int>(step_logits.size()) != steps) {
    throw ShapeError("got " + std::to_string(step_logits.size()) + " logit steps for mask " +
                     mask.shape_str());
  }
  if (static_cast<int64_t>(targets.size()) != static_cast<int64_t>(batch) * steps) {
    throw ContractError("seq_cross_entropy: target count does not match batch x T");
  }
  double mask_total = 0.0;
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) {
      const double mv = mask.at(b, t);
      if (mv != 0.0 && mv != 1.0) throw ContractError("mask entries must be 0 or 1");
      mask_total += mv;
    }
  }
  if (mask_total == 0.0) throw ContractError("seq_cross_entropy: mask is all zero");

  Var total;
  std::vector<int> step_targets(static_cast<size_t>(batch));
  std::vector<double> step_mask(static_cast<size_t>(batch));
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      step_targets[static_cast<size_t>(b)] = targets[static_cast<size_t>(b) * steps + t];
      step_mask[static_cast<size_t>(b)] = mask.at(b, t);
    }
    Var ce = tape.cross_entropy(step_logits[static_cast<size_t>(t)], step_targets, step_mask);
    total = total.valid() ? tape.add(total, ce) : ce;
  }
  return tape.scale(total, 1.0 / mask_total);
}

// ---------------------------------------------------------------------------
// CSV.

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{}) throw ContractError("bad numeric field in CSV: " + s);
  return v;
}

int parse_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{}) throw ContractError("bad integer field in CSV: " + s);
  return v;
}

}  // namespace

void write_adding_csv(std::ostream& os, const AddingBatch& batch) {
  os << "seq,t,value,marker,target\n";
  const int b = batch.inputs.dim(0), steps = batch.inputs.dim(1);
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < steps; ++t) {
      os << i << ',' << t << ',' << format_double(batch.inputs.at(i, t, 0)) << ','
         << static_cast<int>(batch.inputs.at(i, t, 1)) << ','
         << format_double(batch.targets.at(i, 0)) << '\n';
    }
  }
}

AddingBatch read_adding_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "seq,t,value,marker,target") {
    throw ContractError("not an adding-task CSV");
  }
  struct Row {
    int seq, t, marker;
    double value, target;
  };
  std::vector<Row> rows;
  int max_seq = -1, max_t = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 5) throw ContractError("bad adding CSV row: " + line);
    Row r{parse_int(fields[0]), parse_int(fields[1]), parse_int(fields[3]),
          parse_double(fields[2]), parse_double(fields[4])};
    max_seq = std::max(max_seq, r.seq);
    max_t = std::max(max_t, r.t);
    rows.push_back(r);
  }
  if (rows.empty()) throw ContractError("adding CSV has no data rows");
  AddingBatch out;
  out.inputs = Tensor::zeros(Shape{max_seq + 1, max_t + 1, 2});
  out.targets = Tensor::zeros(Shape{max_seq + 1, 1});
  for (const Row& r : rows) {
    out.inputs.at(r.seq, r.t, 0) = r.value;
    out.inputs.at(r.seq, r.t, 1) = r.marker;
    out.targets.at(r.seq, 0) = r.target;
  }
  return out;
}

void write_copying_csv(std::ostream& os, const CopyingBatch& batch) {
  os << "seq,t,input,target\n";
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.length; ++t) {
      os << b << ',' << t << ',' << batch.input_at(b, t) << ',' << batch.target_at(b, t) << '\n';
    }
  }
}

CopyingBatch read_copying_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "seq,t,input,target") {
    throw ContractError("not a copying-task CSV");
  }
  struct Row {
    int seq, t, input, target;
  };
  std::vector<Row> rows;
  int max_seq = -1, max_t = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 4) throw ContractError("bad copying CSV row: " + line);
    Row r{parse_int(fields[0]), parse_int(fields[1]), parse_int(fields[2]), parse_int(fields[3])};
    max_seq = std::max(max_seq, r.seq);
    max_t = std::max(max_t, r.t);
    rows.push_back(r);
  }
  if (rows.empty()) throw ContractError("copying CSV has no data rows");
  CopyingBatch out;
  out.batch = max_seq + 1;
  out.length = max_t + 1;
  out.inputs.assign(static_cast<size_t>(out.batch) * out.length, 0);
  out.targets.assign(static_cast<size_t>(out.batch) * out.length, 0);
  for (const Row& r : rows) {
    out.inputs[static_cast<size_t>(r.seq) * out.length + r.t] = r.input;
    out.targets[static_cast<size_t>(r.seq) * out.length + r.t] = r.target;
  }
  return out;
}

}  // namespace prnn
