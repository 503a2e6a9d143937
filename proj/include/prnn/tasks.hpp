// SPDX-License-Identifier: Apache-2.0
//
// Seeded generators for the adding and copying benchmarks, a character-level
// corpus pipeline, and the task losses. Generators are pure functions of
// (seed, batch, T): the same seed gives bitwise-identical batches.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "prnn/tape.hpp"
#include "prnn/tensor.hpp"

namespace prnn {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Adding task: regress the sum of the two marked values of a length-T
// sequence. Predicting 1 regardless of input has expected MSE 1/6 ~ 0.167,
// the memoryless baseline.

struct AddingBatch {
  Tensor inputs;   // [batch x T x 2]; feature 0 value in [0,1), feature 1 marker
  Tensor targets;  // [batch x 1], exact sum of the two marked values
};

// Exactly two markers per sequence: one in [0, T/2), one in [T/2, T).
// T must be >= 2.
AddingBatch gen_adding(uint64_t seed, int batch, int T);

inline constexpr double kAddingBaselineMse = 1.0 / 6.0;

// ---------------------------------------------------------------------------
// Copying task: 10 symbols from {C0..C7} must be reproduced after a T-step
// delay. Sequences have length T+20 over categories C0..C9; targets never
// contain C9.

struct CopyingBatch {
  int batch = 0;
  int length = 0;  // T + 20
  std::vector<int> inputs;   // row-major [batch x length], ids 0..9
  std::vector<int> targets;  // row-major [batch x length], ids 0..8

  int input_at(int b, int t) const { return inputs[static_cast<size_t>(b) * length + t]; }
  int target_at(int b, int t) const { return targets[static_cast<size_t>(b) * length + t]; }
};

inline constexpr int kCopyDataCategories = 8;   // C0..C7
inline constexpr int kCopyBlank = 8;            // C8
inline constexpr int kCopyMarker = 9;           // C9
inline constexpr int kCopyMemorized = 10;       // symbols to reproduce

// T must be >= 1.
CopyingBatch gen_copying(uint64_t seed, int batch, int T);

// Cost of the memoryless strategy (predict C8 until the marker has passed,
// then uniform over C0..C7): 10 * ln(8) / (T + 20) nats per step.
double memoryless_copying_cost(int T);

// One-hot encoding of integer ids, row-major [batch x steps].
Tensor one_hot(const std::vector<int>& ids, int batch, int steps, int classes);

// ---------------------------------------------------------------------------
// Character-level corpus: UTF-8 text, one sentence per line. Character ids
// are dense 0..|vocab|-1 with a reserved UNK id at the end; lines split
// 80/10/10 into train/valid/test by index.

struct CharCorpus {
  std::vector<unsigned char> id_to_char;       // sorted by byte value
  std::vector<std::vector<int>> train, valid, test;

  int vocab_size() const { return static_cast<int>(id_to_char.size()) + 1; }
  int unk_id() const { return static_cast<int>(id_to_char.size()); }
  int encode(unsigned char c) const;
  std::string decode(const std::vector<int>& ids) const;
};

CharCorpus load_corpus(const std::string& path);

enum class Split { kTrain, kValid, kTest };

struct LmBatch {
  Tensor x;                  // [batch x T x V] one-hot inputs
  std::vector<int> targets;  // row-major [batch x T]; next-character ids
  Tensor mask;               // [batch x T] over {0,1}
  int batch = 0;
  int steps = 0;
};

// Deterministic batch stream over one split. Training batches follow a
// per-epoch shuffle keyed by (seed, epoch); evaluation batches keep corpus
// order. Sentences shorter than two characters are skipped, longer ones are
// truncated to max_len prediction steps.
class LmStream {
 public:
  LmStream(const CharCorpus& corpus, Split split, int batch, int max_len, uint64_t seed);

  int64_t batches_per_epoch() const;  // full batches (training)
  int64_t eval_batch_count() const;   // includes a final partial batch
  LmBatch train_batch(int64_t iteration) const;
  LmBatch eval_batch(int64_t index) const;

 private:
  LmBatch assemble(const std::vector<int>& sentence_ids) const;

  const CharCorpus* corpus_;
  const std::vector<std::vector<int>>* sentences_;
  std::vector<int> usable_;  // indices of sentences with >= 1 prediction pair
  int batch_;
  int max_len_;
  uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Losses.

// Mean over all entries of (pred - target)^2.
Var mse(Tape& tape, Var pred, const Tensor& target);

// Masked mean cross-entropy over a sequence of per-step logits [B x K]:
// (sum of masked per-step CE) / (sum of mask). Log-softmax is max-shifted.
// targets is row-major [B x T]; mask entries must be 0 or 1 and not all zero.
Var seq_cross_entropy(Tape& tape, const std::vector<Var>& step_logits,
                      const std::vector<int>& targets, const Tensor& mask);

// ---------------------------------------------------------------------------
// CSV materialization (gen-task subcommand and golden files).

void write_adding_csv(std::ostream& os, const AddingBatch& batch);
AddingBatch read_adding_csv(std::istream& is);
void write_copying_csv(std::ostream& os, const CopyingBatch& batch);
CopyingBatch read_copying_csv(std::istream& is);

// Shortest decimal form that round-trips a double.
std::string format_double(double v);

}  // namespace prnn
