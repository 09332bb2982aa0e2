#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nmt/corpus.hpp"
#include "nmt/model.hpp"

namespace nmt {

struct TrainConfig {
  int batch_tokens = 4096;
  int warmup_steps = 16000;
  double lr_constant = 2.0;
  float dropout_p = 0.3f;
  long max_steps = 0;
  long eval_every = 100;
  std::uint64_t seed = 1;
  // greedy-decode the dev set at each eval and track smoothed BLEU
  bool track_dev_bleu = false;
};

struct EvalRecord {
  long step = 0;
  double dev_loss = 0.0;
  std::optional<double> dev_bleu;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EvalRecord> records;  // strictly increasing in step
  double wallclock_sec = 0.0;
  // First recorded step whose dev_loss <= theta.
  std::optional<long> steps_to_threshold(double theta) const;
};

// TSV: step, dev_loss, dev_bleu ("-" when untracked), lr. One row per record.
void report_save(const TrainReport& report, const std::string& path);
TrainReport report_load(const std::string& path);

// lr_constant * d_model^-1/2 * min(step^-1/2, step * warmup^-3/2)
double lr_schedule(long step, int d_model, int warmup_steps,
                   double lr_constant);

struct AdamState {
  std::map<std::string, Tensor> m;  // first moments, per parameter
  std::map<std::string, Tensor> v;  // second moments
  long t = 0;
};

// One dense Adam update with bias correction; gradients are read from each
// parameter's .grad() buffer. Throws ShapeMismatch on stale state shapes.
void adam_step(std::map<std::string, Tensor>& params, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.998,
               double eps = 1e-9);

// One training example, already flag-prepended, BPE-segmented and id-encoded,
// with the trailing `</s>` on both sides.
struct IdPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

std::vector<IdPair> encode_pairs(const ParallelCorpus& corpus,
                                 const Vocabulary& vocab);

// Length-bucketed greedy packing under (max_src + max_tgt) * batch_rows <=
// batch_tokens, then batch order shuffled by (seed, epoch). Throws
// SentenceTooLong when a single pair exceeds the budget.
std::vector<std::vector<IdPair>> make_batches(const std::vector<IdPair>& pairs,
                                              int batch_tokens,
                                              std::uint64_t seed,
                                              long epoch = 0);

// Token-weighted mean dev loss (dropout off).
double dev_loss(const Checkpoint& ckpt, const std::vector<IdPair>& dev_pairs,
                int batch_tokens);

struct TrainResult {
  Checkpoint best;   // lowest dev loss seen
  Checkpoint final;  // after the last step
  TrainReport report;
};

// Runs max_steps Adam steps from `start` (which is not modified). Evaluates
// at step 0, every eval_every steps, and at the last step. When out_dir is
// non-empty persists best.nmt, final.nmt and train_report.tsv there.
TrainResult train(const Checkpoint& start, const std::vector<IdPair>& train_pairs,
                  const std::vector<IdPair>& dev_pairs,
                  const TrainConfig& config, const std::string& out_dir = "");

}  // namespace nmt
