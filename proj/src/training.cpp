#include "nmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "nmt/bpe.hpp"
#include "nmt/decoding.hpp"
#include "nmt/errors.hpp"
#include "nmt/eval.hpp"
#include "nmt/rng.hpp"

namespace nmt {

namespace {

void split_batch(const std::vector<IdPair>& batch,
                 std::vector<std::vector<int>>& src,
                 std::vector<std::vector<int>>& tgt) {
  src.clear();
  tgt.clear();
  src.reserve(batch.size());
  tgt.reserve(batch.size());
  for (const auto& pair : batch) {
    src.push_back(pair.src);
    tgt.push_back(pair.tgt);
  }
}

std::vector<int> padded_targets(const std::vector<std::vector<int>>& tgt) {
  std::size_t t = 1;
  for (const auto& row : tgt) t = std::max(t, row.size());
  std::vector<int> flat(tgt.size() * t, kPadId);
  for (std::size_t b = 0; b < tgt.size(); ++b) {
    std::copy(tgt[b].begin(), tgt[b].end(), flat.begin() + static_cast<long>(b * t));
  }
  return flat;
}

long count_tokens(const std::vector<IdPair>& pairs) {
  long n = 0;
  for (const auto& p : pairs) n += static_cast<long>(p.tgt.size());
  return n;
}

void check_ids(const std::vector<IdPair>& pairs, int vocab_size,
               const char* which) {
  for (const auto& pair : pairs) {
    for (int id : pair.src) {
      if (id < 0 || id >= vocab_size) {
        throw DataVocabMismatch(std::string(which) + ": source id " +
                                std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab_size));
      }
    }
    for (int id : pair.tgt) {
      if (id < 0 || id >= vocab_size) {
        throw DataVocabMismatch(std::string(which) + ": target id " +
                                std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab_size));
      }
    }
  }
}

std::optional<double> dev_bleu_greedy(const Checkpoint& ckpt,
                                      const std::vector<IdPair>& dev_pairs) {
  TokenLines hyps, refs;
  hyps.reserve(dev_pairs.size());
  refs.reserve(dev_pairs.size());
  for (const auto& pair : dev_pairs) {
    TokenLine hyp;
    for (int id : greedy_decode(ckpt, pair.src)) {
      if (id == kEosId) break;
      hyp.push_back(ckpt.vocab.token(id));
    }
    TokenLine ref;
    for (int id : pair.tgt) {
      if (id == kEosId) break;
      ref.push_back(ckpt.vocab.token(id));
    }
    hyps.push_back(bpe_undo(hyp));
    refs.push_back(bpe_undo(ref));
  }
  if (hyps.empty()) return std::nullopt;
  return bleu_smoothed(hyps, refs).bleu;
}

}  // namespace

std::optional<long> TrainReport::steps_to_threshold(double theta) const {
  for (const auto& r : records) {
    if (r.dev_loss <= theta) return r.step;
  }
  return std::nullopt;
}

void report_save(const TrainReport& report, const std::string& path) {
  std::string out = "step\tdev_loss\tdev_bleu\tlr\n";
  char buf[128];
  for (const auto& r : report.records) {
    std::snprintf(buf, sizeof(buf), "%ld\t%.9g\t", r.step, r.dev_loss);
    out += buf;
    if (r.dev_bleu) {
      std::snprintf(buf, sizeof(buf), "%.4f", *r.dev_bleu);
      out += buf;
    } else {
      out += "-";
    }
    std::snprintf(buf, sizeof(buf), "\t%.9g\n", r.lr);
    out += buf;
  }
  write_file(path, out);
}

TrainReport report_load(const std::string& path) {
  TrainReport report;
  const auto lines = read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {  // skip header
    if (lines[i].empty()) continue;
    EvalRecord r;
    char bleu_field[64] = {0};
    if (std::sscanf(lines[i].c_str(), "%ld\t%lf\t%63s\t%lf", &r.step,
                    &r.dev_loss, bleu_field, &r.lr) < 3) {
      throw IoError(path + ": malformed report line " + std::to_string(i + 1));
    }
    // %s stops at the tab, so lr needs a second pass from the line tail
    const auto last_tab = lines[i].rfind('\t');
    r.lr = std::stod(lines[i].substr(last_tab + 1));
    if (bleu_field[0] != '-' || bleu_field[1] != '\0') {
      r.dev_bleu = std::stod(bleu_field);
    }
    report.records.push_back(r);
  }
  return report;
}

double lr_schedule(long step, int d_model, int warmup_steps,
                   double lr_constant) {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return lr_constant / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void adam_step(std::map<std::string, Tensor>& params, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    auto m_it = state.m.find(name);
    if (m_it == state.m.end()) {
      m_it = state.m.emplace(name, Tensor::zeros(p.shape())).first;
      state.v.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor& m = m_it->second;
    Tensor& v = state.v.at(name);
    if (m.shape() != p.shape()) {
      throw ShapeMismatch("adam_step: stale moment shape for '" + name + "'");
    }
    auto& pv = p.value();
    const auto& gv = p.grad();
    auto& mv = m.value();
    auto& vv = v.value();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double g = gv[i];
      const double mi = beta1 * mv[i] + (1.0 - beta1) * g;
      const double vi = beta2 * vv[i] + (1.0 - beta2) * g * g;
      mv[i] = static_cast<float>(mi);
      vv[i] = static_cast<float>(vi);
      pv[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
}

std::vector<IdPair> encode_pairs(const ParallelCorpus& corpus,
                                 const Vocabulary& vocab) {
  std::vector<IdPair> pairs;
  pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    IdPair pair;
    pair.src = vocab.encode_line(corpus.src_lines[i]);
    pair.src.push_back(kEosId);
    pair.tgt = vocab.encode_line(corpus.tgt_lines[i]);
    pair.tgt.push_back(kEosId);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<std::vector<IdPair>> make_batches(const std::vector<IdPair>& pairs,
                                              int batch_tokens,
                                              std::uint64_t seed, long epoch) {
  for (const auto& pair : pairs) {
    const long need = static_cast<long>(pair.src.size() + pair.tgt.size());
    if (need > batch_tokens) {
      throw SentenceTooLong("pair of " + std::to_string(need) +
                            " tokens exceeds batch budget " +
                            std::to_string(batch_tokens));
    }
  }

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&pairs](std::size_t a, std::size_t b) {
    const std::size_t la = pairs[a].src.size() + pairs[a].tgt.size();
    const std::size_t lb = pairs[b].src.size() + pairs[b].tgt.size();
    if (la != lb) return la < lb;
    return a < b;
  });

  std::vector<std::vector<IdPair>> batches;
  std::vector<IdPair> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (std::size_t idx : order) {
    const std::size_t new_src = std::max(max_src, pairs[idx].src.size());
    const std::size_t new_tgt = std::max(max_tgt, pairs[idx].tgt.size());
    const std::size_t cost = (new_src + new_tgt) * (current.size() + 1);
    if (!current.empty() && cost > static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(current));
      current.clear();
      max_src = max_tgt = 0;
    }
    max_src = std::max(max_src, pairs[idx].src.size());
    max_tgt = std::max(max_tgt, pairs[idx].tgt.size());
    current.push_back(pairs[idx]);
  }
  if (!current.empty()) batches.push_back(std::move(current));

  Rng rng(mix64(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(batches);
  return batches;
}

double dev_loss(const Checkpoint& ckpt, const std::vector<IdPair>& dev_pairs,
                int batch_tokens) {
  double loss_sum = 0.0;
  long tokens = 0;
  std::vector<std::vector<int>> src, tgt;
  for (const auto& batch : make_batches(dev_pairs, batch_tokens, 0, 0)) {
    split_batch(batch, src, tgt);
    Tape tape(false);
    Tensor logits = forward(ckpt, tape, src, tgt, false, 0);
    Tensor flat = tape.reshape(
        logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
    Tensor loss = tape.cross_entropy(flat, padded_targets(tgt), kPadId,
                                     ckpt.config.label_smoothing);
    const long batch_tokens_live = count_tokens(batch);
    loss_sum += static_cast<double>(loss.item()) * batch_tokens_live;
    tokens += batch_tokens_live;
  }
  return tokens > 0 ? loss_sum / tokens : 0.0;
}

TrainResult train(const Checkpoint& start, const std::vector<IdPair>& train_pairs,
                  const std::vector<IdPair>& dev_pairs,
                  const TrainConfig& config, const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  check_ids(train_pairs, start.vocab.size(), "train corpus");
  check_ids(dev_pairs, start.vocab.size(), "dev corpus");

  TrainResult result;
  if (config.max_steps <= 0) {
    result.best = start;
    result.final = start;
    return result;
  }
  if (train_pairs.empty()) throw EmptyCorpus("train: no training pairs");

  Checkpoint ckpt;
  ckpt.config = start.config;
  ckpt.config.dropout_p = config.dropout_p;
  ckpt.vocab = start.vocab;
  ckpt.params = clone_params(start.params);
  ckpt.meta = start.meta;

  AdamState adam;
  TrainReport report;
  double best_loss = 0.0;
  auto evaluate = [&](long step, double lr) {
    EvalRecord r;
    r.step = step;
    r.dev_loss = dev_loss(ckpt, dev_pairs, config.batch_tokens);
    if (config.track_dev_bleu) r.dev_bleu = dev_bleu_greedy(ckpt, dev_pairs);
    r.lr = lr;
    report.records.push_back(r);
    if (report.records.size() == 1 || r.dev_loss < best_loss) {
      best_loss = r.dev_loss;
      result.best.config = ckpt.config;
      result.best.vocab = ckpt.vocab;
      result.best.params = clone_params(ckpt.params);
      result.best.meta = ckpt.meta;
      result.best.meta.step = start.meta.step + step;
    }
  };
  evaluate(0, 0.0);

  std::vector<std::vector<IdPair>> batches;
  std::size_t batch_idx = 0;
  long epoch = 0;
  std::vector<std::vector<int>> src, tgt;
  for (long step = 1; step <= config.max_steps; ++step) {
    if (batch_idx == batches.size()) {
      batches = make_batches(train_pairs, config.batch_tokens, config.seed,
                             epoch++);
      batch_idx = 0;
    }
    split_batch(batches[batch_idx++], src, tgt);

    for (auto& [name, p] : ckpt.params) p.zero_grad();
    Tape tape;
    Tensor logits = forward(ckpt, tape, src, tgt, true,
                            mix64(config.seed, static_cast<std::uint64_t>(step)));
    Tensor flat = tape.reshape(
        logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
    Tensor loss = tape.cross_entropy(flat, padded_targets(tgt), kPadId,
                                     ckpt.config.label_smoothing);
    tape.backward(loss);

    const double lr = lr_schedule(step, ckpt.config.d_model,
                                  config.warmup_steps, config.lr_constant);
    adam_step(ckpt.params, adam, lr);

    if (step % config.eval_every == 0 || step == config.max_steps) {
      evaluate(step, lr);
    }
  }

  ckpt.meta.step = start.meta.step + config.max_steps;
  result.final = ckpt;
  report.wallclock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  result.report = report;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    ckpt_save(result.best, out_dir + "/best.nmt");
    ckpt_save(result.final, out_dir + "/final.nmt");
    report_save(result.report, out_dir + "/train_report.tsv");
  }
  return result;
}

}  // namespace nmt
