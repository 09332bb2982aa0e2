// nmt: command-line front end for the translation toolkit.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nmt/bpe.hpp"
#include "nmt/corpus.hpp"
#include "nmt/decoding.hpp"
#include "nmt/errors.hpp"
#include "nmt/eval.hpp"
#include "nmt/model.hpp"
#include "nmt/pipeline.hpp"
#include "nmt/training.hpp"
#include "nmt/vocab.hpp"

namespace {

using nmt::TokenLine;
using nmt::TokenLines;

TokenLines read_token_lines(const std::string& path) {
  TokenLines lines;
  for (const auto& raw : nmt::read_lines(path)) {
    lines.push_back(nmt::split_tokens(raw));
  }
  return lines;
}

void write_token_lines(const std::string& path, const TokenLines& lines) {
  std::vector<std::string> raw;
  raw.reserve(lines.size());
  for (const auto& line : lines) raw.push_back(nmt::join_tokens(line));
  nmt::write_lines(path, raw);
}

struct GlobalOpts {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool resume = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale neural machine translation with dynamic-vocabulary "
               "transfer across language pairs"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts global;
  app.add_option("--seed", global.seed, "global random seed");
  app.add_option("--out-dir", global.out_dir, "output / experiment directory");
  app.add_flag("--resume", global.resume, "skip already-completed stages");

  // ---- bpe-train
  auto* bpe_train_cmd =
      app.add_subcommand("bpe-train", "learn BPE merge rules from token files");
  std::vector<std::string> bt_inputs;
  int bt_merges = nmt::kDefaultBpeMerges;
  std::string bt_out = "bpe.txt";
  bpe_train_cmd->add_option("inputs", bt_inputs, "tokenized text files")
      ->required()
      ->check(CLI::ExistingFile);
  bpe_train_cmd->add_option("--merges", bt_merges, "number of merge rules");
  bpe_train_cmd->add_option("-o,--output", bt_out, "merge rule file to write");

  // ---- bpe-apply
  auto* bpe_apply_cmd =
      app.add_subcommand("bpe-apply", "segment a token file with learned rules");
  std::string ba_model, ba_in, ba_out;
  bool ba_undo = false;
  bpe_apply_cmd->add_option("-m,--model", ba_model, "merge rule file")
      ->check(CLI::ExistingFile);
  bpe_apply_cmd->add_option("-i,--input", ba_in, "input token file")
      ->required()
      ->check(CLI::ExistingFile);
  bpe_apply_cmd->add_option("-o,--output", ba_out, "segmented output file")
      ->required();
  bpe_apply_cmd->add_flag("--undo", ba_undo,
                          "reverse segmentation instead of applying it");

  // ---- vocab-build
  auto* vocab_build_cmd = app.add_subcommand(
      "vocab-build", "build a vocabulary from BPE-segmented files");
  std::vector<std::string> vb_inputs, vb_langs;
  std::string vb_out = "vocab.txt";
  vocab_build_cmd->add_option("inputs", vb_inputs, "segmented text files")
      ->required()
      ->check(CLI::ExistingFile);
  vocab_build_cmd->add_option(
      "--flag", vb_langs, "target-language code to reserve a flag token for");
  vocab_build_cmd->add_option("-o,--output", vb_out, "vocabulary file");

  // ---- vocab-transfer
  auto* vocab_transfer_cmd = app.add_subcommand(
      "vocab-transfer", "map a parent vocabulary onto a child vocabulary");
  std::string vt_parent, vt_child, vt_out;
  bool vt_static = false;
  vocab_transfer_cmd->add_option("--parent", vt_parent, "parent vocab file")
      ->required()
      ->check(CLI::ExistingFile);
  vocab_transfer_cmd->add_option("--child", vt_child, "child vocab file")
      ->check(CLI::ExistingFile);
  vocab_transfer_cmd->add_option("-o,--output", vt_out,
                                 "write the full map as JSON");
  vocab_transfer_cmd->add_flag(
      "--static", vt_static, "keep the parent vocabulary verbatim (no child)");

  // ---- train
  auto* train_cmd = app.add_subcommand(
      "train", "train a model on encoded parallel text (single stage)");
  std::string tr_src, tr_tgt, tr_dev_src, tr_dev_tgt, tr_vocab, tr_from;
  nmt::ModelConfig tr_model;
  nmt::TrainConfig tr_cfg;
  train_cmd->add_option("--train-src", tr_src, "segmented source token file")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--train-tgt", tr_tgt, "segmented target token file")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--dev-src", tr_dev_src, "segmented dev source file")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--dev-tgt", tr_dev_tgt, "segmented dev target file")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--vocab", tr_vocab, "vocabulary file")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--from", tr_from,
                        "checkpoint to continue from (ignores model flags)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--d-model", tr_model.d_model, "model width");
  train_cmd->add_option("--layers", tr_model.n_layers, "encoder/decoder layers");
  train_cmd->add_option("--heads", tr_model.n_heads, "attention heads");
  train_cmd->add_option("--d-ff", tr_model.d_ff, "feed-forward width");
  train_cmd->add_option("--max-len", tr_model.max_len, "positional table size");
  train_cmd->add_option("--label-smoothing", tr_model.label_smoothing,
                        "label smoothing epsilon");
  train_cmd->add_option("--steps", tr_cfg.max_steps, "training steps");
  train_cmd->add_option("--batch-tokens", tr_cfg.batch_tokens,
                        "max source+target tokens per batch");
  train_cmd->add_option("--warmup", tr_cfg.warmup_steps, "warmup steps");
  train_cmd->add_option("--lr-constant", tr_cfg.lr_constant,
                        "learning-rate constant");
  train_cmd->add_option("--dropout", tr_cfg.dropout_p, "dropout probability");
  train_cmd->add_option("--eval-every", tr_cfg.eval_every,
                        "dev evaluation interval");
  bool tr_dev_bleu = false;
  train_cmd->add_flag("--dev-bleu", tr_dev_bleu,
                      "track greedy smoothed BLEU on the dev set");

  // ---- translate
  auto* translate_cmd =
      app.add_subcommand("translate", "decode a text file with a checkpoint");
  std::string dc_model, dc_in, dc_out, dc_bpe, dc_flag;
  nmt::DecodeConfig dc_cfg;
  bool dc_keep_subwords = false;
  translate_cmd->add_option("-m,--model", dc_model, "checkpoint (.nmt)")
      ->required()
      ->check(CLI::ExistingFile);
  translate_cmd->add_option("-i,--input", dc_in, "source text file")
      ->required()
      ->check(CLI::ExistingFile);
  translate_cmd->add_option("-o,--output", dc_out, "hypothesis file")
      ->required();
  translate_cmd->add_option("--bpe", dc_bpe, "segment input with these rules")
      ->check(CLI::ExistingFile);
  translate_cmd->add_option(
      "--flag", dc_flag, "target-language code to prepend as a flag token");
  translate_cmd->add_option("--beam", dc_cfg.beam_size, "beam width");
  translate_cmd->add_option("--alpha", dc_cfg.length_penalty_alpha,
                            "length penalty exponent");
  translate_cmd->add_option("--max-out-len", dc_cfg.max_out_len,
                            "output length cap (0 = 2*src+8)");
  translate_cmd->add_flag("--keep-subwords", dc_keep_subwords,
                          "emit BPE units instead of joined words");

  // ---- score
  auto* score_cmd = app.add_subcommand("score", "corpus BLEU of hyp vs ref");
  std::string sc_hyp, sc_ref;
  bool sc_smoothed = false;
  score_cmd->add_option("--hyp", sc_hyp, "hypothesis file")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--ref", sc_ref, "reference file")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_flag("--smoothed", sc_smoothed, "add-one smoothed precisions");

  // ---- signif
  auto* signif_cmd = app.add_subcommand(
      "signif", "paired bootstrap significance of two systems");
  std::string sg_a, sg_b, sg_ref;
  int sg_samples = 1000;
  signif_cmd->add_option("--hyp-a", sg_a, "system A hypotheses")
      ->required()
      ->check(CLI::ExistingFile);
  signif_cmd->add_option("--hyp-b", sg_b, "system B hypotheses")
      ->required()
      ->check(CLI::ExistingFile);
  signif_cmd->add_option("--ref", sg_ref, "reference file")
      ->required()
      ->check(CLI::ExistingFile);
  signif_cmd->add_option("--samples", sg_samples, "bootstrap samples");

  // ---- run-plan
  auto* run_plan_cmd =
      app.add_subcommand("run-plan", "execute a multi-stage experiment plan");
  std::string rp_plan, rp_stage;
  run_plan_cmd->add_option("plan", rp_plan, "plan file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run_plan_cmd->add_option("--stage", rp_stage,
                           "run only this stage (parents must be done)");

  // ---- report
  auto* report_cmd = app.add_subcommand(
      "report", "aggregate a finished plan directory into report.md");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bpe_train_cmd) {
      std::vector<TokenLines> corpora;
      corpora.reserve(bt_inputs.size());
      for (const auto& path : bt_inputs) {
        corpora.push_back(read_token_lines(path));
      }
      std::vector<const TokenLines*> ptrs;
      for (const auto& c : corpora) ptrs.push_back(&c);
      nmt::BpeModel model = nmt::bpe_train(ptrs, bt_merges);
      nmt::bpe_save(model, bt_out);
      std::cout << "learned " << model.n_merges() << " merges -> " << bt_out
                << "\n";
    } else if (*bpe_apply_cmd) {
      TokenLines lines = read_token_lines(ba_in);
      TokenLines out;
      out.reserve(lines.size());
      if (ba_undo) {
        for (const auto& line : lines) out.push_back(nmt::bpe_undo(line));
      } else {
        if (ba_model.empty()) {
          throw nmt::ConfigInvalid("bpe-apply needs --model (or --undo)");
        }
        nmt::BpeApplier applier(nmt::bpe_load(ba_model));
        out = applier.apply_all(lines);
      }
      write_token_lines(ba_out, out);
    } else if (*vocab_build_cmd) {
      std::vector<TokenLines> corpora;
      for (const auto& path : vb_inputs) {
        corpora.push_back(read_token_lines(path));
      }
      std::vector<const TokenLines*> ptrs;
      for (const auto& c : corpora) ptrs.push_back(&c);
      std::vector<std::string> flags;
      for (const auto& lang : vb_langs) flags.push_back(nmt::flag_token(lang));
      nmt::Vocabulary vocab = nmt::build_vocab(ptrs, flags);
      nmt::vocab_save(vocab, vb_out);
      std::cout << vocab.size() << " tokens -> " << vb_out << "\n";
    } else if (*vocab_transfer_cmd) {
      nmt::Vocabulary parent = nmt::vocab_load(vt_parent);
      nmt::TransferMap map;
      nmt::OverlapReport overlap;
      if (vt_static) {
        map = nmt::static_mode_map(parent);
        overlap = nmt::overlap_report(parent, parent);
      } else {
        if (vt_child.empty()) {
          throw nmt::ConfigInvalid("vocab-transfer needs --child or --static");
        }
        nmt::Vocabulary child = nmt::vocab_load(vt_child);
        map = nmt::dynamic_update(parent, child);
        overlap = nmt::overlap_report(parent, child);
      }
      std::printf("copied=%d fresh=%d overlap=%.4f shared=%.2f%%\n",
                  map.n_copied, map.n_fresh, map.overlap_ratio,
                  overlap.shared_pct);
      if (!vt_out.empty()) {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : map.entries) {
          nlohmann::json je = {{"token", e.token}, {"new_index", e.new_index}};
          if (e.copied_from) je["copied_from"] = *e.copied_from;
          entries.push_back(std::move(je));
        }
        nlohmann::json doc = {{"n_copied", map.n_copied},
                              {"n_fresh", map.n_fresh},
                              {"overlap_ratio", map.overlap_ratio},
                              {"entries", std::move(entries)}};
        nmt::write_file(vt_out, doc.dump(2) + "\n");
      }
    } else if (*train_cmd) {
      tr_cfg.seed = global.seed;
      tr_cfg.track_dev_bleu = tr_dev_bleu;
      tr_model.dropout_p = tr_cfg.dropout_p;
      nmt::Checkpoint start;
      if (!tr_from.empty()) {
        start = nmt::ckpt_load(tr_from);
      } else {
        if (tr_vocab.empty()) {
          throw nmt::ConfigInvalid("train needs --vocab (or --from)");
        }
        start = nmt::init_model(tr_model, nmt::vocab_load(tr_vocab),
                                global.seed);
      }
      nmt::ParallelCorpus corpus;
      corpus.src_lines = read_token_lines(tr_src);
      corpus.tgt_lines = read_token_lines(tr_tgt);
      corpus.src_lang = "src";
      corpus.tgt_lang = "tgt";
      auto train_pairs = nmt::encode_pairs(corpus, start.vocab);
      std::vector<nmt::IdPair> dev_pairs;
      if (!tr_dev_src.empty() && !tr_dev_tgt.empty()) {
        nmt::ParallelCorpus dev;
        dev.src_lines = read_token_lines(tr_dev_src);
        dev.tgt_lines = read_token_lines(tr_dev_tgt);
        dev.src_lang = "src";
        dev.tgt_lang = "tgt";
        dev_pairs = nmt::encode_pairs(dev, start.vocab);
      }
      nmt::TrainResult result =
          nmt::train(start, train_pairs, dev_pairs, tr_cfg, global.out_dir);
      if (!result.report.records.empty()) {
        const auto& last = result.report.records.back();
        std::printf("done: %ld steps, dev_loss=%.4f, artifacts in %s\n",
                    last.step, last.dev_loss, global.out_dir.c_str());
      } else {
        std::printf("done: artifacts in %s\n", global.out_dir.c_str());
      }
    } else if (*translate_cmd) {
      nmt::Checkpoint ckpt = nmt::ckpt_load(dc_model);
      TokenLines lines = read_token_lines(dc_in);
      std::unique_ptr<nmt::BpeApplier> applier;
      if (!dc_bpe.empty()) {
        applier = std::make_unique<nmt::BpeApplier>(nmt::bpe_load(dc_bpe));
      }
      std::string flag;
      if (!dc_flag.empty()) flag = nmt::flag_token(dc_flag);
      std::vector<std::vector<int>> src_ids;
      src_ids.reserve(lines.size());
      for (auto line : lines) {
        if (applier) line = applier->apply(line);
        if (!flag.empty()) line.insert(line.begin(), flag);
        auto ids = ckpt.vocab.encode_line(line);
        ids.push_back(nmt::kEosId);
        src_ids.push_back(std::move(ids));
      }
      TokenLines hyps = nmt::decode_corpus(ckpt, src_ids, dc_cfg);
      if (!dc_keep_subwords) {
        for (auto& h : hyps) h = nmt::bpe_undo(h);
      }
      write_token_lines(dc_out, hyps);
    } else if (*score_cmd) {
      TokenLines hyps = read_token_lines(sc_hyp);
      TokenLines refs = read_token_lines(sc_ref);
      nmt::BleuScore score =
          sc_smoothed ? nmt::bleu_smoothed(hyps, refs) : nmt::bleu(hyps, refs);
      std::cout << nmt::bleu_line(score) << "\n";
    } else if (*signif_cmd) {
      nmt::SignificanceResult r = nmt::bootstrap_significance(
          read_token_lines(sg_a), read_token_lines(sg_b),
          read_token_lines(sg_ref), sg_samples, global.seed);
      std::printf("delta_bleu=%+.2f p=%.4f (%d samples) -> %s\n", r.delta_bleu,
                  r.p_value, r.n_samples,
                  r.significant ? (r.delta_bleu > 0 ? "A better (p<0.05)"
                                                    : "A worse (p<0.05)")
                                : "not significant");
    } else if (*run_plan_cmd) {
      nmt::Plan plan = nmt::plan_load(rp_plan);
      auto print_outcome = [](const nmt::StageOutcome& o) {
        std::printf("[%s] %s %s (%s)\n", nmt::to_string(o.mode).c_str(),
                    o.id.c_str(), o.resumed ? "resumed" : "trained",
                    o.dir.c_str());
        for (const auto& e : o.evals) {
          std::printf("  %s: %s\n", e.key.c_str(), e.bleu_line.c_str());
        }
      };
      if (!rp_stage.empty()) {
        print_outcome(
            nmt::run_stage(plan, rp_stage, global.out_dir, global.resume));
      } else {
        for (const auto& o :
             nmt::run_plan(plan, global.out_dir, global.resume)) {
          print_outcome(o);
        }
      }
    } else if (*report_cmd) {
      std::cout << nmt::report(global.out_dir);
      std::cerr << "written to " << global.out_dir << "/report.md\n";
    }
  } catch (const nmt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
