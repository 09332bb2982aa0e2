#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nmt/bpe.hpp"
#include "nmt/corpus.hpp"
#include "nmt/decoding.hpp"
#include "nmt/model.hpp"
#include "nmt/training.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

enum class StageMode { Init, BiNMT, MNMT, ProgAdapt, ProgGrow, StaticFT };

StageMode stage_mode_from_string(const std::string& name);
std::string to_string(StageMode mode);

struct PairSpec {
  std::string src_lang, tgt_lang;   // 3-letter codes
  std::string src_path, tgt_path;   // training data
  std::string dev_src_path, dev_tgt_path;
  std::string test_src_path, test_tgt_path;
};

struct StageSpec {
  std::string id;
  StageMode mode = StageMode::Init;
  std::string parent;               // required for ProgAdapt/ProgGrow/StaticFT
  std::vector<PairSpec> pairs;
  long sample = 0;                  // training pairs per pair spec; 0 = all
  std::string sample_mode = "random";  // or "prefix"
  std::string directions;           // "both" | "forward"; "" = mode default
  int bpe_merges = kDefaultBpeMerges;
  int max_tokens = kDefaultMaxTokens;  // training length filter
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
};

struct Plan {
  std::vector<StageSpec> stages;
  std::string baseline;  // stage id the report compares against; "" = auto
};

Plan plan_load(const std::string& path);  // throws ConfigInvalid, IoError

// Every file read during one stage's execution, for auditing what data a
// stage actually touched (ProgAdapt must never read parent training data).
class AccessLog {
 public:
  void note(const std::string& path) { paths_.insert(path); }
  const std::set<std::string>& paths() const { return paths_; }
  void save(const std::string& file) const;

 private:
  std::set<std::string> paths_;
};

// One direction a stage trains on and (when test data exists) evaluates.
struct DirectionEval {
  std::string key;        // e.g. "ita-eng"
  std::string ref_path;   // raw reference lines for BLEU
  std::string hyp_file;   // file name inside the stage dir
  double bleu = 0.0;
  std::string bleu_line;
  long n_sentences = 0;
};

struct StageOutcome {
  std::string id;
  StageMode mode;
  std::string dir;  // stage directory with all artifacts
  std::uint64_t digest = 0;
  bool resumed = false;  // completed earlier; nothing re-run
  Vocabulary vocab;
  BpeModel bpe;
  TrainReport report;
  std::vector<DirectionEval> evals;
  long n_train_pairs = 0;  // encoded training examples (0 when resumed)
};

// Runs one stage; parents must already be materialized under out_dir (throws
// MissingParent otherwise). Artifacts land in <out_dir>/stages/<id>-<hex8>.
StageOutcome run_stage(const Plan& plan, const std::string& stage_id,
                       const std::string& out_dir, bool resume);

// Runs all stages in order, then writes plan.json, overlaps.tsv and
// convergence.tsv under out_dir. Completed stages are skipped when resume is
// set; a changed spec or changed data changes the digest and re-runs.
std::vector<StageOutcome> run_plan(const Plan& plan, const std::string& out_dir,
                                   bool resume);

// Aggregates eval tables, significance marks against the baseline stage,
// vocabulary overlaps and convergence steps into <plan_dir>/report.md.
// Returns the document; throws EmptyExperiment when no stage has finished.
std::string report(const std::string& plan_dir);

}  // namespace nmt
