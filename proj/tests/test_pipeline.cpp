#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "nmt/errors.hpp"
#include "nmt/pipeline.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

using namespace nmt;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

struct DataFiles {
  std::string train_src, train_tgt;
  std::string dev_src, dev_tgt;
  std::string test_src, test_tgt;
};

DataFiles write_language(const std::string& dir, const std::string& name,
                         const std::vector<std::string>& words, int n_train,
                         std::uint64_t seed) {
  DataFiles f;
  f.train_src = dir + "/" + name + ".train.src";
  f.train_tgt = dir + "/" + name + ".train.tgt";
  f.dev_src = dir + "/" + name + ".dev.src";
  f.dev_tgt = dir + "/" + name + ".dev.tgt";
  f.test_src = dir + "/" + name + ".test.src";
  f.test_tgt = dir + "/" + name + ".test.tgt";
  synth::write_dataset(synth::make_dataset(words, n_train, seed), f.train_src,
                       f.train_tgt);
  synth::write_dataset(synth::make_dataset(words, 16, seed + 1), f.dev_src,
                       f.dev_tgt);
  synth::write_dataset(synth::make_dataset(words, 8, seed + 2), f.test_src,
                       f.test_tgt);
  return f;
}

PairSpec make_pair(const DataFiles& f, const std::string& src_lang) {
  PairSpec p;
  p.src_lang = src_lang;
  p.tgt_lang = "eng";
  p.src_path = f.train_src;
  p.tgt_path = f.train_tgt;
  p.dev_src_path = f.dev_src;
  p.dev_tgt_path = f.dev_tgt;
  p.test_src_path = f.test_src;
  p.test_tgt_path = f.test_tgt;
  return p;
}

StageSpec tiny_stage(const std::string& id, StageMode mode,
                     const PairSpec& pair, long steps) {
  StageSpec s;
  s.id = id;
  s.mode = mode;
  s.pairs = {pair};
  s.bpe_merges = 40;
  s.model.d_model = 16;
  s.model.n_layers = 1;
  s.model.n_heads = 2;
  s.model.d_ff = 32;
  s.model.max_len = 32;
  s.model.dropout_p = 0.0f;
  s.train.max_steps = steps;
  s.train.batch_tokens = 256;
  s.train.warmup_steps = 4;
  s.train.dropout_p = 0.0f;
  s.train.seed = 7;
  s.train.eval_every = std::max<long>(1, steps);
  s.decode.beam_size = 2;
  s.decode.batch_size = 4;
  s.decode.max_out_len = 10;
  return s;
}

// Both languages in one scratch area; A has 120 training pairs, B has 80.
struct Fixture {
  testutil::TempDir tmp;
  DataFiles a, b;
  explicit Fixture(const std::string& tag)
      : tmp("pipe_" + tag),
        a(write_language(tmp.str(), "a", synth::words_a(), 120, 11)),
        b(write_language(tmp.str(), "b", synth::words_b(), 80, 23)) {}
};

std::string basename_of(const std::string& dir) {
  return fs::path(dir).filename().string();
}

std::set<std::string> eval_keys(const StageOutcome& o) {
  std::set<std::string> keys;
  for (const auto& e : o.evals) keys.insert(e.key);
  return keys;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("mode names round trip") {
  for (StageMode m : {StageMode::Init, StageMode::BiNMT, StageMode::MNMT,
                      StageMode::ProgAdapt, StageMode::ProgGrow,
                      StageMode::StaticFT}) {
    CHECK(stage_mode_from_string(to_string(m)) == m);
  }
  CHECK(stage_mode_from_string("prog_adapt") == StageMode::ProgAdapt);
  CHECK_THROWS_AS(stage_mode_from_string("frobnicate"), ConfigInvalid);
}

TEST_CASE("plan files parse with defaults and overrides") {
  testutil::TempDir tmp("plan_parse");
  const std::string plan_path = tmp.file("plan.json");
  spill(plan_path, R"({
    "baseline": "base",
    "stages": [
      {
        "id": "s0",
        "mode": "init",
        "pairs": [{"src": "ita", "tgt": "eng",
                   "src_path": "a.src", "tgt_path": "a.tgt",
                   "dev_src_path": "a.dev.src", "dev_tgt_path": "a.dev.tgt"}],
        "bpe": {"merges": 99},
        "model": {"d_model": 32, "n_heads": 4},
        "train": {"steps": 12, "seed": 3},
        "decode": {"beam": 5}
      }
    ]
  })");
  Plan plan = plan_load(plan_path);
  CHECK(plan.baseline == "base");
  REQUIRE(plan.stages.size() == 1);
  const StageSpec& s = plan.stages[0];
  CHECK(s.id == "s0");
  CHECK(s.mode == StageMode::Init);
  CHECK(s.parent.empty());
  REQUIRE(s.pairs.size() == 1);
  CHECK(s.pairs[0].src_lang == "ita");
  CHECK(s.pairs[0].tgt_lang == "eng");
  CHECK(s.pairs[0].test_src_path.empty());  // optional split left unset
  CHECK(s.bpe_merges == 99);
  CHECK(s.model.d_model == 32);
  CHECK(s.model.n_heads == 4);
  CHECK(s.model.n_layers == ModelConfig().n_layers);  // untouched default
  CHECK(s.train.max_steps == 12);
  CHECK(s.train.seed == 3);
  CHECK(s.decode.beam_size == 5);
  CHECK(s.sample == 0);
  CHECK(s.sample_mode == "random");
  CHECK(s.directions.empty());
}

TEST_CASE("malformed plans are rejected") {
  testutil::TempDir tmp("plan_bad");
  auto plan_with = [&](const std::string& body) {
    const std::string path = tmp.file("p.json");
    spill(path, body);
    return path;
  };
  const std::string pair = R"([{"src": "ita", "tgt": "eng",
      "src_path": "a.src", "tgt_path": "a.tgt"}])";

  CHECK_THROWS_AS(plan_load(tmp.file("missing.json")), IoError);
  CHECK_THROWS_AS(plan_load(plan_with("nonsense[")), ConfigInvalid);
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "x", "mode": "warp", "pairs": )" + pair + "}]}")),
                  ConfigInvalid);
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "", "mode": "init", "pairs": )" + pair + "}]}")),
                  ConfigInvalid);
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "x", "mode": "init", "pairs": []}]})")),
                  MissingData);
  // adaptation without a parent, and an initial stage with one
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "x", "mode": "prog_adapt", "pairs": )" + pair + "}]}")),
                  ConfigInvalid);
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "x", "mode": "init", "parent": "p", "pairs": )" + pair + "}]}")),
                  ConfigInvalid);
  CHECK_THROWS_AS(plan_load(plan_with(R"({"stages": [
      {"id": "x", "mode": "init", "sample_mode": "stratified",
       "pairs": )" + pair + "}]}")),
                  ConfigInvalid);
}

TEST_CASE("a single stage materializes every artifact") {
  Fixture fx("single");
  Plan plan;
  plan.stages = {tiny_stage("s0", StageMode::Init, make_pair(fx.a, "aaa"), 2)};
  const std::string out = fx.tmp.str() + "/out";

  auto outcomes = run_plan(plan, out, false);
  REQUIRE(outcomes.size() == 1);
  const StageOutcome& o = outcomes[0];
  CHECK(o.id == "s0");
  CHECK(o.mode == StageMode::Init);
  CHECK(!o.resumed);
  CHECK(o.digest != 0);

  const std::string base = basename_of(o.dir);
  CHECK(base.size() == std::string("s0-").size() + 8);
  CHECK(base.rfind("s0-", 0) == 0);

  for (const char* rel :
       {"bpe.txt", "vocab.txt", "train/best.nmt", "train/final.nmt",
        "train/train_report.tsv", "eval.json", "stage.json", "access_log.txt",
        "done"}) {
    CAPTURE(rel);
    CHECK(fs::exists(o.dir + "/" + rel));
  }
  for (const char* rel : {"plan.json", "stages_index.tsv", "overlaps.tsv",
                          "convergence.tsv"}) {
    CAPTURE(rel);
    CHECK(fs::exists(out + "/" + std::string(rel)));
  }

  // language flags sit right after the reserved block, forward flag first
  CHECK(o.vocab.token(4) == "<2ENG>");
  CHECK(o.vocab.token(5) == "<2AAA>");

  // both directions trained and evaluated
  CHECK(o.n_train_pairs == 240);  // 120 pairs, two directions
  CHECK(eval_keys(o) == std::set<std::string>{"aaa-eng", "eng-aaa"});
  for (const auto& e : o.evals) {
    CHECK(e.n_sentences == 8);
    CHECK(fs::exists(o.dir + "/" + e.hyp_file));
    CHECK(e.bleu_line.rfind("BLEU = ", 0) == 0);
  }
  CHECK(!o.report.records.empty());

  // the single stage is its own report baseline
  const std::string doc = report(out);
  CHECK(doc.find("### aaa-eng (baseline: s0)") != std::string::npos);
  CHECK(doc.find("| s0 | ") != std::string::npos);
  CHECK(fs::exists(out + "/report.md"));
}

TEST_CASE("stage directories are content addressed") {
  Fixture fx("digest");
  Plan plan;
  plan.stages = {tiny_stage("s0", StageMode::Init, make_pair(fx.a, "aaa"), 0)};

  auto first = run_plan(plan, fx.tmp.str() + "/out1", false);
  auto second = run_plan(plan, fx.tmp.str() + "/out2", false);
  CHECK(first[0].digest == second[0].digest);
  CHECK(basename_of(first[0].dir) == basename_of(second[0].dir));

  // a different training seed must land in a different directory
  Plan reseeded = plan;
  reseeded.stages[0].train.seed = 8;
  auto third = run_plan(reseeded, fx.tmp.str() + "/out3", false);
  CHECK(third[0].digest != first[0].digest);

  // so must changed data, even with an identical spec
  spill(fx.a.train_src, slurp(fx.a.train_src) + "sun tin\n");
  spill(fx.a.train_tgt, slurp(fx.a.train_tgt) + "0 1\n");
  auto fourth = run_plan(plan, fx.tmp.str() + "/out4", false);
  CHECK(fourth[0].digest != first[0].digest);
}

TEST_CASE("resume skips completed stages and reruns changed ones") {
  Fixture fx("resume");
  Plan plan;
  plan.stages = {tiny_stage("s0", StageMode::Init, make_pair(fx.a, "aaa"), 2)};
  const std::string out = fx.tmp.str() + "/out";

  auto first = run_plan(plan, out, true);
  CHECK(!first[0].resumed);
  const std::string best_before = slurp(first[0].dir + "/train/best.nmt");

  auto again = run_plan(plan, out, true);
  CHECK(again[0].resumed);
  CHECK(again[0].dir == first[0].dir);
  CHECK(again[0].n_train_pairs == 0);  // nothing re-encoded
  CHECK(slurp(again[0].dir + "/train/best.nmt") == best_before);
  // resumed outcomes still carry the stage's artifacts
  CHECK(again[0].vocab == first[0].vocab);
  CHECK(eval_keys(again[0]) == eval_keys(first[0]));

  // a changed spec gets a fresh directory; the old one stays intact
  Plan changed = plan;
  changed.stages[0].train.seed = 99;
  auto rerun = run_plan(changed, out, true);
  CHECK(!rerun[0].resumed);
  CHECK(rerun[0].dir != first[0].dir);
  CHECK(fs::exists(first[0].dir + "/done"));
}

TEST_CASE("adaptation stages read only their own pair") {
  Fixture fx("adapt");
  Plan plan;
  plan.stages = {tiny_stage("p0", StageMode::Init, make_pair(fx.a, "aaa"), 0)};
  StageSpec child =
      tiny_stage("c1", StageMode::ProgAdapt, make_pair(fx.b, "bbb"), 0);
  child.parent = "p0";
  plan.stages.push_back(child);
  const std::string out = fx.tmp.str() + "/out";

  auto outcomes = run_plan(plan, out, false);
  REQUIRE(outcomes.size() == 2);
  const StageOutcome& c1 = outcomes[1];

  std::set<std::string> logged;
  {
    std::ifstream in(c1.dir + "/access_log.txt");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) logged.insert(line);
    }
  }
  const std::set<std::string> own = {fx.b.train_src, fx.b.train_tgt,
                                     fx.b.dev_src,   fx.b.dev_tgt,
                                     fx.b.test_src,  fx.b.test_tgt};
  CHECK(logged == own);  // in particular: no parent training data

  // the embedding transfer is recorded, with both copied and fresh rows
  const json t = json::parse(slurp(c1.dir + "/transfer.json"));
  CHECK(t.at("n_copied").get<int>() > 0);
  CHECK(t.at("n_fresh").get<int>() > 0);
  CHECK(t.at("n_copied").get<int>() + t.at("n_fresh").get<int>() ==
        c1.vocab.size());
  CHECK(t.at("n_child").get<int>() == c1.vocab.size());

  // overlaps.tsv lists the child against its parent
  const std::string overlaps = slurp(out + "/overlaps.tsv");
  CHECK(overlaps.find("c1\tp0\t") != std::string::npos);
}

TEST_CASE("grown stages accumulate the parent corpus") {
  Fixture fx("grow");
  Plan plan;
  plan.stages = {tiny_stage("p0", StageMode::Init, make_pair(fx.a, "aaa"), 0)};
  StageSpec grow =
      tiny_stage("g1", StageMode::ProgGrow, make_pair(fx.b, "bbb"), 0);
  grow.parent = "p0";
  plan.stages.push_back(grow);

  auto outcomes = run_plan(plan, fx.tmp.str() + "/out", false);
  const StageOutcome& g1 = outcomes[1];

  // parent pair in both directions plus the new pair forward-only:
  // 2 * 120 + 80 training examples, none length-filtered by construction
  CHECK(g1.n_train_pairs == 2 * 120 + 80);
  CHECK(eval_keys(g1) ==
        std::set<std::string>{"aaa-eng", "bbb-eng", "eng-aaa"});

  // the accumulated vocabulary keeps most of the parent inventory
  const json t = json::parse(slurp(g1.dir + "/transfer.json"));
  CHECK(t.at("shared_pct").get<double>() > 50.0);
  // flags name target languages: nothing translates into bbb (forward-only)
  CHECK(g1.vocab.has("<2AAA>"));
  CHECK(g1.vocab.has("<2ENG>"));
  CHECK(!g1.vocab.has("<2BBB>"));
}

TEST_CASE("static fine tuning reuses the parent subword inventory") {
  Fixture fx("static");
  Plan plan;
  plan.stages = {tiny_stage("p0", StageMode::Init, make_pair(fx.a, "aaa"), 0)};
  StageSpec ft =
      tiny_stage("f1", StageMode::StaticFT, make_pair(fx.b, "bbb"), 0);
  ft.parent = "p0";
  plan.stages.push_back(ft);

  auto outcomes = run_plan(plan, fx.tmp.str() + "/out", false);
  const StageOutcome& p0 = outcomes[0];
  const StageOutcome& f1 = outcomes[1];

  CHECK(f1.vocab == p0.vocab);
  CHECK(slurp(f1.dir + "/vocab.txt") == slurp(p0.dir + "/vocab.txt"));
  CHECK(slurp(f1.dir + "/bpe.txt") == slurp(p0.dir + "/bpe.txt"));

  const json t = json::parse(slurp(f1.dir + "/transfer.json"));
  CHECK(t.at("n_fresh").get<int>() == 0);
  CHECK(t.at("overlap_ratio").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("stages must run after their parents") {
  Fixture fx("order");
  StageSpec child =
      tiny_stage("c1", StageMode::ProgAdapt, make_pair(fx.b, "bbb"), 0);
  child.parent = "p0";
  Plan out_of_order;
  out_of_order.stages = {child, tiny_stage("p0", StageMode::Init,
                                           make_pair(fx.a, "aaa"), 0)};
  CHECK_THROWS_AS(run_plan(out_of_order, fx.tmp.str() + "/out", false),
                  MissingParent);

  // run_stage on the child alone fails the same way until the parent exists
  Plan ordered;
  ordered.stages = {out_of_order.stages[1], out_of_order.stages[0]};
  CHECK_THROWS_AS(
      run_stage(ordered, "c1", fx.tmp.str() + "/out2", false), MissingParent);
  CHECK_THROWS_AS(
      run_stage(ordered, "nope", fx.tmp.str() + "/out2", false), ConfigInvalid);
  run_stage(ordered, "p0", fx.tmp.str() + "/out2", false);
  StageOutcome c1 = run_stage(ordered, "c1", fx.tmp.str() + "/out2", false);
  CHECK(c1.id == "c1");
  CHECK(fs::exists(c1.dir + "/done"));
}

TEST_CASE("reports mark identical systems as not significant") {
  Fixture fx("ties");
  Plan plan;
  plan.baseline = "p0";
  plan.stages = {tiny_stage("p0", StageMode::Init, make_pair(fx.a, "aaa"), 0),
                 tiny_stage("q0", StageMode::Init, make_pair(fx.a, "aaa"), 0)};
  const std::string out = fx.tmp.str() + "/out";
  run_plan(plan, out, false);

  const std::string doc = report(out);
  CHECK(doc.find("(baseline: p0)") != std::string::npos);
  CHECK(doc.find(" ns |") != std::string::npos);    // tie rows: no arrow
  CHECK(doc.find("+0.00") != std::string::npos);    // identical BLEU
  CHECK(doc.find(" up |") == std::string::npos);
  CHECK(doc.find(" down |") == std::string::npos);
  CHECK(slurp(out + "/report.md") == doc);
}

TEST_CASE("reporting an empty experiment fails loudly") {
  testutil::TempDir tmp("empty_report");
  CHECK_THROWS_AS(report(tmp.str()), EmptyExperiment);
  // an index with no completed stage rows is just as empty
  spill(tmp.file("stages_index.tsv"), "id\tdir\n");
  spill(tmp.file("plan.json"), R"({"baseline": "", "stages": [
    {"id": "s0", "mode": "init",
     "pairs": [{"src": "aaa", "tgt": "eng",
                "src_path": "a.src", "tgt_path": "a.tgt"}]}]})");
  CHECK_THROWS_AS(report(tmp.str()), EmptyExperiment);
}

}  // TEST_SUITE
