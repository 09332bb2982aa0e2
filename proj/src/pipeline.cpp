#include "nmt/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "nmt/errors.hpp"
#include "nmt/eval.hpp"
#include "nmt/rng.hpp"

namespace fs = std::filesystem;

namespace nmt {

namespace {

using json = nlohmann::json;

std::string hex8(std::uint64_t digest) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x",
                static_cast<unsigned>(digest & 0xffffffffULL));
  return buf;
}

// ---------------------------------------------------------------- plan

json pair_to_json(const PairSpec& p) {
  return {{"src", p.src_lang},         {"tgt", p.tgt_lang},
          {"src_path", p.src_path},    {"tgt_path", p.tgt_path},
          {"dev_src_path", p.dev_src_path},
          {"dev_tgt_path", p.dev_tgt_path},
          {"test_src_path", p.test_src_path},
          {"test_tgt_path", p.test_tgt_path}};
}

json stage_to_json(const StageSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.pairs) pairs.push_back(pair_to_json(p));
  return {{"id", s.id},
          {"mode", to_string(s.mode)},
          {"parent", s.parent},
          {"pairs", pairs},
          {"sample", s.sample},
          {"sample_mode", s.sample_mode},
          {"directions", s.directions},
          {"bpe", {{"merges", s.bpe_merges}}},
          {"max_tokens", s.max_tokens},
          {"model",
           {{"d_model", s.model.d_model},
            {"n_layers", s.model.n_layers},
            {"n_heads", s.model.n_heads},
            {"d_ff", s.model.d_ff},
            {"dropout_p", s.model.dropout_p},
            {"max_len", s.model.max_len},
            {"label_smoothing", s.model.label_smoothing}}},
          {"train",
           {{"steps", s.train.max_steps},
            {"batch_tokens", s.train.batch_tokens},
            {"warmup", s.train.warmup_steps},
            {"lr_constant", s.train.lr_constant},
            {"dropout", s.train.dropout_p},
            {"seed", s.train.seed},
            {"eval_every", s.train.eval_every},
            {"dev_bleu", s.train.track_dev_bleu}}},
          {"decode",
           {{"beam", s.decode.beam_size},
            {"batch_size", s.decode.batch_size},
            {"max_out_len", s.decode.max_out_len},
            {"alpha", s.decode.length_penalty_alpha}}}};
}

json plan_to_json(const Plan& plan) {
  json stages = json::array();
  for (const auto& s : plan.stages) stages.push_back(stage_to_json(s));
  return {{"baseline", plan.baseline}, {"stages", stages}};
}

StageSpec parse_stage(const json& j) {
  StageSpec s;
  try {
    s.id = j.at("id").get<std::string>();
    s.mode = stage_mode_from_string(j.at("mode").get<std::string>());
    s.parent = j.value("parent", std::string());
    for (const json& jp : j.at("pairs")) {
      PairSpec p;
      p.src_lang = jp.at("src").get<std::string>();
      p.tgt_lang = jp.at("tgt").get<std::string>();
      p.src_path = jp.at("src_path").get<std::string>();
      p.tgt_path = jp.at("tgt_path").get<std::string>();
      p.dev_src_path = jp.value("dev_src_path", std::string());
      p.dev_tgt_path = jp.value("dev_tgt_path", std::string());
      p.test_src_path = jp.value("test_src_path", std::string());
      p.test_tgt_path = jp.value("test_tgt_path", std::string());
      s.pairs.push_back(std::move(p));
    }
    s.sample = j.value("sample", 0L);
    s.sample_mode = j.value("sample_mode", std::string("random"));
    s.directions = j.value("directions", std::string());
    if (j.contains("bpe")) {
      s.bpe_merges = j.at("bpe").value("merges", kDefaultBpeMerges);
    }
    s.max_tokens = j.value("max_tokens", kDefaultMaxTokens);
    if (j.contains("model")) {
      const json& m = j.at("model");
      s.model.d_model = m.value("d_model", s.model.d_model);
      s.model.n_layers = m.value("n_layers", s.model.n_layers);
      s.model.n_heads = m.value("n_heads", s.model.n_heads);
      s.model.d_ff = m.value("d_ff", s.model.d_ff);
      s.model.dropout_p = m.value("dropout_p", s.model.dropout_p);
      s.model.max_len = m.value("max_len", s.model.max_len);
      s.model.label_smoothing =
          m.value("label_smoothing", s.model.label_smoothing);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      s.train.max_steps = t.value("steps", s.train.max_steps);
      s.train.batch_tokens = t.value("batch_tokens", s.train.batch_tokens);
      s.train.warmup_steps = t.value("warmup", s.train.warmup_steps);
      s.train.lr_constant = t.value("lr_constant", s.train.lr_constant);
      s.train.dropout_p = t.value("dropout", s.train.dropout_p);
      s.train.seed = t.value("seed", s.train.seed);
      s.train.eval_every = t.value("eval_every", s.train.eval_every);
      s.train.track_dev_bleu = t.value("dev_bleu", s.train.track_dev_bleu);
    }
    if (j.contains("decode")) {
      const json& d = j.at("decode");
      s.decode.beam_size = d.value("beam", s.decode.beam_size);
      s.decode.batch_size = d.value("batch_size", s.decode.batch_size);
      s.decode.max_out_len = d.value("max_out_len", s.decode.max_out_len);
      s.decode.length_penalty_alpha =
          d.value("alpha", s.decode.length_penalty_alpha);
    }
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("stage parse: ") + e.what());
  }

  if (s.id.empty()) throw ConfigInvalid("stage with empty id");
  if (s.pairs.empty()) throw MissingData("stage '" + s.id + "' lists no pairs");
  if (s.sample_mode != "random" && s.sample_mode != "prefix") {
    throw ConfigInvalid("stage '" + s.id + "': unknown sample_mode '" +
                        s.sample_mode + "'");
  }
  if (!s.directions.empty() && s.directions != "both" &&
      s.directions != "forward") {
    throw ConfigInvalid("stage '" + s.id + "': unknown directions '" +
                        s.directions + "'");
  }
  const bool needs_parent = s.mode == StageMode::ProgAdapt ||
                            s.mode == StageMode::ProgGrow ||
                            s.mode == StageMode::StaticFT;
  if (needs_parent && s.parent.empty()) {
    throw ConfigInvalid("stage '" + s.id + "' (" + to_string(s.mode) +
                        ") needs a parent");
  }
  if (!needs_parent && !s.parent.empty()) {
    throw ConfigInvalid("stage '" + s.id + "' (" + to_string(s.mode) +
                        ") must not name a parent");
  }
  validate(s.model);
  return s;
}

// ------------------------------------------------------ stage execution

// One pair's contribution to a stage's data, with enough detail to reproduce
// the exact sample. ProgGrow copies its parent's uses verbatim, so accumulated
// stages resample identically.
struct PairUse {
  PairSpec pair;
  long sample = 0;
  std::string sample_mode;
  std::uint64_t sample_seed = 0;
  int max_tokens = kDefaultMaxTokens;
  bool forward = true;
  bool backward = true;
};

struct DirectionData {
  std::string key;   // "srclang-tgtlang" after any swap
  std::string flag;  // source-side language flag token
  ParallelCorpus train;
  ParallelCorpus dev;
  bool has_dev = false;
  TokenLines test_src;   // flag-prepended, pre-BPE
  TokenLines test_refs;  // raw reference lines
  std::string ref_path;
  bool has_test = false;
};

struct StageContext {
  StageSpec spec;
  std::vector<PairUse> uses;
  std::uint64_t digest = 0;
  std::string dir;
  AccessLog log;
  bool complete = false;

  BpeModel bpe;
  Vocabulary vocab;
  TrainReport report;
  std::vector<DirectionEval> evals;
  long n_train_pairs = 0;
};

std::string read_logged(const std::string& path, AccessLog& log) {
  if (!fs::exists(path)) throw MissingData(path + " does not exist");
  log.note(path);
  return read_file(path);
}

TokenLines read_token_lines(const std::string& path, AccessLog& log) {
  if (!fs::exists(path)) throw MissingData(path + " does not exist");
  log.note(path);
  TokenLines lines;
  for (const auto& raw : read_lines(path)) lines.push_back(split_tokens(raw));
  return lines;
}

ParallelCorpus load_pair(const std::string& src_path,
                         const std::string& tgt_path,
                         const std::string& src_lang,
                         const std::string& tgt_lang, AccessLog& log) {
  if (!fs::exists(src_path)) throw MissingData(src_path + " does not exist");
  if (!fs::exists(tgt_path)) throw MissingData(tgt_path + " does not exist");
  log.note(src_path);
  log.note(tgt_path);
  return load_parallel(src_path, tgt_path, src_lang, tgt_lang);
}

ParallelCorpus swapped(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.src_lines = corpus.tgt_lines;
  out.tgt_lines = corpus.src_lines;
  out.src_lang = corpus.tgt_lang;
  out.tgt_lang = corpus.src_lang;
  return out;
}

// Training data for one direction of one pair use. The un-swapped corpus is
// loaded/filtered/sampled once by the caller so both directions share the
// exact same sentence pairs.
DirectionData make_direction(const ParallelCorpus& base, const PairUse& use,
                             bool swap, AccessLog& log) {
  DirectionData d;
  ParallelCorpus corpus = swap ? swapped(base) : base;
  d.key = corpus.src_lang + "-" + corpus.tgt_lang;
  d.flag = flag_token(corpus.tgt_lang);
  d.train = prepend_flag(corpus);

  const std::string& dev_src = swap ? use.pair.dev_tgt_path : use.pair.dev_src_path;
  const std::string& dev_tgt = swap ? use.pair.dev_src_path : use.pair.dev_tgt_path;
  if (!dev_src.empty() && !dev_tgt.empty()) {
    ParallelCorpus dev = load_pair(dev_src, dev_tgt, d.train.src_lang,
                                   d.train.tgt_lang, log);
    d.dev = prepend_flag(dev);
    d.has_dev = true;
  }

  const std::string& test_src = swap ? use.pair.test_tgt_path : use.pair.test_src_path;
  const std::string& test_ref = swap ? use.pair.test_src_path : use.pair.test_tgt_path;
  if (!test_src.empty() && !test_ref.empty()) {
    d.test_src = read_token_lines(test_src, log);
    for (auto& line : d.test_src) line.insert(line.begin(), d.flag);
    d.test_refs = read_token_lines(test_ref, log);
    d.ref_path = test_ref;
    if (d.test_src.size() != d.test_refs.size()) {
      throw LineCountMismatch(test_src + " vs " + test_ref);
    }
    d.has_test = true;
  }
  return d;
}

std::vector<DirectionData> expand_uses(const std::vector<PairUse>& uses,
                                       AccessLog& log) {
  std::vector<DirectionData> out;
  for (const PairUse& use : uses) {
    ParallelCorpus base = load_pair(use.pair.src_path, use.pair.tgt_path,
                                    use.pair.src_lang, use.pair.tgt_lang, log);
    base = filter_by_length(base, use.max_tokens);
    if (use.sample > 0) {
      base = use.sample_mode == "prefix"
                 ? sample_prefix(base, use.sample)
                 : sample(base, use.sample, use.sample_seed);
    }
    if (use.forward) out.push_back(make_direction(base, use, false, log));
    if (use.backward) out.push_back(make_direction(base, use, true, log));
  }
  return out;
}

std::vector<PairUse> own_uses(const StageSpec& spec) {
  bool forward = true, backward = true;
  if (spec.directions == "forward") {
    backward = false;
  } else if (spec.directions.empty() && spec.mode == StageMode::ProgGrow) {
    backward = false;  // grown pairs default to source->target only
  }
  std::vector<PairUse> uses;
  for (const PairSpec& pair : spec.pairs) {
    PairUse use;
    use.pair = pair;
    use.sample = spec.sample;
    use.sample_mode = spec.sample_mode;
    use.sample_seed = mix64(spec.train.seed,
                            fnv1a64(pair.src_lang + "-" + pair.tgt_lang + ":" +
                                    pair.src_path));
    use.max_tokens = spec.max_tokens;
    use.forward = forward;
    use.backward = backward;
    uses.push_back(std::move(use));
  }
  return uses;
}

TokenLines segment_lines(const TokenLines& lines, BpeApplier& applier) {
  return applier.apply_all(lines);
}

std::vector<IdPair> encode_direction_train(const DirectionData& d,
                                           BpeApplier& applier,
                                           const Vocabulary& vocab) {
  ParallelCorpus seg = d.train;
  seg.src_lines = segment_lines(seg.src_lines, applier);
  seg.tgt_lines = segment_lines(seg.tgt_lines, applier);
  return encode_pairs(seg, vocab);
}

std::vector<IdPair> encode_direction_dev(const DirectionData& d,
                                         BpeApplier& applier,
                                         const Vocabulary& vocab) {
  ParallelCorpus seg = d.dev;
  seg.src_lines = segment_lines(seg.src_lines, applier);
  seg.tgt_lines = segment_lines(seg.tgt_lines, applier);
  return encode_pairs(seg, vocab);
}

json eval_to_json(const DirectionEval& e) {
  return {{"direction", e.key},       {"ref_path", e.ref_path},
          {"hyp_file", e.hyp_file},   {"bleu", e.bleu},
          {"bleu_line", e.bleu_line}, {"n_sentences", e.n_sentences}};
}

DirectionEval eval_from_json(const json& j) {
  DirectionEval e;
  e.key = j.at("direction").get<std::string>();
  e.ref_path = j.at("ref_path").get<std::string>();
  e.hyp_file = j.at("hyp_file").get<std::string>();
  e.bleu = j.at("bleu").get<double>();
  e.bleu_line = j.at("bleu_line").get<std::string>();
  e.n_sentences = j.at("n_sentences").get<long>();
  return e;
}

// ---------------------------------------------------------------- runner

class Runner {
 public:
  Runner(const Plan& plan, std::string out_dir, bool resume)
      : plan_(plan), out_dir_(std::move(out_dir)), resume_(resume) {
    std::set<std::string> ids;
    for (const auto& spec : plan_.stages) {
      if (!ids.insert(spec.id).second) {
        throw ConfigInvalid("duplicate stage id '" + spec.id + "'");
      }
    }
  }

  // Prepares (digest, dir, uses) without training; reads data files only to
  // digest them.
  StageContext& prepare(const StageSpec& spec) {
    auto it = contexts_.find(spec.id);
    if (it != contexts_.end()) return it->second;

    StageContext ctx;
    ctx.spec = spec;

    std::uint64_t parent_digest = 0;
    if (!spec.parent.empty()) {
      const StageContext& parent = completed_parent(spec);
      parent_digest = parent.digest;
      if (spec.mode == StageMode::ProgGrow) ctx.uses = parent.uses;
    }
    for (auto& use : own_uses(spec)) ctx.uses.push_back(std::move(use));

    std::string key = stage_to_json(spec).dump();
    key += "|parent:" + std::to_string(parent_digest);
    for (const PairUse& use : ctx.uses) {
      for (const std::string* path :
           {&use.pair.src_path, &use.pair.tgt_path, &use.pair.dev_src_path,
            &use.pair.dev_tgt_path, &use.pair.test_src_path,
            &use.pair.test_tgt_path}) {
        if (path->empty()) continue;
        key += "|" + *path + ":" +
               std::to_string(fnv1a64(read_logged(*path, ctx.log)));
      }
    }
    ctx.digest = fnv1a64(key);
    ctx.dir = out_dir_ + "/stages/" + spec.id + "-" + hex8(ctx.digest);
    return contexts_.emplace(spec.id, std::move(ctx)).first->second;
  }

  StageOutcome execute(const StageSpec& spec) {
    StageContext& ctx = prepare(spec);
    if (ctx.complete) return outcome(ctx, true);

    if (resume_ && fs::exists(ctx.dir + "/done")) {
      load_completed(ctx);
      return outcome(ctx, true);
    }
    run(ctx);
    return outcome(ctx, false);
  }

  const Plan& plan() const { return plan_; }

  const StageSpec& spec_for(const std::string& stage_id) const {
    for (const auto& spec : plan_.stages) {
      if (spec.id == stage_id) return spec;
    }
    throw ConfigInvalid("plan has no stage '" + stage_id + "'");
  }

  // Loads every completed ancestor of stage_id (throws MissingParent when an
  // ancestor has not been run) without executing anything else.
  void load_ancestors(const std::string& stage_id) {
    const StageSpec& spec = spec_for(stage_id);
    if (spec.parent.empty()) return;
    load_ancestors(spec.parent);
    StageContext& ctx = prepare(spec_for(spec.parent));
    if (ctx.complete) return;
    if (!fs::exists(ctx.dir + "/done")) {
      throw MissingParent("stage '" + spec.parent + "' has not been run (no " +
                          ctx.dir + "/done)");
    }
    load_completed(ctx);
  }

  const std::map<std::string, StageContext>& contexts() const {
    return contexts_;
  }

 private:
  const StageContext& completed_parent(const StageSpec& spec) {
    const StageSpec* parent_spec = nullptr;
    for (const auto& s : plan_.stages) {
      if (s.id == spec.parent) {
        parent_spec = &s;
        break;
      }
      if (s.id == spec.id) break;  // parents must precede children
    }
    if (!parent_spec) {
      throw MissingParent("stage '" + spec.id + "' names unknown parent '" +
                          spec.parent + "'");
    }
    StageContext& parent = prepare(*parent_spec);
    if (!parent.complete) {
      throw MissingParent("parent stage '" + spec.parent +
                          "' has not completed");
    }
    return parent;
  }

  void load_completed(StageContext& ctx) {
    ctx.bpe = bpe_load(ctx.dir + "/bpe.txt");
    ctx.vocab = vocab_load(ctx.dir + "/vocab.txt");
    if (fs::exists(ctx.dir + "/train/train_report.tsv")) {
      ctx.report = report_load(ctx.dir + "/train/train_report.tsv");
    }
    ctx.evals.clear();
    if (fs::exists(ctx.dir + "/eval.json")) {
      const json evals = json::parse(read_file(ctx.dir + "/eval.json"));
      for (const json& e : evals) ctx.evals.push_back(eval_from_json(e));
    }
    ctx.complete = true;
  }

  void run(StageContext& ctx) {
    const StageSpec& spec = ctx.spec;
    fs::create_directories(ctx.dir);

    const bool is_transfer = spec.mode == StageMode::ProgAdapt ||
                             spec.mode == StageMode::ProgGrow ||
                             spec.mode == StageMode::StaticFT;
    const StageContext* parent =
        is_transfer ? &contexts_.at(spec.parent) : nullptr;

    std::vector<DirectionData> directions = expand_uses(ctx.uses, ctx.log);

    // subword model + vocabulary
    if (spec.mode == StageMode::StaticFT) {
      ctx.bpe = parent->bpe;
      ctx.vocab = parent->vocab;
    } else {
      std::vector<const TokenLines*> sides;
      for (const auto& d : directions) {
        sides.push_back(&d.train.src_lines);
        sides.push_back(&d.train.tgt_lines);
      }
      ctx.bpe = bpe_train(sides, spec.bpe_merges);

      BpeApplier applier(ctx.bpe);
      std::vector<TokenLines> segmented;
      segmented.reserve(sides.size());
      for (const TokenLines* side : sides) {
        segmented.push_back(segment_lines(*side, applier));
      }
      std::vector<const TokenLines*> segmented_ptrs;
      for (const auto& s : segmented) segmented_ptrs.push_back(&s);
      std::vector<std::string> flags;
      for (const auto& d : directions) {
        if (std::find(flags.begin(), flags.end(), d.flag) == flags.end()) {
          flags.push_back(d.flag);
        }
      }
      ctx.vocab = build_vocab(segmented_ptrs, flags);
    }
    bpe_save(ctx.bpe, ctx.dir + "/bpe.txt");
    vocab_save(ctx.vocab, ctx.dir + "/vocab.txt");

    // initial checkpoint
    Checkpoint init;
    const std::uint64_t init_seed = mix64(spec.train.seed, fnv1a64("init"));
    if (is_transfer) {
      Checkpoint parent_ckpt = ckpt_load(parent->dir + "/train/best.nmt");
      TransferMap map = spec.mode == StageMode::StaticFT
                            ? static_mode_map(parent_ckpt.vocab)
                            : dynamic_update(parent_ckpt.vocab, ctx.vocab);
      init = apply_transfer(parent_ckpt, map, ctx.vocab, init_seed);
      init.config.dropout_p = spec.model.dropout_p;
      init.config.label_smoothing = spec.model.label_smoothing;

      const OverlapReport overlap = overlap_report(parent_ckpt.vocab, ctx.vocab);
      write_file(ctx.dir + "/transfer.json",
                 json{{"n_copied", map.n_copied},
                      {"n_fresh", map.n_fresh},
                      {"overlap_ratio", map.overlap_ratio},
                      {"shared_pct", overlap.shared_pct},
                      {"n_shared", overlap.n_shared},
                      {"n_parent", overlap.n_parent},
                      {"n_child", overlap.n_child}}
                     .dump(2) +
                     "\n");
    } else {
      init = init_model(spec.model, ctx.vocab, init_seed);
    }
    init.meta.stage_id = spec.id;

    // data encoding
    BpeApplier applier(ctx.bpe);
    std::vector<IdPair> train_pairs, dev_pairs;
    for (const auto& d : directions) {
      auto t = encode_direction_train(d, applier, ctx.vocab);
      train_pairs.insert(train_pairs.end(), t.begin(), t.end());
      if (d.has_dev) {
        auto v = encode_direction_dev(d, applier, ctx.vocab);
        dev_pairs.insert(dev_pairs.end(), v.begin(), v.end());
      }
    }

    ctx.n_train_pairs = static_cast<long>(train_pairs.size());
    TrainResult trained =
        train(init, train_pairs, dev_pairs, spec.train, ctx.dir + "/train");
    ctx.report = trained.report;
    if (spec.train.max_steps <= 0) {
      // still persist a decodable checkpoint for children / evaluation
      fs::create_directories(ctx.dir + "/train");
      ckpt_save(init, ctx.dir + "/train/best.nmt");
      ckpt_save(init, ctx.dir + "/train/final.nmt");
      report_save(ctx.report, ctx.dir + "/train/train_report.tsv");
    }

    // evaluation
    const Checkpoint& best =
        spec.train.max_steps > 0 ? trained.best : init;
    ctx.evals.clear();
    std::set<std::string> seen;
    for (const auto& d : directions) {
      if (!d.has_test || !seen.insert(d.key).second) continue;
      std::vector<std::vector<int>> src_ids;
      src_ids.reserve(d.test_src.size());
      for (const auto& line : d.test_src) {
        auto ids = ctx.vocab.encode_line(applier.apply(line));
        ids.push_back(kEosId);
        src_ids.push_back(std::move(ids));
      }
      TokenLines hyps = decode_corpus(best, src_ids, spec.decode);
      for (auto& h : hyps) h = bpe_undo(h);

      DirectionEval ev;
      ev.key = d.key;
      ev.ref_path = d.ref_path;
      ev.hyp_file = "hyp." + d.key + ".txt";
      ev.n_sentences = static_cast<long>(hyps.size());
      const BleuScore score = bleu(hyps, d.test_refs);
      ev.bleu = score.bleu;
      ev.bleu_line = bleu_line(score);
      std::vector<std::string> hyp_lines;
      hyp_lines.reserve(hyps.size());
      for (const auto& h : hyps) hyp_lines.push_back(join_tokens(h));
      write_lines(ctx.dir + "/" + ev.hyp_file, hyp_lines);
      ctx.evals.push_back(std::move(ev));
    }
    json evals = json::array();
    for (const auto& e : ctx.evals) evals.push_back(eval_to_json(e));
    write_file(ctx.dir + "/eval.json", evals.dump(2) + "\n");

    // bookkeeping
    json stage_meta = {{"spec", stage_to_json(spec)},
                       {"digest", hex8(ctx.digest)},
                       {"mode", to_string(spec.mode)}};
    write_file(ctx.dir + "/stage.json", stage_meta.dump(2) + "\n");
    ctx.log.save(ctx.dir + "/access_log.txt");
    write_file(ctx.dir + "/done", "ok\n");
    ctx.complete = true;
  }

  StageOutcome outcome(const StageContext& ctx, bool resumed) const {
    StageOutcome out;
    out.id = ctx.spec.id;
    out.mode = ctx.spec.mode;
    out.dir = ctx.dir;
    out.digest = ctx.digest;
    out.resumed = resumed;
    out.vocab = ctx.vocab;
    out.bpe = ctx.bpe;
    out.report = ctx.report;
    out.evals = ctx.evals;
    out.n_train_pairs = ctx.n_train_pairs;
    return out;
  }

  Plan plan_;
  std::string out_dir_;
  bool resume_;
  std::map<std::string, StageContext> contexts_;
};

// ------------------------------------------------------- plan artifacts

void write_plan_artifacts(Runner& runner, const std::string& out_dir,
                          const std::vector<StageOutcome>& outcomes) {
  write_file(out_dir + "/plan.json", plan_to_json(runner.plan()).dump(2) + "\n");

  std::string index = "id\tdir\n";
  for (const auto& o : outcomes) {
    index += o.id + "\t" + o.dir + "\n";
  }
  write_file(out_dir + "/stages_index.tsv", index);

  std::string overlaps = "stage\tparent\tshared_pct\tn_shared\tn_parent\tn_child\n";
  for (const auto& o : outcomes) {
    const StageSpec& spec = runner.spec_for(o.id);
    if (spec.parent.empty()) continue;
    const auto& parent_ctx = runner.contexts().at(spec.parent);
    const OverlapReport r = overlap_report(parent_ctx.vocab, o.vocab);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", r.shared_pct);
    overlaps += o.id + "\t" + spec.parent + "\t" + buf + "\t" +
                std::to_string(r.n_shared) + "\t" + std::to_string(r.n_parent) +
                "\t" + std::to_string(r.n_child) + "\n";
  }
  write_file(out_dir + "/overlaps.tsv", overlaps);

  // convergence: stages sharing the same dev data are directly comparable;
  // theta is the worst final dev loss in the group (transfer vs scratch both
  // reach it, the question is in how many steps)
  std::map<std::string, std::vector<const StageOutcome*>> groups;
  for (const auto& o : outcomes) {
    if (o.report.records.empty()) continue;
    std::string dev_key;
    const StageSpec& spec = runner.spec_for(o.id);
    std::set<std::string> dev_paths;
    for (const auto& p : spec.pairs) {
      if (!p.dev_src_path.empty()) dev_paths.insert(p.dev_src_path);
      if (!p.dev_tgt_path.empty()) dev_paths.insert(p.dev_tgt_path);
    }
    for (const auto& p : dev_paths) dev_key += p + ";";
    groups[dev_key].push_back(&o);
  }
  std::string conv =
      "group\tstage\tmode\ttheta\tsteps_to_theta\tfinal_dev_loss\ttotal_steps\n";
  for (const auto& [key, members] : groups) {
    double theta = 0.0;
    for (const auto* o : members) {
      theta = std::max(theta, o->report.records.back().dev_loss);
    }
    const std::string group_id = hex8(fnv1a64(key));
    for (const auto* o : members) {
      const auto steps = o->report.steps_to_threshold(theta);
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%.4f\t%s\t%.4f\t%ld", theta,
                    steps ? std::to_string(*steps).c_str() : "-",
                    o->report.records.back().dev_loss,
                    o->report.records.back().step);
      conv += group_id + "\t" + o->id + "\t" +
              to_string(runner.spec_for(o->id).mode) + "\t" + buf + "\n";
    }
  }
  write_file(out_dir + "/convergence.tsv", conv);
}

}  // namespace

StageMode stage_mode_from_string(const std::string& name) {
  if (name == "init") return StageMode::Init;
  if (name == "binmt") return StageMode::BiNMT;
  if (name == "mnmt") return StageMode::MNMT;
  if (name == "prog_adapt") return StageMode::ProgAdapt;
  if (name == "prog_grow") return StageMode::ProgGrow;
  if (name == "static_ft") return StageMode::StaticFT;
  throw ConfigInvalid("unknown stage mode '" + name + "'");
}

std::string to_string(StageMode mode) {
  switch (mode) {
    case StageMode::Init: return "init";
    case StageMode::BiNMT: return "binmt";
    case StageMode::MNMT: return "mnmt";
    case StageMode::ProgAdapt: return "prog_adapt";
    case StageMode::ProgGrow: return "prog_grow";
    case StageMode::StaticFT: return "static_ft";
  }
  return "?";
}

void AccessLog::save(const std::string& file) const {
  std::string out;
  for (const auto& p : paths_) out += p + "\n";
  write_file(file, out);
}

Plan plan_load(const std::string& path) {
  if (!fs::exists(path)) throw IoError("plan file " + path + " does not exist");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigInvalid(path + ": " + e.what());
  }
  Plan plan;
  plan.baseline = j.value("baseline", std::string());
  if (!j.contains("stages") || !j.at("stages").is_array()) {
    throw ConfigInvalid(path + ": no stages list");
  }
  for (const json& js : j.at("stages")) plan.stages.push_back(parse_stage(js));
  if (plan.stages.empty()) throw ConfigInvalid(path + ": empty stages list");
  return plan;
}

StageOutcome run_stage(const Plan& plan, const std::string& stage_id,
                       const std::string& out_dir, bool resume) {
  Runner runner(plan, out_dir, resume);
  runner.load_ancestors(stage_id);
  return runner.execute(runner.spec_for(stage_id));
}

std::vector<StageOutcome> run_plan(const Plan& plan, const std::string& out_dir,
                                   bool resume) {
  fs::create_directories(out_dir);
  Runner runner(plan, out_dir, resume);
  std::vector<StageOutcome> outcomes;
  for (const auto& spec : plan.stages) {
    outcomes.push_back(runner.execute(spec));
  }
  write_plan_artifacts(runner, out_dir, outcomes);
  return outcomes;
}

std::string report(const std::string& plan_dir) {
  if (!fs::exists(plan_dir + "/stages_index.tsv")) {
    throw EmptyExperiment(plan_dir + ": no completed stages (missing index)");
  }
  Plan plan = plan_load(plan_dir + "/plan.json");

  std::vector<std::pair<std::string, std::string>> index;  // id, dir
  for (const auto& line : read_lines(plan_dir + "/stages_index.tsv")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) == "id") continue;
    index.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (index.empty()) {
    throw EmptyExperiment(plan_dir + ": stage index is empty");
  }

  // direction -> ordered (stage id, eval)
  std::map<std::string, std::vector<std::pair<std::string, DirectionEval>>> table;
  std::vector<std::string> direction_order;
  for (const auto& [id, dir] : index) {
    if (!fs::exists(dir + "/eval.json")) continue;
    const json evals = json::parse(read_file(dir + "/eval.json"));
    for (const json& je : evals) {
      DirectionEval e = eval_from_json(je);
      if (table.find(e.key) == table.end()) direction_order.push_back(e.key);
      table[e.key].emplace_back(id, std::move(e));
    }
  }

  auto hyp_lines = [&index](const std::string& stage_id,
                            const std::string& hyp_file) {
    for (const auto& [id, dir] : index) {
      if (id == stage_id) {
        TokenLines lines;
        for (const auto& raw : read_lines(dir + "/" + hyp_file)) {
          lines.push_back(split_tokens(raw));
        }
        return lines;
      }
    }
    throw EmptyExperiment("no directory for stage '" + stage_id + "'");
  };

  std::string doc = "# Experiment report\n\n## BLEU per direction\n\n";
  doc += "Arrows mark p < 0.05 (paired bootstrap, 1000 samples) against the "
         "baseline stage.\n\n";
  for (const auto& key : direction_order) {
    const auto& rows = table.at(key);
    std::string baseline_id = plan.baseline;
    const DirectionEval* baseline_eval = nullptr;
    for (const auto& [id, e] : rows) {
      if (id == baseline_id) baseline_eval = &e;
    }
    if (!baseline_eval) {  // fall back to the first stage with this direction
      baseline_id = rows.front().first;
      baseline_eval = &rows.front().second;
    }

    TokenLines base_hyps = hyp_lines(baseline_id, baseline_eval->hyp_file);
    TokenLines refs;
    for (const auto& raw : read_lines(baseline_eval->ref_path)) {
      refs.push_back(split_tokens(raw));
    }

    doc += "### " + key + " (baseline: " + baseline_id + ")\n\n";
    doc += "| stage | BLEU | delta | signif |\n|---|---|---|---|\n";
    for (const auto& [id, e] : rows) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f", e.bleu);
      std::string row = "| " + id + " | " + buf + " | ";
      if (id == baseline_id) {
        row += "- | - |";
      } else {
        std::snprintf(buf, sizeof(buf), "%+.2f", e.bleu - baseline_eval->bleu);
        row += std::string(buf) + " | ";
        const auto r = bootstrap_significance(hyp_lines(id, e.hyp_file),
                                              base_hyps, refs, 1000,
                                              fnv1a64(key));
        row += r.significant ? (r.delta_bleu > 0 ? "up" : "down") : "ns";
        row += " |";
      }
      doc += row + "\n";
    }
    doc += "\n";
  }

  for (const char* file : {"overlaps.tsv", "convergence.tsv"}) {
    if (fs::exists(plan_dir + "/" + std::string(file))) {
      doc += "## " + std::string(file) + "\n\n```\n" +
             read_file(plan_dir + "/" + std::string(file)) + "```\n\n";
    }
  }
  write_file(plan_dir + "/report.md", doc);
  return doc;
}

}  // namespace nmt
