#include <cmath>
#include <cstring>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "nmt/errors.hpp"
#include "nmt/model.hpp"
#include "nmt/rng.hpp"
#include "support/tmpdir.hpp"

using namespace nmt;

namespace {

Vocabulary toy_vocab(int extra = 8) {
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<s>", "</s>",
                                     "<2ENG>"};
  for (int i = 0; i < extra; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(tokens);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.dropout_p = 0.0f;
  c.max_len = 32;
  return c;
}

bool params_equal(const std::map<std::string, Tensor>& a,
                  const std::map<std::string, Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end()) return false;
    if (t.shape() != it->second.shape()) return false;
    if (std::memcmp(t.value().data(), it->second.value().data(),
                    t.value().size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(validate(c));
  c.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(validate(c), ConfigInvalid);
  c = tiny_config();
  c.n_layers = 0;
  CHECK_THROWS_AS(validate(c), ConfigInvalid);
}

TEST_CASE("initialization is deterministic per seed") {
  Vocabulary v = toy_vocab();
  Checkpoint a = init_model(tiny_config(), v, 7);
  Checkpoint b = init_model(tiny_config(), v, 7);
  Checkpoint c = init_model(tiny_config(), v, 8);
  CHECK(params_equal(a.params, b.params));
  CHECK(!params_equal(a.params, c.params));
}

TEST_CASE("pad embedding row is zero") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 3);
  const Tensor& emb = ckpt.params.at("embedding");
  for (int col = 0; col < ckpt.config.d_model; ++col) {
    CHECK(emb.value()[static_cast<std::size_t>(kPadId * ckpt.config.d_model +
                                               col)] == 0.0f);
  }
}

TEST_CASE("matrix weights stay inside the uniform init bound") {
  ModelConfig cfg = tiny_config();
  Checkpoint ckpt = init_model(cfg, toy_vocab(), 5);
  for (const auto& [name, t] : ckpt.params) {
    if (t.rank() != 2) continue;
    // independent bound computation from the tensor's own shape
    const double bound =
        std::sqrt(6.0 / (static_cast<double>(t.dim(0)) + t.dim(1)));
    for (float val : t.value()) {
      CHECK(std::abs(val) <= bound + 1e-7);
    }
  }
}

TEST_CASE("norm gains start at one and biases at zero") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 5);
  for (const auto& [name, t] : ckpt.params) {
    if (name.find("norm") == std::string::npos) continue;
    const bool is_gain = name.size() >= 4 &&
                         name.compare(name.size() - 4, 4, "gain") == 0;
    for (float val : t.value()) {
      CHECK(val == (is_gain ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("positional encoding matches the closed form") {
  const int d = 16, n = 20;
  Tensor pe = positional_encoding(n, d);
  REQUIRE(pe.shape() == std::vector<int>{n, d});
  // position zero: even dims 0, odd dims 1
  for (int i = 0; i < d; ++i) {
    CHECK(pe.value()[static_cast<std::size_t>(i)] ==
          doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
  }
  // independent recomputation of the sinusoid table
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / d);
      const double expect = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
      CHECK(pe.value()[static_cast<std::size_t>(pos * d + i)] ==
            doctest::Approx(expect).epsilon(1e-5));
    }
  }
}

TEST_CASE("forward emits one logit row per target position") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 1);
  Tape tape(false);
  Tensor logits = forward(ckpt, tape, {{4, 5, 3}, {6, 3}}, {{7, 8, 3}, {9, 3}},
                          false, 0);
  CHECK(logits.shape() == std::vector<int>{2, 3, toy_vocab().size()});
  for (float v : logits.value()) CHECK(std::isfinite(v));
}

TEST_CASE("batch order does not change per-sentence logits") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 2);
  Tape tape(false);
  const std::vector<int> s1 = {4, 5, 6, 3}, s2 = {7, 3};
  const std::vector<int> t1 = {8, 9, 3}, t2 = {10, 3};
  Tensor ab = forward(ckpt, tape, {s1, s2}, {t1, t2}, false, 0);
  Tensor ba = forward(ckpt, tape, {s2, s1}, {t2, t1}, false, 0);
  const int v = toy_vocab().size();
  const int t_ab = ab.dim(1), t_ba = ba.dim(1);
  // sentence 1 sits at row 0 of `ab` and row 1 of `ba`; blocked matrix
  // kernels may round tail rows differently, so allow last-bit noise
  for (int pos = 0; pos < static_cast<int>(t1.size()); ++pos) {
    for (int k = 0; k < v; ++k) {
      const float x =
          ab.value()[static_cast<std::size_t>((0 * t_ab + pos) * v + k)];
      const float y =
          ba.value()[static_cast<std::size_t>((1 * t_ba + pos) * v + k)];
      CHECK(x == doctest::Approx(y).epsilon(1e-5));
    }
  }
}

TEST_CASE("future target tokens cannot influence earlier logits") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 3);
  Tape tape(false);
  const std::vector<int> src = {4, 5, 3};
  Tensor a = forward(ckpt, tape, {src}, {{7, 8, 9, 3}}, false, 0);
  Tensor b = forward(ckpt, tape, {src}, {{7, 8, 12, 3}}, false, 0);
  const int v = toy_vocab().size();
  // positions 0..2 see decoder inputs <s>,7,8 in both runs
  for (int pos = 0; pos < 3; ++pos) {
    for (int k = 0; k < v; ++k) {
      CHECK(a.value()[static_cast<std::size_t>(pos * v + k)] ==
            b.value()[static_cast<std::size_t>(pos * v + k)]);
    }
  }
}

TEST_CASE("ids beyond the vocabulary are rejected") {
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 1);
  Tape tape(false);
  CHECK_THROWS_AS(forward(ckpt, tape, {{99, 3}}, {{4, 3}}, false, 0),
                  IndexOutOfVocab);
}

TEST_CASE("sources longer than the positional horizon are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.max_len = 4;
  Checkpoint ckpt = init_model(cfg, toy_vocab(), 1);
  Tape tape(false);
  CHECK_THROWS_AS(
      forward(ckpt, tape, {{4, 5, 6, 7, 8, 3}}, {{4, 3}}, false, 0),
      ConfigInvalid);
}

TEST_CASE("identity transfer reproduces the parent parameters") {
  Vocabulary v = toy_vocab();
  Checkpoint parent = init_model(tiny_config(), v, 4);
  parent.meta.stage_id = "p0";
  Checkpoint child = apply_transfer(parent, dynamic_update(v, v), v, 99);
  CHECK(params_equal(parent.params, child.params));
  CHECK(child.meta.parent_stage == "p0");
}

TEST_CASE("static mode transfer is parameter-identical") {
  Vocabulary v = toy_vocab();
  Checkpoint parent = init_model(tiny_config(), v, 4);
  Checkpoint child =
      apply_transfer(parent, static_mode_map(v), v, 123);
  CHECK(params_equal(parent.params, child.params));
}

TEST_CASE("fresh tokens get new rows while copied rows stay bitwise equal") {
  Vocabulary parent_v = toy_vocab();
  std::vector<std::string> child_tokens = parent_v.tokens();
  child_tokens.push_back("novel");
  Vocabulary child_v(child_tokens);

  Checkpoint parent = init_model(tiny_config(), parent_v, 4);
  TransferMap map = dynamic_update(parent_v, child_v);
  Checkpoint child = apply_transfer(parent, map, child_v, 77);

  const int d = parent.config.d_model;
  const auto& pe = parent.params.at("embedding").value();
  const auto& ce = child.params.at("embedding").value();
  for (const auto& e : map.entries) {
    if (e.copied_from) {
      CHECK(std::memcmp(&ce[static_cast<std::size_t>(e.new_index * d)],
                        &pe[static_cast<std::size_t>(*e.copied_from * d)],
                        sizeof(float) * static_cast<std::size_t>(d)) == 0);
    } else {
      // the fresh row differs from every parent row
      for (int row = 0; row < parent_v.size(); ++row) {
        CHECK(std::memcmp(&ce[static_cast<std::size_t>(e.new_index * d)],
                          &pe[static_cast<std::size_t>(row * d)],
                          sizeof(float) * static_cast<std::size_t>(d)) != 0);
      }
    }
  }
  // every non-embedding tensor is copied unchanged
  for (const auto& [name, t] : parent.params) {
    if (name == "embedding") continue;
    CHECK(std::memcmp(t.value().data(), child.params.at(name).value().data(),
                      t.value().size() * sizeof(float)) == 0);
  }
}

TEST_CASE("transfer rejects maps built for other vocabularies") {
  Vocabulary v = toy_vocab();
  Vocabulary other = toy_vocab(3);
  Checkpoint parent = init_model(tiny_config(), v, 4);
  CHECK_THROWS_AS(apply_transfer(parent, dynamic_update(v, v), other, 1),
                  DimensionMismatch);
  TransferMap map = dynamic_update(v, other);
  map.entries[5].token = "tampered";
  CHECK_THROWS_AS(apply_transfer(parent, map, other, 1), MapVocabMismatch);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  testutil::TempDir dir("ckpt_io");
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 21);
  ckpt.meta.stage_id = "s1";
  ckpt.meta.step = 123;
  ckpt.meta.parent_stage = "s0";
  ckpt_save(ckpt, dir.file("m.nmt"));
  Checkpoint loaded = ckpt_load(dir.file("m.nmt"));
  CHECK(params_equal(ckpt.params, loaded.params));
  CHECK(loaded.vocab == ckpt.vocab);
  CHECK(loaded.config == ckpt.config);
  CHECK(loaded.meta.stage_id == "s1");
  CHECK(loaded.meta.step == 123);
  CHECK(loaded.meta.parent_stage == "s0");
}

TEST_CASE("truncated checkpoints are rejected") {
  testutil::TempDir dir("ckpt_trunc");
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 21);
  ckpt_save(ckpt, dir.file("m.nmt"));
  std::string bytes = read_file(dir.file("m.nmt"));
  write_file(dir.file("cut.nmt"), bytes.substr(0, bytes.size() - 64));
  CHECK_THROWS_AS(ckpt_load(dir.file("cut.nmt")), CorruptCheckpoint);
  write_file(dir.file("tiny.nmt"), bytes.substr(0, 8));
  CHECK_THROWS_AS(ckpt_load(dir.file("tiny.nmt")), CorruptCheckpoint);
  std::string magic = bytes;
  magic[0] = 'X';
  write_file(dir.file("magic.nmt"), magic);
  CHECK_THROWS_AS(ckpt_load(dir.file("magic.nmt")), CorruptCheckpoint);
}

TEST_CASE("flipped payload bytes fail the checksum") {
  testutil::TempDir dir("ckpt_flip");
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 21);
  ckpt_save(ckpt, dir.file("m.nmt"));
  std::string bytes = read_file(dir.file("m.nmt"));
  bytes[bytes.size() - 5] = static_cast<char>(bytes[bytes.size() - 5] ^ 0x40);
  write_file(dir.file("flip.nmt"), bytes);
  CHECK_THROWS_AS(ckpt_load(dir.file("flip.nmt")), CorruptCheckpoint);
}

TEST_CASE("vocabulary and embedding row counts must agree") {
  testutil::TempDir dir("ckpt_rows");
  Checkpoint ckpt = init_model(tiny_config(), toy_vocab(), 21);
  ckpt_save(ckpt, dir.file("m.nmt"));

  // shrink the vocab inside the JSON head without touching the tensors
  std::string bytes = read_file(dir.file("m.nmt"));
  std::uint64_t head_len = 0;
  std::memcpy(&head_len, bytes.data() + 8, sizeof(head_len));
  nlohmann::json head = nlohmann::json::parse(
      bytes.substr(16, static_cast<std::size_t>(head_len)));
  auto vocab = head.at("vocab").get<std::vector<std::string>>();
  vocab.pop_back();
  head["vocab"] = vocab;
  const std::string new_head = head.dump();
  std::string out = bytes.substr(0, 8);
  std::uint64_t new_len = new_head.size();
  out.append(reinterpret_cast<const char*>(&new_len), sizeof(new_len));
  out += new_head;
  out += bytes.substr(16 + static_cast<std::size_t>(head_len));
  write_file(dir.file("rows.nmt"), out);
  CHECK_THROWS_AS(ckpt_load(dir.file("rows.nmt")), CorruptCheckpoint);
}

}  // TEST_SUITE
