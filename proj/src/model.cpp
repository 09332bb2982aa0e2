#include "nmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "nmt/errors.hpp"
#include "nmt/rng.hpp"
#include "nmt/text.hpp"

namespace nmt {

namespace {

using json = nlohmann::json;

constexpr float kMaskValue = -1e9f;
constexpr float kNormEps = 1e-6f;

// One seed per dropout call site, derived from the step seed in call order.
struct DropoutSites {
  std::uint64_t base;
  std::uint64_t n = 0;
  std::uint64_t next() { return mix64(base, n++); }
};

long product(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

float glorot_bound(int rows, int cols) {
  return std::sqrt(6.0f / static_cast<float>(rows + cols));
}

Tensor glorot_matrix(int rows, int cols, std::uint64_t seed,
                     const std::string& name) {
  Rng rng(mix64(seed, fnv1a64(name)));
  const float bound = glorot_bound(rows, cols);
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (auto& v : t.value()) v = rng.uniform_float(-bound, bound);
  return t;
}

// Fresh embedding rows are seeded per (seed, row) so a row's values do not
// depend on which other rows happen to be fresh.
void init_embedding_row(Tensor& table, int row, std::uint64_t seed) {
  const int rows = table.dim(0), cols = table.dim(1);
  Rng rng(mix64(seed, fnv1a64("embedding"), static_cast<std::uint64_t>(row)));
  const float bound = glorot_bound(rows, cols);
  float* p = table.value().data() + static_cast<long>(row) * cols;
  for (int j = 0; j < cols; ++j) p[j] = rng.uniform_float(-bound, bound);
}

Tensor zeros_param(std::vector<int> shape) {
  return Tensor::zeros(std::move(shape), true);
}

Tensor ones_param(int n) {
  Tensor t = Tensor::full({n}, 1.0f);
  t.set_requires_grad(true);
  return t;
}

void add_attention_params(std::map<std::string, Tensor>& params,
                          const std::string& prefix, int d,
                          std::uint64_t seed) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    params[prefix + w] = glorot_matrix(d, d, seed, prefix + w);
  }
  for (const char* b : {"bq", "bk", "bv", "bo"}) {
    params[prefix + b] = zeros_param({d});
  }
}

void add_norm_params(std::map<std::string, Tensor>& params,
                     const std::string& prefix, int d) {
  params[prefix + "gain"] = ones_param(d);
  params[prefix + "bias"] = zeros_param({d});
}

void add_ffn_params(std::map<std::string, Tensor>& params,
                    const std::string& prefix, int d, int d_ff,
                    std::uint64_t seed) {
  params[prefix + "w1"] = glorot_matrix(d, d_ff, seed, prefix + "w1");
  params[prefix + "b1"] = zeros_param({d_ff});
  params[prefix + "w2"] = glorot_matrix(d_ff, d, seed, prefix + "w2");
  params[prefix + "b2"] = zeros_param({d});
}

int max_length(const std::vector<std::vector<int>>& rows) {
  std::size_t t = 1;
  for (const auto& r : rows) t = std::max(t, r.size());
  return static_cast<int>(t);
}

std::vector<int> pad_to_grid(const std::vector<std::vector<int>>& rows, int t) {
  std::vector<int> flat(rows.size() * static_cast<std::size_t>(t), kPadId);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    std::copy(rows[b].begin(), rows[b].end(),
              flat.begin() + static_cast<long>(b) * t);
  }
  return flat;
}

// Additive pre-softmax mask (B*H, t_q, t_k): -1e9 on pad keys, and above the
// diagonal when causal.
Tensor build_mask(const std::vector<std::vector<int>>& key_rows, int heads,
                  int t_q, int t_k, bool causal) {
  const int b = static_cast<int>(key_rows.size());
  Tensor mask = Tensor::zeros({b * heads, t_q, t_k});
  auto& mv = mask.value();
  for (int bi = 0; bi < b; ++bi) {
    const int key_len = static_cast<int>(key_rows[static_cast<std::size_t>(bi)].size());
    for (int i = 0; i < t_q; ++i) {
      for (int j = 0; j < t_k; ++j) {
        if (j >= key_len || (causal && j > i)) {
          for (int h = 0; h < heads; ++h) {
            mv[static_cast<std::size_t>(((bi * heads + h) * t_q + i) * t_k + j)] =
                kMaskValue;
          }
        }
      }
    }
  }
  return mask;
}

const Tensor& param(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.params.find(name);
  if (it == ckpt.params.end()) {
    throw CorruptCheckpoint("missing parameter '" + name + "'");
  }
  return it->second;
}

Tensor attention(Tape& tape, const Checkpoint& ckpt, const std::string& prefix,
                 const Tensor& q_in, const Tensor& kv_in, const Tensor& mask,
                 int b, int t_q, int t_k) {
  const int d = ckpt.config.d_model;
  const int h = ckpt.config.n_heads;
  const int dh = d / h;
  auto proj = [&](const Tensor& x, int t, const char* w, const char* bias) {
    Tensor flat = tape.reshape(x, {b * t, d});
    Tensor y = tape.add_bias(tape.matmul(flat, param(ckpt, prefix + w)),
                             param(ckpt, prefix + bias));
    y = tape.reshape(y, {b, t, h, dh});
    y = tape.permute(y, {0, 2, 1, 3});
    return tape.reshape(y, {b * h, t, dh});
  };
  Tensor q = proj(q_in, t_q, "wq", "bq");
  Tensor k = proj(kv_in, t_k, "wk", "bk");
  Tensor v = proj(kv_in, t_k, "wv", "bv");
  Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                             1.0f / std::sqrt(static_cast<float>(dh)));
  scores = tape.add(scores, mask);
  Tensor ctx = tape.matmul(tape.softmax(scores, -1), v);  // (b*h, t_q, dh)
  ctx = tape.reshape(ctx, {b, h, t_q, dh});
  ctx = tape.permute(ctx, {0, 2, 1, 3});
  ctx = tape.reshape(ctx, {b * t_q, d});
  Tensor out = tape.add_bias(tape.matmul(ctx, param(ckpt, prefix + "wo")),
                             param(ckpt, prefix + "bo"));
  return tape.reshape(out, {b, t_q, d});
}

// Post-norm residual: LayerNorm(x + Dropout(sub)).
Tensor residual(Tape& tape, const Checkpoint& ckpt, const std::string& norm,
                const Tensor& x, const Tensor& sub, bool train,
                DropoutSites& sites) {
  Tensor dropped =
      tape.dropout(sub, ckpt.config.dropout_p, train, sites.next());
  return tape.layer_norm(tape.add(x, dropped), param(ckpt, norm + "gain"),
                         param(ckpt, norm + "bias"), kNormEps);
}

Tensor ffn(Tape& tape, const Checkpoint& ckpt, const std::string& prefix,
           const Tensor& x, int b, int t) {
  const int d = ckpt.config.d_model;
  Tensor flat = tape.reshape(x, {b * t, d});
  Tensor hidden = tape.relu(tape.add_bias(
      tape.matmul(flat, param(ckpt, prefix + "w1")), param(ckpt, prefix + "b1")));
  Tensor out = tape.add_bias(tape.matmul(hidden, param(ckpt, prefix + "w2")),
                             param(ckpt, prefix + "b2"));
  return tape.reshape(out, {b, t, d});
}

Tensor embed(Tape& tape, const Checkpoint& ckpt,
             const std::vector<std::vector<int>>& rows, int b, int t,
             bool train, DropoutSites& sites) {
  if (t > ckpt.config.max_len) {
    throw ConfigInvalid("sequence length " + std::to_string(t) +
                        " exceeds max_len " +
                        std::to_string(ckpt.config.max_len));
  }
  const int d = ckpt.config.d_model;
  Tensor e = tape.embedding_lookup(param(ckpt, "embedding"), pad_to_grid(rows, t));
  e = tape.reshape(e, {b, t, d});
  e = tape.scale(e, std::sqrt(static_cast<float>(d)));

  Tensor pe = positional_encoding(ckpt.config.max_len, d);
  Tensor pe_tile = Tensor::zeros({b, t, d});
  for (int bi = 0; bi < b; ++bi) {
    std::copy_n(pe.value().begin(), static_cast<long>(t) * d,
                pe_tile.value().begin() + static_cast<long>(bi) * t * d);
  }
  e = tape.add(e, pe_tile);
  return tape.dropout(e, ckpt.config.dropout_p, train, sites.next());
}

}  // namespace

void validate(const ModelConfig& config) {
  if (config.d_model < 1 || config.n_layers < 1 || config.n_heads < 1 ||
      config.d_ff < 1 || config.max_len < 1) {
    throw ConfigInvalid("model dimensions must be >= 1");
  }
  if (config.d_model % config.n_heads != 0) {
    throw ConfigInvalid("d_model " + std::to_string(config.d_model) +
                        " not divisible by n_heads " +
                        std::to_string(config.n_heads));
  }
  if (config.dropout_p < 0.0f || config.dropout_p >= 1.0f) {
    throw ConfigInvalid("dropout_p must be in [0,1)");
  }
  if (config.label_smoothing < 0.0f || config.label_smoothing >= 1.0f) {
    throw ConfigInvalid("label_smoothing must be in [0,1)");
  }
}

Checkpoint init_model(const ModelConfig& config, const Vocabulary& vocab,
                      std::uint64_t seed) {
  validate(config);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocab = vocab;

  const int d = config.d_model;
  ckpt.params["embedding"] = glorot_matrix(vocab.size(), d, seed, "embedding");
  std::fill_n(ckpt.params["embedding"].value().begin() + kPadId * d, d, 0.0f);

  for (int i = 0; i < config.n_layers; ++i) {
    const std::string enc = "enc." + std::to_string(i) + ".";
    add_attention_params(ckpt.params, enc + "self.", d, seed);
    add_norm_params(ckpt.params, enc + "norm1.", d);
    add_ffn_params(ckpt.params, enc + "ffn.", d, config.d_ff, seed);
    add_norm_params(ckpt.params, enc + "norm2.", d);

    const std::string dec = "dec." + std::to_string(i) + ".";
    add_attention_params(ckpt.params, dec + "self.", d, seed);
    add_norm_params(ckpt.params, dec + "norm1.", d);
    add_attention_params(ckpt.params, dec + "cross.", d, seed);
    add_norm_params(ckpt.params, dec + "norm2.", d);
    add_ffn_params(ckpt.params, dec + "ffn.", d, config.d_ff, seed);
    add_norm_params(ckpt.params, dec + "norm3.", d);
  }
  return ckpt;
}

std::map<std::string, Tensor> clone_params(
    const std::map<std::string, Tensor>& params) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params) {
    Tensor copy = Tensor::from_values(t.shape(), t.value(), t.requires_grad());
    out[name] = copy;
  }
  return out;
}

Tensor positional_encoding(int max_len, int d_model) {
  Tensor pe = Tensor::zeros({max_len, d_model});
  auto& v = pe.value();
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / d_model;
      const double angle = pos / std::pow(10000.0, exponent);
      v[static_cast<std::size_t>(pos * d_model + i)] =
          static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

Tensor encode_source(const Checkpoint& ckpt, Tape& tape,
                     const std::vector<std::vector<int>>& src_ids, bool train,
                     std::uint64_t dropout_seed) {
  const int b = static_cast<int>(src_ids.size());
  const int ts = max_length(src_ids);
  DropoutSites sites{mix64(dropout_seed, fnv1a64("enc"))};
  Tensor mask = build_mask(src_ids, ckpt.config.n_heads, ts, ts, false);
  Tensor x = embed(tape, ckpt, src_ids, b, ts, train, sites);
  for (int i = 0; i < ckpt.config.n_layers; ++i) {
    const std::string enc = "enc." + std::to_string(i) + ".";
    Tensor a = attention(tape, ckpt, enc + "self.", x, x, mask, b, ts, ts);
    x = residual(tape, ckpt, enc + "norm1.", x, a, train, sites);
    Tensor f = ffn(tape, ckpt, enc + "ffn.", x, b, ts);
    x = residual(tape, ckpt, enc + "norm2.", x, f, train, sites);
  }
  return x;
}

Tensor decode_logits(const Checkpoint& ckpt, Tape& tape, const Tensor& memory,
                     const std::vector<std::vector<int>>& src_ids,
                     const std::vector<std::vector<int>>& dec_in, bool train,
                     std::uint64_t dropout_seed, bool last_only) {
  const int b = static_cast<int>(dec_in.size());
  const int tt = max_length(dec_in);
  const int ts = memory.dim(1);
  if (memory.dim(0) != b) {
    throw ShapeMismatch("decode_logits: memory batch " +
                        std::to_string(memory.dim(0)) + " vs " +
                        std::to_string(b) + " prefixes");
  }
  DropoutSites sites{mix64(dropout_seed, fnv1a64("dec"))};
  Tensor self_mask = build_mask(dec_in, ckpt.config.n_heads, tt, tt, true);
  Tensor cross_mask = build_mask(src_ids, ckpt.config.n_heads, tt, ts, false);
  Tensor x = embed(tape, ckpt, dec_in, b, tt, train, sites);
  for (int i = 0; i < ckpt.config.n_layers; ++i) {
    const std::string dec = "dec." + std::to_string(i) + ".";
    Tensor a = attention(tape, ckpt, dec + "self.", x, x, self_mask, b, tt, tt);
    x = residual(tape, ckpt, dec + "norm1.", x, a, train, sites);
    Tensor c = attention(tape, ckpt, dec + "cross.", x, memory, cross_mask, b,
                         tt, ts);
    x = residual(tape, ckpt, dec + "norm2.", x, c, train, sites);
    Tensor f = ffn(tape, ckpt, dec + "ffn.", x, b, tt);
    x = residual(tape, ckpt, dec + "norm3.", x, f, train, sites);
  }
  int t_out = tt;
  if (last_only) {
    x = tape.slice(x, 1, tt - 1, 1);
    t_out = 1;
  }
  // tied output projection: logits = x E^T
  Tensor flat = tape.reshape(x, {b * t_out, ckpt.config.d_model});
  Tensor logits = tape.matmul(flat, tape.transpose(param(ckpt, "embedding")));
  return tape.reshape(logits, {b, t_out, ckpt.vocab.size()});
}

Tensor forward(const Checkpoint& ckpt, Tape& tape,
               const std::vector<std::vector<int>>& src_ids,
               const std::vector<std::vector<int>>& tgt_ids, bool train,
               std::uint64_t dropout_seed) {
  if (src_ids.size() != tgt_ids.size()) {
    throw ShapeMismatch("forward: " + std::to_string(src_ids.size()) +
                        " source rows vs " + std::to_string(tgt_ids.size()) +
                        " target rows");
  }
  // teacher forcing: decoder input is <s> followed by the target minus its
  // last token
  std::vector<std::vector<int>> dec_in(tgt_ids.size());
  for (std::size_t i = 0; i < tgt_ids.size(); ++i) {
    dec_in[i].reserve(tgt_ids[i].size());
    dec_in[i].push_back(kBosId);
    dec_in[i].insert(dec_in[i].end(), tgt_ids[i].begin(),
                     tgt_ids[i].end() - (tgt_ids[i].empty() ? 0 : 1));
  }
  Tensor memory = encode_source(ckpt, tape, src_ids, train, dropout_seed);
  return decode_logits(ckpt, tape, memory, src_ids, dec_in, train, dropout_seed,
                       false);
}

Checkpoint apply_transfer(const Checkpoint& parent, const TransferMap& map,
                          const Vocabulary& child_vocab, std::uint64_t seed) {
  if (static_cast<int>(map.entries.size()) != child_vocab.size()) {
    throw DimensionMismatch("transfer map covers " +
                            std::to_string(map.entries.size()) +
                            " tokens, child vocabulary has " +
                            std::to_string(child_vocab.size()));
  }
  const Tensor& parent_emb = param(parent, "embedding");
  const int d = parent.config.d_model;
  if (parent_emb.dim(0) != parent.vocab.size() || parent_emb.dim(1) != d) {
    throw DimensionMismatch("parent embedding shape does not match its vocab");
  }

  Checkpoint child;
  child.config = parent.config;
  child.vocab = child_vocab;
  child.params = clone_params(parent.params);

  Tensor emb = Tensor::zeros({child_vocab.size(), d}, true);
  for (const TransferEntry& e : map.entries) {
    if (e.new_index < 0 || e.new_index >= child_vocab.size() ||
        child_vocab.token(e.new_index) != e.token) {
      throw MapVocabMismatch("entry '" + e.token +
                             "' does not match the child vocabulary");
    }
    if (e.copied_from) {
      const int old = *e.copied_from;
      if (old < 0 || old >= parent.vocab.size() ||
          parent.vocab.token(old) != e.token) {
        throw MapVocabMismatch("entry '" + e.token +
                               "' does not match the parent vocabulary");
      }
      std::copy_n(parent_emb.value().begin() + static_cast<long>(old) * d, d,
                  emb.value().begin() + static_cast<long>(e.new_index) * d);
    } else {
      init_embedding_row(emb, e.new_index, seed);
    }
  }
  child.params["embedding"] = emb;
  child.meta.stage_id.clear();
  child.meta.step = 0;
  child.meta.parent_stage = parent.meta.stage_id;
  return child;
}

void ckpt_save(const Checkpoint& ckpt, const std::string& path) {
  json meta;
  meta["config"] = {{"d_model", ckpt.config.d_model},
                    {"n_layers", ckpt.config.n_layers},
                    {"n_heads", ckpt.config.n_heads},
                    {"d_ff", ckpt.config.d_ff},
                    {"dropout_p", ckpt.config.dropout_p},
                    {"max_len", ckpt.config.max_len},
                    {"label_smoothing", ckpt.config.label_smoothing}};
  meta["vocab"] = ckpt.vocab.tokens();
  meta["meta"] = {{"stage_id", ckpt.meta.stage_id},
                  {"step", ckpt.meta.step},
                  {"parent_stage", ckpt.meta.parent_stage}};
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    const std::size_t n_bytes = t.value().size() * sizeof(float);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(t.value().data(), n_bytes)));
    dir.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"offset", offset},
                   {"checksum", buf}});
    offset += n_bytes;
  }
  meta["tensors"] = dir;
  const std::string head = meta.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::uint32_t version = 1;
  const std::uint64_t head_len = head.size();
  out.write("NMTC", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, t] : ckpt.params) {
    out.write(reinterpret_cast<const char*>(t.value().data()),
              static_cast<std::streamsize>(t.value().size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path);
}

Checkpoint ckpt_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || bytes.compare(0, 4, "NMTC") != 0) {
    throw CorruptCheckpoint(path + ": bad magic");
  }
  std::uint32_t version = 0;
  std::uint64_t head_len = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof(version));
  std::memcpy(&head_len, bytes.data() + 8, sizeof(head_len));
  if (version != 1) {
    throw CorruptCheckpoint(path + ": unsupported version " +
                            std::to_string(version));
  }
  if (16 + head_len > bytes.size()) {
    throw CorruptCheckpoint(path + ": truncated metadata");
  }

  json meta;
  try {
    meta = json::parse(bytes.substr(16, head_len));
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(path + ": metadata parse: " + e.what());
  }

  Checkpoint ckpt;
  try {
    const json& c = meta.at("config");
    ckpt.config.d_model = c.at("d_model").get<int>();
    ckpt.config.n_layers = c.at("n_layers").get<int>();
    ckpt.config.n_heads = c.at("n_heads").get<int>();
    ckpt.config.d_ff = c.at("d_ff").get<int>();
    ckpt.config.dropout_p = c.at("dropout_p").get<float>();
    ckpt.config.max_len = c.at("max_len").get<int>();
    ckpt.config.label_smoothing = c.at("label_smoothing").get<float>();
    ckpt.vocab = Vocabulary(meta.at("vocab").get<std::vector<std::string>>());
    ckpt.meta.stage_id = meta.at("meta").at("stage_id").get<std::string>();
    ckpt.meta.step = meta.at("meta").at("step").get<long>();
    ckpt.meta.parent_stage = meta.at("meta").at("parent_stage").get<std::string>();

    const char* payload = bytes.data() + 16 + head_len;
    const std::size_t payload_len = bytes.size() - 16 - head_len;
    for (const json& e : meta.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<int>>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const std::size_t n_bytes =
          static_cast<std::size_t>(product(shape)) * sizeof(float);
      if (offset + n_bytes > payload_len) {
        throw CorruptCheckpoint(path + ": tensor '" + name +
                                "' extends past end of file");
      }
      char buf[17];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(
                        fnv1a64(payload + offset, n_bytes)));
      if (e.at("checksum").get<std::string>() != buf) {
        throw CorruptCheckpoint(path + ": checksum mismatch on '" + name + "'");
      }
      std::vector<float> values(n_bytes / sizeof(float));
      std::memcpy(values.data(), payload + offset, n_bytes);
      for (float v : values) {
        if (!std::isfinite(v)) {
          throw CorruptCheckpoint(path + ": non-finite value in '" + name + "'");
        }
      }
      ckpt.params[name] = Tensor::from_values(shape, std::move(values), true);
    }
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(path + ": " + e.what());
  }

  auto emb = ckpt.params.find("embedding");
  if (emb == ckpt.params.end() || emb->second.rank() != 2 ||
      emb->second.dim(0) != ckpt.vocab.size() ||
      emb->second.dim(1) != ckpt.config.d_model) {
    throw CorruptCheckpoint(path + ": embedding rows do not match vocabulary");
  }
  return ckpt;
}

}  // namespace nmt
