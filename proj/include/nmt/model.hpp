#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmt/tensor.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;  // encoder and decoder both
  int n_heads = 4;
  int d_ff = 256;
  float dropout_p = 0.1f;
  int max_len = 128;  // positional-encoding horizon
  float label_smoothing = 0.0f;

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigInvalid (d_model not divisible by n_heads, non-positive sizes).
void validate(const ModelConfig& config);

struct CheckpointMeta {
  std::string stage_id;
  long step = 0;
  std::string parent_stage;
};

// Full model state. Parameter tensors are owned; copying a Checkpoint aliases
// them (Tensor is a handle), use clone_params for an independent copy.
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  std::map<std::string, Tensor> params;  // sorted name order = file order
  CheckpointMeta meta;
};

// Glorot-uniform matrices (bound sqrt(6/(rows+cols))), zero biases, norm
// gains 1 / biases 0, `<pad>` embedding row zeroed. Deterministic per seed;
// each parameter's stream depends only on (seed, name).
Checkpoint init_model(const ModelConfig& config, const Vocabulary& vocab,
                      std::uint64_t seed);

std::map<std::string, Tensor> clone_params(
    const std::map<std::string, Tensor>& params);

// (max_len, d_model): PE(pos, 2i) = sin(pos/10000^(2i/d)), odd dims cos.
Tensor positional_encoding(int max_len, int d_model);

// Teacher-forced forward pass. src/tgt are ragged id sequences already
// carrying flags and the trailing `</s>`; the decoder input is built
// internally as `<s>` + tgt[:-1]. Returns logits (B, max_tgt_len, |V|).
Tensor forward(const Checkpoint& ckpt, Tape& tape,
               const std::vector<std::vector<int>>& src_ids,
               const std::vector<std::vector<int>>& tgt_ids, bool train,
               std::uint64_t dropout_seed);

// Decoding support: run the encoder once, then score growing prefixes.
Tensor encode_source(const Checkpoint& ckpt, Tape& tape,
                     const std::vector<std::vector<int>>& src_ids, bool train,
                     std::uint64_t dropout_seed);

// memory is encode_source output for the same src_ids. dec_in rows are
// decoder input ids (already starting with `<s>`). When last_only is set the
// output projection runs on the final position only: (B, 1, |V|).
Tensor decode_logits(const Checkpoint& ckpt, Tape& tape, const Tensor& memory,
                     const std::vector<std::vector<int>>& src_ids,
                     const std::vector<std::vector<int>>& dec_in, bool train,
                     std::uint64_t dropout_seed, bool last_only);

// Embedding surgery: Copied rows are bit-identical parent rows, Fresh rows
// come from the init scheme under `seed`; every non-embedding parameter is
// copied unchanged; optimizer state is the caller's concern (reset).
Checkpoint apply_transfer(const Checkpoint& parent, const TransferMap& map,
                          const Vocabulary& child_vocab, std::uint64_t seed);

// Binary container, magic "NMTC". Round-trips bit-exactly.
void ckpt_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint ckpt_load(const std::string& path);  // throws CorruptCheckpoint

}  // namespace nmt
