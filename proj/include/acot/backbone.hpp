#pragma once

#include <vector>

#include "acot/nn.hpp"

namespace acot {

struct BackboneConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 256;
  int max_seq = 64;
  int ffn_dim = 96;
  bool freeze = false;

  void validate() const;
};

struct MultimodalInput {
  std::vector<int> obs_tokens;
  std::vector<int> instr_tokens;

  int size() const {
    return static_cast<int>(obs_tokens.size() + instr_tokens.size());
  }
  std::vector<int> all_tokens() const;
};

struct LayerKv {
  Tensor k;
  Tensor v;
};

// Per-layer key/value matrices for one encoded sequence.
struct KvCacheStack {
  std::vector<LayerKv> layers;
  int n_layers() const { return static_cast<int>(layers.size()); }
  int seq_len() const { return layers.empty() ? 0 : layers[0].k.rows(); }
};

// Caches for a whole batch, stored stacked along the row axis so that
// downstream projections run as single matmuls. offsets has n_samples + 1
// entries delimiting each sample's rows.
struct CacheBatch {
  std::vector<LayerKv> layers;
  std::vector<int> offsets;

  int n_samples() const { return static_cast<int>(offsets.size()) - 1; }
  int sample_len(int b) const { return offsets[b + 1] - offsets[b]; }
  KvCacheStack sample(int b) const;
  static CacheBatch wrap(const KvCacheStack& single);
};

// Transformer encoder over observation + instruction tokens. Bidirectional
// pre-norm blocks; its product is the per-layer key/value cache, not the
// final hidden states.
class Backbone {
 public:
  Backbone(ParamRegistry& reg, const BackboneConfig& cfg, Rng& rng);

  KvCacheStack encode(const MultimodalInput& input) const;
  CacheBatch encode_batch(const std::vector<MultimodalInput>& inputs) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Tensor tok_emb_;
  Tensor pos_emb_;
  struct Layer {
    LayerNormLayer ln1, ln2;
    Linear wq, wk, wv, wo;
    Ffn ffn;
  };
  std::vector<Layer> layers_;
};

}  // namespace acot
