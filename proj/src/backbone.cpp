#include "acot/backbone.hpp"

namespace acot {

void BackboneConfig::validate() const {
  if (n_layers < 1) throw ConfigError("backbone needs n_layers >= 1");
  if (d_model % n_heads != 0)
    throw ConfigError("backbone d_model " + std::to_string(d_model) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
}

std::vector<int> MultimodalInput::all_tokens() const {
  std::vector<int> all = obs_tokens;
  all.insert(all.end(), instr_tokens.begin(), instr_tokens.end());
  return all;
}

KvCacheStack CacheBatch::sample(int b) const {
  if (b < 0 || b >= n_samples())
    throw ShapeError("cache sample index " + std::to_string(b) + " out of range");
  KvCacheStack out;
  out.layers.reserve(layers.size());
  const int row0 = offsets[b], n = offsets[b + 1] - offsets[b];
  for (const auto& l : layers) {
    if (n_samples() == 1) {
      out.layers.push_back(l);
    } else {
      out.layers.push_back({slice_rows(l.k, row0, n), slice_rows(l.v, row0, n)});
    }
  }
  return out;
}

CacheBatch CacheBatch::wrap(const KvCacheStack& single) {
  CacheBatch b;
  b.layers = single.layers;
  b.offsets = {0, single.seq_len()};
  return b;
}

Backbone::Backbone(ParamRegistry& reg, const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  Rng r = rng.derive("backbone");
  tok_emb_ = reg.add("backbone.tok_emb",
                     randn_tensor({cfg.vocab_size, cfg.d_model}, 0.1, r));
  pos_emb_ = reg.add("backbone.pos_emb",
                     randn_tensor({cfg.max_seq, cfg.d_model}, 0.1, r));
  layers_.reserve(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "backbone.layer" + std::to_string(i);
    Layer l;
    l.ln1 = LayerNormLayer(reg, p + ".ln1", cfg.d_model);
    l.ln2 = LayerNormLayer(reg, p + ".ln2", cfg.d_model);
    l.wq = Linear(reg, p + ".attn.wq", cfg.d_model, cfg.d_model, r);
    l.wk = Linear(reg, p + ".attn.wk", cfg.d_model, cfg.d_model, r);
    l.wv = Linear(reg, p + ".attn.wv", cfg.d_model, cfg.d_model, r);
    l.wo = Linear(reg, p + ".attn.wo", cfg.d_model, cfg.d_model, r);
    l.ffn = Ffn(reg, p + ".ffn", cfg.d_model, cfg.ffn_dim, r);
    layers_.push_back(std::move(l));
  }
}

KvCacheStack Backbone::encode(const MultimodalInput& input) const {
  CacheBatch batch = encode_batch({input});
  return batch.sample(0);
}

CacheBatch Backbone::encode_batch(const std::vector<MultimodalInput>& inputs) const {
  if (inputs.empty()) throw ShapeError("encode_batch: empty batch");
  std::vector<int> tokens, positions, offsets;
  offsets.push_back(0);
  for (const auto& in : inputs) {
    const std::vector<int> all = in.all_tokens();
    if (all.empty()) throw ShapeError("encode: empty token sequence");
    if (static_cast<int>(all.size()) > cfg_.max_seq)
      throw ShapeError("encode: sequence of " + std::to_string(all.size()) +
                       " tokens exceeds max_seq " + std::to_string(cfg_.max_seq));
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i] < 0 || all[i] >= cfg_.vocab_size)
        throw ShapeError("encode: token " + std::to_string(all[i]) +
                         " outside vocabulary of " + std::to_string(cfg_.vocab_size));
      tokens.push_back(all[i]);
      positions.push_back(static_cast<int>(i));
    }
    offsets.push_back(static_cast<int>(tokens.size()));
  }

  Tensor x = add(gather_rows(tok_emb_, tokens), gather_rows(pos_emb_, positions));
  CacheBatch cache;
  cache.offsets = offsets;
  cache.layers.reserve(layers_.size());
  const int n_samples = static_cast<int>(inputs.size());
  for (const auto& layer : layers_) {
    Tensor xn = layer.ln1.forward(x);
    Tensor k = layer.wk.forward(xn);
    Tensor v = layer.wv.forward(xn);
    Tensor q = layer.wq.forward(xn);
    cache.layers.push_back({k, v});
    std::vector<Tensor> heads_out;
    heads_out.reserve(n_samples);
    for (int b = 0; b < n_samples; ++b) {
      const int r0 = offsets[b], n = offsets[b + 1] - offsets[b];
      heads_out.push_back(multihead_attention(slice_rows(q, r0, n),
                                              slice_rows(k, r0, n),
                                              slice_rows(v, r0, n), cfg_.n_heads));
    }
    Tensor attn = n_samples == 1 ? heads_out[0] : concat(heads_out, 0);
    x = add(x, layer.wo.forward(attn));
    x = add(x, layer.ffn.forward(layer.ln2.forward(x)));
  }
  return cache;
}

}  // namespace acot
