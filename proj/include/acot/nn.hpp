#pragma once

#include <string>
#include <vector>

#include "acot/rng.hpp"
#include "acot/tensor.hpp"

namespace acot {

struct Param {
  std::string name;
  Tensor tensor;
};

// Owns the named trainable parameters of one model, in registration order.
// Registration order is the serialization order, so it must be deterministic.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Tensor* find(const std::string& name) const;
  std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<Param> params_;
};

Tensor randn_tensor(const Shape& shape, double stddev, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim,
         Rng& rng, bool zero_init = false);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  Tensor w, b;
};

class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(ParamRegistry& reg, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  Tensor gamma, beta;
};

// Two-layer SiLU MLP.
class Ffn {
 public:
  Ffn() = default;
  Ffn(ParamRegistry& reg, const std::string& name, int dim, int hidden,
      Rng& rng, bool zero_init_out = false);
  Ffn(ParamRegistry& reg, const std::string& name, int in_dim, int hidden,
      int out_dim, Rng& rng, bool zero_init_out);
  Tensor forward(const Tensor& x) const { return fc2.forward(silu(fc1.forward(x))); }
  Linear fc1, fc2;
};

// Multi-head attention with learned query/key/value/output projections.
// Query and key/value sources may have different widths.
class Mha {
 public:
  Mha() = default;
  Mha(ParamRegistry& reg, const std::string& name, int q_in, int kv_in,
      int d_attn, int n_heads, int d_out, Rng& rng, bool zero_init_out = false);
  Tensor forward(const Tensor& q_src, const Tensor& k_src,
                 const Tensor& v_src) const;
  // Attention restricted to per-sample row blocks of stacked sequences.
  // q_offsets/kv_offsets give block boundaries (size n_samples + 1).
  Tensor forward_blocked(const Tensor& q_src, const Tensor& k_src,
                         const Tensor& v_src, const std::vector<int>& q_offsets,
                         const std::vector<int>& kv_offsets) const;
  Linear wq, wk, wv, wo;
  int n_heads = 1;
};

// One row [1 x dim]: interleaved sin/cos features of the scalar t.
Tensor time_embedding_row(double t, int dim);
// Per-sample time rows expanded over row blocks of a stacked sequence.
Tensor time_embedding_stacked(const std::vector<double>& ts, int rows_per_sample,
                              int dim);

std::vector<int> uniform_offsets(int n_samples, int rows_per_sample);

}  // namespace acot
