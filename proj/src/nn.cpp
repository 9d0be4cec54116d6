#include "acot/nn.hpp"

#include <cmath>

namespace acot {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
  }
  t.impl()->requires_grad = true;
  params_.push_back({name, t});
  return t;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

std::size_t ParamRegistry::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor randn_tensor(const Shape& shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.raw_value()) v = stddev * rng.normal();
  return t;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in_dim,
               int out_dim, Rng& rng, bool zero_init) {
  const double stddev = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in_dim));
  w = reg.add(name + ".w", randn_tensor({in_dim, out_dim}, stddev, rng));
  b = reg.add(name + ".b", Tensor::zeros({out_dim}));
}

LayerNormLayer::LayerNormLayer(ParamRegistry& reg, const std::string& name,
                               int dim) {
  gamma = reg.add(name + ".gamma", Tensor::from_data({dim}, std::vector<double>(dim, 1.0)));
  beta = reg.add(name + ".beta", Tensor::zeros({dim}));
}

Ffn::Ffn(ParamRegistry& reg, const std::string& name, int dim, int hidden,
         Rng& rng, bool zero_init_out)
    : Ffn(reg, name, dim, hidden, dim, rng, zero_init_out) {}

Ffn::Ffn(ParamRegistry& reg, const std::string& name, int in_dim, int hidden,
         int out_dim, Rng& rng, bool zero_init_out) {
  fc1 = Linear(reg, name + ".fc1", in_dim, hidden, rng);
  fc2 = Linear(reg, name + ".fc2", hidden, out_dim, rng, zero_init_out);
}

Mha::Mha(ParamRegistry& reg, const std::string& name, int q_in, int kv_in,
         int d_attn, int n_heads_in, int d_out, Rng& rng, bool zero_init_out) {
  if (d_attn % n_heads_in != 0)
    throw ConfigError("attention width " + std::to_string(d_attn) +
                      " not divisible by " + std::to_string(n_heads_in) + " heads");
  wq = Linear(reg, name + ".wq", q_in, d_attn, rng);
  wk = Linear(reg, name + ".wk", kv_in, d_attn, rng);
  wv = Linear(reg, name + ".wv", kv_in, d_attn, rng);
  wo = Linear(reg, name + ".wo", d_attn, d_out, rng, zero_init_out);
  n_heads = n_heads_in;
}

Tensor Mha::forward(const Tensor& q_src, const Tensor& k_src,
                    const Tensor& v_src) const {
  Tensor q = wq.forward(q_src);
  Tensor k = wk.forward(k_src);
  Tensor v = wv.forward(v_src);
  return wo.forward(multihead_attention(q, k, v, n_heads));
}

Tensor Mha::forward_blocked(const Tensor& q_src, const Tensor& k_src,
                            const Tensor& v_src,
                            const std::vector<int>& q_offsets,
                            const std::vector<int>& kv_offsets) const {
  if (q_offsets.size() != kv_offsets.size())
    throw ShapeError("forward_blocked: offset vectors disagree");
  Tensor q = wq.forward(q_src);
  Tensor k = wk.forward(k_src);
  Tensor v = wv.forward(v_src);
  const int n_samples = static_cast<int>(q_offsets.size()) - 1;
  std::vector<Tensor> outs;
  outs.reserve(n_samples);
  for (int b = 0; b < n_samples; ++b) {
    Tensor qb = slice_rows(q, q_offsets[b], q_offsets[b + 1] - q_offsets[b]);
    Tensor kb = slice_rows(k, kv_offsets[b], kv_offsets[b + 1] - kv_offsets[b]);
    Tensor vb = slice_rows(v, kv_offsets[b], kv_offsets[b + 1] - kv_offsets[b]);
    outs.push_back(multihead_attention(qb, kb, vb, n_heads));
  }
  return wo.forward(n_samples == 1 ? outs[0] : concat(outs, 0));
}

Tensor time_embedding_row(double t, int dim) {
  std::vector<double> row(dim);
  const int half = dim / 2;
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) /
                                 std::max(1, half - 1));
    const double angle = 1000.0 * t * freq;
    row[2 * j] = std::sin(angle);
    row[2 * j + 1] = std::cos(angle);
  }
  if (dim % 2 == 1) row[dim - 1] = t;
  return Tensor::from_data({1, dim}, std::move(row));
}

Tensor time_embedding_stacked(const std::vector<double>& ts, int rows_per_sample,
                              int dim) {
  const int n = static_cast<int>(ts.size());
  std::vector<double> data(static_cast<std::size_t>(n) * rows_per_sample * dim);
  for (int b = 0; b < n; ++b) {
    Tensor row = time_embedding_row(ts[b], dim);
    for (int r = 0; r < rows_per_sample; ++r) {
      std::copy(row.value().begin(), row.value().end(),
                data.begin() + (static_cast<std::size_t>(b) * rows_per_sample + r) * dim);
    }
  }
  return Tensor::from_data({n * rows_per_sample, dim}, std::move(data));
}

std::vector<int> uniform_offsets(int n_samples, int rows_per_sample) {
  std::vector<int> off(n_samples + 1);
  for (int i = 0; i <= n_samples; ++i) off[i] = i * rows_per_sample;
  return off;
}

}  // namespace acot
