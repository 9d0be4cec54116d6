#pragma once

#include <functional>

#include "acot/rng.hpp"
#include "acot/tensor.hpp"

namespace acot {

// One training sample on the linear interpolation path:
//   xt = (1 - t) x0 + t x1,  velocity target u = x1 - x0.
struct FlowSample {
  Tensor x0;
  Tensor x1;
  Tensor xt;
  Tensor u;
  double t = 0.0;
};

struct SamplerConfig {
  int n_steps = 10;
};

// Draws x0 ~ N(0, I) and t ~ U[0, 1), then fills the path fields.
FlowSample make_flow_sample(const Tensor& x1, Rng& rng);
FlowSample make_flow_sample_at(const Tensor& x1, const Tensor& x0, double t);

Tensor flow_loss(const Tensor& v_pred, const FlowSample& sample);

using Denoiser = std::function<Tensor(const Tensor& xt, double t)>;

// Fixed-grid Euler integration from x ~ N(0, I):
//   x <- x + (1/n) v(x, k/n)  for k = 0..n-1.
Tensor euler_sample(const Denoiser& denoiser, const Shape& shape,
                    const SamplerConfig& cfg, Rng& rng);
Tensor euler_sample_from(const Denoiser& denoiser, Tensor x,
                         const SamplerConfig& cfg);

}  // namespace acot
