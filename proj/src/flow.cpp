#include "acot/flow.hpp"

#include <cmath>

namespace acot {

FlowSample make_flow_sample(const Tensor& x1, Rng& rng) {
  ensure_finite(x1, "make_flow_sample data");
  Tensor x0 = Tensor::zeros(x1.shape());
  for (auto& v : x0.raw_value()) v = rng.normal();
  return make_flow_sample_at(x1, x0, rng.uniform());
}

FlowSample make_flow_sample_at(const Tensor& x1, const Tensor& x0, double t) {
  if (x0.shape() != x1.shape())
    throw ShapeError("flow sample: x0 " + shape_str(x0.shape()) + " vs x1 " +
                     shape_str(x1.shape()));
  FlowSample s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.xt = Tensor::zeros(x1.shape());
  s.u = Tensor::zeros(x1.shape());
  for (std::size_t i = 0; i < x1.numel(); ++i) {
    s.xt.raw_value()[i] = (1.0 - t) * x0.value()[i] + t * x1.value()[i];
    s.u.raw_value()[i] = x1.value()[i] - x0.value()[i];
  }
  return s;
}

Tensor flow_loss(const Tensor& v_pred, const FlowSample& sample) {
  if (v_pred.shape() != sample.u.shape())
    throw ShapeError("flow_loss: prediction " + shape_str(v_pred.shape()) +
                     " vs target " + shape_str(sample.u.shape()));
  return mse(v_pred, sample.u);
}

Tensor euler_sample(const Denoiser& denoiser, const Shape& shape,
                    const SamplerConfig& cfg, Rng& rng) {
  Tensor x = Tensor::zeros(shape);
  for (auto& v : x.raw_value()) v = rng.normal();
  return euler_sample_from(denoiser, x, cfg);
}

Tensor euler_sample_from(const Denoiser& denoiser, Tensor x,
                         const SamplerConfig& cfg) {
  if (cfg.n_steps < 1) throw ConfigError("sampler needs n_steps >= 1");
  const double dt = 1.0 / cfg.n_steps;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = static_cast<double>(k) / cfg.n_steps;
    Tensor v = denoiser(x, t);
    if (v.shape() != x.shape())
      throw ShapeError("denoiser changed shape at step " + std::to_string(k));
    Tensor next = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      next.raw_value()[i] = x.value()[i] + dt * v.value()[i];
    if (!all_finite(next))
      throw NumericalError("sampler diverged at step " + std::to_string(k));
    x = next;
  }
  return x;
}

}  // namespace acot
