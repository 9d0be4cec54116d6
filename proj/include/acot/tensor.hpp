#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "acot/errors.hpp"

namespace acot {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense 64-bit float tensor with reverse-mode differentiation support.
// Value semantics over a shared payload: copies alias the same storage.
// Tensors are treated as immutable once they have entered a computation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->value.size(); }
  // 2-D accessors; a rank-1 tensor of n elements reads as 1 x n.
  int rows() const;
  int cols() const;
  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& raw_value() { return impl_->value; }
  double item() const;
  double at(int r, int c) const;

  std::vector<double>& grad();  // allocates zeros on first use
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Records backward rules in execution order; backward() replays them in
// reverse, visiting each node exactly once. Single-threaded: one tape must
// not be shared across concurrent executions.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::function<void()> backward_fn);
  void backward(const Tensor& scalar_loss);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Pairwise (tree) reductions keep permutation sensitivity near machine eps.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_dot(const double* a, const double* b, std::size_t n);

// ---- differentiable primitives ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
// Broadcasts a [n] / [1 x n] bias over the rows of x. The only broadcast rule.
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, int row0, int n_rows);
Tensor mean_pool(const Tensor& x, int axis);  // axis 0 -> [1 x n], axis 1 -> [m x 1]
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor silu(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);
// Scaled dot-product attention, softmax_rows(Q Kt / sqrt(d_head)) V per head.
// Head h reads column block h of Q/K and of V; n_heads = 1 is plain attention.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int n_heads);
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

bool all_finite(const Tensor& t);
void ensure_finite(const Tensor& t, const std::string& where);

// ---- finite-difference gradient oracle ----
struct GradCheckInput {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  struct PerInput {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_grad = 0.0;
  };
  std::vector<PerInput> inputs;
  double max_rel_error = 0.0;
};

// Compares tape gradients of the scalar f() against central finite
// differences. f must be deterministic; it is re-evaluated with perturbed
// inputs, so it has to read the input tensors by reference each call.
GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<GradCheckInput>& inputs,
                                double step = 1e-5);

}  // namespace acot
