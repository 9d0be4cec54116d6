#include "acot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace acot {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require_2d(const Tensor& t, const char* who) {
  if (t.rank() > 2) {
    throw ShapeError(std::string(who) + ": expected rank <= 2, got shape " +
                     shape_str(t.shape()));
  }
}

bool should_record(bool any_input_grad) {
  return any_input_grad && Tape::active() != nullptr;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// ---------- Tensor ----------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t;
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value.assign(shape_numel(shape), 0.0);
  impl->requires_grad = requires_grad;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  Tensor t;
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value = std::move(data);
  impl->requires_grad = requires_grad;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

int Tensor::rows() const {
  const Shape& s = impl_->shape;
  if (s.size() == 2) return s[0];
  if (s.size() == 1) return 1;
  throw ShapeError("rows(): tensor has shape " + shape_str(s));
}

int Tensor::cols() const {
  const Shape& s = impl_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  throw ShapeError("cols(): tensor has shape " + shape_str(s));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item(): tensor has " + std::to_string(numel()) +
                     " elements");
  }
  return impl_->value[0];
}

double Tensor::at(int r, int c) const { return impl_->value[static_cast<std::size_t>(r) * cols() + c]; }

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// ---------- Tape ----------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& scalar_loss) {
  if (scalar_loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(scalar_loss.shape()));
  }
  scalar_loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---------- reductions ----------

namespace {

double dot_base(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

double sum_base(const double* x, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i];
    s1 += x[i + 1];
    s2 += x[i + 2];
    s3 += x[i + 3];
  }
  for (; i < n; ++i) s0 += x[i];
  return (s0 + s1) + (s2 + s3);
}

constexpr std::size_t kReduceBase = 32;

}  // namespace

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= kReduceBase) return sum_base(x, n);
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

double pairwise_dot(const double* a, const double* b, std::size_t n) {
  if (n <= kReduceBase) return dot_base(a, b, n);
  const std::size_t h = n / 2;
  return pairwise_dot(a, b, h) + pairwise_dot(a + h, b + h, n - h);
}

namespace {

thread_local std::vector<double> g_scratch_a;
thread_local std::vector<double> g_scratch_b;

// C = A (m x k) . B (k x n); pairwise reduction over k.
void mm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
  std::vector<double>& bt = g_scratch_a;
  bt.resize(static_cast<std::size_t>(n) * k);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + p] = B[static_cast<std::size_t>(p) * n + j];
  for (int i = 0; i < m; ++i) {
    const double* ai = A + static_cast<std::size_t>(i) * k;
    double* ci = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = pairwise_dot(ai, bt.data() + static_cast<std::size_t>(j) * k, k);
  }
}

// C += A (m x n) . B^T where B is (k x n)  ->  C is (m x k).
void mm_nt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = A + static_cast<std::size_t>(i) * n;
    double* ci = C + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) ci[j] += pairwise_dot(ai, B + static_cast<std::size_t>(j) * n, n);
  }
}

// C += A^T . B where A is (m x k), B is (m x n)  ->  C is (k x n).
void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = A + static_cast<std::size_t>(i) * k;
    const double* bi = B + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = ai[p];
      if (a == 0.0) continue;
      double* cp = C + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += a * bi[j];
    }
  }
}

}  // namespace

// ---------- elementwise ops ----------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.raw_value().data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.raw_value()[i] = a.value()[i] - b.value()[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.raw_value()[i] = a.value()[i] * b.value()[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.value()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.raw_value()[i] = a.value()[i] * c;
  out.impl()->requires_grad = should_record(a.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([a, out, c]() mutable {
      const auto& go = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

// ---------- matmul / linear ----------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  mm_nn(a.value().data(), b.value().data(), out.raw_value().data(), m, k, n);
  const bool rg = a.requires_grad() || b.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([a, b, out, m, k, n]() mutable {
      const double* go = out.grad().data();
      if (a.requires_grad())
        mm_nt_acc(go, b.value().data(), a.grad().data(), m, n, k);
      if (b.requires_grad())
        mm_tn_acc(a.value().data(), go, b.grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  require_2d(x, "bias_add");
  const int m = x.rows(), n = x.cols();
  if (bias.numel() != static_cast<std::size_t>(n)) {
    throw ShapeError("bias_add: bias " + shape_str(bias.shape()) +
                     " does not span columns of " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.value().data();
  const double* pb = bias.value().data();
  double* po = out.raw_value().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::size_t>(i) * n + j] = px[static_cast<std::size_t>(i) * n + j] + pb[j];
  const bool rg = x.requires_grad() || bias.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([x, bias, out, m, n]() mutable {
      const auto& go = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += go[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return bias_add(matmul(x, w), bias);
}

// ---------- concat / slice ----------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_2d(p, "concat");
  int m = 0, n = parts[0].cols();
  if (axis == 0) {
    for (const auto& p : parts) {
      if (p.cols() != n)
        throw ShapeError("concat axis 0: column mismatch " + shape_str(p.shape()));
      m += p.rows();
    }
  } else {
    m = parts[0].rows();
    n = 0;
    for (const auto& p : parts) {
      if (p.rows() != m)
        throw ShapeError("concat axis 1: row mismatch " + shape_str(p.shape()));
      n += p.cols();
    }
  }
  Tensor out = Tensor::zeros({m, n});
  double* po = out.raw_value().data();
  bool rg = false;
  if (axis == 0) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::memcpy(po + off, p.value().data(), p.numel() * sizeof(double));
      off += p.numel();
      rg = rg || p.requires_grad();
    }
  } else {
    int coff = 0;
    for (const auto& p : parts) {
      const int pc = p.cols();
      for (int i = 0; i < m; ++i)
        std::memcpy(po + static_cast<std::size_t>(i) * n + coff,
                    p.value().data() + static_cast<std::size_t>(i) * pc,
                    static_cast<std::size_t>(pc) * sizeof(double));
      coff += pc;
      rg = rg || p.requires_grad();
    }
  }
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([parts, out, m, n, axis]() mutable {
      const auto& go = out.grad();
      if (axis == 0) {
        std::size_t off = 0;
        for (auto& p : parts) {
          if (p.requires_grad()) {
            auto& gp = p.grad();
            for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += go[off + i];
          }
          off += p.numel();
        }
      } else {
        int coff = 0;
        for (auto& p : parts) {
          const int pc = p.cols();
          if (p.requires_grad()) {
            auto& gp = p.grad();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < pc; ++j)
                gp[static_cast<std::size_t>(i) * pc + j] += go[static_cast<std::size_t>(i) * n + coff + j];
          }
          coff += pc;
        }
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int row0, int n_rows) {
  require_2d(x, "slice_rows");
  const int m = x.rows(), n = x.cols();
  if (row0 < 0 || n_rows <= 0 || row0 + n_rows > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(row0) + ", " +
                     std::to_string(row0 + n_rows) + ") out of " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n_rows, n});
  std::memcpy(out.raw_value().data(), x.value().data() + static_cast<std::size_t>(row0) * n,
              static_cast<std::size_t>(n_rows) * n * sizeof(double));
  out.impl()->requires_grad = should_record(x.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([x, out, row0, n, n_rows]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        gx[static_cast<std::size_t>(row0) * n + i] += go[i];
    });
  }
  return out;
}

Tensor mean_pool(const Tensor& x, int axis) {
  require_2d(x, "mean_pool");
  const int m = x.rows(), n = x.cols();
  if (axis != 0 && axis != 1) throw ShapeError("mean_pool: axis must be 0 or 1");
  Tensor out;
  if (axis == 0) {
    out = Tensor::zeros({1, n});
    std::vector<double>& col = g_scratch_b;
    col.resize(m);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < m; ++i) col[i] = x.value()[static_cast<std::size_t>(i) * n + j];
      out.raw_value()[j] = pairwise_sum(col.data(), m) / m;
    }
  } else {
    out = Tensor::zeros({m, 1});
    for (int i = 0; i < m; ++i)
      out.raw_value()[i] = pairwise_sum(x.value().data() + static_cast<std::size_t>(i) * n, n) / n;
  }
  out.impl()->requires_grad = should_record(x.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([x, out, m, n, axis]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      if (axis == 0) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += go[j] / m;
      } else {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += go[i] / n;
      }
    });
  }
  return out;
}

// ---------- softmax / norm / activations ----------

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  const int m = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.value().data();
  double* po = out.raw_value().data();
  for (int i = 0; i < m; ++i) {
    const double* row = px + static_cast<std::size_t>(i) * n;
    double* orow = po + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    for (int j = 0; j < n; ++j) orow[j] = std::exp(row[j] - mx);
    const double z = pairwise_sum(orow, n);
    for (int j = 0; j < n; ++j) orow[j] /= z;
  }
  out.impl()->requires_grad = should_record(x.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([x, out, m, n]() mutable {
      const auto& go = out.grad();
      const auto& y = out.value();
      auto& gx = x.grad();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += go[off + j] * y[off + j];
        for (int j = 0; j < n; ++j)
          gx[off + j] += y[off + j] * (go[off + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (gamma.numel() != static_cast<std::size_t>(n) || beta.numel() != static_cast<std::size_t>(n)) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(n) +
                     " elements");
  }
  Tensor out = Tensor::zeros(x.shape());
  // Cache normalized activations and inverse stddev for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const double* px = x.value().data();
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  double* po = out.raw_value().data();
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    const double mean = pairwise_sum(px + off, n) / n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = px[off + j] - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (px[off + j] - mean) * is;
      (*xhat)[off + j] = xh;
      po[off + j] = xh * pg[j] + pb[j];
    }
  }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([x, gamma, beta, out, xhat, inv_std, m, n]() mutable {
      const auto& go = out.grad();
      const double* pg = gamma.value().data();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        if (x.requires_grad()) {
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dyg = go[off + j] * pg[j];
            sum_dy += dyg;
            sum_dy_xh += dyg * (*xhat)[off + j];
          }
          auto& gx = x.grad();
          const double is = (*inv_std)[i];
          for (int j = 0; j < n; ++j) {
            const double dyg = go[off + j] * pg[j];
            gx[off + j] += is * (dyg - sum_dy / n - (*xhat)[off + j] * sum_dy_xh / n);
          }
        }
        if (gamma.requires_grad()) {
          auto& gg = gamma.grad();
          for (int j = 0; j < n; ++j) gg[j] += go[off + j] * (*xhat)[off + j];
        }
        if (beta.requires_grad()) {
          auto& gb = beta.grad();
          for (int j = 0; j < n; ++j) gb[j] += go[off + j];
        }
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.numel();
  const double* px = x.value().data();
  double* po = out.raw_value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-px[i]));
    po[i] = px[i] * s;
  }
  out.impl()->requires_grad = should_record(x.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([x, out]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      const double* px = x.value().data();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-px[i]));
        gx[i] += go[i] * s * (1.0 + px[i] * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(pairwise_sum(x.value().data(), x.numel()));
  out.impl()->requires_grad = should_record(x.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([x, out]() mutable {
      const double g = out.grad()[0];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const std::size_t n = pred.numel();
  std::vector<double>& sq = g_scratch_b;
  sq.resize(n);
  const double* pp = pred.value().data();
  const double* pt = target.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pp[i] - pt[i];
    sq[i] = d * d;
  }
  Tensor out = Tensor::scalar(pairwise_sum(sq.data(), n) / static_cast<double>(n));
  const bool rg = pred.requires_grad() || target.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([pred, target, out, n]() mutable {
      const double g = out.grad()[0] * 2.0 / static_cast<double>(n);
      const double* pp = pred.value().data();
      const double* pt = target.value().data();
      if (pred.requires_grad()) {
        auto& gp = pred.grad();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pp[i] - pt[i]);
      }
      if (target.requires_grad()) {
        auto& gt = target.grad();
        for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (pp[i] - pt[i]);
      }
    });
  }
  return out;
}

// ---------- attention ----------

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int n_heads) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  require_2d(v, "attention");
  const int nq = q.rows(), dk = q.cols();
  const int s = k.rows(), dk2 = k.cols();
  const int s2 = v.rows(), dv = v.cols();
  if (dk != dk2)
    throw ShapeError("attention: Q/K head width mismatch " + shape_str(q.shape()) +
                     " vs " + shape_str(k.shape()));
  if (s != s2)
    throw ShapeError("attention: K/V sequence mismatch " + shape_str(k.shape()) +
                     " vs " + shape_str(v.shape()));
  if (n_heads < 1 || dk % n_heads != 0 || dv % n_heads != 0)
    throw ShapeError("attention: widths not divisible by " + std::to_string(n_heads) +
                     " heads");
  const int hk = dk / n_heads, hv = dv / n_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(hk));

  Tensor out = Tensor::zeros({nq, dv});
  // Probabilities are kept for the backward pass: n_heads blocks of nq x s.
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n_heads) * nq * s);

  const double* pq = q.value().data();
  const double* pk = k.value().data();
  const double* pv = v.value().data();
  double* po = out.raw_value().data();
  std::vector<double>& vt = g_scratch_a;  // transposed V head block, hv x s
  vt.resize(static_cast<std::size_t>(hv) * s);
  for (int h = 0; h < n_heads; ++h) {
    const int qoff = h * hk, voff = h * hv;
    double* ph = probs->data() + static_cast<std::size_t>(h) * nq * s;
    for (int i = 0; i < nq; ++i) {
      double* prow = ph + static_cast<std::size_t>(i) * s;
      const double* qrow = pq + static_cast<std::size_t>(i) * dk + qoff;
      double mx = -1e300;
      for (int j = 0; j < s; ++j) {
        const double sc = alpha * pairwise_dot(qrow, pk + static_cast<std::size_t>(j) * dk + qoff, hk);
        prow[j] = sc;
        mx = std::max(mx, sc);
      }
      for (int j = 0; j < s; ++j) prow[j] = std::exp(prow[j] - mx);
      const double z = pairwise_sum(prow, s);
      for (int j = 0; j < s; ++j) prow[j] /= z;
    }
    for (int j = 0; j < s; ++j)
      for (int c = 0; c < hv; ++c)
        vt[static_cast<std::size_t>(c) * s + j] = pv[static_cast<std::size_t>(j) * dv + voff + c];
    for (int i = 0; i < nq; ++i) {
      const double* prow = ph + static_cast<std::size_t>(i) * s;
      double* orow = po + static_cast<std::size_t>(i) * dv + voff;
      for (int c = 0; c < hv; ++c)
        orow[c] = pairwise_dot(prow, vt.data() + static_cast<std::size_t>(c) * s, s);
    }
  }

  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  out.impl()->requires_grad = should_record(rg);
  if (out.requires_grad()) {
    Tape::active()->record([q, k, v, out, probs, n_heads, nq, s, dk, dv, hk, hv,
                            alpha]() mutable {
      const double* go = out.grad().data();
      const double* pq = q.value().data();
      const double* pk = k.value().data();
      const double* pv = v.value().data();
      std::vector<double> dp(static_cast<std::size_t>(nq) * s);
      for (int h = 0; h < n_heads; ++h) {
        const int qoff = h * hk, voff = h * hv;
        const double* ph = probs->data() + static_cast<std::size_t>(h) * nq * s;
        // dV += P^T dO ; dP = dO V^T
        for (int i = 0; i < nq; ++i) {
          const double* prow = ph + static_cast<std::size_t>(i) * s;
          const double* gorow = go + static_cast<std::size_t>(i) * dv + voff;
          double* dprow = dp.data() + static_cast<std::size_t>(i) * s;
          for (int j = 0; j < s; ++j) {
            const double* vrow = pv + static_cast<std::size_t>(j) * dv + voff;
            dprow[j] = dot_base(gorow, vrow, hv);
          }
          if (v.requires_grad()) {
            auto& gv = v.grad();
            for (int j = 0; j < s; ++j) {
              double* gvrow = gv.data() + static_cast<std::size_t>(j) * dv + voff;
              const double p = prow[j];
              for (int c = 0; c < hv; ++c) gvrow[c] += p * gorow[c];
            }
          }
        }
        // dS = P .* (dP - rowsum(dP .* P)); dQ += a dS K ; dK += a dS^T Q
        for (int i = 0; i < nq; ++i) {
          const double* prow = ph + static_cast<std::size_t>(i) * s;
          double* dprow = dp.data() + static_cast<std::size_t>(i) * s;
          double acc = 0.0;
          for (int j = 0; j < s; ++j) acc += dprow[j] * prow[j];
          for (int j = 0; j < s; ++j) dprow[j] = prow[j] * (dprow[j] - acc);
          const double* qrow = pq + static_cast<std::size_t>(i) * dk + qoff;
          if (q.requires_grad()) {
            auto& gq = q.grad();
            double* gqrow = gq.data() + static_cast<std::size_t>(i) * dk + qoff;
            for (int j = 0; j < s; ++j) {
              const double w = alpha * dprow[j];
              if (w == 0.0) continue;
              const double* krow = pk + static_cast<std::size_t>(j) * dk + qoff;
              for (int c = 0; c < hk; ++c) gqrow[c] += w * krow[c];
            }
          }
          if (k.requires_grad()) {
            auto& gk = k.grad();
            for (int j = 0; j < s; ++j) {
              const double w = alpha * dprow[j];
              if (w == 0.0) continue;
              double* gkrow = gk.data() + static_cast<std::size_t>(j) * dk + qoff;
              for (int c = 0; c < hk; ++c) gkrow[c] += w * qrow[c];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return multihead_attention(q, k, v, 1);
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
  require_2d(table, "gather_rows");
  const int m = table.rows(), n = table.cols();
  Tensor out = Tensor::zeros({static_cast<int>(indices.size()), n});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int r = indices[i];
    if (r < 0 || r >= m)
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                       std::to_string(m) + " rows");
    std::memcpy(out.raw_value().data() + i * n,
                table.value().data() + static_cast<std::size_t>(r) * n,
                static_cast<std::size_t>(n) * sizeof(double));
  }
  out.impl()->requires_grad = should_record(table.requires_grad());
  if (out.requires_grad()) {
    Tape::active()->record([table, out, indices, n]() mutable {
      const auto& go = out.grad();
      auto& gt = table.grad();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t dst = static_cast<std::size_t>(indices[i]) * n;
        for (int j = 0; j < n; ++j) gt[dst + j] += go[i * n + j];
      }
    });
  }
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.value())
    if (!std::isfinite(v)) return false;
  return true;
}

void ensure_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t)) throw NumericalError("non-finite values in " + where);
}

// ---------- finite-difference oracle ----------

GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<GradCheckInput>& inputs,
                                double step) {
  // Analytic pass.
  for (const auto& in : inputs) in.tensor.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f();
    if (out.numel() != 1)
      throw ShapeError("check_gradients: f must be scalar-valued");
    if (!std::isfinite(out.item()))
      throw NumericalError("check_gradients: non-finite f at evaluation point");
    tape.backward(out);
  }
  for (const auto& in : inputs) {
    if (in.tensor.has_grad())
      analytic.push_back(in.tensor.impl()->grad);
    else
      analytic.emplace_back(in.tensor.numel(), 0.0);
  }

  GradCheckReport report;
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    const Tensor& t = inputs[ii].tensor;
    GradCheckReport::PerInput per;
    per.name = inputs[ii].name;
    auto& vals = t.impl()->value;
    for (std::size_t e = 0; e < vals.size(); ++e) {
      const double saved = vals[e];
      vals[e] = saved + step;
      const double f_plus = f().item();
      vals[e] = saved - step;
      const double f_minus = f().item();
      vals[e] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericalError("check_gradients: non-finite f while perturbing " +
                             per.name + "[" + std::to_string(e) + "]");
      }
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double ad = analytic[ii][e];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-5});
      per.max_rel_error = std::max(per.max_rel_error, rel);
      per.max_abs_grad = std::max(per.max_abs_grad, std::abs(ad));
    }
    report.max_rel_error = std::max(report.max_rel_error, per.max_rel_error);
    report.inputs.push_back(std::move(per));
  }
  return report;
}

}  // namespace acot
