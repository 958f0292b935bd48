#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "gridflow/diff.hpp"

namespace gridflow::diff {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using NodePtr = std::shared_ptr<Node>;

Tensor make(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_rule);
  }
  return Tensor(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not take gradients.
double* grad_of(const NodePtr& parent) {
  return parent->requires_grad ? parent->grad.data() : nullptr;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make(a.shape(), std::move(out), {a.shared()}, [df](Node& self) {
    auto& p = self.parents[0];
    double* g = grad_of(p);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * df(p->value[i], self.value[i]);
  });
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ']';
  return s.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (diff::numel(shape) != values.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = diff::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  auto t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad.assign(t.numel(), 0.0);
  return t;
}

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------

namespace {

// Below this many multiply-adds per product, plain loops beat Eigen's dispatch.
constexpr std::size_t kTinyProduct = 4096;

// c[n,m] = a[n,k] b[k,m]
void small_gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[n,k] += g[n,m] b[k,m]^T
void small_gemm_nt_acc(const double* g, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * b[p * m + j];
      c[i * k + p] += s;
    }
}

// c[k,m] += a[n,k]^T g[n,m]
void small_gemm_tn_acc(const double* a, const double* g, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* cp = c + p * m;
      const double* gi = g + i * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * gi[j];
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const auto k = a.dim(-1);
  if (b.dim(-2) != k)
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto m = b.dim(-1);

  if (b.rank() == 2) {
    const auto rows = a.numel() / k;
    Shape shape = a.shape();
    shape.back() = m;
    std::vector<double> out(rows * m);
    MutMap(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m)).noalias() =
        ConstMap(a.values().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
        ConstMap(b.values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    return make(std::move(shape), std::move(out), {a.shared(), b.shared()}, [rows, k, m](Node& self) {
      const auto R = static_cast<Eigen::Index>(rows), K = static_cast<Eigen::Index>(k),
                 M = static_cast<Eigen::Index>(m);
      ConstMap g(self.grad.data(), R, M);
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (double* ga = grad_of(pa)) MutMap(ga, R, K).noalias() += g * ConstMap(pb->value.data(), K, M).transpose();
      if (double* gb = grad_of(pb)) MutMap(gb, K, M).noalias() += ConstMap(pa->value.data(), R, K).transpose() * g;
    });
  }

  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("matmul: batched operands must both be [B,n,k] x [B,k,m], got " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  const auto batch = a.dim(0);
  const auto n = a.dim(1);
  std::vector<double> out(batch * n * m);
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  const bool tiny = n * k * m < kTinyProduct;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* ai = a.values().data() + i * n * k;
    const double* bi = b.values().data() + i * k * m;
    if (tiny) small_gemm(ai, bi, out.data() + i * n * m, n, k, m);
    else MutMap(out.data() + i * n * m, N, M).noalias() = ConstMap(ai, N, K) * ConstMap(bi, K, M);
  }
  return make({batch, n, m}, std::move(out), {a.shared(), b.shared()}, [batch, n, k, m, tiny](Node& self) {
    const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
               M = static_cast<Eigen::Index>(m);
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gi = self.grad.data() + i * n * m;
      const double* ai = pa->value.data() + i * n * k;
      const double* bi = pb->value.data() + i * k * m;
      if (tiny) {
        if (ga) small_gemm_nt_acc(gi, bi, ga + i * n * k, n, m, k);
        if (gb) small_gemm_tn_acc(ai, gi, gb + i * k * m, n, k, m);
        continue;
      }
      ConstMap g(gi, N, M);
      if (ga) MutMap(ga + i * n * k, N, K).noalias() += g * ConstMap(bi, K, M).transpose();
      if (gb) MutMap(gb + i * k * m, K, M).noalias() += ConstMap(ai, N, K).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
  const auto rows = a.dim(-2);
  const auto cols = a.dim(-1);
  const auto batch = a.numel() / (rows * cols);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = in[b * rows * cols + r * cols + c];
  return make(std::move(shape), std::move(out), {a.shared()}, [batch, rows, cols](Node& self) {
    double* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          g[b * rows * cols + r * cols + c] += self.grad[b * rows * cols + c * rows + r];
  });
}

namespace {

Tensor add_or_sub(const Tensor& a, const Tensor& b, double sign, const char* op) {
  if (!is_suffix(b.shape(), a.shape()))
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  const auto inner = b.numel();
  const auto outer = a.numel() / inner;
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += sign * bv[i];
  return make(a.shape(), std::move(out), {a.shared(), b.shared()}, [inner, outer, sign](Node& self) {
    if (double* ga = grad_of(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(self.parents[1]))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] += sign * self.grad[o * inner + i];
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return add_or_sub(b, a, 1.0, "add");
  return add_or_sub(a, b, 1.0, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) { return add_or_sub(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make(a.shape(), std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (double* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * pb->value[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * pa->value[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  const auto rows = numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rank() != lead.size() + 1 || !std::equal(lead.begin(), lead.end(), p.shape().begin()))
      throw ShapeError("concat: leading shapes differ " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
    parents.push_back(p.shared());
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make(std::move(shape), std::move(out), std::move(parents), [rows, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = grad_of(self.parents[k]))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
      off += widths[k];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto width = a.dim(-1);
  if (begin >= end || end > width)
    throw ShapeError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     to_string(a.shape()));
  const auto rows = a.numel() / width;
  const auto w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.values().data() + r * width + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return make(std::move(shape), std::move(out), {a.shared()}, [rows, width, begin, w](Node& self) {
    double* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += self.grad[r * w + c];
  });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() != 3 || index.size() != a.dim(0))
    throw ShapeError("select_rows: need [B,M,d] and B indices, got " + to_string(a.shape()));
  const auto batch = a.dim(0), m = a.dim(1), d = a.dim(2);
  for (auto i : index)
    if (i >= m) throw ShapeError("select_rows: index " + std::to_string(i) + " out of range " + std::to_string(m));
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(batch * d);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(a.values().data() + (b * m + idx[b]) * d, d, out.data() + b * d);
  return make({batch, d}, std::move(out), {a.shared()}, [idx, m, d](Node& self) {
    double* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t c = 0; c < d; ++c) g[(b * m + idx[b]) * d + c] += self.grad[b * d + c];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make(std::move(shape), std::move(out), {a.shared()}, [](Node& self) {
    if (double* g = grad_of(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(d) + "]");
  const auto rows = x.numel() / d;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto in = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = gamma[c] * h + beta[c];
    }
  }
  return make(x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
              [rows, d, xhat, inv_std](Node& self) {
                auto& px = self.parents[0];
                auto& pg = self.parents[1];
                double* gx = grad_of(px);
                double* gg = grad_of(pg);
                double* gb = grad_of(self.parents[2]);
                std::vector<double> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* g = self.grad.data() + r * d;
                  const double* h = xhat->data() + r * d;
                  if (gg)
                    for (std::size_t c = 0; c < d; ++c) gg[c] += g[c] * h[c];
                  if (gb)
                    for (std::size_t c = 0; c < d; ++c) gb[c] += g[c];
                  if (!gx) continue;
                  double mean_dh = 0.0, mean_dh_h = 0.0;
                  for (std::size_t c = 0; c < d; ++c) {
                    dxhat[c] = g[c] * pg->value[c];
                    mean_dh += dxhat[c];
                    mean_dh_h += dxhat[c] * h[c];
                  }
                  mean_dh /= static_cast<double>(d);
                  mean_dh_h /= static_cast<double>(d);
                  const double is = (*inv_std)[r];
                  for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += is * (dxhat[c] - mean_dh - h[c] * mean_dh_h);
                }
              });
}

namespace {

Tensor softmax_impl(const Tensor& logits, const Tensor* mask) {
  const auto d = logits.dim(-1);
  const auto rows = logits.numel() / d;
  std::size_t mask_period = 0;
  if (mask) {
    if (!is_suffix(mask->shape(), logits.shape()) || mask->rank() < 1)
      throw ShapeError("masked_softmax: mask " + to_string(mask->shape()) + " not broadcastable to " +
                       to_string(logits.shape()));
    for (double m : mask->values())
      if (m != 0.0 && m != 1.0) throw std::invalid_argument("masked_softmax: mask must be binary");
    mask_period = mask->numel();
  }
  std::vector<double> out(logits.numel());
  const auto in = logits.values();
  std::vector<double> row(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d; ++c) {
      double z = in[r * d + c];
      if (mask && (*mask)[(r * d + c) % mask_period] == 0.0) z += kMaskedLogit;
      row[c] = z;
      top = std::max(top, z);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      row[c] = std::exp(row[c] - top);
      total += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = row[c] / total;
  }
  return make(logits.shape(), std::move(out), {logits.shared()}, [rows, d](Node& self) {
    double* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* gy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += y[c] * (gy[c] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& logits) { return softmax_impl(logits, nullptr); }

Tensor masked_softmax(const Tensor& logits, const Tensor& mask) { return softmax_impl(logits, &mask); }

Tensor mean(const Tensor& a, int axis) {
  const auto r = static_cast<int>(a.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("mean: axis out of range for " + to_string(a.shape()));
  const auto n = a.shape()[static_cast<std::size_t>(ax)];
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.shape()[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < r; ++i) inner *= a.shape()[static_cast<std::size_t>(i)];
  Shape shape;
  for (int i = 0; i < r; ++i)
    if (i != ax) shape.push_back(a.shape()[static_cast<std::size_t>(i)]);
  if (shape.empty()) shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto in = a.values();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * n + k) * inner + i] * inv;
  return make(std::move(shape), std::move(out), {a.shared()}, [outer, n, inner, inv](Node& self) {
    double* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] += self.grad[o * inner + i] * inv;
  });
}

Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make({1}, {total}, {a.shared()}, [](Node& self) {
    if (double* g = grad_of(self.parents[0]))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const auto n = pred.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
  const double inv = 1.0 / static_cast<double>(n);
  return make({1}, {total * inv}, {pred.shared(), target.shared()}, [n, inv](Node& self) {
    auto& pp = self.parents[0];
    auto& pt = self.parents[1];
    double* gp = grad_of(pp);
    double* gt = grad_of(pt);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = 2.0 * inv * (pp->value[i] - pt->value[i]) * self.grad[0];
      if (gp) gp[i] += d;
      if (gt) gt[i] -= d;
    }
  });
}

Tensor l1_norm(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += std::abs(v);
  return make({1}, {total}, {a.shared()}, [](Node& self) {
    auto& p = self.parents[0];
    if (double* g = grad_of(p))
      for (std::size_t i = 0; i < p->value.size(); ++i)
        g[i] += self.grad[0] * (p->value[i] > 0.0 ? 1.0 : (p->value[i] < 0.0 ? -1.0 : 0.0));
  });
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? to_string(loss.shape()) : "null"));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward)
      n->grad.assign(n->value.size(), 0.0);
    else if (n->grad.size() != n->value.size())
      n->grad.assign(n->value.size(), 0.0);
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace gridflow::diff
