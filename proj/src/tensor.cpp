#include "meta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "meta/errors.hpp"

namespace meta {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Output node of an operation. History is only kept when some input needs a
// gradient, so inference-only graphs are released eagerly.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
                   const char* op, std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

const NodePtr& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
  return t.node();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void accumulate(std::vector<double>& into, const std::vector<double>& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

detail::TensorNode& Tensor::checked() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw RankError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().value.size(); }
std::span<const double> Tensor::values() const { return checked().value; }
std::span<double> Tensor::mutable_values() { return checked().value; }

double Tensor::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_string(shape()));
  return checked().value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw RankError("at(row, col) needs a rank-2 tensor, got " + shape_string(shape()));
  return checked().value.at(row * shape()[1] + col);
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
bool Tensor::has_grad() const { return checked().has_grad(); }
std::span<const double> Tensor::grad() const { return checked().grad; }
void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  const auto& n = checked();
  return Tensor(make_leaf(n.shape, n.value, requires_grad));
}

const char* Tensor::op_name() const { return checked().op; }

// ---------------------------------------------------------------------------
// Backward traversal

void backward(const Tensor& loss) {
  const NodePtr& root = node_of(loss, "backward");
  if (root->value.size() != 1) {
    throw RankError("backward needs a scalar loss, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) return;

  // Post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorNode* node : order) {
    if (node->has_grad()) {
      throw GradientStateError(
          "backward: gradients already populated; call zero_grad() before another pass");
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "matmul");
  const auto& bn = node_of(b, "matmul");
  if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0]) {
    shape_mismatch("matmul", an->shape, bn->shape);
  }
  const std::size_t m = an->shape[0], k = an->shape[1], n = bn->shape[1];
  std::vector<double> out(m * n, 0.0);
  gemm_nn(an->value.data(), bn->value.data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {an, bn}, "matmul", [m, k, n](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
    if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.ensure_grad().data(), m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "bmm");
  const auto& bn = node_of(b, "bmm");
  if (an->shape.size() != 3 || bn->shape.size() != 3 || an->shape[0] != bn->shape[0] ||
      an->shape[2] != bn->shape[1]) {
    shape_mismatch("bmm", an->shape, bn->shape);
  }
  const std::size_t batch = an->shape[0], m = an->shape[1], k = an->shape[2], n = bn->shape[2];
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(an->value.data() + s * m * k, bn->value.data() + s * k * n, out.data() + s * m * n, m, k, n);
  }
  return make_result({batch, m, n}, std::move(out), {an, bn}, "bmm",
                     [batch, m, k, n](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       for (std::size_t s = 0; s < batch; ++s) {
                         const double* g = self.grad.data() + s * m * n;
                         if (pa.requires_grad) {
                           gemm_nt(g, pb.value.data() + s * k * n, pa.ensure_grad().data() + s * m * k, m, n, k);
                         }
                         if (pb.requires_grad) {
                           gemm_tn(pa.value.data() + s * m * k, g, pb.ensure_grad().data() + s * k * n, m, k, n);
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  const auto& xn = node_of(x, "transpose");
  const std::size_t r = xn->shape.size();
  if (r != 2 && r != 3) throw RankError("transpose needs rank 2 or 3, got " + shape_string(xn->shape));
  const std::size_t batch = r == 3 ? xn->shape[0] : 1;
  const std::size_t rows = xn->shape[r - 2], cols = xn->shape[r - 1];
  auto swap_last = [batch, rows, cols](const double* src, double* dst, bool forward) {
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t off = s * rows * cols;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          if (forward) dst[off + j * rows + i] = src[off + i * cols + j];
          else dst[off + i * cols + j] += src[off + j * rows + i];
        }
    }
  };
  std::vector<double> out(xn->value.size());
  swap_last(xn->value.data(), out.data(), true);
  Shape shape = xn->shape;
  std::swap(shape[r - 2], shape[r - 1]);
  return make_result(std::move(shape), std::move(out), {xn}, "transpose",
                     [swap_last](TensorNode& self) {
                       swap_last(self.grad.data(), self.parents[0]->ensure_grad().data(), false);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& xn = node_of(x, "reshape");
  if (shape_numel(shape) != xn->value.size()) shape_mismatch("reshape", xn->shape, shape);
  return make_result(std::move(shape), xn->value, {xn}, "reshape", [](TensorNode& self) {
    accumulate(self.parents[0]->ensure_grad(), self.grad);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "add");
  const auto& bn = node_of(b, "add");
  if (an->shape == bn->shape) {
    std::vector<double> out(an->value);
    accumulate(out, bn->value);
    return make_result(an->shape, std::move(out), {an, bn}, "add", [](TensorNode& self) {
      for (auto& p : self.parents)
        if (p->requires_grad) accumulate(p->ensure_grad(), self.grad);
    });
  }
  // Bias broadcast over leading axes.
  if (bn->shape.size() == 1 && !an->shape.empty() && an->shape.back() == bn->shape[0]) {
    const std::size_t width = bn->shape[0];
    const std::size_t rows = an->value.size() / width;
    std::vector<double> out(an->value);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < width; ++j) out[i * width + j] += bn->value[j];
    return make_result(an->shape, std::move(out), {an, bn}, "add_bias", [rows, width](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) accumulate(pa.ensure_grad(), self.grad);
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < width; ++j) g[j] += self.grad[i * width + j];
      }
    });
  }
  shape_mismatch("add", an->shape, bn->shape);
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "subtract");
  const auto& bn = node_of(b, "subtract");
  if (an->shape != bn->shape) shape_mismatch("subtract", an->shape, bn->shape);
  std::vector<double> out(an->value);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bn->value[i];
  return make_result(an->shape, std::move(out), {an, bn}, "subtract", [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) accumulate(pa.ensure_grad(), self.grad);
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "mul");
  const auto& bn = node_of(b, "mul");
  if (an->shape != bn->shape) shape_mismatch("mul", an->shape, bn->shape);
  std::vector<double> out(an->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * bn->value[i];
  return make_result(an->shape, std::move(out), {an, bn}, "mul", [](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto& xn = node_of(x, "scale");
  std::vector<double> out(xn->value);
  for (double& v : out) v *= factor;
  return make_result(xn->shape, std::move(out), {xn}, "scale", [factor](TensorNode& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double offset) {
  const auto& xn = node_of(x, "add_scalar");
  std::vector<double> out(xn->value);
  for (double& v : out) v += offset;
  return make_result(xn->shape, std::move(out), {xn}, "add_scalar", [](TensorNode& self) {
    accumulate(self.parents[0]->ensure_grad(), self.grad);
  });
}

Tensor relu(const Tensor& x) {
  const auto& xn = node_of(x, "relu");
  std::vector<double> out(xn->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xn->value[i], 0.0);
  return make_result(xn->shape, std::move(out), {xn}, "relu", [](TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor log(const Tensor& x) {
  const auto& xn = node_of(x, "log");
  std::vector<double> out(xn->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(xn->value[i] > 0.0)) throw std::domain_error("log of non-positive value");
    out[i] = std::log(xn->value[i]);
  }
  return make_result(xn->shape, std::move(out), {xn}, "log", [](TensorNode& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p.value[i];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

Tensor softmax_rows(const Tensor& x) {
  const auto& xn = node_of(x, "softmax_rows");
  const std::size_t width = last_dim(xn->shape);
  const std::size_t rows = xn->value.size() / width;
  std::vector<double> out(xn->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xn->value.data() + r * width;
    double* o = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (o[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  return make_result(xn->shape, std::move(out), {xn}, "softmax_rows", [rows, width](TensorNode& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * width;
      const double* dy = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const auto& xn = node_of(x, "layer_norm");
  const auto& gn = node_of(gain, "layer_norm");
  const auto& bn = node_of(bias, "layer_norm");
  const std::size_t width = last_dim(xn->shape);
  if (xn->shape.empty() || width < 2) {
    throw DegenerateRowError("layer_norm needs rows of at least 2 elements, got shape " +
                             shape_string(xn->shape));
  }
  if (gn->shape != Shape{width}) shape_mismatch("layer_norm gain", xn->shape, gn->shape);
  if (bn->shape != Shape{width}) shape_mismatch("layer_norm bias", xn->shape, bn->shape);
  const std::size_t rows = xn->value.size() / width;

  std::vector<double> normalized(xn->value.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xn->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xn->value.data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += in[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (in[j] - mean) * inv_std[r];
      normalized[r * width + j] = h;
      out[r * width + j] = h * gn->value[j] + bn->value[j];
    }
  }
  return make_result(
      xn->shape, std::move(out), {xn, gn, bn}, "layer_norm",
      [rows, width, normalized = std::move(normalized), inv_std = std::move(inv_std)](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const double n = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * width;
          const double* h = normalized.data() + r * width;
          if (pg.requires_grad) {
            auto& g = pg.ensure_grad();
            for (std::size_t j = 0; j < width; ++j) g[j] += dy[j] * h[j];
          }
          if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t j = 0; j < width; ++j) g[j] += dy[j];
          }
          if (px.requires_grad) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              const double dh = dy[j] * pg.value[j];
              sum_dh += dh;
              sum_dh_h += dh * h[j];
            }
            auto& g = px.ensure_grad();
            for (std::size_t j = 0; j < width; ++j) {
              const double dh = dy[j] * pg.value[j];
              g[r * width + j] += inv_std[r] / n * (n * dh - sum_dh - h[j] * sum_dh_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat_last_dim(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last_dim: no inputs");
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(node_of(p, "concat_last_dim"));
  const Shape& first = nodes[0]->shape;
  if (first.empty()) throw RankError("concat_last_dim needs rank >= 1");
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& n : nodes) {
    if (n->shape.size() != first.size() || !std::equal(lead.begin(), lead.end(), n->shape.begin())) {
      shape_mismatch("concat_last_dim", first, n->shape);
    }
    widths.push_back(n->shape.back());
    total += n->shape.back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      std::copy_n(nodes[p]->value.data() + r * widths[p], widths[p], out.data() + r * total + offset);
      offset += widths[p];
    }
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result(std::move(shape), std::move(out), std::move(nodes), "concat_last_dim",
                     [rows, total, widths](TensorNode& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         auto& parent = *self.parents[p];
                         if (parent.requires_grad) {
                           auto& g = parent.ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[p]; ++j)
                               g[r * widths[p] + j] += self.grad[r * total + offset + j];
                         }
                         offset += widths[p];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const auto& xn = node_of(x, "sum");
  double total = 0.0;
  for (double v : xn->value) total += v;
  return make_result({}, {total}, {xn}, "sum", [](TensorNode& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  const auto& xn = node_of(x, "mean_all");
  const double n = static_cast<double>(xn->value.size());
  double total = 0.0;
  for (double v : xn->value) total += v;
  return make_result({}, {total / n}, {xn}, "mean_all", [n](TensorNode& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0] / n;
  });
}

}  // namespace meta
