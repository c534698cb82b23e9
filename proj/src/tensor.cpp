#include "protoadapt/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace protoadapt::ad {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

// ---------------------------------------------------------------- Tensor --

const Shape& Tensor::shape() const { return tape_->at(id_).shape; }

std::size_t Tensor::size() const { return tape_->at(id_).value.size(); }

bool Tensor::requires_grad() const { return tape_->at(id_).requires_grad; }

std::span<const double> Tensor::value() const {
  const auto& v = tape_->at(id_).value;
  return {v.data(), v.size()};
}

double Tensor::scalar() const {
  const auto& v = tape_->at(id_).value;
  if (v.size() != 1) {
    throw DimensionError("scalar() on tensor of shape " +
                         shape_str(tape_->at(id_).shape));
  }
  return v[0];
}

bool Tensor::has_grad() const { return !tape_->at(id_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& g = tape_->at(id_).grad;
  return {g.data(), g.size()};
}

std::vector<double> Tensor::grad_or_zeros() const {
  const auto& n = tape_->at(id_);
  if (!n.grad.empty()) return n.grad;
  return std::vector<double>(n.value.size(), 0.0);
}

// ------------------------------------------------------------------ Tape --

namespace {

void check_no_nan(const std::vector<double>& v) {
#ifndef NDEBUG
  for (double x : v) assert(!std::isnan(x) && "forward op produced NaN");
#else
  (void)v;
#endif
}

bool is_vector_like(const Shape& s) { return s.size() <= 1; }

}  // namespace

Tensor Tape::push(Node node) {
  check_no_nan(node.value);
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

void Tape::check_same_tape(const Tensor& t) const {
  if (t.tape_ != this) {
    throw DimensionError("tensor does not belong to this tape");
  }
}

Tensor Tape::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_size(shape) != value.size()) {
    throw DimensionError("leaf: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_size(shape)) +
                         " values, got " + std::to_string(value.size()));
  }
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.shape = std::move(shape);
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor Tape::constant(double v) { return leaf({}, {v}, false); }

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node& na = at(a.id_);
  const Node& nb = at(b.id_);
  const Shape& sa = na.shape;
  const Shape& sb = nb.shape;
  if (sa.empty() || sb.empty() || sa.size() > 2 || sb.size() > 2 ||
      (sa.size() == 1 && sb.size() == 1)) {
    throw DimensionError("matmul: unsupported shapes " + shape_str(sa) +
                         " and " + shape_str(sb));
  }
  const std::size_t m = sa.size() == 2 ? sa[0] : 1;
  const std::size_t k = sa.size() == 2 ? sa[1] : sa[0];
  const std::size_t kb = sb.size() == 2 ? sb[0] : sb[0];
  const std::size_t n = sb.size() == 2 ? sb[1] : 1;
  if (k != kb) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(sa) +
                         " vs " + shape_str(sb));
  }

  Node out;
  out.op = Op::kMatMul;
  out.a = a.id_;
  out.b = b.id_;
  out.requires_grad = na.requires_grad || nb.requires_grad;
  if (sa.size() == 2 && sb.size() == 2) {
    out.shape = {m, n};
  } else if (sa.size() == 1) {
    out.shape = {n};
  } else {
    out.shape = {m};
  }
  out.value.assign(m * n, 0.0);
  const double* pa = na.value.data();
  const double* pb = nb.value.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      if (av == 0.0) continue;
      double* row = out.value.data() + i * n;
      const double* brow = pb + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return push(std::move(out));
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node& na = at(a.id_);
  const Node& nb = at(b.id_);
  if (na.shape == nb.shape) {
    Node out;
    out.op = Op::kAdd;
    out.a = a.id_;
    out.b = b.id_;
    out.requires_grad = na.requires_grad || nb.requires_grad;
    out.shape = na.shape;
    out.value.resize(na.value.size());
    for (std::size_t i = 0; i < out.value.size(); ++i) {
      out.value[i] = na.value[i] + nb.value[i];
    }
    return push(std::move(out));
  }
  if (na.shape.size() == 2 && nb.shape.size() == 1 &&
      na.shape[1] == nb.shape[0]) {
    // Row-wise bias: the only broadcast this engine has.
    Node out;
    out.op = Op::kAddRow;
    out.a = a.id_;
    out.b = b.id_;
    out.requires_grad = na.requires_grad || nb.requires_grad;
    out.shape = na.shape;
    out.value.resize(na.value.size());
    const std::size_t rows = na.shape[0];
    const std::size_t cols = na.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        out.value[i * cols + j] = na.value[i * cols + j] + nb.value[j];
      }
    }
    return push(std::move(out));
  }
  throw DimensionError("add: incompatible shapes " + shape_str(na.shape) +
                       " and " + shape_str(nb.shape));
}

Tensor Tape::scale(Tensor a, double factor) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  Node out;
  out.op = Op::kScale;
  out.a = a.id_;
  out.aux = factor;
  out.requires_grad = na.requires_grad;
  out.shape = na.shape;
  out.value.resize(na.value.size());
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    out.value[i] = na.value[i] * factor;
  }
  return push(std::move(out));
}

Tensor Tape::relu(Tensor a) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  Node out;
  out.op = Op::kRelu;
  out.a = a.id_;
  out.requires_grad = na.requires_grad;
  out.shape = na.shape;
  out.value.resize(na.value.size());
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    out.value[i] = na.value[i] > 0.0 ? na.value[i] : 0.0;
  }
  return push(std::move(out));
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat: empty input list");
  }
  Node out;
  out.op = Op::kConcat;
  out.inputs.reserve(parts.size());
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    check_same_tape(p);
    const Node& np = at(p.id_);
    if (!is_vector_like(np.shape)) {
      throw DimensionError("concat: input of shape " + shape_str(np.shape) +
                           " is not a scalar or vector");
    }
    out.requires_grad = out.requires_grad || np.requires_grad;
    out.inputs.push_back(p.id_);
    total += np.value.size();
  }
  out.shape = {total};
  out.value.reserve(total);
  for (std::int32_t id : out.inputs) {
    const Node& np = at(id);
    out.value.insert(out.value.end(), np.value.begin(), np.value.end());
  }
  return push(std::move(out));
}

Tensor Tape::sq_euclidean(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node& na = at(a.id_);
  const Node& nb = at(b.id_);
  if (na.value.size() != nb.value.size()) {
    throw DimensionError("sq_euclidean: lengths differ, " +
                         shape_str(na.shape) + " vs " + shape_str(nb.shape));
  }
  Node out;
  out.op = Op::kSqEuclidean;
  out.a = a.id_;
  out.b = b.id_;
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.shape = {};
  double acc = 0.0;
  for (std::size_t i = 0; i < na.value.size(); ++i) {
    const double d = na.value[i] - nb.value[i];
    acc += d * d;
  }
  out.value = {acc};
  return push(std::move(out));
}

Tensor Tape::softmax_neg(Tensor v) {
  check_same_tape(v);
  const Node& nv = at(v.id_);
  if (!is_vector_like(nv.shape)) {
    throw DimensionError("softmax_neg: expected a vector, got " +
                         shape_str(nv.shape));
  }
  Node out;
  out.op = Op::kSoftmaxNeg;
  out.a = v.id_;
  out.requires_grad = nv.requires_grad;
  out.shape = nv.shape;
  const std::size_t n = nv.value.size();
  out.value.resize(n);
  // Stabilize exp(-v) by shifting with the largest exponent.
  double hi = -nv.value[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, -nv.value[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.value[i] = std::exp(-nv.value[i] - hi);
    z += out.value[i];
  }
  for (std::size_t i = 0; i < n; ++i) out.value[i] /= z;
  return push(std::move(out));
}

Tensor Tape::log(Tensor a) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  Node out;
  out.op = Op::kLog;
  out.a = a.id_;
  out.requires_grad = na.requires_grad;
  out.shape = na.shape;
  out.value.resize(na.value.size());
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    out.value[i] = std::log(std::max(na.value[i], kLogFloor));
  }
  return push(std::move(out));
}

Tensor Tape::sum(Tensor a) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  Node out;
  out.op = Op::kSum;
  out.a = a.id_;
  out.requires_grad = na.requires_grad;
  out.shape = {};
  double acc = 0.0;
  for (double x : na.value) acc += x;
  out.value = {acc};
  return push(std::move(out));
}

Tensor Tape::mean(Tensor a) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  if (na.value.empty()) {
    throw DimensionError("mean: empty tensor");
  }
  Node out;
  out.op = Op::kMean;
  out.a = a.id_;
  out.requires_grad = na.requires_grad;
  out.shape = {};
  double acc = 0.0;
  for (double x : na.value) acc += x;
  out.value = {acc / static_cast<double>(na.value.size())};
  return push(std::move(out));
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node& na = at(a.id_);
  const Node& nb = at(b.id_);
  if (na.shape != nb.shape) {
    throw DimensionError("mul: shapes differ, " + shape_str(na.shape) +
                         " vs " + shape_str(nb.shape));
  }
  Node out;
  out.op = Op::kMul;
  out.a = a.id_;
  out.b = b.id_;
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.shape = na.shape;
  out.value.resize(na.value.size());
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    out.value[i] = na.value[i] * nb.value[i];
  }
  return push(std::move(out));
}

Tensor Tape::reciprocal_guarded(Tensor a, double guard) {
  check_same_tape(a);
  const Node& na = at(a.id_);
  if (na.value.size() != 1) {
    throw DimensionError("reciprocal_guarded: expected a scalar, got " +
                         shape_str(na.shape));
  }
  Node out;
  out.op = Op::kRecipGuard;
  out.a = a.id_;
  out.aux = guard;
  out.requires_grad = na.requires_grad;
  out.shape = {};
  out.value = {1.0 / (na.value[0] + guard)};
  return push(std::move(out));
}

// ------------------------------------------------------------- backward --

std::vector<double>& Tape::grad_buffer(std::int32_t id) {
  Node& n = at(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Tensor root) {
  check_same_tape(root);
  if (root.size() != 1) {
    throw DimensionError("backward: root must be a scalar, got shape " +
                         shape_str(root.shape()));
  }
  grad_buffer(root.id_)[0] += 1.0;
  for (std::int32_t id = root.id_; id >= 0; --id) {
    backward_node(id);
  }
}

void Tape::backward_node(std::int32_t id) {
  Node& n = at(id);
  if (n.grad.empty() || n.op == Op::kLeaf || !n.requires_grad) return;
  const std::vector<double>& g = n.grad;

  auto wants = [&](std::int32_t in) { return at(in).requires_grad; };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul: {
      const Node& na = at(n.a);
      const Node& nb = at(n.b);
      const std::size_t m = na.shape.size() == 2 ? na.shape[0] : 1;
      const std::size_t k = na.shape.size() == 2 ? na.shape[1] : na.shape[0];
      const std::size_t cols = nb.shape.size() == 2 ? nb.shape[1] : 1;
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        const double* pb = nb.value.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0.0;
            const double* grow = g.data() + i * cols;
            const double* brow = pb + t * cols;
            for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
            ga[i * k + t] += acc;
          }
        }
      }
      if (wants(n.b)) {
        auto& gb = grad_buffer(n.b);
        const double* pa = na.value.data();
        for (std::size_t t = 0; t < k; ++t) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = pa[i * k + t];
            if (av == 0.0) continue;
            double* brow = gb.data() + t * cols;
            const double* grow = g.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) brow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case Op::kAdd: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::kAddRow: {
      const std::size_t rows = n.shape[0];
      const std::size_t cols = n.shape[1];
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
      break;
    }
    case Op::kScale: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.aux;
      }
      break;
    }
    case Op::kRelu: {
      if (wants(n.a)) {
        const Node& na = at(n.a);
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (na.value[i] > 0.0) ga[i] += g[i];
        }
      }
      break;
    }
    case Op::kConcat: {
      std::size_t off = 0;
      for (std::int32_t in : n.inputs) {
        const std::size_t len = at(in).value.size();
        if (wants(in)) {
          auto& gi = grad_buffer(in);
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
        }
        off += len;
      }
      break;
    }
    case Op::kSqEuclidean: {
      const Node& na = at(n.a);
      const Node& nb = at(n.b);
      const double go = g[0];
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < na.value.size(); ++i) {
          ga[i] += go * 2.0 * (na.value[i] - nb.value[i]);
        }
      }
      if (wants(n.b)) {
        auto& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < na.value.size(); ++i) {
          gb[i] -= go * 2.0 * (na.value[i] - nb.value[i]);
        }
      }
      break;
    }
    case Op::kSoftmaxNeg: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        const std::vector<double>& p = n.value;
        double dot = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) dot += g[i] * p[i];
        for (std::size_t i = 0; i < p.size(); ++i) {
          ga[i] += -p[i] * (g[i] - dot);
        }
      }
      break;
    }
    case Op::kLog: {
      if (wants(n.a)) {
        const Node& na = at(n.a);
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (na.value[i] > kLogFloor) ga[i] += g[i] / na.value[i];
        }
      }
      break;
    }
    case Op::kSum: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        const double go = g[0];
        for (double& x : ga) x += go;
      }
      break;
    }
    case Op::kMean: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        const double go = g[0] / static_cast<double>(ga.size());
        for (double& x : ga) x += go;
      }
      break;
    }
    case Op::kMul: {
      const Node& na = at(n.a);
      const Node& nb = at(n.b);
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb.value[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_buffer(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na.value[i];
      }
      break;
    }
    case Op::kRecipGuard: {
      if (wants(n.a)) {
        auto& ga = grad_buffer(n.a);
        const double out = n.value[0];
        ga[0] += -g[0] * out * out;
      }
      break;
    }
  }
}

}  // namespace protoadapt::ad
