#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoadapt/common.hpp"

namespace protoadapt::ad {

/// Row-major extents. Rank 0 (empty shape) is a scalar, rank 1 a vector,
/// rank 2 a matrix. Nothing here needs more.
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Handle to a value recorded on a Tape. Copying a Tensor copies the handle;
/// both copies alias the same node. Valid only while the owning Tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t size() const;
  bool requires_grad() const;
  std::span<const double> value() const;
  /// Value of a one-element tensor.
  double scalar() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient, or zeros if backward never reached this node.
  std::vector<double> grad_or_zeros() const;

  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

/// Records a forward computation and replays it in reverse to accumulate
/// gradients. A tape and its tensors are confined to one thread; independent
/// tapes may run concurrently.
///
/// Conventions baked in here:
///  - all math is in 64-bit floats;
///  - relu's subgradient at exactly zero is zero;
///  - softmax_neg is computed with max-shift stabilization;
///  - log is floored at 1e-30 (zero slope below the floor).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> value,
              bool requires_grad = false);
  /// Scalar constant.
  Tensor constant(double v);

  /// Matrix product. Accepts [m,k]x[k,n] -> [m,n], and the vector forms
  /// [k]x[k,n] -> [n] and [m,k]x[k] -> [m].
  Tensor matmul(Tensor a, Tensor b);
  /// Elementwise sum of two equal-shape tensors, or a [m,n] matrix plus a
  /// length-n bias added to every row. No other broadcasting exists.
  Tensor add(Tensor a, Tensor b);
  Tensor scale(Tensor a, double factor);
  Tensor relu(Tensor a);
  /// Concatenation of scalars/vectors into one vector, in list order.
  Tensor concat(std::span<const Tensor> parts);
  /// Sum of squared differences; scalar. Inputs must have equal length.
  Tensor sq_euclidean(Tensor a, Tensor b);
  /// p_j = exp(-v_j) / sum_n exp(-v_n), stabilized by shifting with max(-v).
  Tensor softmax_neg(Tensor v);
  /// Elementwise log(max(x, 1e-30)).
  Tensor log(Tensor a);
  Tensor sum(Tensor a);
  Tensor mean(Tensor a);
  /// Elementwise product of equal-shape tensors.
  Tensor mul(Tensor a, Tensor b);
  /// 1 / (x + guard) for a scalar x; the guard keeps a collapsing denominator
  /// finite.
  Tensor reciprocal_guarded(Tensor a, double guard);

  /// Fills gradient slots with d(root)/d(node) for every node that leads to a
  /// requires_grad leaf. Root must hold exactly one element. Gradients
  /// accumulate additively across multiple uses of a node.
  void backward(Tensor root);

  std::size_t node_count() const { return nodes_.size(); }

  static constexpr double kLogFloor = 1e-30;

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kAdd,
    kAddRow,
    kScale,
    kRelu,
    kConcat,
    kSqEuclidean,
    kSoftmaxNeg,
    kLog,
    kSum,
    kMean,
    kMul,
    kRecipGuard,
  };

  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand during backward
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::vector<std::int32_t> inputs;  // concat only
    double aux = 0.0;                  // scale factor / reciprocal guard
  };

  friend class Tensor;

  Tensor push(Node node);
  Node& at(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& at(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)];
  }
  void check_same_tape(const Tensor& t) const;
  std::vector<double>& grad_buffer(std::int32_t id);
  void backward_node(std::int32_t id);

  std::vector<Node> nodes_;
};

}  // namespace protoadapt::ad
