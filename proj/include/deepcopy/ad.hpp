// Dense f64 tensors with a dynamic reverse-mode gradient tape.
//
// Every primitive takes the Tape it records onto as its first argument. A
// Tape built with recording disabled evaluates values only, which is what the
// decoders use at inference time.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepcopy::ad {

using Shape = std::vector<std::size_t>;

/// Clamp applied inside log() so absent tokens cost log(1e-12), not -inf.
inline constexpr double kLogEpsilon = 1e-12;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }

  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t row, std::size_t col) const;

  void zero_grad();
  /// Deep copy of shape and values; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend class Tape;
};

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
  /// newest first. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  /// Creates the output of a primitive. When any input needs a gradient the
  /// op is recorded; `make_backward` is only invoked in that case and
  /// receives the freshly created output node.
  Tensor emit(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
              const std::function<BackwardFn(Node* out)>& make_backward);

 private:
  struct Op {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  bool recording_;
  std::vector<Op> ops_;
};

// ---- primitives ----------------------------------------------------------
//
// Vectors are rank-1, matrices rank-2, scalars rank-0. The only broadcast is
// matrix + row-bias in add().

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// s * x for a scalar tensor s.
Tensor scale_by(Tape& tape, const Tensor& s, const Tensor& x);
/// a * x + b elementwise with constant a, b.
Tensor affine(Tape& tape, const Tensor& x, double a, double b = 0.0);
Tensor concat(Tape& tape, const std::vector<Tensor>& parts);
/// Stacks equal-length vectors as the rows of a matrix.
Tensor stack(Tape& tape, const std::vector<Tensor>& rows);
/// Half-open range [begin, end) along the last axis.
Tensor slice(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
Tensor row(Tape& tape, const Tensor& m, std::size_t i);
Tensor transpose(Tape& tape, const Tensor& m);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// log(max(x, kLogEpsilon)); the clamped region has zero gradient.
Tensor log(Tape& tape, const Tensor& x);
Tensor softmax(Tape& tape, const Tensor& x);
/// Embedding gather: row `index` of a (V, d) table.
Tensor lookup(Tape& tape, const Tensor& table, std::size_t index);
Tensor lookup(Tape& tape, const Tensor& table, std::span<const std::size_t> indices);
/// out = base; out[indices[i]] += values[i].
Tensor index_add(Tape& tape, const Tensor& base, std::span<const std::size_t> indices,
                 const Tensor& values);
/// Single element x[index] of a vector, as a scalar.
Tensor pick(Tape& tape, const Tensor& x, std::size_t index);
Tensor sum(Tape& tape, const Tensor& x);

}  // namespace deepcopy::ad
