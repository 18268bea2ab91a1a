#include "deepcopy/ad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace deepcopy::ad {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not conform");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + what);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) shape_error(op, t.shape(), "must have rank " + std::to_string(rank));
}

bool tracked(const Node* n) { return n->requires_grad; }

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  const std::size_t count = shape_size(shape);
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  n->shape = std::move(shape);
  n->value.assign(count, 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(count, 0.0);
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.node_->value = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return from({n}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) shape_error("at", shape(), "must have rank 2");
  return node_->value[r * node_->shape[1] + c];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(node_->shape, node_->value, requires_grad);
}

// ---- Tape ----------------------------------------------------------------

Tensor Tape::emit(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                  const std::function<BackwardFn(Node* out)>& make_backward) {
  const bool needs_grad =
      recording_ && std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::from(std::move(shape), std::move(value), needs_grad);
  if (needs_grad) {
    BackwardFn fn = make_backward(out.node());
    ops_.push_back(Op{std::move(inputs), out, std::move(fn)});
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any tensor requiring a gradient");
  }
  for (Op& op : ops_) op.output.zero_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

// ---- primitives ----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    std::vector<double> out(m * n, 0.0);
    auto A = a.data(), B = b.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
      }
    return tape.emit({m, n}, std::move(out), {a, b}, [=](Node* o) {
      Node* an = a.node();
      Node* bn = b.node();
      return [=] {
        const auto& G = o->grad;
        if (tracked(an))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * bn->value[p * n + j];
              an->grad[i * k + p] += s;
            }
        if (tracked(bn))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = an->value[i * k + p];
              for (std::size_t j = 0; j < n; ++j) bn->grad[p * n + j] += av * G[i * n + j];
            }
      };
    });
  }
  if (a.rank() == 2 && b.rank() == 1) {
    const std::size_t m = a.dim(0), k = a.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    std::vector<double> out(m, 0.0);
    auto A = a.data(), B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p];
      out[i] = s;
    }
    return tape.emit({m}, std::move(out), {a, b}, [=](Node* o) {
      Node* an = a.node();
      Node* bn = b.node();
      return [=] {
        const auto& G = o->grad;
        for (std::size_t i = 0; i < m; ++i) {
          const double g = G[i];
          if (g == 0.0) continue;
          if (tracked(an))
            for (std::size_t p = 0; p < k; ++p) an->grad[i * k + p] += g * bn->value[p];
          if (tracked(bn))
            for (std::size_t p = 0; p < k; ++p) bn->grad[p] += g * an->value[i * k + p];
        }
      };
    });
  }
  if (a.rank() == 1 && b.rank() == 2) {
    const std::size_t k = a.dim(0), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
    std::vector<double> out(n, 0.0);
    auto A = a.data(), B = b.data();
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) out[j] += A[p] * B[p * n + j];
    return tape.emit({n}, std::move(out), {a, b}, [=](Node* o) {
      Node* an = a.node();
      Node* bn = b.node();
      return [=] {
        const auto& G = o->grad;
        for (std::size_t p = 0; p < k; ++p) {
          if (tracked(an)) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += G[j] * bn->value[p * n + j];
            an->grad[p] += s;
          }
          if (tracked(bn)) {
            const double av = an->value[p];
            for (std::size_t j = 0; j < n; ++j) bn->grad[p * n + j] += av * G[j];
          }
        }
      };
    });
  }
  shape_error("matmul", a.shape(), b.shape());
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return tape.emit({}, {s}, {a, b}, [=](Node* o) {
    Node* an = a.node();
    Node* bn = b.node();
    return [=] {
      const double g = o->grad[0];
      if (tracked(an))
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g * bn->value[i];
      if (tracked(bn))
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g * an->value[i];
    };
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return tape.emit(a.shape(), std::move(out), {a, b}, [=](Node* o) {
      Node* an = a.node();
      Node* bn = b.node();
      return [=] {
        for (std::size_t i = 0; i < o->grad.size(); ++i) {
          if (tracked(an)) an->grad[i] += o->grad[i];
          if (tracked(bn)) bn->grad[i] += o->grad[i];
        }
      };
    });
  }
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
    return tape.emit(a.shape(), std::move(out), {a, b}, [=](Node* o) {
      Node* an = a.node();
      Node* bn = b.node();
      return [=] {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = o->grad[i * n + j];
            if (tracked(an)) an->grad[i * n + j] += g;
            if (tracked(bn)) bn->grad[j] += g;
          }
      };
    });
  }
  shape_error("add", a.shape(), b.shape());
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [=](Node* o) {
    Node* an = a.node();
    Node* bn = b.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        if (tracked(an)) an->grad[i] += o->grad[i];
        if (tracked(bn)) bn->grad[i] -= o->grad[i];
      }
    };
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [=](Node* o) {
    Node* an = a.node();
    Node* bn = b.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double g = o->grad[i];
        if (tracked(an)) an->grad[i] += g * bn->value[i];
        if (tracked(bn)) bn->grad[i] += g * an->value[i];
      }
    };
  });
}

Tensor scale_by(Tape& tape, const Tensor& s, const Tensor& x) {
  if (s.size() != 1) shape_error("scale_by", s.shape(), x.shape());
  const double sv = s[0];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * x[i];
  return tape.emit(x.shape(), std::move(out), {s, x}, [=](Node* o) {
    Node* sn = s.node();
    Node* xn = x.node();
    return [=] {
      double acc = 0.0;
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        acc += o->grad[i] * xn->value[i];
        if (tracked(xn)) xn->grad[i] += o->grad[i] * sn->value[0];
      }
      if (tracked(sn)) sn->grad[0] += acc;
    };
  });
}

Tensor affine(Tape& tape, const Tensor& x, double a, double b) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b;
  return tape.emit(x.shape(), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += a * o->grad[i];
    };
  });
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t r = parts[0].rank();
  if (r != 1 && r != 2) shape_error("concat", parts[0].shape(), "must have rank 1 or 2");
  const std::size_t rows = r == 1 ? 1 : parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r || (r == 2 && p.dim(0) != rows)) shape_error("concat", parts[0].shape(), p.shape());
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
    offset += widths[k];
  }
  Shape shape = r == 1 ? Shape{total} : Shape{rows, total};
  return tape.emit(std::move(shape), std::move(out), parts, [=](Node* o) {
    std::vector<Node*> ins;
    for (const Tensor& p : parts) ins.push_back(p.node());
    return [=] {
      std::size_t off = 0;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (tracked(ins[k]))
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
              ins[k]->grad[i * widths[k] + j] += o->grad[i * total + off + j];
        off += widths[k];
      }
    };
  });
}

Tensor stack(Tape& tape, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack: no inputs");
  const std::size_t n = rows[0].size();
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.size() != n) shape_error("stack", rows[0].shape(), r.shape());
  }
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  return tape.emit({rows.size(), n}, std::move(out), rows, [=](Node* o) {
    std::vector<Node*> ins;
    for (const Tensor& r : rows) ins.push_back(r.node());
    return [=] {
      for (std::size_t k = 0; k < ins.size(); ++k)
        if (tracked(ins[k]))
          for (std::size_t j = 0; j < n; ++j) ins[k]->grad[j] += o->grad[k * n + j];
    };
  });
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 1 && x.rank() != 2) shape_error("slice", x.shape(), "must have rank 1 or 2");
  const std::size_t width = x.shape().back();
  if (begin >= end || end > width) {
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rank() == 1 ? 1 : x.dim(0);
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * width + begin + j];
  Shape shape = x.rank() == 1 ? Shape{w} : Shape{rows, w};
  return tape.emit(std::move(shape), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j) xn->grad[i * width + begin + j] += o->grad[i * w + j];
    };
  });
}

Tensor row(Tape& tape, const Tensor& m, std::size_t i) {
  require_rank("row", m, 2);
  if (i >= m.dim(0)) {
    throw IndexError("row: index " + std::to_string(i) + " out of range for shape " + shape_str(m.shape()));
  }
  const std::size_t n = m.dim(1);
  std::vector<double> out(m.data().begin() + i * n, m.data().begin() + (i + 1) * n);
  return tape.emit({n}, std::move(out), {m}, [=](Node* o) {
    Node* mn = m.node();
    return [=] {
      for (std::size_t j = 0; j < n; ++j) mn->grad[i * n + j] += o->grad[j];
    };
  });
}

Tensor transpose(Tape& tape, const Tensor& m) {
  require_rank("transpose", m, 2);
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m.data()[i * c + j];
  return tape.emit({c, r}, std::move(out), {m}, [=](Node* o) {
    Node* mn = m.node();
    return [=] {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += o->grad[j * r + i];
    };
  });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return tape.emit(x.shape(), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double y = o->value[i];
        xn->grad[i] += o->grad[i] * (1.0 - y * y);
      }
    };
  });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return tape.emit(x.shape(), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double y = o->value[i];
        xn->grad[i] += o->grad[i] * y * (1.0 - y);
      }
    };
  });
}

Tensor log(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x[i], kLogEpsilon));
  return tape.emit(x.shape(), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double v = xn->value[i];
        if (v > kLogEpsilon) xn->grad[i] += o->grad[i] / v;
      }
    };
  });
}

Tensor softmax(Tape& tape, const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) shape_error("softmax", x.shape(), "must have rank 1 or 2");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (y[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
  }
  return tape.emit(x.shape(), std::move(out), {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o->value.data() + r * n;
        const double* g = o->grad.data() + r * n;
        double inner = 0.0;
        for (std::size_t i = 0; i < n; ++i) inner += g[i] * y[i];
        for (std::size_t i = 0; i < n; ++i) xn->grad[r * n + i] += y[i] * (g[i] - inner);
      }
    };
  });
}

Tensor lookup(Tape& tape, const Tensor& table, std::size_t index) {
  require_rank("lookup", table, 2);
  if (index >= table.dim(0)) {
    throw IndexError("lookup: index " + std::to_string(index) + " out of range for table " +
                     shape_str(table.shape()));
  }
  return row(tape, table, index);
}

Tensor lookup(Tape& tape, const Tensor& table, std::span<const std::size_t> indices) {
  require_rank("lookup", table, 2);
  if (indices.empty()) throw ShapeError("lookup: empty index list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= v) {
      throw IndexError("lookup: index " + std::to_string(idx[k]) + " out of range for table " +
                       shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + idx[k] * d, d, out.begin() + k * d);
  }
  return tape.emit({idx.size(), d}, std::move(out), {table}, [=](Node* o) {
    Node* tn = table.node();
    return [=] {
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < d; ++j) tn->grad[idx[k] * d + j] += o->grad[k * d + j];
    };
  });
}

Tensor index_add(Tape& tape, const Tensor& base, std::span<const std::size_t> indices,
                 const Tensor& values) {
  require_rank("index_add", base, 1);
  require_rank("index_add", values, 1);
  if (values.size() != indices.size()) {
    throw ShapeError("index_add: " + std::to_string(indices.size()) + " indices but values of shape " +
                     shape_str(values.shape()));
  }
  const std::size_t n = base.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(base.data().begin(), base.data().end());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= n) {
      throw IndexError("index_add: index " + std::to_string(idx[k]) + " out of range for length " +
                       std::to_string(n));
    }
    out[idx[k]] += values[k];
  }
  return tape.emit(base.shape(), std::move(out), {base, values}, [=](Node* o) {
    Node* bn = base.node();
    Node* vn = values.node();
    return [=] {
      if (tracked(bn))
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += o->grad[i];
      if (tracked(vn))
        for (std::size_t k = 0; k < idx.size(); ++k) vn->grad[k] += o->grad[idx[k]];
    };
  });
}

Tensor pick(Tape& tape, const Tensor& x, std::size_t index) {
  require_rank("pick", x, 1);
  if (index >= x.size()) {
    throw IndexError("pick: index " + std::to_string(index) + " out of range for length " +
                     std::to_string(x.size()));
  }
  return tape.emit({}, {x[index]}, {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] { xn->grad[index] += o->grad[0]; };
  });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape.emit({}, {s}, {x}, [=](Node* o) {
    Node* xn = x.node();
    return [=] {
      for (double& g : xn->grad) g += o->grad[0];
    };
  });
}

}  // namespace deepcopy::ad
