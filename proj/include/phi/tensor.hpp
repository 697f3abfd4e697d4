#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace phi {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int>;

int64_t numel_of(const Shape& s);

// Dense row-major 64-bit tensor. Data is shared between copies; use
// mutable_data() before writing so aliased tensors (and tape captures)
// stay intact.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(Shape shape);  // zero-filled

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[size_t(i)]; }
  int rank() const { return int(shape_.size()); }
  int64_t numel() const { return int64_t(data_->size()); }

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& mutable_data();
  std::shared_ptr<const std::vector<double>> shared_data() const { return data_; }

  double value() const;  // scalar access
  double at(int i) const { return (*data_)[size_t(i)]; }
  double at(int i, int j) const { return (*data_)[size_t(i) * size_t(shape_[1]) + size_t(j)]; }
  void set(int i, double v) { mutable_data()[size_t(i)] = v; }
  void set(int i, int j, double v) {
    mutable_data()[size_t(i) * size_t(shape_[1]) + size_t(j)] = v;
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  // Tape bookkeeping (managed by Tape). Mutable so grad-flagged leaves can
  // be auto-watched when an op first sees them.
  mutable uint64_t tape_id = 0;  // 0 = not on any tape
  mutable int node = -1;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
};

// Constant linear operator captured by linmap(); y = A x and x = A^T y.
struct LinearOp {
  int64_t in_size = 0;
  int64_t out_size = 0;
  std::function<void(const double* x, double* y)> apply;
  std::function<void(const double* y, double* x)> apply_transposed;
};

enum class Act { ShiftedSoftplus, Silu };

// Reverse-mode tape, rebuilt per forward pass. Nodes are recorded in
// topological order by construction; backward() visits each exactly once
// and may be called once per tape.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  uint64_t id() const { return id_; }
  int size() const { return int(nodes_.size()); }

  // Registers a leaf. Grad-flagged tensors are auto-watched by ops.
  int watch(Tensor& t);
  bool on_tape(const Tensor& t) const { return t.tape_id == id_ && t.node >= 0; }

  void backward(const Tensor& loss);
  bool has_grad(const Tensor& t) const;
  // Gradient of the last backward() w.r.t. a watched tensor (zeros if the
  // loss did not depend on it).
  std::vector<double> grad(const Tensor& t) const;

  // --- recorded operations -------------------------------------------------
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add_rowvec(const Tensor& a, const Tensor& b);  // [n x C] + [C]
  Tensor conv1d_nodes(const Tensor& h, const Tensor& kernel,
                      const std::vector<int>& segments = {});
  Tensor global_mean_pool(const Tensor& h, const std::vector<int>& graph_index, int n_graphs);
  Tensor segment_sum(const Tensor& h, const std::vector<int>& graph_index, int n_graphs);
  Tensor gather_rows(const Tensor& t, const std::vector<int>& rows);
  Tensor scatter_sum_rows(const Tensor& t, const std::vector<int>& rows, int n_out);
  Tensor linmap(const std::shared_ptr<const LinearOp>& op, const Tensor& x, Shape out_shape);
  Tensor reshape(const Tensor& x, Shape out_shape);
  Tensor activation(const Tensor& x, Act kind);
  Tensor abs(const Tensor& x);
  Tensor square(const Tensor& x);
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor dot(const Tensor& a, const Tensor& b);
  Tensor l2norm(const Tensor& x);
  Tensor row_norm3(const Tensor& d);  // [E x 3] -> [E], Euclidean row norms
  // Gaussian radial basis on [0, r_c] with a cosine window that is zero at
  // the cutoff; d is [E], output [E x n_rbf].
  Tensor rbf_expand(const Tensor& d, int n_rbf, double r_c);

 private:
  struct Node {
    // Accumulates parent gradients given this node's output gradient.
    std::function<void(const std::vector<double>& g, Tape& tape)> backward;
    int64_t out_size = 0;
  };

  int record(Tensor& out, std::function<void(const std::vector<double>&, Tape&)> fn);
  void accumulate(int node, const double* g, int64_t size);
  // inputs: returns node ids (watching grad-flagged leaves), or -1.
  int input_id(const Tensor& t);

  uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool backward_done_ = false;

  friend void check_finite(const Tensor& t, const char* where);
};

void check_finite(const Tensor& t, const char* where);

double shifted_softplus(double x);
double silu(double x);

}  // namespace phi
