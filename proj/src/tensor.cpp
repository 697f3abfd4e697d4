#include "phi/tensor.hpp"

#include <atomic>
#include <cmath>

namespace phi {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (numel_of(shape_) != int64_t(data_->size()))
    throw ShapeError("shape does not match data length");
  check_finite(*this, "tensor init");
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_ = std::make_shared<std::vector<double>>(size_t(numel_of(shape_)), 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : *t.data_) x = v;
  check_finite(t, "tensor full");
  return t;
}

std::vector<double>& Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value() requires a scalar tensor");
  return (*data_)[0];
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + where);
}

double shifted_softplus(double x) {
  // softplus(x) - ln 2, overflow-safe
  double sp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return sp - 0.6931471805599453;
}

double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

namespace {

std::atomic<uint64_t> g_tape_counter{0};

// C[m x q] (+)= A[m x p] * B[p x q]
void gemm(const double* A, const double* B, double* C, int m, int p, int q) {
#pragma omp parallel for schedule(static) if (int64_t(m) * p * q > 65536)
  for (int i = 0; i < m; ++i) {
    double* c = C + int64_t(i) * q;
    const double* a = A + int64_t(i) * p;
    for (int k = 0; k < p; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + int64_t(k) * q;
      for (int j = 0; j < q; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x p] += G[m x q] * B[p x q]^T
void gemm_nt(const double* G, const double* B, double* C, int m, int p, int q) {
#pragma omp parallel for schedule(static) if (int64_t(m) * p * q > 65536)
  for (int i = 0; i < m; ++i) {
    double* c = C + int64_t(i) * p;
    const double* g = G + int64_t(i) * q;
    for (int k = 0; k < p; ++k) {
      const double* b = B + int64_t(k) * q;
      double s = 0;
      for (int j = 0; j < q; ++j) s += g[j] * b[j];
      c[k] += s;
    }
  }
}

// C[p x q] += A[m x p]^T * G[m x q]
void gemm_tn(const double* A, const double* G, double* C, int m, int p, int q) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + int64_t(i) * p;
    const double* g = G + int64_t(i) * q;
    for (int k = 0; k < p; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      double* c = C + int64_t(k) * q;
      for (int j = 0; j < q; ++j) c[j] += av * g[j];
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tape::Tape() : id_(++g_tape_counter) {}

int Tape::watch(Tensor& t) {
  if (t.tape_id == id_ && t.node >= 0) return t.node;
  Node n;
  n.out_size = t.numel();
  n.backward = nullptr;  // leaf
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  t.tape_id = id_;
  t.node = int(nodes_.size()) - 1;
  return t.node;
}

int Tape::input_id(const Tensor& t) {
  if (t.tape_id == id_ && t.node >= 0) return t.node;
  if (t.requires_grad()) {
    // auto-watch grad-flagged leaves
    Node n;
    n.out_size = t.numel();
    n.backward = nullptr;
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    t.tape_id = id_;
    t.node = int(nodes_.size()) - 1;
    return t.node;
  }
  return -1;
}

int Tape::record(Tensor& out, std::function<void(const std::vector<double>&, Tape&)> fn) {
  Node n;
  n.out_size = out.numel();
  n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  out.tape_id = id_;
  out.node = int(nodes_.size()) - 1;
  return out.node;
}

void Tape::accumulate(int node, const double* g, int64_t size) {
  if (node < 0) return;
  auto& buf = grads_[size_t(node)];
  if (buf.empty()) buf.assign(size_t(size), 0.0);
  for (int64_t i = 0; i < size; ++i) buf[size_t(i)] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (nodes_.empty()) throw NumericError("backward on empty tape");
  if (backward_done_) throw NumericError("backward called twice on one tape");
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
  if (!on_tape(loss)) throw NumericError("loss tensor is not on this tape");
  backward_done_ = true;
  grads_[size_t(loss.node)].assign(1, 1.0);
  for (int i = loss.node; i >= 0; --i) {
    if (grads_[size_t(i)].empty()) continue;
    if (nodes_[size_t(i)].backward) nodes_[size_t(i)].backward(grads_[size_t(i)], *this);
  }
}

bool Tape::has_grad(const Tensor& t) const {
  return on_tape(t) && !grads_[size_t(t.node)].empty();
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (!on_tape(t)) throw NumericError("grad: tensor is not on this tape");
  if (!backward_done_) throw NumericError("grad: backward has not run");
  const auto& g = grads_[size_t(t.node)];
  if (g.empty()) return std::vector<double>(size_t(t.numel()), 0.0);
  return g;
}

// --- elementwise -------------------------------------------------------------

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[size_t(i)] = a.at(int(i)) + b.at(int(i));
  check_finite(out, "add");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  record(out, [pa, pb](const std::vector<double>& g, Tape& t) {
    t.accumulate(pa, g.data(), int64_t(g.size()));
    t.accumulate(pb, g.data(), int64_t(g.size()));
  });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[size_t(i)] = a.at(int(i)) - b.at(int(i));
  check_finite(out, "sub");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  record(out, [pa, pb](const std::vector<double>& g, Tape& t) {
    t.accumulate(pa, g.data(), int64_t(g.size()));
    if (pb >= 0) {
      std::vector<double> ng(g.size());
      for (size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
      t.accumulate(pb, ng.data(), int64_t(ng.size()));
    }
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[size_t(i)] = a.at(int(i)) * b.at(int(i));
  check_finite(out, "mul");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  auto da = a.shared_data(), db = b.shared_data();
  record(out, [pa, pb, da, db](const std::vector<double>& g, Tape& t) {
    std::vector<double> buf(g.size());
    if (pa >= 0) {
      for (size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * (*db)[i];
      t.accumulate(pa, buf.data(), int64_t(buf.size()));
    }
    if (pb >= 0) {
      for (size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * (*da)[i];
      t.accumulate(pb, buf.data(), int64_t(buf.size()));
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[size_t(i)] = c * a.at(int(i));
  check_finite(out, "scale");
  int pa = input_id(a);
  if (pa < 0) return out;
  record(out, [pa, c](const std::vector<double>& g, Tape& t) {
    std::vector<double> buf(g.size());
    for (size_t i = 0; i < g.size(); ++i) buf[i] = c * g[i];
    t.accumulate(pa, buf.data(), int64_t(buf.size()));
  });
  return out;
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[size_t(i)] = a.at(int(i)) + c;
  check_finite(out, "add_scalar");
  int pa = input_id(a);
  if (pa < 0) return out;
  record(out, [pa](const std::vector<double>& g, Tape& t) {
    t.accumulate(pa, g.data(), int64_t(g.size()));
  });
  return out;
}

// --- linear algebra ----------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree");
  const int m = a.dim(0), p = a.dim(1), q = b.dim(1);
  Tensor out({m, q});
  gemm(a.data().data(), b.data().data(), out.mutable_data().data(), m, p, q);
  check_finite(out, "matmul");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  auto da = a.shared_data(), db = b.shared_data();
  record(out, [pa, pb, da, db, m, p, q](const std::vector<double>& g, Tape& t) {
    if (pa >= 0) {
      std::vector<double> ga(size_t(m) * size_t(p), 0.0);
      gemm_nt(g.data(), db->data(), ga.data(), m, p, q);
      t.accumulate(pa, ga.data(), int64_t(ga.size()));
    }
    if (pb >= 0) {
      std::vector<double> gb(size_t(p) * size_t(q), 0.0);
      gemm_tn(da->data(), g.data(), gb.data(), m, p, q);
      t.accumulate(pb, gb.data(), int64_t(gb.size()));
    }
  });
  return out;
}

Tensor Tape::add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0))
    throw ShapeError("add_rowvec: shapes disagree");
  const int n = a.dim(0), c = a.dim(1);
  Tensor out({n, c});
  auto& o = out.mutable_data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) o[size_t(i) * c + j] = a.at(i, j) + b.at(j);
  check_finite(out, "add_rowvec");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  record(out, [pa, pb, n, c](const std::vector<double>& g, Tape& t) {
    t.accumulate(pa, g.data(), int64_t(g.size()));
    if (pb >= 0) {
      std::vector<double> gb(size_t(c), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) gb[size_t(j)] += g[size_t(i) * c + j];
      t.accumulate(pb, gb.data(), int64_t(gb.size()));
    }
  });
  return out;
}

Tensor Tape::conv1d_nodes(const Tensor& h, const Tensor& kernel,
                          const std::vector<int>& segments) {
  if (h.rank() != 2 || kernel.rank() != 3) throw ShapeError("conv1d_nodes: bad ranks");
  const int n = h.dim(0), cin = h.dim(1);
  const int K = kernel.dim(0), cout = kernel.dim(2);
  if (K % 2 == 0) throw ShapeError("conv1d_nodes: kernel size must be odd");
  if (kernel.dim(1) != cin) throw ShapeError("conv1d_nodes: channel mismatch");
  std::vector<int> seg = segments.empty() ? std::vector<int>{0, n} : segments;
  if (seg.front() != 0 || seg.back() != n) throw ShapeError("conv1d_nodes: bad segments");
  const int half = K / 2;
  Tensor out({n, cout});
  auto& o = out.mutable_data();
  const auto& hd = h.data();
  const auto& kd = kernel.data();
  for (size_t s = 0; s + 1 < seg.size(); ++s) {
    const int lo = seg[s], hi = seg[s + 1];
#pragma omp parallel for schedule(static) if ((hi - lo) * cin * cout * K > 65536)
    for (int i = lo; i < hi; ++i) {
      double* orow = o.data() + size_t(i) * cout;
      for (int t = 0; t < K; ++t) {
        const int src = i + t - half;
        if (src < lo || src >= hi) continue;  // zero padding at segment edges
        const double* hrow = hd.data() + size_t(src) * cin;
        const double* kslab = kd.data() + size_t(t) * cin * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const double hv = hrow[ci];
          if (hv == 0.0) continue;
          const double* kr = kslab + size_t(ci) * cout;
          for (int co = 0; co < cout; ++co) orow[co] += hv * kr[co];
        }
      }
    }
  }
  check_finite(out, "conv1d_nodes");
  int ph = input_id(h), pk = input_id(kernel);
  if (ph < 0 && pk < 0) return out;
  auto dh = h.shared_data();
  auto dk = kernel.shared_data();
  record(out, [ph, pk, dh, dk, n, cin, cout, K, half, seg](const std::vector<double>& g,
                                                           Tape& t) {
    if (ph >= 0) {
      std::vector<double> gh(size_t(n) * cin, 0.0);
      for (size_t s = 0; s + 1 < seg.size(); ++s) {
        const int lo = seg[s], hi = seg[s + 1];
        for (int i = lo; i < hi; ++i) {
          const double* grow = g.data() + size_t(i) * cout;
          for (int tt = 0; tt < K; ++tt) {
            const int src = i + tt - half;
            if (src < lo || src >= hi) continue;
            const double* kslab = dk->data() + size_t(tt) * cin * cout;
            double* ghrow = gh.data() + size_t(src) * cin;
            for (int ci = 0; ci < cin; ++ci) {
              const double* kr = kslab + size_t(ci) * cout;
              double sum = 0;
              for (int co = 0; co < cout; ++co) sum += grow[co] * kr[co];
              ghrow[ci] += sum;
            }
          }
        }
      }
      t.accumulate(ph, gh.data(), int64_t(gh.size()));
    }
    if (pk >= 0) {
      std::vector<double> gk(size_t(K) * cin * cout, 0.0);
      for (size_t s = 0; s + 1 < seg.size(); ++s) {
        const int lo = seg[s], hi = seg[s + 1];
        for (int i = lo; i < hi; ++i) {
          const double* grow = g.data() + size_t(i) * cout;
          for (int tt = 0; tt < K; ++tt) {
            const int src = i + tt - half;
            if (src < lo || src >= hi) continue;
            const double* hrow = dh->data() + size_t(src) * cin;
            double* gslab = gk.data() + size_t(tt) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double hv = hrow[ci];
              if (hv == 0.0) continue;
              double* gr = gslab + size_t(ci) * cout;
              for (int co = 0; co < cout; ++co) gr[co] += hv * grow[co];
            }
          }
        }
      }
      t.accumulate(pk, gk.data(), int64_t(gk.size()));
    }
  });
  return out;
}

// --- graph-indexed -----------------------------------------------------------

Tensor Tape::global_mean_pool(const Tensor& h, const std::vector<int>& graph_index,
                              int n_graphs) {
  if (h.rank() != 2 || int(graph_index.size()) != h.dim(0))
    throw ShapeError("global_mean_pool: index length mismatch");
  const int n = h.dim(0), c = h.dim(1);
  std::vector<int> count(size_t(n_graphs), 0);
  for (int gi : graph_index) {
    if (gi < 0 || gi >= n_graphs) throw ShapeError("global_mean_pool: graph id out of range");
    ++count[size_t(gi)];
  }
  for (int g = 0; g < n_graphs; ++g)
    if (count[size_t(g)] == 0) throw ShapeError("global_mean_pool: empty graph");
  Tensor out({n_graphs, c});
  auto& o = out.mutable_data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) o[size_t(graph_index[size_t(i)]) * c + j] += h.at(i, j);
  for (int g = 0; g < n_graphs; ++g)
    for (int j = 0; j < c; ++j) o[size_t(g) * c + j] /= double(count[size_t(g)]);
  check_finite(out, "global_mean_pool");
  int ph = input_id(h);
  if (ph < 0) return out;
  record(out, [ph, graph_index, count, n, c](const std::vector<double>& g, Tape& t) {
    std::vector<double> gh(size_t(n) * c);
    for (int i = 0; i < n; ++i) {
      const int gi = graph_index[size_t(i)];
      const double inv = 1.0 / double(count[size_t(gi)]);
      for (int j = 0; j < c; ++j) gh[size_t(i) * c + j] = g[size_t(gi) * c + j] * inv;
    }
    t.accumulate(ph, gh.data(), int64_t(gh.size()));
  });
  return out;
}

Tensor Tape::segment_sum(const Tensor& h, const std::vector<int>& graph_index, int n_graphs) {
  const bool vec = h.rank() == 1;
  if (!vec && h.rank() != 2) throw ShapeError("segment_sum: bad rank");
  const int n = vec ? h.dim(0) : h.dim(0);
  const int c = vec ? 1 : h.dim(1);
  if (int(graph_index.size()) != n) throw ShapeError("segment_sum: index length mismatch");
  Tensor out(vec ? Shape{n_graphs} : Shape{n_graphs, c});
  auto& o = out.mutable_data();
  for (int i = 0; i < n; ++i) {
    const int gi = graph_index[size_t(i)];
    if (gi < 0 || gi >= n_graphs) throw ShapeError("segment_sum: graph id out of range");
    for (int j = 0; j < c; ++j) o[size_t(gi) * c + j] += h.at(int(size_t(i) * c + j));
  }
  check_finite(out, "segment_sum");
  int ph = input_id(h);
  if (ph < 0) return out;
  record(out, [ph, graph_index, n, c](const std::vector<double>& g, Tape& t) {
    std::vector<double> gh(size_t(n) * c);
    for (int i = 0; i < n; ++i) {
      const int gi = graph_index[size_t(i)];
      for (int j = 0; j < c; ++j) gh[size_t(i) * c + j] = g[size_t(gi) * c + j];
    }
    t.accumulate(ph, gh.data(), int64_t(gh.size()));
  });
  return out;
}

Tensor Tape::gather_rows(const Tensor& t, const std::vector<int>& rows) {
  if (t.rank() != 2) throw ShapeError("gather_rows: bad rank");
  const int c = t.dim(1), n = int(rows.size());
  Tensor out({n, c});
  auto& o = out.mutable_data();
  for (int i = 0; i < n; ++i) {
    const int r = rows[size_t(i)];
    if (r < 0 || r >= t.dim(0)) throw ShapeError("gather_rows: row out of range");
    for (int j = 0; j < c; ++j) o[size_t(i) * c + j] = t.at(r, j);
  }
  check_finite(out, "gather_rows");
  int pt = input_id(t);
  if (pt < 0) return out;
  const int nrows = t.dim(0);
  record(out, [pt, rows, nrows, c](const std::vector<double>& g, Tape& tp) {
    std::vector<double> gt(size_t(nrows) * c, 0.0);
    for (size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < c; ++j) gt[size_t(rows[i]) * c + j] += g[i * size_t(c) + size_t(j)];
    tp.accumulate(pt, gt.data(), int64_t(gt.size()));
  });
  return out;
}

Tensor Tape::scatter_sum_rows(const Tensor& t, const std::vector<int>& rows, int n_out) {
  if (t.rank() != 2 || int(rows.size()) != t.dim(0))
    throw ShapeError("scatter_sum_rows: shapes disagree");
  const int e = t.dim(0), c = t.dim(1);
  Tensor out({n_out, c});
  auto& o = out.mutable_data();
  for (int i = 0; i < e; ++i) {
    const int r = rows[size_t(i)];
    if (r < 0 || r >= n_out) throw ShapeError("scatter_sum_rows: row out of range");
    for (int j = 0; j < c; ++j) o[size_t(r) * c + j] += t.at(i, j);
  }
  check_finite(out, "scatter_sum_rows");
  int pt = input_id(t);
  if (pt < 0) return out;
  record(out, [pt, rows, e, c](const std::vector<double>& g, Tape& tp) {
    std::vector<double> gt(size_t(e) * c);
    for (int i = 0; i < e; ++i)
      for (int j = 0; j < c; ++j) gt[size_t(i) * c + j] = g[size_t(rows[size_t(i)]) * c + j];
    tp.accumulate(pt, gt.data(), int64_t(gt.size()));
  });
  return out;
}

Tensor Tape::linmap(const std::shared_ptr<const LinearOp>& op, const Tensor& x,
                    Shape out_shape) {
  if (x.numel() != op->in_size) throw ShapeError("linmap: input size mismatch");
  if (numel_of(out_shape) != op->out_size) throw ShapeError("linmap: output size mismatch");
  Tensor out(std::move(out_shape));
  op->apply(x.data().data(), out.mutable_data().data());
  check_finite(out, "linmap");
  int px = input_id(x);
  if (px < 0) return out;
  record(out, [px, op](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(size_t(op->in_size), 0.0);
    op->apply_transposed(g.data(), gx.data());
    t.accumulate(px, gx.data(), int64_t(gx.size()));
  });
  return out;
}

// --- nonlinear ---------------------------------------------------------------

Tensor Tape::reshape(const Tensor& x, Shape out_shape) {
  if (numel_of(out_shape) != x.numel()) throw ShapeError("reshape: element count mismatch");
  Tensor out(std::move(out_shape), std::vector<double>(x.data()));
  int px = input_id(x);
  if (px < 0) return out;
  record(out, [px](const std::vector<double>& g, Tape& t) {
    t.accumulate(px, g.data(), int64_t(g.size()));
  });
  return out;
}

Tensor Tape::activation(const Tensor& x, Act kind) {
  Tensor out(x.shape());
  auto& o = out.mutable_data();
  if (kind == Act::ShiftedSoftplus) {
    for (int64_t i = 0; i < x.numel(); ++i) o[size_t(i)] = shifted_softplus(x.at(int(i)));
  } else {
    for (int64_t i = 0; i < x.numel(); ++i) o[size_t(i)] = silu(x.at(int(i)));
  }
  check_finite(out, "activation");
  int px = input_id(x);
  if (px < 0) return out;
  auto dx = x.shared_data();
  record(out, [px, dx, kind](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = (*dx)[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      const double d = kind == Act::ShiftedSoftplus ? s : s * (1.0 + v * (1.0 - s));
      gx[i] = g[i] * d;
    }
    t.accumulate(px, gx.data(), int64_t(gx.size()));
  });
  return out;
}

Tensor Tape::abs(const Tensor& x) {
  Tensor out(x.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < x.numel(); ++i) o[size_t(i)] = std::fabs(x.at(int(i)));
  int px = input_id(x);
  if (px < 0) return out;
  auto dx = x.shared_data();
  record(out, [px, dx](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = (*dx)[i];
      gx[i] = v > 0 ? g[i] : (v < 0 ? -g[i] : 0.0);
    }
    t.accumulate(px, gx.data(), int64_t(gx.size()));
  });
  return out;
}

Tensor Tape::square(const Tensor& x) {
  Tensor out(x.shape());
  auto& o = out.mutable_data();
  for (int64_t i = 0; i < x.numel(); ++i) o[size_t(i)] = x.at(int(i)) * x.at(int(i));
  check_finite(out, "square");
  int px = input_id(x);
  if (px < 0) return out;
  auto dx = x.shared_data();
  record(out, [px, dx](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(g.size());
    for (size_t i = 0; i < g.size(); ++i) gx[i] = 2.0 * (*dx)[i] * g[i];
    t.accumulate(px, gx.data(), int64_t(gx.size()));
  });
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.at(int(i));
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  int px = input_id(x);
  if (px < 0) return out;
  const int64_t n = x.numel();
  record(out, [px, n](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(size_t(n), g[0]);
    t.accumulate(px, gx.data(), n);
  });
  return out;
}

Tensor Tape::mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.at(int(i));
  Tensor out = Tensor::scalar(s / double(x.numel()));
  check_finite(out, "mean");
  int px = input_id(x);
  if (px < 0) return out;
  const int64_t n = x.numel();
  record(out, [px, n](const std::vector<double>& g, Tape& t) {
    std::vector<double> gx(size_t(n), g[0] / double(n));
    t.accumulate(px, gx.data(), n);
  });
  return out;
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(int(i)) * b.at(int(i));
  Tensor out = Tensor::scalar(s);
  check_finite(out, "dot");
  int pa = input_id(a), pb = input_id(b);
  if (pa < 0 && pb < 0) return out;
  auto da = a.shared_data(), db = b.shared_data();
  record(out, [pa, pb, da, db](const std::vector<double>& g, Tape& t) {
    std::vector<double> buf(da->size());
    if (pa >= 0) {
      for (size_t i = 0; i < buf.size(); ++i) buf[i] = g[0] * (*db)[i];
      t.accumulate(pa, buf.data(), int64_t(buf.size()));
    }
    if (pb >= 0) {
      for (size_t i = 0; i < buf.size(); ++i) buf[i] = g[0] * (*da)[i];
      t.accumulate(pb, buf.data(), int64_t(buf.size()));
    }
  });
  return out;
}

Tensor Tape::l2norm(const Tensor& x) {
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.at(int(i)) * x.at(int(i));
  const double nrm = std::sqrt(s);
  Tensor out = Tensor::scalar(nrm);
  check_finite(out, "l2norm");
  int px = input_id(x);
  if (px < 0) return out;
  auto dx = x.shared_data();
  record(out, [px, dx, nrm](const std::vector<double>& g, Tape& t) {
    // subgradient 0 at the origin
    std::vector<double> gx(dx->size(), 0.0);
    if (nrm > 0) {
      const double c = g[0] / nrm;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] = c * (*dx)[i];
    }
    t.accumulate(px, gx.data(), int64_t(gx.size()));
  });
  return out;
}

Tensor Tape::row_norm3(const Tensor& d) {
  if (d.rank() != 2 || d.dim(1) != 3) throw ShapeError("row_norm3: expects [E x 3]");
  const int e = d.dim(0);
  Tensor out({e});
  auto& o = out.mutable_data();
  for (int i = 0; i < e; ++i)
    o[size_t(i)] = std::sqrt(d.at(i, 0) * d.at(i, 0) + d.at(i, 1) * d.at(i, 1) +
                             d.at(i, 2) * d.at(i, 2));
  check_finite(out, "row_norm3");
  int pd = input_id(d);
  if (pd < 0) return out;
  auto dd = d.shared_data();
  auto dn = out.shared_data();
  record(out, [pd, dd, dn, e](const std::vector<double>& g, Tape& t) {
    std::vector<double> gd(size_t(e) * 3, 0.0);
    for (int i = 0; i < e; ++i) {
      const double nrm = (*dn)[size_t(i)];
      if (nrm <= 0) continue;
      const double c = g[size_t(i)] / nrm;
      for (int j = 0; j < 3; ++j) gd[size_t(i) * 3 + j] = c * (*dd)[size_t(i) * 3 + j];
    }
    t.accumulate(pd, gd.data(), int64_t(gd.size()));
  });
  return out;
}

Tensor Tape::rbf_expand(const Tensor& d, int n_rbf, double r_c) {
  if (d.rank() != 1) throw ShapeError("rbf_expand: expects [E]");
  if (n_rbf < 2) throw ShapeError("rbf_expand: need at least 2 basis functions");
  const int e = d.dim(0);
  const double spacing = r_c / double(n_rbf - 1);
  const double inv2s2 = 1.0 / (2.0 * spacing * spacing);
  const double pi = 3.14159265358979323846;
  Tensor out({e, n_rbf});
  auto& o = out.mutable_data();
  for (int i = 0; i < e; ++i) {
    const double x = d.at(i);
    const double w = x < r_c ? 0.5 * (std::cos(pi * x / r_c) + 1.0) : 0.0;
    for (int m = 0; m < n_rbf; ++m) {
      const double dm = x - double(m) * spacing;
      o[size_t(i) * n_rbf + m] = w * std::exp(-dm * dm * inv2s2);
    }
  }
  check_finite(out, "rbf_expand");
  int pd = input_id(d);
  if (pd < 0) return out;
  auto dd = d.shared_data();
  record(out, [pd, dd, e, n_rbf, r_c, spacing, inv2s2, pi](const std::vector<double>& g,
                                                           Tape& t) {
    std::vector<double> gd(size_t(e), 0.0);
    for (int i = 0; i < e; ++i) {
      const double x = (*dd)[size_t(i)];
      const double w = x < r_c ? 0.5 * (std::cos(pi * x / r_c) + 1.0) : 0.0;
      const double dw = x < r_c ? -0.5 * pi / r_c * std::sin(pi * x / r_c) : 0.0;
      double acc = 0;
      for (int m = 0; m < n_rbf; ++m) {
        const double dm = x - double(m) * spacing;
        const double ex = std::exp(-dm * dm * inv2s2);
        const double dfdx = dw * ex + w * ex * (-2.0 * dm * inv2s2);
        acc += g[size_t(i) * n_rbf + m] * dfdx;
      }
      gd[size_t(i)] = acc;
    }
    t.accumulate(pd, gd.data(), int64_t(gd.size()));
  });
  return out;
}

}  // namespace phi
