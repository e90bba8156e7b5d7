#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace mwnmt {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Gradients keyed by parameter id (ordered, so iteration is deterministic).
using GradientMap = std::map<std::string, Tensor>;

/// Append-only record of forward operations with their backward rules.
///
/// Node ids are topologically ordered by construction (parents always precede
/// children), so one reverse sweep visits each node exactly once. A tape is a
/// single-threaded unit of work and is consumed by backward().
class Tape {
 public:
  explicit Tape(bool tracing = true) : tracing_(tracing) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracing() const { return tracing_; }
  std::size_t node_count() const { return nodes_.size(); }

  Var constant(Tensor value) { return emit(std::move(value), {}, nullptr); }

  /// Leaf whose gradient is reported under `id`. Binding the same id twice is
  /// rejected; reuse the returned Var so gradient contributions accumulate.
  Var parameter(const std::string& id, const Tensor& value) {
    check_open("parameter");
    if (param_index_.count(id)) {
      throw std::invalid_argument("Tape::parameter: duplicate parameter id " + id);
    }
    Var v = emit(value, {}, nullptr);
    nodes_[v.id].param = static_cast<int>(param_names_.size());
    nodes_[v.id].tracked = true;
    param_index_[id] = v.id;
    param_names_.push_back(id);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  GradientMap backward(Var loss) {
    return backward(loss, [](const std::string&) { return true; });
  }

  /// Reverse sweep from a scalar loss. `wanted` selects the parameters whose
  /// gradients are needed; subgraphs that cannot reach a wanted parameter are
  /// skipped. The tape is consumed.
  GradientMap backward(Var loss, const std::function<bool(const std::string&)>& wanted) {
    if (!tracing_) throw std::logic_error("Tape::backward: tracing is disabled");
    check_open("backward");
    const Tensor& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw std::invalid_argument("Tape::backward: loss must be scalar, got " + lv.shape_str());
    }
    consumed_ = true;

    // Forward mark: nodes downstream of a wanted parameter.
    std::vector<char> want(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.param >= 0 && wanted(param_names_[n.param])) {
        want[i] = 1;
        continue;
      }
      for (int p : n.parents) {
        if (want[p]) {
          want[i] = 1;
          break;
        }
      }
    }
    want_ = std::move(want);

    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), 0);
    grad_slot(loss.id) = Tensor::scalar(1.0);

    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!has_grad_[i] || !n.back) continue;
      bool parent_wanted = false;
      for (int p : n.parents) parent_wanted |= (want_[p] != 0);
      if (!parent_wanted) continue;
      n.back(*this, i);
    }

    GradientMap out;
    for (const auto& [id, node] : param_index_) {
      if (!wanted(id)) continue;
      if (has_grad_[node]) {
        out.emplace(id, std::move(grads_[node]));
      } else {
        // Parameter never touched the loss; gradient is zero.
        out.emplace(id, Tensor(nodes_[node].value.rows(), nodes_[node].value.cols()));
      }
    }
    return out;
  }

  // --- primitive-op support -------------------------------------------------

  using BackFn = std::function<void(Tape&, int)>;

  Var emit(Tensor value, std::vector<int> parents, BackFn back) {
    check_open("emit");
    Node n;
    n.value = std::move(value);
    if (tracing_) {
      n.parents = std::move(parents);
      for (int p : n.parents) n.tracked |= nodes_[p].tracked;
      if (n.tracked) n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  bool wants(int id) const { return !want_.empty() && want_[id] != 0; }

  const Tensor& grad(int id) const { return grads_[id]; }

  Tensor& grad_slot(int id) {
    if (!has_grad_[id]) {
      const Tensor& v = nodes_[id].value;
      grads_[id] = Tensor(v.rows(), v.cols());
      has_grad_[id] = 1;
    }
    return grads_[id];
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackFn back;
    int param = -1;
    bool tracked = false;  // has a parameter among its ancestors
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("Tape: dangling Var");
    }
    return v.id;
  }

  void check_open(const char* who) const {
    if (consumed_) {
      throw std::logic_error(std::string("Tape::") + who + ": tape already consumed by backward");
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  std::vector<char> want_;
  std::map<std::string, int> param_index_;
  std::vector<std::string> param_names_;
  bool tracing_ = true;
  bool consumed_ = false;
};

// --- primitives --------------------------------------------------------------
// Each op validates shapes, computes the forward value, and records a backward
// rule that accumulates into its parents' gradient slots.

inline Var matmul(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  if (A.cols() != B.rows()) throw std::invalid_argument(shape_mismatch("matmul", A, B));
  Tensor C(A.rows(), B.cols());
  gemm_nn_acc(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.cols());
  return t.emit(std::move(C), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor &A = t.value(a), &B = t.value(b);
    if (t.wants(a.id)) {
      gemm_nt_acc(G.data(), B.data(), t.grad_slot(a.id).data(), G.rows(), G.cols(), A.cols());
    }
    if (t.wants(b.id)) {
      gemm_tn_acc(A.data(), G.data(), t.grad_slot(b.id).data(), A.rows(), A.cols(), G.cols());
    }
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  if (!A.same_shape(B)) throw std::invalid_argument(shape_mismatch("add", A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] += B.data()[i];
  return t.emit(std::move(C), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    for (Var p : {a, b}) {
      if (!t.wants(p.id)) continue;
      Tensor& g = t.grad_slot(p.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i];
    }
  });
}

/// a + r broadcast over rows; r is 1 x cols.
inline Var add_rowvec(Tape& t, Var a, Var r) {
  const Tensor &A = t.value(a), &R = t.value(r);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw std::invalid_argument(shape_mismatch("add_rowvec", A, R));
  }
  Tensor C = A;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    double* crow = C.row_ptr(i);
    for (std::size_t j = 0; j < C.cols(); ++j) crow[j] += R.data()[j];
  }
  return t.emit(std::move(C), {a.id, r.id}, [a, r](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    if (t.wants(a.id)) {
      Tensor& g = t.grad_slot(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i];
    }
    if (t.wants(r.id)) {
      Tensor& g = t.grad_slot(r.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        const double* grow = G.row_ptr(i);
        for (std::size_t j = 0; j < G.cols(); ++j) g.data()[j] += grow[j];
      }
    }
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  if (!A.same_shape(B)) throw std::invalid_argument(shape_mismatch("sub", A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] -= B.data()[i];
  return t.emit(std::move(C), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    if (t.wants(a.id)) {
      Tensor& g = t.grad_slot(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i];
    }
    if (t.wants(b.id)) {
      Tensor& g = t.grad_slot(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] -= G.data()[i];
    }
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  if (!A.same_shape(B)) throw std::invalid_argument(shape_mismatch("mul", A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] *= B.data()[i];
  return t.emit(std::move(C), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor &A = t.value(a), &B = t.value(b);
    if (t.wants(a.id)) {
      Tensor& g = t.grad_slot(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i] * B.data()[i];
    }
    if (t.wants(b.id)) {
      Tensor& g = t.grad_slot(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i] * A.data()[i];
    }
  });
}

/// a * c broadcast over columns; c is rows x 1.
inline Var mul_colvec(Tape& t, Var a, Var c) {
  const Tensor &A = t.value(a), &C = t.value(c);
  if (C.cols() != 1 || C.rows() != A.rows()) {
    throw std::invalid_argument(shape_mismatch("mul_colvec", A, C));
  }
  Tensor out = A;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double s = C.data()[i];
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < out.cols(); ++j) row[j] *= s;
  }
  return t.emit(std::move(out), {a.id, c.id}, [a, c](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor &A = t.value(a), &C = t.value(c);
    if (t.wants(a.id)) {
      Tensor& g = t.grad_slot(a.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        const double s = C.data()[i];
        const double* grow = G.row_ptr(i);
        double* orow = g.row_ptr(i);
        for (std::size_t j = 0; j < G.cols(); ++j) orow[j] += grow[j] * s;
      }
    }
    if (t.wants(c.id)) {
      Tensor& g = t.grad_slot(c.id);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        const double* grow = G.row_ptr(i);
        const double* arow = A.row_ptr(i);
        double s = 0.0;
        for (std::size_t j = 0; j < G.cols(); ++j) s += grow[j] * arow[j];
        g.data()[i] += s;
      }
    }
  });
}

inline Var one_minus(Tape& t, Var a) {
  Tensor C = t.value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] = 1.0 - C.data()[i];
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    if (!t.wants(a.id)) return;
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] -= G.data()[i];
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor C = t.value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] *= s;
  return t.emit(std::move(C), {a.id}, [a, s](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    if (!t.wants(a.id)) return;
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i] * s;
  });
}

inline Var tanh(Tape& t, Var a) {
  Tensor C = t.value(a);
  vtanh(C.data(), C.size());
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Y = t.value(Var{self});
    if (!t.wants(a.id)) return;
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) {
      const double y = Y.data()[i];
      g.data()[i] += G.data()[i] * (1.0 - y * y);
    }
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Tensor C = t.value(a);
  vsigmoid(C.data(), C.size());
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Y = t.value(Var{self});
    if (!t.wants(a.id)) return;
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) {
      const double y = Y.data()[i];
      g.data()[i] += G.data()[i] * y * (1.0 - y);
    }
  });
}

namespace detail {

inline void softmax_backward_rows(const Tensor& Y, const Tensor& G, Tensor& g) {
  for (std::size_t i = 0; i < Y.rows(); ++i) {
    const double* y = Y.row_ptr(i);
    const double* gr = G.row_ptr(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < Y.cols(); ++j) dot += y[j] * gr[j];
    double* out = g.row_ptr(i);
    for (std::size_t j = 0; j < Y.cols(); ++j) out[j] += y[j] * (gr[j] - dot);
  }
}

}  // namespace detail

/// Row softmax with max-subtraction.
inline Var softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* x = A.row_ptr(i);
    double* y = C.row_ptr(i);
    double mx = x[0];
    for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) {
      y[j] = fast_exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < A.cols(); ++j) y[j] /= sum;
  }
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    detail::softmax_backward_rows(t.value(Var{self}), t.grad(self), t.grad_slot(a.id));
  });
}

/// Row softmax over positions where keep != 0; masked positions get exactly 0.
/// Every row must keep at least one position.
inline Var softmax_rows_masked(Tape& t, Var a, const Tensor& keep) {
  const Tensor& A = t.value(a);
  if (!A.same_shape(keep)) throw std::invalid_argument(shape_mismatch("softmax_rows_masked", A, keep));
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* x = A.row_ptr(i);
    const double* m = keep.row_ptr(i);
    double* y = C.row_ptr(i);
    double mx = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < A.cols(); ++j) {
      if (m[j] == 0.0) continue;
      mx = any ? std::max(mx, x[j]) : x[j];
      any = true;
    }
    if (!any) throw std::invalid_argument("softmax_rows_masked: row " + std::to_string(i) + " is fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) {
      if (m[j] == 0.0) {
        y[j] = 0.0;
      } else {
        y[j] = fast_exp(x[j] - mx);
        sum += y[j];
      }
    }
    for (std::size_t j = 0; j < A.cols(); ++j) y[j] /= sum;
  }
  // Masked entries of Y are exactly zero, so the unmasked softmax rule is valid.
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    detail::softmax_backward_rows(t.value(Var{self}), t.grad(self), t.grad_slot(a.id));
  });
}

/// Row log-softmax; numerically safe path for log-likelihoods.
inline Var log_softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* x = A.row_ptr(i);
    double* y = C.row_ptr(i);
    double mx = x[0];
    for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) sum += fast_exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < A.cols(); ++j) y[j] = x[j] - lse;
  }
  return t.emit(std::move(C), {a.id}, [a](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    const Tensor& Y = t.value(Var{self});
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < Y.rows(); ++i) {
      const double* y = Y.row_ptr(i);
      const double* gr = G.row_ptr(i);
      double gsum = 0.0;
      for (std::size_t j = 0; j < Y.cols(); ++j) gsum += gr[j];
      double* out = g.row_ptr(i);
      for (std::size_t j = 0; j < Y.cols(); ++j) out[j] += gr[j] - fast_exp(y[j]) * gsum;
    }
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    if (P.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += P.cols();
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* src = P.row_ptr(i);
      double* dst = C.row_ptr(i) + off;
      for (std::size_t j = 0; j < P.cols(); ++j) dst[j] = src[j];
    }
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.cols();
  }
  return t.emit(std::move(C), ids, [ids, offsets](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.wants(ids[k])) continue;
      Tensor& g = t.grad_slot(ids[k]);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* src = G.row_ptr(i) + offsets[k];
        double* dst = g.row_ptr(i);
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
      }
    }
  });
}

inline Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = t.value(a);
  if (begin + count > A.cols() || count == 0) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of " + A.shape_str());
  }
  Tensor C(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* src = A.row_ptr(i) + begin;
    double* dst = C.row_ptr(i);
    for (std::size_t j = 0; j < count; ++j) dst[j] = src[j];
  }
  return t.emit(std::move(C), {a.id}, [a, begin](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.rows(); ++i) {
      const double* src = G.row_ptr(i);
      double* dst = g.row_ptr(i) + begin;
      for (std::size_t j = 0; j < G.cols(); ++j) dst[j] += src[j];
    }
  });
}

/// Row gather from an embedding table; backward scatter-adds.
inline Var embedding_rows(Tape& t, Var table, const std::vector<int>& ids) {
  const Tensor& E = t.value(table);
  if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id list");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= E.rows()) {
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(E.rows()));
    }
  }
  Tensor C(ids.size(), E.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = E.row_ptr(static_cast<std::size_t>(ids[i]));
    double* dst = C.row_ptr(i);
    for (std::size_t j = 0; j < E.cols(); ++j) dst[j] = src[j];
  }
  return t.emit(std::move(C), {table.id}, [table, ids](Tape& t, int self) {
    if (!t.wants(table.id)) return;
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_slot(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* src = G.row_ptr(i);
      double* dst = g.row_ptr(static_cast<std::size_t>(ids[i]));
      for (std::size_t j = 0; j < G.cols(); ++j) dst[j] += src[j];
    }
  });
}

/// Per-row column pick: out(i, 0) = a(i, cols[i]).
inline Var gather_cols(Tape& t, Var a, const std::vector<int>& cols) {
  const Tensor& A = t.value(a);
  if (cols.size() != A.rows()) throw std::invalid_argument("gather_cols: one index per row required");
  for (int c : cols) {
    if (c < 0 || static_cast<std::size_t>(c) >= A.cols()) {
      throw std::invalid_argument("gather_cols: column " + std::to_string(c) + " outside " + A.shape_str());
    }
  }
  Tensor C(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) C.data()[i] = A(i, static_cast<std::size_t>(cols[i]));
  return t.emit(std::move(C), {a.id}, [a, cols](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.rows(); ++i) {
      g(i, static_cast<std::size_t>(cols[i])) += G.data()[i];
    }
  });
}

/// out = keep != 0 ? a : fill. Gradient flows only through kept positions.
inline Var masked_fill(Tape& t, Var a, const Tensor& keep, double fill) {
  const Tensor& A = t.value(a);
  if (!A.same_shape(keep)) throw std::invalid_argument(shape_mismatch("masked_fill", A, keep));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) {
    if (keep.data()[i] == 0.0) C.data()[i] = fill;
  }
  Tensor keep_copy = keep;
  return t.emit(std::move(C), {a.id}, [a, keep_copy](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    const Tensor& G = t.grad(self);
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (keep_copy.data()[i] != 0.0) g.data()[i] += G.data()[i];
    }
  });
}

/// Fused single-hidden-layer attention scorer, one column per source position:
/// scores(i, t) = sum_j tanh(P_t(i, j) + qk(i, j) + b(j)) * v(j).
/// Equivalent to per-position add/tanh/matvec chains, fused to avoid
/// materializing T intermediate tensors per decoder step.
inline Var attention_scores(Tape& t, const std::vector<Var>& positions, Var qk, Var b, Var v) {
  if (positions.empty()) throw std::invalid_argument("attention_scores: no positions");
  const Tensor& QK = t.value(qk);
  const Tensor& B = t.value(b);
  const Tensor& V = t.value(v);
  const std::size_t rows = QK.rows();
  const std::size_t dim = QK.cols();
  if (B.rows() != 1 || B.cols() != dim || V.rows() != dim || V.cols() != 1) {
    throw std::invalid_argument("attention_scores: scorer parameter shapes do not match " + QK.shape_str());
  }
  const std::size_t T = positions.size();
  for (Var p : positions) {
    const Tensor& P = t.value(p);
    if (P.rows() != rows || P.cols() != dim) {
      throw std::invalid_argument(shape_mismatch("attention_scores", P, QK));
    }
  }

  auto hidden = std::make_shared<Tensor>(T * rows, dim);  // tanh activations, saved for backward
  Tensor scores(rows, T);
  for (std::size_t c = 0; c < T; ++c) {
    const Tensor& P = t.value(positions[c]);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* prow = P.row_ptr(i);
      const double* qrow = QK.row_ptr(i);
      double* y = hidden->row_ptr(c * rows + i);
      for (std::size_t j = 0; j < dim; ++j) y[j] = fast_tanh(prow[j] + qrow[j] + B.data()[j]);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t j = 0;
      for (; j + 4 <= dim; j += 4) {
        s0 += y[j] * V.data()[j];
        s1 += y[j + 1] * V.data()[j + 1];
        s2 += y[j + 2] * V.data()[j + 2];
        s3 += y[j + 3] * V.data()[j + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; j < dim; ++j) s += y[j] * V.data()[j];
      scores(i, c) = s;
    }
  }

  std::vector<int> parents;
  for (Var p : positions) parents.push_back(p.id);
  parents.push_back(qk.id);
  parents.push_back(b.id);
  parents.push_back(v.id);
  std::vector<int> pos_ids(parents.begin(), parents.end() - 3);
  return t.emit(std::move(scores), parents, [pos_ids, qk, b, v, hidden](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& V = t.value(v);
    const std::size_t rows = G.rows();
    const std::size_t T = pos_ids.size();
    const std::size_t dim = V.rows();
    const bool wqk = t.wants(qk.id), wb = t.wants(b.id), wv = t.wants(v.id);
    Tensor* gqk = wqk ? &t.grad_slot(qk.id) : nullptr;
    Tensor* gb = wb ? &t.grad_slot(b.id) : nullptr;
    Tensor* gv = wv ? &t.grad_slot(v.id) : nullptr;
    for (std::size_t c = 0; c < T; ++c) {
      const bool wp = t.wants(pos_ids[c]);
      Tensor* gp = wp ? &t.grad_slot(pos_ids[c]) : nullptr;
      if (!wp && !wqk && !wb && !wv) continue;
      for (std::size_t i = 0; i < rows; ++i) {
        const double gs = G(i, c);
        if (gs == 0.0) continue;
        const double* y = hidden->row_ptr(c * rows + i);
        double* gprow = gp ? gp->row_ptr(i) : nullptr;
        double* gqrow = gqk ? gqk->row_ptr(i) : nullptr;
        for (std::size_t j = 0; j < dim; ++j) {
          const double yj = y[j];
          if (gv) gv->data()[j] += gs * yj;
          const double dpre = gs * V.data()[j] * (1.0 - yj * yj);
          if (gprow) gprow[j] += dpre;
          if (gqrow) gqrow[j] += dpre;
          if (gb) gb->data()[j] += dpre;
        }
      }
    }
  });
}

/// out(i, :) = sum_t alpha(i, t) * H_t(i, :) — the attention pooling step.
inline Var weighted_sum(Tape& t, const std::vector<Var>& positions, Var alpha) {
  if (positions.empty()) throw std::invalid_argument("weighted_sum: no positions");
  const Tensor& A = t.value(alpha);
  const std::size_t rows = A.rows();
  const std::size_t T = positions.size();
  if (A.cols() != T) {
    throw std::invalid_argument("weighted_sum: weight columns " + A.shape_str() + " vs " +
                                std::to_string(T) + " positions");
  }
  const std::size_t dim = t.value(positions[0]).cols();
  Tensor out(rows, dim);
  for (std::size_t c = 0; c < T; ++c) {
    const Tensor& H = t.value(positions[c]);
    if (H.rows() != rows || H.cols() != dim) {
      throw std::invalid_argument(shape_mismatch("weighted_sum", H, out));
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const double w = A(i, c);
      if (w == 0.0) continue;
      const double* hrow = H.row_ptr(i);
      double* orow = out.row_ptr(i);
      for (std::size_t j = 0; j < dim; ++j) orow[j] += w * hrow[j];
    }
  }
  std::vector<int> parents;
  for (Var p : positions) parents.push_back(p.id);
  parents.push_back(alpha.id);
  std::vector<int> pos_ids(parents.begin(), parents.end() - 1);
  return t.emit(std::move(out), parents, [pos_ids, alpha](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& A = t.value(alpha);
    const std::size_t rows = G.rows();
    const std::size_t dim = G.cols();
    const bool wa = t.wants(alpha.id);
    Tensor* ga = wa ? &t.grad_slot(alpha.id) : nullptr;
    for (std::size_t c = 0; c < pos_ids.size(); ++c) {
      const Tensor& H = t.value(Var{pos_ids[c]});
      const bool wp = t.wants(pos_ids[c]);
      Tensor* gp = wp ? &t.grad_slot(pos_ids[c]) : nullptr;
      if (!wp && !wa) continue;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* grow = G.row_ptr(i);
        if (gp) {
          const double w = A(i, c);
          double* gh = gp->row_ptr(i);
          for (std::size_t j = 0; j < dim; ++j) gh[j] += w * grow[j];
        }
        if (ga) {
          const double* hrow = H.row_ptr(i);
          double s0 = 0.0;
          for (std::size_t j = 0; j < dim; ++j) s0 += grow[j] * hrow[j];
          ga->data()[i * pos_ids.size() + c] += s0;
        }
      }
    }
  });
}

inline Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A.data()[i];
  return t.emit(Tensor::scalar(s), {a.id}, [a](Tape& t, int self) {
    if (!t.wants(a.id)) return;
    const double gv = t.grad(self).data()[0];
    Tensor& g = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += gv;
  });
}

inline Var mean_all(Tape& t, Var a) {
  const std::size_t n = t.value(a).size();
  Var s = sum_all(t, a);
  return scale(t, s, 1.0 / static_cast<double>(n));
}

// --- gradient checking --------------------------------------------------------

/// Max over all parameter coordinates of |analytic - numeric| relative error,
/// with numeric gradients from central finite differences of step `epsilon`.
/// `f` must deterministically build a scalar loss from the bound parameters.
inline double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                         const std::vector<std::pair<std::string, Tensor>>& params,
                         double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");

  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape t(false);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& v : values) vars.push_back(t.constant(v));
    Var loss = f(t, vars);
    const Tensor& lv = t.value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw std::invalid_argument("grad_check: f must return a scalar");
    }
    return lv.data()[0];
  };

  GradientMap analytic;
  {
    Tape t(true);
    std::vector<Var> vars;
    for (const auto& [name, value] : params) vars.push_back(t.parameter(name, value));
    analytic = t.backward(f(t, vars));
  }

  std::vector<Tensor> values;
  values.reserve(params.size());
  for (const auto& [name, value] : params) values.push_back(value);

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& a_grad = analytic.at(params[p].first);
    for (std::size_t i = 0; i < values[p].size(); ++i) {
      const double keep = values[p].data()[i];
      values[p].data()[i] = keep + epsilon;
      const double up = evaluate(values);
      values[p].data()[i] = keep - epsilon;
      const double down = evaluate(values);
      values[p].data()[i] = keep;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic_v = a_grad.data()[i];
      const double denom = std::max(1e-8, std::abs(analytic_v) + std::abs(numeric));
      worst = std::max(worst, std::abs(analytic_v - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mwnmt
