#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nur/tensor.hpp"

namespace nur {

// Row-major boolean matrix; true = the row may attend to the column.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool fill = false) : rows(r), cols(c), bits(r * c, fill ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * cols + c] = v ? 1 : 0; }

  std::size_t row_count(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols; ++c) n += bits[r * cols + c];
    return n;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  inline const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Records forward ops; backward() replays them in exact reverse order.
//
// Parameter leaves are not copied: their value is read from the Parameter and
// their gradient accumulates directly into Parameter::grad. A tape built with
// grad disabled records values only, for inference.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }

  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.src = &p;
    n.sink = (grad_enabled_ && p.trainable) ? &p : nullptr;
    n.needs_grad = n.sink != nullptr;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.src = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Records an op output. The backward closure is kept only if some input
  // needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
      for (const auto& in : inputs) {
        require(in.tape() == this, "op inputs must live on the same tape");
        if (nodes_[in.id()].needs_grad) n.needs_grad = true;
      }
      if (n.needs_grad) n.backward = std::move(fn);
    }
    return push(std::move(n));
  }

  const Tensor& value(std::uint32_t id) const {
    const auto& n = nodes_[id];
    return n.src != nullptr ? n.src->value : n.value;
  }

  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id()); }

  // Gradient buffer for a node, allocated on first use.
  Tensor& grad(std::uint32_t id) {
    auto& n = nodes_[id];
    if (n.sink != nullptr) return n.sink->grad;
    if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
    return n.grad;
  }
  Tensor& grad(Var v) { return grad(v.id()); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate (+=).
  void backward(Var loss) {
    require(grad_enabled_, "backward on a tape recorded without gradients");
    require(loss.tape() == this, "loss does not belong to this tape");
    require(value(loss.id()).size() == 1, "backward requires a scalar loss");
    if (!nodes_[loss.id()].needs_grad) return;
    grad(loss.id())[0] += 1.0;
    for (std::int64_t i = loss.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    const Parameter* src = nullptr;
    Parameter* sink = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Ops. Every op produces a 2-D [rows x cols] tensor except reductions, which
// produce shape {1}.

namespace ad {

namespace detail {

inline Tensor mat(std::size_t r, std::size_t c) { return Tensor::matrix(r, c); }

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.rows() == k, "matmul: inner dimensions differ");
  Tensor out = detail::mat(m, n);
  detail::gemm_nn(A.data(), B.data(), out.data(), m, k, n);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) detail::gemm_nt(g.data(), t.value(b.id()).data(), t.grad(a).data(), m, n, k);
    if (t.needs_grad(b)) detail::gemm_tn(t.value(a.id()).data(), g.data(), t.grad(b).data(), m, k, n);
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  require(B.cols() == k, "matmul_nt: inner dimensions differ");
  Tensor out = detail::mat(m, n);
  detail::gemm_nt(A.data(), B.data(), out.data(), m, k, n);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) detail::gemm_nn(g.data(), t.value(b.id()).data(), t.grad(a).data(), m, n, k);
    if (t.needs_grad(b)) detail::gemm_tn(g.data(), t.value(a.id()).data(), t.grad(b).data(), m, n, k);
  });
}

inline Var add(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.size() == B.size() && A.rows() == B.rows(), "add: shape mismatch");
  Tensor out = detail::mat(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto& gv = t.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.size() == B.size() && A.rows() == B.rows(), "sub: shape mismatch");
  Tensor out = detail::mat(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.size() == B.size() && A.rows() == B.rows(), "mul: shape mismatch");
  Tensor out = detail::mat(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto& A = t.value(a.id());
    const auto& B = t.value(b.id());
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

inline Var scale(Var a, double s) {
  const auto& A = a.value();
  Tensor out = detail::mat(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

// a[r, :] + bias for every row r.
inline Var add_rowvec(Var a, Var bias) {
  const auto& A = a.value();
  const auto& B = bias.value();
  const std::size_t r = A.rows(), c = A.cols();
  require(B.size() == c, "add_rowvec: bias width mismatch");
  Tensor out = detail::mat(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = A[i * c + j] + B[j];
  return a.tape()->record(std::move(out), {a, bias}, [a, bias, r, c](Tape& t, const Tensor& g) {
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bias)) {
      auto& gb = t.grad(bias);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

// tanh-approximated GELU.
inline Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto& A = a.value();
  Tensor out = detail::mat(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = A[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const auto& A = t.value(a.id());
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = A[i];
      const double u = kC * (x + kA * x * x * x);
      const double th = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
}

// Row-wise softmax over the allowed columns; masked positions are exactly 0.
// A row with no allowed column is a contract violation.
inline Var masked_softmax(Var scores, const Mask& mask) {
  const auto& S = scores.value();
  const std::size_t r = S.rows(), c = S.cols();
  require(mask.rows == r && mask.cols == c, "masked_softmax: mask shape mismatch");
  Tensor out = detail::mat(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask(i, j)) continue;
      any = true;
      mx = std::max(mx, S[i * c + j]);
    }
    if (!any) throw ContractViolation("masked_softmax: row " + std::to_string(i) + " is fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask(i, j)) continue;
      const double e = std::exp(S[i * c + j] - mx);
      out[i * c + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  const std::uint32_t self = static_cast<std::uint32_t>(scores.tape()->size());
  return scores.tape()->record(std::move(out), {scores}, [scores, self, r, c](Tape& t, const Tensor& g) {
    const auto& P = t.value(self);
    auto& gs = t.grad(scores);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += P[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gs[i * c + j] += P[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  const std::size_t r = X.rows(), d = X.cols();
  require(G.size() == d && B.size() == d, "layer_norm: gain/bias width mismatch");
  require(eps > 0.0, "layer_norm: eps must be positive");
  Tensor out = detail::mat(r, d);
  Tensor xhat = detail::mat(r, d);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += X[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double z = X[i * d + j] - mean;
      var += z * z;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (X[i * d + j] - mean) * inv_std[i];
      xhat[i * d + j] = xh;
      out[i * d + j] = xh * G[j] + B[j];
    }
  }
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const auto& G = t.value(gain.id());
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              if (t.needs_grad(gain)) t.grad(gain)[j] += g[i * d + j] * xhat[i * d + j];
              if (t.needs_grad(bias)) t.grad(bias)[j] += g[i * d + j];
            }
        }
        if (!t.needs_grad(x)) return;
        auto& gx = t.grad(x);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * G[j];
            m1 += dxh;
            m2 += dxh * xhat[i * d + j];
          }
          m1 *= inv_d;
          m2 *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * G[j];
            gx[i * d + j] += inv_std[i] * (dxh - m1 - xhat[i * d + j] * m2);
          }
        }
      });
}

// Selects rows of a [R x d] value; the backward pass scatter-adds.
inline Var gather_rows(Var table, std::vector<std::size_t> rows) {
  const auto& T = table.value();
  const std::size_t d = T.cols();
  for (auto r : rows) require(r < T.rows(), "gather_rows: row out of range");
  Tensor out = detail::mat(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(T.data() + rows[i] * d, d, out.data() + i * d);
  return table.tape()->record(std::move(out), {table}, [table, d, rows = std::move(rows)](Tape& t, const Tensor& g) {
    auto& gt = t.grad(table);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = gt.data() + rows[i] * d;
      const double* src = g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const auto& A = a.value();
  const std::size_t c = A.cols();
  require(start + count <= A.rows() && count > 0, "slice_rows: out of range");
  Tensor out = detail::mat(count, c);
  std::copy_n(A.data() + start * c, count * c, out.data());
  return a.tape()->record(std::move(out), {a}, [a, start, c](Tape& t, const Tensor& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[start * c + i] += g[i];
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const auto& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  require(start + count <= c && count > 0, "slice_cols: out of range");
  Tensor out = detail::mat(r, count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(A.data() + i * c + start, count, out.data() + i * count);
  return a.tape()->record(std::move(out), {a}, [a, start, r, c, count](Tape& t, const Tensor& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * c + start + j] += g[i * count + j];
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].value().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    require(p.value().cols() == c, "concat_rows: width mismatch");
    r += p.value().rows();
  }
  Tensor out = detail::mat(r, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ins](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : ins) {
      const std::size_t n = t.value(p.id()).size();
      if (t.needs_grad(p)) {
        auto& gp = t.grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].value().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    require(p.value().rows() == r, "concat_cols: height mismatch");
    c += p.value().cols();
  }
  Tensor out = detail::mat(r, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    const std::size_t pc = P.cols();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(P.data() + i * pc, pc, out.data() + i * c + off);
    off += pc;
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ins, r, c](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : ins) {
      const std::size_t pc = t.value(p.id()).cols();
      if (t.needs_grad(p)) {
        auto& gp = t.grad(p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + off + j];
      }
      off += pc;
    }
  });
}

// Same value, no gradient flows back through this node.
inline Var stop_gradient(Var a) {
  const auto& A = a.value();
  Tensor out = detail::mat(A.rows(), A.cols());
  std::copy_n(A.data(), A.size(), out.data());
  return a.tape()->constant(std::move(out));
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    auto& ga = t.grad(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

inline Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    const auto& A = t.value(a.id());
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < A.size(); ++i) ga[i] += 2.0 * A[i] * g[0];
  });
}

inline Var dot(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require(A.size() == B.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
  return a.tape()->record(Tensor::scalar(s), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto& A = t.value(a.id());
    const auto& B = t.value(b.id());
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g[0] * B[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < A.size(); ++i) gb[i] += g[0] * A[i];
    }
  });
}

// sum_i weights[i] * terms[i] over scalar terms.
inline Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: arity mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].value()[0];
  }
  std::vector<Var> ins(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape()->record(Tensor::scalar(s), terms, [ins, w](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < ins.size(); ++i)
      if (t.needs_grad(ins[i])) t.grad(ins[i])[0] += w[i] * g[0];
  });
}

}  // namespace ad
}  // namespace nur
