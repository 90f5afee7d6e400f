#include "feddah/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "feddah/error.hpp"

namespace feddah::ad {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an unbound Var");
  return *a.tape();
}

void require_same_size(Var a, Var b, const char* op) {
  if (a.value().size() != b.value().size()) {
    throw UsageError(std::string(op) + ": size mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank2(Var a, const char* op) {
  if (a.value().rank() != 2) {
    throw UsageError(std::string(op) + " needs a rank-2 tensor, got " + shape_string(a.shape()));
  }
}

// Four running sums let the compiler vectorize without reassociating.
// matvec and matmul_nt share it so both produce the same bits.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Columns of W read as a matrix: its last axis.
std::size_t matrix_cols(const Tensor& W) {
  if (W.rank() < 2) throw UsageError("matrix operand needs rank >= 2, got " + shape_string(W.shape()));
  return W.shape().back();
}

}  // namespace

Var matvec(Var W, Var x) {
  Tape& tape = tape_of(W);
  const Tensor& w = W.value();
  const Tensor& xv = x.value();
  const std::size_t cols = matrix_cols(w);
  if (xv.size() != cols) {
    throw UsageError("matvec shape mismatch: W " + shape_string(w.shape()) + ", x " + shape_string(xv.shape()));
  }
  const std::size_t rows = w.size() / cols;
  Tensor y(Shape{rows});
  const double* wp = w.data().data();
  const double* xp = xv.data().data();
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(wp + r * cols, xp, cols);
  const std::size_t wid = W.id(), xid = x.id();
  const Var inputs[] = {W, x};
  return tape.record(std::move(y), inputs, [wid, xid, rows, cols](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const double* wp = t.value(wid).data().data();
    const double* xp = t.value(xid).data().data();
    const double* gp = g.data().data();
    if (t.requires_grad(wid)) {
      double* dw = Tape::adjoint(t, adj, wid).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = gp[r];
        if (gr == 0.0) continue;
        double* row = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xp[c];
      }
    }
    if (t.requires_grad(xid)) {
      double* dx = Tape::adjoint(t, adj, xid).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = gp[r];
        if (gr == 0.0) continue;
        const double* row = wp + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += gr * row[c];
      }
    }
  });
}

Var linear(Var W, Var x, Var b) { return add(matvec(W, x), b); }

Var matmul_nt(Var A, Var B) {
  Tape& tape = tape_of(A);
  const Tensor& a = A.value();
  const Tensor& b = B.value();
  const std::size_t k = matrix_cols(a);
  if (matrix_cols(b) != k) {
    throw UsageError("matmul_nt shape mismatch: " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.size() / k, n = b.size() / k;
  // B is usually the large operand (stacked generator heads), so every loop
  // walks its rows once and revisits the small A from cache.
  Tensor out(Shape{m, n});
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = bp + j * k;
    for (std::size_t i = 0; i < m; ++i) out[i * n + j] = dot(ap + i * k, brow, k);
  }
  const std::size_t aid = A.id(), bid = B.id();
  const Var inputs[] = {A, B};
  return tape.record(std::move(out), inputs, [aid, bid, m, k, n](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const double* ap = t.value(aid).data().data();
    const double* bp = t.value(bid).data().data();
    const double* gp = g.data().data();
    // dA = G B, dB = G^T A
    double* da = t.requires_grad(aid) ? Tape::adjoint(t, adj, aid).data().data() : nullptr;
    double* db = t.requires_grad(bid) ? Tape::adjoint(t, adj, bid).data().data() : nullptr;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bp + j * k;
      double* dbrow = db ? db + j * k : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        const double gij = gp[i * n + j];
        if (gij == 0.0) continue;
        if (da) {
          double* darow = da + i * k;
          for (std::size_t p = 0; p < k; ++p) darow[p] += gij * brow[p];
        }
        if (dbrow) {
          const double* arow = ap + i * k;
          for (std::size_t p = 0; p < k; ++p) dbrow[p] += gij * arow[p];
        }
      }
    }
  });
}

Var add_rows(Var A, Var b) {
  Tape& tape = tape_of(A);
  require_rank2(A, "add_rows");
  const Tensor& a = A.value();
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (b.value().size() != n) {
    throw UsageError("add_rows shape mismatch: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor out = a;
  const double* bp = b.value().data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bp[j];
  }
  const std::size_t aid = A.id(), bid = b.id();
  const Var inputs[] = {A, b};
  return tape.record(std::move(out), inputs, [aid, bid, m, n](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    if (t.requires_grad(aid)) {
      Tensor& da = Tape::adjoint(t, adj, aid);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      Tensor& db = Tape::adjoint(t, adj, bid);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_size(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [aid, bid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    for (std::size_t id : {aid, bid}) {
      if (!t.requires_grad(id)) continue;
      Tensor& d = Tape::adjoint(t, adj, id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_size(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [aid, bid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    if (t.requires_grad(aid)) {
      Tensor& d = Tape::adjoint(t, adj, aid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      Tensor& d = Tape::adjoint(t, adj, bid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_size(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [aid, bid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const Tensor& av = t.value(aid);
    const Tensor& bv = t.value(bid);
    if (t.requires_grad(aid)) {
      Tensor& d = Tape::adjoint(t, adj, aid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bid)) {
      Tensor& d = Tape::adjoint(t, adj, bid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t aid = a.id();
  const Var inputs[] = {a};
  return tape.record(std::move(out), inputs, [aid, s](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

Var tanh(Var a) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  const std::size_t aid = a.id();
  const Var inputs[] = {a};
  return tape.record(std::move(out), inputs, [aid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const Tensor& x = t.value(aid);
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = std::tanh(x[i]);
      d[i] += g[i] * (1.0 - y * y);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t aid = a.id();
  const Var inputs[] = {a};
  return tape.record(std::move(out), inputs, [aid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var transpose(Var A) {
  Tape& tape = tape_of(A);
  require_rank2(A, "transpose");
  Tensor out = A.value().transposed();
  const std::size_t aid = A.id();
  const std::size_t rows = A.value().dim(0), cols = A.value().dim(1);
  const Var inputs[] = {A};
  return tape.record(std::move(out), inputs, [aid, rows, cols](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[c * rows + r];
    }
  });
}

Var slice_rows(Var A, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(A);
  require_rank2(A, "slice_rows");
  const Tensor& a = A.value();
  if (begin > end || end > a.dim(0)) {
    throw UsageError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     shape_string(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  std::vector<double> values(a.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                             a.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
  const std::size_t aid = A.id();
  const std::size_t offset = begin * cols;
  const Var inputs[] = {A};
  return tape.record(Tensor(Shape{end - begin, cols}, std::move(values)), inputs,
                     [aid, offset](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
                       Tensor& d = Tape::adjoint(t, adj, aid);
                       for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
                     });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  Tape& tape = tape_of(parts.front());
  std::vector<double> values;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(values.size());
    ids.push_back(p.id());
    const auto v = p.value().data();
    values.insert(values.end(), v.begin(), v.end());
  }
  return tape.record(Tensor::vector(std::move(values)), parts,
                     [ids, offsets](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         Tensor& d = Tape::adjoint(t, adj, ids[k]);
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
                       }
                     });
}

Var concat_cols(Var A, Var B) {
  Tape& tape = tape_of(A);
  require_rank2(A, "concat_cols");
  require_rank2(B, "concat_cols");
  const std::size_t m = A.value().dim(0), p = A.value().dim(1), q = B.value().dim(1);
  if (B.value().dim(0) != m) {
    throw UsageError("concat_cols row mismatch: " + shape_string(A.shape()) + " and " + shape_string(B.shape()));
  }
  Tensor out(Shape{m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(A.value().data().data() + i * p, p, out.data().data() + i * (p + q));
    std::copy_n(B.value().data().data() + i * q, q, out.data().data() + i * (p + q) + p);
  }
  const std::size_t aid = A.id(), bid = B.id();
  const Var inputs[] = {A, B};
  return tape.record(std::move(out), inputs, [aid, bid, m, p, q](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    if (t.requires_grad(aid)) {
      Tensor& d = Tape::adjoint(t, adj, aid);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < p; ++c) d[i * p + c] += g[i * (p + q) + c];
      }
    }
    if (t.requires_grad(bid)) {
      Tensor& d = Tape::adjoint(t, adj, bid);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < q; ++c) d[i * q + c] += g[i * (p + q) + p + c];
      }
    }
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const std::size_t aid = a.id();
  const Var inputs[] = {a};
  return tape.record(Tensor::scalar(acc), inputs, [aid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (double& v : d.data()) v += g[0];
  });
}

Var sum_squares(Var a) {
  Tape& tape = tape_of(a);
  const double acc = feddah::sum_of_squares(a.value().data());
  const std::size_t aid = a.id();
  const Var inputs[] = {a};
  return tape.record(Tensor::scalar(acc), inputs, [aid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const Tensor& av = t.value(aid);
    Tensor& d = Tape::adjoint(t, adj, aid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g[0] * av[i];
  });
}

Var squared_distance(Var a, Var b) {
  Tape& tape = tape_of(a);
  require_same_size(a, b, "squared_distance");
  const double acc = feddah::squared_distance(a.value().data(), b.value().data());
  const std::size_t aid = a.id(), bid = b.id();
  const Var inputs[] = {a, b};
  return tape.record(Tensor::scalar(acc), inputs, [aid, bid](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
    const Tensor& av = t.value(aid);
    const Tensor& bv = t.value(bid);
    const double s = 2.0 * g[0];
    if (t.requires_grad(aid)) {
      Tensor& d = Tape::adjoint(t, adj, aid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * (av[i] - bv[i]);
    }
    if (t.requires_grad(bid)) {
      Tensor& d = Tape::adjoint(t, adj, bid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s * (av[i] - bv[i]);
    }
  });
}

Var mean_squared_error(Var prediction, Var target) {
  const double n = static_cast<double>(prediction.value().size());
  return scale(squared_distance(prediction, target), 1.0 / n);
}

Var softmax_cross_entropy(Var logits, Var target) {
  Tape& tape = tape_of(logits);
  require_same_size(logits, target, "softmax_cross_entropy");
  const Tensor& z = logits.value();
  const Tensor& y = target.value();
  const double zmax = *std::max_element(z.values().begin(), z.values().end());
  double denom = 0.0;
  for (double v : z.data()) denom += std::exp(v - zmax);
  const double log_denom = std::log(denom) + zmax;
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    probs[i] = std::exp(z[i] - log_denom);
    loss -= y[i] * (z[i] - log_denom);
  }
  const std::size_t zid = logits.id(), yid = target.id();
  const Var inputs[] = {logits, target};
  return tape.record(Tensor::scalar(loss), inputs,
                     [zid, yid, probs](const Tape& t, const Tensor& g, Tape::Adjoints& adj) {
                       const Tensor& yv = t.value(yid);
                       double ysum = 0.0;
                       for (double v : yv.data()) ysum += v;
                       if (t.requires_grad(zid)) {
                         Tensor& d = Tape::adjoint(t, adj, zid);
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * (ysum * probs[i] - yv[i]);
                       }
                       if (t.requires_grad(yid)) {
                         const Tensor& zv = t.value(zid);
                         double zmax = zv[0];
                         for (double v : zv.data()) zmax = std::max(zmax, v);
                         double denom = 0.0;
                         for (double v : zv.data()) denom += std::exp(v - zmax);
                         const double log_denom = std::log(denom) + zmax;
                         Tensor& d = Tape::adjoint(t, adj, yid);
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[0] * (zv[i] - log_denom);
                       }
                     });
}

}  // namespace feddah::ad
