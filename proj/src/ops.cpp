// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Core>
#include <spdlog/spdlog.h>

#include "gcrnn/errors.hpp"

namespace gcrnn {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

CMapR as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapR as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapR(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::atomic<bool> pool_remainder_logged{false};

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(A.shape()) + " by " +
                         shape_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(A, m, k) * as_matrix(B, k, n);
  return a.graph->add_node(
      "matmul", std::move(out), {a.id, b.id},
      [a, b, m, k, n](Graph& g, const Tensor& dout) {
        const auto dC = as_matrix(dout, m, n);
        if (g.requires_grad(a.id)) {
          Tensor& da = g.grad_buffer(a.id);
          as_matrix(da, m, k).noalias() += dC * as_matrix(g.value(b.id), k, n).transpose();
        }
        if (g.requires_grad(b.id)) {
          Tensor& db = g.grad_buffer(b.id);
          as_matrix(db, k, n).noalias() += as_matrix(g.value(a.id), m, k).transpose() * dC;
        }
      });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(0) || B.rank() != 1 ||
      B.dim(0) != W.dim(1)) {
    throw DimensionError("linear: incompatible shapes x" + shape_string(X.shape()) + " w" +
                         shape_string(W.shape()) + " b" + shape_string(B.shape()));
  }
  const std::size_t m = X.dim(0), k = X.dim(1), n = W.dim(1);
  Tensor out({m, n});
  auto O = as_matrix(out, m, n);
  O.noalias() = as_matrix(X, m, k) * as_matrix(W, k, n);
  O.rowwise() += as_matrix(B, 1, n).row(0);
  return x.graph->add_node(
      "linear", std::move(out), {x.id, w.id, b.id},
      [x, w, b, m, k, n](Graph& g, const Tensor& dout) {
        const auto dO = as_matrix(dout, m, n);
        if (g.requires_grad(x.id)) {
          as_matrix(g.grad_buffer(x.id), m, k).noalias() +=
              dO * as_matrix(g.value(w.id), k, n).transpose();
        }
        if (g.requires_grad(w.id)) {
          as_matrix(g.grad_buffer(w.id), k, n).noalias() +=
              as_matrix(g.value(x.id), m, k).transpose() * dO;
        }
        if (g.requires_grad(b.id)) {
          as_matrix(g.grad_buffer(b.id), 1, n) += dO.colwise().sum();
        }
      });
}

namespace {

// Column layout (di, dj, cin) matches the row-major [k×k×Cin×Cout] filter tensor
// viewed as a [(k·k·Cin)×Cout] matrix.
void im2col(const Tensor& in, std::size_t k, MatR& cols) {
  const std::size_t T = in.dim(0), F = in.dim(1), C = in.dim(2);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  cols.setZero(static_cast<Eigen::Index>(T * F), static_cast<Eigen::Index>(k * k * C));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      double* row = cols.data() + (t * F + f) * k * k * C;
      for (std::size_t di = 0; di < k; ++di) {
        const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + di) - half;
        if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t dj = 0; dj < k; ++dj) {
          const std::ptrdiff_t sf = static_cast<std::ptrdiff_t>(f + dj) - half;
          if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(F)) continue;
          const double* src = in.data() + (static_cast<std::size_t>(st) * F +
                                           static_cast<std::size_t>(sf)) * C;
          std::copy(src, src + C, row + (di * k + dj) * C);
        }
      }
    }
  }
}

void col2im_add(const MatR& cols, std::size_t k, Tensor& dx) {
  const std::size_t T = dx.dim(0), F = dx.dim(1), C = dx.dim(2);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      const double* row = cols.data() + (t * F + f) * k * k * C;
      for (std::size_t di = 0; di < k; ++di) {
        const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + di) - half;
        if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t dj = 0; dj < k; ++dj) {
          const std::ptrdiff_t sf = static_cast<std::ptrdiff_t>(f + dj) - half;
          if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(F)) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(st) * F +
                                     static_cast<std::size_t>(sf)) * C;
          const double* src = row + (di * k + dj) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var filters, Var bias) {
  const Tensor& X = input.value();
  const Tensor& W = filters.value();
  const Tensor& B = bias.value();
  require_rank("conv2d input", X, 3);
  require_rank("conv2d filters", W, 4);
  const std::size_t k = W.dim(0);
  if (W.dim(1) != k || k % 2 == 0) {
    throw DimensionError("conv2d: filters must be k×k with odd k, got " +
                         shape_string(W.shape()));
  }
  if (W.dim(2) != X.dim(2)) {
    throw DimensionError("conv2d: input channels " + shape_string(X.shape()) +
                         " do not match filters " + shape_string(W.shape()));
  }
  const std::size_t cout = W.dim(3);
  if (B.rank() != 1 || B.dim(0) != cout) {
    throw DimensionError("conv2d: bias " + shape_string(B.shape()) + " does not match filters " +
                         shape_string(W.shape()));
  }
  const std::size_t T = X.dim(0), F = X.dim(1), cin = X.dim(2);
  const std::size_t kk = k * k * cin;

  auto cols = std::make_shared<MatR>();
  im2col(X, k, *cols);
  Tensor out({T, F, cout});
  auto O = as_matrix(out, T * F, cout);
  O.noalias() = *cols * as_matrix(W, kk, cout);
  O.rowwise() += as_matrix(B, 1, cout).row(0);

  return input.graph->add_node(
      "conv2d", std::move(out), {input.id, filters.id, bias.id},
      [input, filters, bias, cols, k, T, F, cout, kk](Graph& g, const Tensor& dout) {
        const auto dO = as_matrix(dout, T * F, cout);
        if (g.requires_grad(filters.id)) {
          as_matrix(g.grad_buffer(filters.id), kk, cout).noalias() += cols->transpose() * dO;
        }
        if (g.requires_grad(bias.id)) {
          as_matrix(g.grad_buffer(bias.id), 1, cout) += dO.colwise().sum();
        }
        if (g.requires_grad(input.id)) {
          MatR dcols = dO * as_matrix(g.value(filters.id), kk, cout).transpose();
          col2im_add(dcols, k, g.grad_buffer(input.id));
        }
      });
}

Var sigmoid(Var x) {
  Tensor out(x.shape());
  const Tensor& X = x.value();
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = stable_sigmoid(X[i]);
  const std::size_t self = x.graph->size();
  return x.graph->add_node("sigmoid", std::move(out), {x.id},
                           [x, self](Graph& g, const Tensor& dout) {
                             const Tensor& y = g.value(self);
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t i = 0; i < y.size(); ++i)
                               dx[i] += dout[i] * y[i] * (1.0 - y[i]);
                           });
}

Var tanh(Var x) {
  Tensor out(x.shape());
  const Tensor& X = x.value();
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::tanh(X[i]);
  const std::size_t self = x.graph->size();
  return x.graph->add_node("tanh", std::move(out), {x.id},
                           [x, self](Graph& g, const Tensor& dout) {
                             const Tensor& y = g.value(self);
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t i = 0; i < y.size(); ++i)
                               dx[i] += dout[i] * (1.0 - y[i] * y[i]);
                           });
}

Var softmax_over_classes(Var x) {
  const Tensor& X = x.value();
  require_rank("softmax_over_classes", X, 2);
  const std::size_t T = X.dim(0), C = X.dim(1);
  Tensor out({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    double mx = X.at(t, 0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, X.at(t, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      out.at(t, c) = std::exp(X.at(t, c) - mx);
      sum += out.at(t, c);
    }
    for (std::size_t c = 0; c < C; ++c) out.at(t, c) /= sum;
  }
  const std::size_t self = x.graph->size();
  return x.graph->add_node(
      "softmax_over_classes", std::move(out), {x.id},
      [x, self, T, C](Graph& g, const Tensor& dout) {
        const Tensor& y = g.value(self);
        Tensor& dx = g.grad_buffer(x.id);
        for (std::size_t t = 0; t < T; ++t) {
          double dot = 0.0;
          for (std::size_t c = 0; c < C; ++c) dot += dout.at(t, c) * y.at(t, c);
          for (std::size_t c = 0; c < C; ++c) dx.at(t, c) += y.at(t, c) * (dout.at(t, c) - dot);
        }
      });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_inplace(b.value());
  return a.graph->add_node("add", std::move(out), {a.id, b.id},
                           [a, b](Graph& g, const Tensor& dout) {
                             g.accumulate(a.id, dout);
                             g.accumulate(b.id, dout);
                           });
}

Var elementwise_mul(Var a, Var b) {
  require_same_shape("elementwise_mul", a.value(), b.value());
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return a.graph->add_node(
      "elementwise_mul", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& dout) {
        // Values are read before either buffer is touched so mul(x, x) accumulates 2x·dout.
        const Tensor& A = g.value(a.id);
        const Tensor& B = g.value(b.id);
        if (g.requires_grad(a.id)) {
          Tensor& da = g.grad_buffer(a.id);
          for (std::size_t i = 0; i < A.size(); ++i) da[i] += dout[i] * B[i];
        }
        if (g.requires_grad(b.id)) {
          Tensor& db = g.grad_buffer(b.id);
          for (std::size_t i = 0; i < B.size(); ++i) db[i] += dout[i] * A[i];
        }
      });
}

Var divide(Var a, Var b) {
  require_same_shape("divide", a.value(), b.value());
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] / B[i];
  return a.graph->add_node(
      "divide", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& dout) {
        const Tensor& A = g.value(a.id);
        const Tensor& B = g.value(b.id);
        if (g.requires_grad(a.id)) {
          Tensor& da = g.grad_buffer(a.id);
          for (std::size_t i = 0; i < A.size(); ++i) da[i] += dout[i] / B[i];
        }
        if (g.requires_grad(b.id)) {
          Tensor& db = g.grad_buffer(b.id);
          for (std::size_t i = 0; i < B.size(); ++i) db[i] -= dout[i] * A[i] / (B[i] * B[i]);
        }
      });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return x.graph->add_node("scale", std::move(out), {x.id},
                           [x, factor](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i] * factor;
                           });
}

Var max_pool2d(Var x, std::size_t pt, std::size_t pf) {
  const Tensor& X = x.value();
  require_rank("max_pool2d", X, 3);
  if (pt == 0 || pf == 0) throw DimensionError("max_pool2d: pool sizes must be positive");
  const std::size_t T = X.dim(0), F = X.dim(1), C = X.dim(2);
  if (T < pt || F < pf) {
    throw DimensionError("max_pool2d: input " + shape_string(X.shape()) +
                         " smaller than window " + std::to_string(pt) + "x" + std::to_string(pf));
  }
  if ((T % pt || F % pf) && !pool_remainder_logged.exchange(true)) {
    spdlog::warn("max_pool2d: dropping trailing remainder of {} with window {}x{}",
                 shape_string(X.shape()), pt, pf);
  }
  const std::size_t To = T / pt, Fo = F / pf;
  Tensor out({To, Fo, C});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t f = 0; f < Fo; ++f) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = ((t * pt) * F + f * pf) * C + c;
        for (std::size_t i = 0; i < pt; ++i) {
          for (std::size_t j = 0; j < pf; ++j) {
            const std::size_t idx = ((t * pt + i) * F + f * pf + j) * C + c;
            if (X[idx] > X[best]) best = idx;
          }
        }
        const std::size_t o = (t * Fo + f) * C + c;
        out[o] = X[best];
        (*argmax)[o] = best;
      }
    }
  }
  return x.graph->add_node("max_pool2d", std::move(out), {x.id},
                           [x, argmax](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t o = 0; o < argmax->size(); ++o)
                               dx[(*argmax)[o]] += dout[o];
                           });
}

Var sum_over_time(Var x) {
  const Tensor& X = x.value();
  require_rank("sum_over_time", X, 2);
  const std::size_t T = X.dim(0), C = X.dim(1);
  Tensor out({C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out[c] += X.at(t, c);
  return x.graph->add_node("sum_over_time", std::move(out), {x.id},
                           [x, T, C](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t t = 0; t < T; ++t)
                               for (std::size_t c = 0; c < C; ++c) dx.at(t, c) += dout[c];
                           });
}

Var mean_over_time(Var x) {
  require_rank("mean_over_time", x.value(), 2);
  const double n = static_cast<double>(x.value().dim(0));
  return scale(sum_over_time(x), 1.0 / n);
}

Var concat_columns(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank("concat_columns", A, 2);
  require_rank("concat_columns", B, 2);
  if (A.dim(0) != B.dim(0)) {
    throw DimensionError("concat_columns: row mismatch " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
  }
  const std::size_t T = A.dim(0), ca = A.dim(1), cb = B.dim(1);
  Tensor out({T, ca + cb});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < ca; ++c) out.at(t, c) = A.at(t, c);
    for (std::size_t c = 0; c < cb; ++c) out.at(t, ca + c) = B.at(t, c);
  }
  return a.graph->add_node(
      "concat_columns", std::move(out), {a.id, b.id}, [a, b, T, ca, cb](Graph& g, const Tensor& dout) {
        if (g.requires_grad(a.id)) {
          Tensor& da = g.grad_buffer(a.id);
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < ca; ++c) da.at(t, c) += dout.at(t, c);
        }
        if (g.requires_grad(b.id)) {
          Tensor& db = g.grad_buffer(b.id);
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < cb; ++c) db.at(t, c) += dout.at(t, ca + c);
        }
      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph->add_node("reshape", std::move(out), {x.id},
                           [x](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
                           });
}

Var reverse_rows(Var x) {
  const Tensor& X = x.value();
  require_rank("reverse_rows", X, 2);
  const std::size_t T = X.dim(0), D = X.dim(1);
  Tensor out({T, D});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out.at(t, d) = X.at(T - 1 - t, d);
  return x.graph->add_node("reverse_rows", std::move(out), {x.id},
                           [x, T, D](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (std::size_t t = 0; t < T; ++t)
                               for (std::size_t d = 0; d < D; ++d)
                                 dx.at(T - 1 - t, d) += dout.at(t, d);
                           });
}

Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->add_node("sum_all", Tensor::scalar(s), {x.id},
                           [x](Graph& g, const Tensor& dout) {
                             Tensor& dx = g.grad_buffer(x.id);
                             for (double& v : dx.values()) v += dout[0];
                           });
}

Var bce_loss(Var pred, const Tensor& target) {
  const Tensor& P = pred.value();
  require_same_shape("bce_loss", P, target);
  if (P.rank() != 1 && P.rank() != 2) {
    throw DimensionError("bce_loss: expected [N×C] or [C], got " + shape_string(P.shape()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0 && target[i] != 1.0) {
      throw ValidationError("bce_loss: target entry " + std::to_string(i) + " is " +
                            std::to_string(target[i]) + ", expected 0 or 1");
    }
  }
  const double n = P.rank() == 2 ? static_cast<double>(P.dim(0)) : 1.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double o = std::clamp(P[i], kBceClip, 1.0 - kBceClip);
    loss -= target[i] * std::log(o) + (1.0 - target[i]) * std::log(1.0 - o);
  }
  return pred.graph->add_node(
      "bce_loss", Tensor::scalar(loss / n), {pred.id},
      [pred, target, n](Graph& g, const Tensor& dout) {
        const Tensor& P = g.value(pred.id);
        Tensor& dp = g.grad_buffer(pred.id);
        for (std::size_t i = 0; i < P.size(); ++i) {
          if (P[i] < kBceClip || P[i] > 1.0 - kBceClip) continue;  // clipped: flat
          const double o = P[i];
          dp[i] += dout[0] * (o - target[i]) / (o * (1.0 - o)) / n;
        }
      });
}

namespace {

struct GruCache {
  std::size_t T = 0, D = 0, H = 0;
  MatR z, r, n, h_prev, rh;  // each [T×H]
};

}  // namespace

Var gru_sequence(Var input, Var input_weights, Var recurrent_weights, Var bias) {
  const Tensor& X = input.value();
  const Tensor& Wx = input_weights.value();
  const Tensor& Wh = recurrent_weights.value();
  const Tensor& B = bias.value();
  require_rank("gru_sequence input", X, 2);
  require_rank("gru_sequence input_weights", Wx, 2);
  require_rank("gru_sequence recurrent_weights", Wh, 2);
  const std::size_t T = X.dim(0), D = X.dim(1), H = Wh.dim(0);
  if (T == 0) throw DimensionError("gru_sequence: empty sequence");
  if (Wx.dim(0) != D || Wx.dim(1) != 3 * H || Wh.dim(1) != 3 * H || B.rank() != 1 ||
      B.dim(0) != 3 * H) {
    throw DimensionError("gru_sequence: incompatible shapes x" + shape_string(X.shape()) +
                         " Wx" + shape_string(Wx.shape()) + " Wh" + shape_string(Wh.shape()) +
                         " b" + shape_string(B.shape()));
  }
  const auto eH = static_cast<Eigen::Index>(H);
  auto cache = std::make_shared<GruCache>();
  cache->T = T;
  cache->D = D;
  cache->H = H;
  cache->z.resize(static_cast<Eigen::Index>(T), eH);
  cache->r.resize(static_cast<Eigen::Index>(T), eH);
  cache->n.resize(static_cast<Eigen::Index>(T), eH);
  cache->h_prev.resize(static_cast<Eigen::Index>(T), eH);
  cache->rh.resize(static_cast<Eigen::Index>(T), eH);

  MatR pre = as_matrix(X, T, D) * as_matrix(Wx, D, 3 * H);
  pre.rowwise() += as_matrix(B, 1, 3 * H).row(0);
  const auto U = as_matrix(Wh, H, 3 * H);
  const auto Uzr = U.leftCols(2 * eH);
  const auto Un = U.rightCols(eH);

  Tensor out({T, H});
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(eH);
  Eigen::RowVectorXd zr(2 * eH), rh(eH), cand(eH);
  for (std::size_t t = 0; t < T; ++t) {
    const auto et = static_cast<Eigen::Index>(t);
    cache->h_prev.row(et) = h;
    zr.noalias() = h * Uzr;
    for (Eigen::Index j = 0; j < 2 * eH; ++j) zr[j] = stable_sigmoid(zr[j] + pre(et, j));
    const auto z = zr.head(eH);
    const auto r = zr.tail(eH);
    rh = r.cwiseProduct(h);
    cand.noalias() = rh * Un;
    for (Eigen::Index j = 0; j < eH; ++j) cand[j] = std::tanh(cand[j] + pre(et, 2 * eH + j));
    cache->z.row(et) = z;
    cache->r.row(et) = r;
    cache->n.row(et) = cand;
    cache->rh.row(et) = rh;
    h = (Eigen::RowVectorXd::Ones(eH) - z).cwiseProduct(h) + z.cwiseProduct(cand);
    std::copy(h.data(), h.data() + H, out.data() + t * H);
  }

  return input.graph->add_node(
      "gru_sequence", std::move(out), {input.id, input_weights.id, recurrent_weights.id, bias.id},
      [input, input_weights, recurrent_weights, bias, cache](Graph& g, const Tensor& dout) {
        const std::size_t T = cache->T, D = cache->D, H = cache->H;
        const auto eH = static_cast<Eigen::Index>(H);
        const auto U = as_matrix(g.value(recurrent_weights.id), H, 3 * H);
        MatR dpre(static_cast<Eigen::Index>(T), 3 * eH);
        MatR dU = MatR::Zero(eH, 3 * eH);
        Eigen::RowVectorXd dh = Eigen::RowVectorXd::Zero(eH);
        Eigen::RowVectorXd dz(eH), dn_pre(eH), drh(eH), dr_pre(eH), dz_pre(eH), dzr(2 * eH);
        for (std::size_t s = T; s-- > 0;) {
          const auto et = static_cast<Eigen::Index>(s);
          for (Eigen::Index j = 0; j < eH; ++j) dh[j] += dout[s * H + static_cast<std::size_t>(j)];
          const auto z = cache->z.row(et);
          const auto r = cache->r.row(et);
          const auto n = cache->n.row(et);
          const auto hp = cache->h_prev.row(et);
          for (Eigen::Index j = 0; j < eH; ++j) {
            dn_pre[j] = dh[j] * z[j] * (1.0 - n[j] * n[j]);
            dz_pre[j] = dh[j] * (n[j] - hp[j]) * z[j] * (1.0 - z[j]);
          }
          drh.noalias() = dn_pre * U.rightCols(eH).transpose();
          for (Eigen::Index j = 0; j < eH; ++j) dr_pre[j] = drh[j] * hp[j] * r[j] * (1.0 - r[j]);
          dzr << dz_pre, dr_pre;

          dU.leftCols(2 * eH).noalias() += hp.transpose() * dzr;
          dU.rightCols(eH).noalias() += cache->rh.row(et).transpose() * dn_pre;

          Eigen::RowVectorXd dh_prev = dh.cwiseProduct(Eigen::RowVectorXd::Ones(eH) - z);
          dh_prev += drh.cwiseProduct(r);
          dh_prev.noalias() += dzr * U.leftCols(2 * eH).transpose();
          dh = dh_prev;

          dpre.row(et) << dz_pre, dr_pre, dn_pre;
        }
        if (g.requires_grad(recurrent_weights.id)) {
          as_matrix(g.grad_buffer(recurrent_weights.id), H, 3 * H) += dU;
        }
        if (g.requires_grad(bias.id)) {
          as_matrix(g.grad_buffer(bias.id), 1, 3 * H) += dpre.colwise().sum();
        }
        if (g.requires_grad(input_weights.id)) {
          as_matrix(g.grad_buffer(input_weights.id), D, 3 * H).noalias() +=
              as_matrix(g.value(input.id), T, D).transpose() * dpre;
        }
        if (g.requires_grad(input.id)) {
          as_matrix(g.grad_buffer(input.id), T, D).noalias() +=
              dpre * as_matrix(g.value(input_weights.id), D, 3 * H).transpose();
        }
      });
}

}  // namespace gcrnn
