// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "gcrnn/autograd.hpp"

namespace gcrnn {

// Differentiable ops. All shapes are row-major; image-like tensors are laid
// out as [time, frequency, channels].

/// [M×K] × [K×N] → [M×N].
Var matmul(Var a, Var b);
/// x [M×K] · w [K×N] + b [N] (bias broadcast over rows).
Var linear(Var x, Var w, Var b);
/// Same-padded cross-correlation. input [T×F×Cin], filters [k×k×Cin×Cout],
/// bias [Cout] → [T×F×Cout]. k must be odd.
Var conv2d(Var input, Var filters, Var bias);
Var sigmoid(Var x);
Var tanh(Var x);
/// Row-wise softmax over the last axis of a [T×C] tensor.
Var softmax_over_classes(Var x);
Var add(Var a, Var b);
Var elementwise_mul(Var a, Var b);
/// Elementwise a / b.
Var divide(Var a, Var b);
Var scale(Var x, double factor);
/// Max pool over the first two axes of [T×F×C] with window/stride (pt, pf).
/// Trailing remainders are dropped.
Var max_pool2d(Var x, std::size_t pt, std::size_t pf);
/// [T×C] → [C].
Var sum_over_time(Var x);
Var mean_over_time(Var x);
/// Concatenate two [T×A], [T×B] tensors into [T×(A+B)].
Var concat_columns(Var a, Var b);
/// Same values, new shape.
Var reshape(Var x, Shape shape);
/// Reverse the order of rows of a [T×D] tensor.
Var reverse_rows(Var x);
/// Sum of every element; returns shape {1}.
Var sum_all(Var x);

/// Predictions are clipped to [kBceClip, 1 − kBceClip] before the log.
inline constexpr double kBceClip = 1e-7;

/// Binary cross-entropy summed over classes and averaged over the batch rows.
/// pred, target: [N×C] (or [C], treated as N = 1). Target entries must be 0 or 1.
Var bce_loss(Var pred, const Tensor& target);

/// Single-direction GRU over a [T×D] sequence with zero initial state.
/// input_weights [D×3H], recurrent_weights [H×3H], bias [3H]; gate blocks are
/// ordered (update, reset, candidate). Returns hidden states [T×H].
///   z = σ(x Wz + h Uz + bz), r = σ(x Wr + h Ur + br)
///   n = tanh(x Wn + (r ⊙ h) Un + bn), h' = (1 − z) ⊙ h + z ⊙ n
Var gru_sequence(Var input, Var input_weights, Var recurrent_weights, Var bias);

}  // namespace gcrnn
