#pragma once

#include <cstddef>
#include <vector>

#include "adcsl/tape.hpp"
#include "adcsl/tensor.hpp"

namespace adcsl {

/// Plain tensor kernels shared by the differentiable ops and by code that runs off-tape.
namespace kernel {

/// [m x p] . [p x q], [B x m x p] . [p x q] or [B x m x p] . [B x p x q].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

}  // namespace kernel

// Differentiable ops. All inputs must live on the same tape; the result is recorded there.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a rank-1 bias along the last axis.
Var add_bias(const Var& a, const Var& bias);
/// Adds an [n x d] table to every batch element of a [B x n x d] tensor.
Var embedding_add(const Var& a, const Var& table);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat_last_dim(const std::vector<Var>& parts);
Var slice_last_dim(const Var& a, std::size_t start, std::size_t length);
/// Per batch element b, picks rows rows[b] along axis -2 of a [B x n x d] tensor.
Var gather_rows(const Var& a, const std::vector<std::vector<std::size_t>>& rows);
/// Same row list for every batch element.
Var gather_rows(const Var& a, const std::vector<std::size_t>& rows);
/// Mean over axis -2: [... x n x d] -> [... x d].
Var mean_rows(const Var& a);
/// [B x m x d] with a [d] row prepended to every batch element -> [B x (m+1) x d].
Var prepend_row(const Var& a, const Var& row);
/// Averages batch elements sharing a segment id: [B x ...] -> [segments x ...].
/// Every segment must be nonempty.
Var segment_mean(const Var& a, const std::vector<std::size_t>& segment_of, std::size_t segments);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layernorm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
/// tanh approximation.
Var gelu(const Var& a);
Var sum(const Var& a);

}  // namespace adcsl
