// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "difflora/tensor.hpp"

namespace difflora::linalg {

// Kernels below split work across rows with OpenMP when the operation is big
// enough to pay for a team; every output element is produced by exactly one
// thread with a fixed-order inner loop, so results are bitwise identical to
// the serial reference regardless of thread count.

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);

// a * b^T and a^T * b; used throughout attention and backward passes.
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);
Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b);

Tensor2D transpose(const Tensor2D& a);

// Row-wise causal softmax. Each row is a proper distribution over its allowed
// prefix (row max subtracted before exponentiation); disallowed entries are
// exactly zero.
Tensor2D masked_row_softmax(const Tensor2D& scores, const CausalMask& mask);

// q * k^T / sqrt(scale_dim).
Tensor2D scaled_scores(const Tensor2D& q, const Tensor2D& k, int scale_dim);

// Scales each row to unit root-mean-square, then multiplies elementwise by
// gain. The divisor is sqrt(max(mean_sq, eps)), so non-degenerate rows come
// out at exactly unit RMS while near-zero rows shrink instead of blowing up.
// If inv_rms_out is non-null it receives the per-row divisor inverse for use
// by backward passes.
Tensor2D per_head_rmsnorm(const Tensor2D& x, std::span<const double> gain, double eps,
                          std::vector<double>* inv_rms_out = nullptr);

// Elementwise helpers.
Tensor2D add(const Tensor2D& a, const Tensor2D& b);
Tensor2D sub(const Tensor2D& a, const Tensor2D& b);
Tensor2D scale(const Tensor2D& a, double s);
void add_in_place(Tensor2D& a, const Tensor2D& b);
void add_scaled_in_place(Tensor2D& a, const Tensor2D& b, double s);

// Column block copy [c0, c1) and its scatter-back counterpart.
Tensor2D col_block(const Tensor2D& a, int c0, int c1);
void set_col_block(Tensor2D& a, int c0, const Tensor2D& block);

namespace serial {

// Straight-loop reference implementations, kept for testing the parallel
// kernels and for the kernel benchmark.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
Tensor2D masked_row_softmax(const Tensor2D& scores, const CausalMask& mask);
Tensor2D scaled_scores(const Tensor2D& q, const Tensor2D& k, int scale_dim);
Tensor2D per_head_rmsnorm(const Tensor2D& x, std::span<const double> gain, double eps);

}  // namespace serial

}  // namespace difflora::linalg
