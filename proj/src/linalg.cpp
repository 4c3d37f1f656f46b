// SPDX-License-Identifier: Apache-2.0
#include "difflora/linalg.hpp"

#include <cmath>
#include <cstddef>

namespace difflora::linalg {

namespace {

// Work below these sizes runs serial; the `if` clauses keep tiny desk-scale
// matrices out of OpenMP teams (and out of nested regions during
// batch-parallel training).
constexpr std::size_t kParallelFlops = std::size_t{1} << 18;
constexpr std::size_t kParallelRowWork = std::size_t{1} << 14;

void require_inner_match(const Tensor2D& a, const Tensor2D& b, const char* op, int a_inner,
                         int b_inner) {
    if (a_inner != b_inner)
        throw ShapeError(std::string(op) + ": inner dimensions differ: lhs " + a.shape_str() +
                         ", rhs " + b.shape_str());
}

}  // namespace

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    require_inner_match(a, b, "matmul", a.cols(), b.rows());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor2D out(m, n, combine_precision(a.precision(), b.precision()));
    const std::size_t flops = static_cast<std::size_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (flops >= kParallelFlops)
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.round_to_precision();
    out.ensure_finite("matmul");
    return out;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
    require_inner_match(a, b, "matmul_nt", a.cols(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor2D out(m, n, combine_precision(a.precision(), b.precision()));
    const std::size_t flops = static_cast<std::size_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (flops >= kParallelFlops)
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
    out.round_to_precision();
    out.ensure_finite("matmul_nt");
    return out;
}

Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
    require_inner_match(a, b, "matmul_tn", a.rows(), b.rows());
    const int m = a.cols(), k = a.rows(), n = b.cols();
    Tensor2D out(m, n, combine_precision(a.precision(), b.precision()));
    const std::size_t flops = static_cast<std::size_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (flops >= kParallelFlops)
    for (int i = 0; i < m; ++i) {
        double* orow = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = a.at(p, i);
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.round_to_precision();
    out.ensure_finite("matmul_tn");
    return out;
}

Tensor2D transpose(const Tensor2D& a) {
    Tensor2D out(a.cols(), a.rows(), a.precision());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor2D masked_row_softmax(const Tensor2D& scores, const CausalMask& mask) {
    if (scores.rows() != scores.cols())
        throw ShapeError("masked_row_softmax: scores must be square, got " + scores.shape_str());
    if (scores.rows() != mask.seq_len)
        throw ShapeError("masked_row_softmax: scores " + scores.shape_str() + " vs mask seq_len " +
                         std::to_string(mask.seq_len));
    const int n = scores.rows();
    Tensor2D out(n, n, scores.precision());
    const std::size_t work = static_cast<std::size_t>(n) * n;
#pragma omp parallel for schedule(static) if (work >= kParallelRowWork)
    for (int i = 0; i < n; ++i) {
        const double* srow = scores.row(i);
        double* orow = out.row(i);
        double row_max = srow[0];
        for (int j = 1; j <= i; ++j) row_max = std::max(row_max, srow[j]);
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
            const double e = std::exp(srow[j] - row_max);
            orow[j] = e;
            denom += e;
        }
        for (int j = 0; j <= i; ++j) orow[j] /= denom;
    }
    out.round_to_precision();
    out.ensure_finite("masked_row_softmax");
    return out;
}

Tensor2D scaled_scores(const Tensor2D& q, const Tensor2D& k, int scale_dim) {
    if (scale_dim <= 0)
        throw ConfigError("scaled_scores: scale_dim must be positive, got " +
                          std::to_string(scale_dim));
    require_inner_match(q, k, "scaled_scores", q.cols(), k.cols());
    Tensor2D out = matmul_nt(q, k);
    const double inv = 1.0 / std::sqrt(static_cast<double>(scale_dim));
    for (int i = 0; i < out.rows(); ++i) {
        double* orow = out.row(i);
        for (int j = 0; j < out.cols(); ++j) orow[j] *= inv;
    }
    out.round_to_precision();
    out.ensure_finite("scaled_scores");
    return out;
}

Tensor2D per_head_rmsnorm(const Tensor2D& x, std::span<const double> gain, double eps,
                          std::vector<double>* inv_rms_out) {
    if (static_cast<int>(gain.size()) != x.cols())
        throw ShapeError("per_head_rmsnorm: gain length " + std::to_string(gain.size()) +
                         " vs input " + x.shape_str());
    if (eps <= 0.0) throw ConfigError("per_head_rmsnorm: eps must be positive");
    const int n = x.cols();
    Tensor2D out(x.rows(), n, x.precision());
    if (inv_rms_out) inv_rms_out->assign(static_cast<std::size_t>(x.rows()), 0.0);
    const std::size_t work = static_cast<std::size_t>(x.rows()) * n;
#pragma omp parallel for schedule(static) if (work >= kParallelRowWork)
    for (int i = 0; i < x.rows(); ++i) {
        const double* xrow = x.row(i);
        double* orow = out.row(i);
        double mean_sq = 0.0;
        for (int j = 0; j < n; ++j) mean_sq += xrow[j] * xrow[j];
        mean_sq /= static_cast<double>(n);
        const double inv_rms = 1.0 / std::sqrt(std::max(mean_sq, eps));
        if (inv_rms_out) (*inv_rms_out)[static_cast<std::size_t>(i)] = inv_rms;
        for (int j = 0; j < n; ++j) orow[j] = xrow[j] * inv_rms * gain[static_cast<std::size_t>(j)];
    }
    out.round_to_precision();
    out.ensure_finite("per_head_rmsnorm");
    return out;
}

Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
    Tensor2D out = a;
    add_in_place(out, b);
    return out;
}

Tensor2D sub(const Tensor2D& a, const Tensor2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("sub: shape mismatch: lhs " + a.shape_str() + ", rhs " + b.shape_str());
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    out.round_to_precision();
    return out;
}

Tensor2D scale(const Tensor2D& a, double s) {
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    out.round_to_precision();
    return out;
}

void add_in_place(Tensor2D& a, const Tensor2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shape mismatch: lhs " + a.shape_str() + ", rhs " + b.shape_str());
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
    a.round_to_precision();
}

void add_scaled_in_place(Tensor2D& a, const Tensor2D& b, double s) {
    if (!a.same_shape(b))
        throw ShapeError("add_scaled: shape mismatch: lhs " + a.shape_str() + ", rhs " +
                         b.shape_str());
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += s * b.data()[i];
    a.round_to_precision();
}

Tensor2D col_block(const Tensor2D& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1)
        throw ShapeError("col_block: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + a.shape_str());
    Tensor2D out(a.rows(), c1 - c0, a.precision());
    for (int i = 0; i < a.rows(); ++i) {
        const double* src = a.row(i) + c0;
        double* dst = out.row(i);
        for (int j = 0; j < c1 - c0; ++j) dst[j] = src[j];
    }
    return out;
}

void set_col_block(Tensor2D& a, int c0, const Tensor2D& block) {
    if (c0 < 0 || c0 + block.cols() > a.cols() || block.rows() != a.rows())
        throw ShapeError("set_col_block: block " + block.shape_str() + " at col " +
                         std::to_string(c0) + " into " + a.shape_str());
    for (int i = 0; i < a.rows(); ++i) {
        const double* src = block.row(i);
        double* dst = a.row(i) + c0;
        for (int j = 0; j < block.cols(); ++j) dst[j] = src[j];
    }
}

namespace serial {

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    require_inner_match(a, b, "matmul", a.cols(), b.rows());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor2D out(m, n, combine_precision(a.precision(), b.precision()));
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.round_to_precision();
    out.ensure_finite("matmul");
    return out;
}

Tensor2D masked_row_softmax(const Tensor2D& scores, const CausalMask& mask) {
    if (scores.rows() != scores.cols())
        throw ShapeError("masked_row_softmax: scores must be square, got " + scores.shape_str());
    if (scores.rows() != mask.seq_len)
        throw ShapeError("masked_row_softmax: scores " + scores.shape_str() + " vs mask seq_len " +
                         std::to_string(mask.seq_len));
    const int n = scores.rows();
    Tensor2D out(n, n, scores.precision());
    for (int i = 0; i < n; ++i) {
        const double* srow = scores.row(i);
        double* orow = out.row(i);
        double row_max = srow[0];
        for (int j = 1; j <= i; ++j) row_max = std::max(row_max, srow[j]);
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
            const double e = std::exp(srow[j] - row_max);
            orow[j] = e;
            denom += e;
        }
        for (int j = 0; j <= i; ++j) orow[j] /= denom;
    }
    out.round_to_precision();
    out.ensure_finite("masked_row_softmax");
    return out;
}

Tensor2D scaled_scores(const Tensor2D& q, const Tensor2D& k, int scale_dim) {
    if (scale_dim <= 0)
        throw ConfigError("scaled_scores: scale_dim must be positive, got " +
                          std::to_string(scale_dim));
    require_inner_match(q, k, "scaled_scores", q.cols(), k.cols());
    const int m = q.rows(), d = q.cols(), n = k.rows();
    Tensor2D out(m, n, combine_precision(q.precision(), k.precision()));
    const double inv = 1.0 / std::sqrt(static_cast<double>(scale_dim));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < d; ++p) acc += q.at(i, p) * k.at(j, p);
            out.at(i, j) = acc * inv;
        }
    }
    out.round_to_precision();
    out.ensure_finite("scaled_scores");
    return out;
}

Tensor2D per_head_rmsnorm(const Tensor2D& x, std::span<const double> gain, double eps) {
    if (static_cast<int>(gain.size()) != x.cols())
        throw ShapeError("per_head_rmsnorm: gain length " + std::to_string(gain.size()) +
                         " vs input " + x.shape_str());
    if (eps <= 0.0) throw ConfigError("per_head_rmsnorm: eps must be positive");
    const int n = x.cols();
    Tensor2D out(x.rows(), n, x.precision());
    for (int i = 0; i < x.rows(); ++i) {
        double mean_sq = 0.0;
        for (int j = 0; j < n; ++j) mean_sq += x.at(i, j) * x.at(i, j);
        mean_sq /= static_cast<double>(n);
        const double inv_rms = 1.0 / std::sqrt(std::max(mean_sq, eps));
        for (int j = 0; j < n; ++j)
            out.at(i, j) = x.at(i, j) * inv_rms * gain[static_cast<std::size_t>(j)];
    }
    out.round_to_precision();
    out.ensure_finite("per_head_rmsnorm");
    return out;
}

}  // namespace serial

}  // namespace difflora::linalg
