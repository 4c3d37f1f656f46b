// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "difflora/error.hpp"

namespace difflora {

// Storage precision of a tensor. Values are always held as doubles; Single
// tensors are kept float-representable by rounding through float after every
// public operation. Gradient checking requires Double.
enum class Precision : std::uint8_t { Single = 0, Double = 1 };

inline Precision combine_precision(Precision a, Precision b) {
    return (a == Precision::Double || b == Precision::Double) ? Precision::Double : Precision::Single;
}

// Dense row-major 2-D array, the universal value type for activations,
// weights, and attention maps.
class Tensor2D {
public:
    Tensor2D() = default;

    Tensor2D(int rows, int cols, Precision precision = Precision::Double)
        : rows_(rows), cols_(cols), precision_(precision) {
        if (rows < 0 || cols < 0) throw ShapeError("Tensor2D: negative dimension " + shape_str());
        data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
    }

    static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows,
                              Precision precision = Precision::Double) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Tensor2D out(r, c, precision);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c)
                throw ShapeError("Tensor2D::from_rows: ragged rows (" + std::to_string(row.size()) +
                                 " vs " + std::to_string(c) + ")");
            int j = 0;
            for (const double v : row) out.at(i, j++) = v;
            ++i;
        }
        out.round_to_precision();
        return out;
    }

    static Tensor2D identity(int n, Precision precision = Precision::Double) {
        Tensor2D out(n, n, precision);
        for (int i = 0; i < n; ++i) out.at(i, i) = 1.0;
        return out;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    Precision precision() const { return precision_; }
    void set_precision(Precision p) { precision_ = p; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
    const double* row(int i) const { return data_.data() + static_cast<std::size_t>(i) * cols_; }

    bool same_shape(const Tensor2D& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    // Rounds every entry through float when the tensor is Single precision.
    void round_to_precision() {
        if (precision_ == Precision::Single) {
            for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
        }
    }

    // Enforces the no-NaN/Inf invariant; `op` names the operation for the message.
    void ensure_finite(const char* op) const;

private:
    int rows_ = 0;
    int cols_ = 0;
    Precision precision_ = Precision::Double;
    std::vector<double> data_;
};

// Decoder-style mask: query position i may attend key position j iff j <= i.
struct CausalMask {
    int seq_len = 0;
    bool allowed(int i, int j) const { return j <= i; }
};

}  // namespace difflora
