// SPDX-License-Identifier: Apache-2.0
#include "difflora/tensor.hpp"

#include <cmath>

namespace difflora {

void Tensor2D::ensure_finite(const char* op) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            const int r = static_cast<int>(i / static_cast<std::size_t>(cols_));
            const int c = static_cast<int>(i % static_cast<std::size_t>(cols_));
            throw NumericError(std::string(op) + ": non-finite entry at (" + std::to_string(r) +
                               "," + std::to_string(c) + ") in " + shape_str() + " result");
        }
    }
}

}  // namespace difflora
