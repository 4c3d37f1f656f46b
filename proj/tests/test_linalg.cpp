// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"

using namespace difflora;

namespace {

Tensor2D random_tensor(int rows, int cols, std::uint64_t seed) {
    Tensor2D t(rows, cols);
    Rng rng(seed);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.at(i, j) = rng.normal();
    return t;
}

bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("matmul fixed oracle") {
    const Tensor2D a = Tensor2D::from_rows({{1, 2}, {3, 4}});
    const Tensor2D b = Tensor2D::from_rows({{5, 6}, {7, 8}});
    const Tensor2D c = linalg::matmul(a, b);
    CHECK(c.at(0, 0) == 19.0);
    CHECK(c.at(0, 1) == 22.0);
    CHECK(c.at(1, 0) == 43.0);
    CHECK(c.at(1, 1) == 50.0);
}

TEST_CASE("matmul rejects mismatched inner dims") {
    const Tensor2D a(2, 3), b(4, 2);
    CHECK_THROWS_AS(linalg::matmul(a, b), ShapeError);
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transpose") {
    const Tensor2D a = random_tensor(5, 7, 1);
    const Tensor2D b = random_tensor(6, 7, 2);
    const Tensor2D c = random_tensor(5, 6, 3);
    CHECK(bitwise_equal(linalg::matmul_nt(a, b), linalg::matmul(a, linalg::transpose(b))));
    CHECK(bitwise_equal(linalg::matmul_tn(a, c), linalg::matmul(linalg::transpose(a), c)));
}

TEST_CASE("transpose round trip") {
    const Tensor2D a = random_tensor(4, 9, 4);
    CHECK(bitwise_equal(linalg::transpose(linalg::transpose(a)), a));
}

TEST_CASE("masked softmax fixed oracle") {
    // row 1 sees logits {ln 1, ln 3} -> probabilities {1/4, 3/4}
    Tensor2D scores(2, 2);
    scores.at(1, 0) = std::log(1.0);
    scores.at(1, 1) = std::log(3.0);
    const Tensor2D p = linalg::masked_row_softmax(scores, CausalMask{2});
    CHECK(p.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p.at(0, 1) == 0.0);  // disallowed entries exactly zero
    CHECK(p.at(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.at(1, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("zero scores give the uniform causal map") {
    const int n = 12;
    const Tensor2D p = linalg::masked_row_softmax(Tensor2D(n, n), CausalMask{n});
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < n; ++j) {
            const double want = j <= t ? 1.0 / static_cast<double>(t + 1) : 0.0;
            CHECK(std::fabs(p.at(t, j) - want) <= 1e-15);
        }
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
    const int n = 16;
    Tensor2D scores = random_tensor(n, n, 5);
    const Tensor2D p = linalg::masked_row_softmax(scores, CausalMask{n});
    for (int t = 0; t < n; ++t) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += p.at(t, j);
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
    // adding a constant per row must not change the distribution
    Tensor2D shifted = scores;
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < n; ++j) shifted.at(t, j) += 7.5;
    const Tensor2D q = linalg::masked_row_softmax(shifted, CausalMask{n});
    for (int t = 0; t < n; ++t)
        for (int j = 0; j < n; ++j) CHECK(std::fabs(p.at(t, j) - q.at(t, j)) <= 1e-12);
}

TEST_CASE("softmax survives large scores") {
    Tensor2D scores(3, 3);
    scores.fill(1e4);
    const Tensor2D p = linalg::masked_row_softmax(scores, CausalMask{3});
    for (int t = 0; t < 3; ++t)
        for (int j = 0; j <= t; ++j)
            CHECK(std::fabs(p.at(t, j) - 1.0 / (t + 1)) <= 1e-12);
}

TEST_CASE("scaled scores oracle") {
    const Tensor2D q = Tensor2D::from_rows({{1, 0, 0, 0}});
    const Tensor2D k = Tensor2D::from_rows({{2, 0, 0, 0}});
    const Tensor2D s = linalg::scaled_scores(q, k, 4);
    CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));  // 2 / sqrt(4)
}

TEST_CASE("rmsnorm fixed oracle") {
    // rms of (3, 4) is sqrt(12.5); entries divide to 0.8485..., 1.1313...
    const Tensor2D x = Tensor2D::from_rows({{3, 4}});
    const std::vector<double> gain(2, 1.0);
    const Tensor2D y = linalg::per_head_rmsnorm(x, gain, kNormEps);
    CHECK(y.at(0, 0) == doctest::Approx(0.84852813742385702928).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(1.13137084989847603904).epsilon(1e-12));
}

TEST_CASE("rmsnorm leaves zero rows at zero and reports inverse divisors") {
    Tensor2D x(3, 4);
    x.at(1, 0) = 2.0;
    x.at(1, 2) = -2.0;
    const std::vector<double> gain(4, 1.0);
    std::vector<double> inv;
    const Tensor2D y = linalg::per_head_rmsnorm(x, gain, kNormEps, &inv);
    for (int j = 0; j < 4; ++j) CHECK(y.at(0, j) == 0.0);
    REQUIRE(inv.size() == 3);
    // non-degenerate rows come out at exactly unit rms
    double ms = 0.0;
    for (int j = 0; j < 4; ++j) ms += y.at(1, j) * y.at(1, j);
    CHECK(std::fabs(std::sqrt(ms / 4.0) - 1.0) <= 1e-12);
}

TEST_CASE("rmsnorm applies the gain elementwise") {
    const Tensor2D x = random_tensor(4, 6, 6);
    std::vector<double> gain{0.5, 1.0, 2.0, -1.0, 0.0, 3.0};
    const std::vector<double> unit(6, 1.0);
    const Tensor2D base = linalg::per_head_rmsnorm(x, unit, kNormEps);
    const Tensor2D scaled = linalg::per_head_rmsnorm(x, gain, kNormEps);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(std::fabs(scaled.at(i, j) - base.at(i, j) * gain[static_cast<std::size_t>(j)]) <=
                  1e-15);
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
    // sizes chosen to cross any parallel-dispatch threshold
    const Tensor2D a = random_tensor(97, 64, 7);
    const Tensor2D b = random_tensor(64, 53, 8);
    CHECK(bitwise_equal(linalg::matmul(a, b), linalg::serial::matmul(a, b)));

    const Tensor2D q = random_tensor(80, 32, 9);
    const Tensor2D k = random_tensor(80, 32, 10);
    CHECK(bitwise_equal(linalg::scaled_scores(q, k, 32), linalg::serial::scaled_scores(q, k, 32)));

    const Tensor2D scores = random_tensor(80, 80, 11);
    CHECK(bitwise_equal(linalg::masked_row_softmax(scores, CausalMask{80}),
                        linalg::serial::masked_row_softmax(scores, CausalMask{80})));

    const Tensor2D x = random_tensor(90, 48, 12);
    std::vector<double> gain(48);
    Rng rng(13);
    for (double& g : gain) g = rng.normal();
    CHECK(bitwise_equal(linalg::per_head_rmsnorm(x, gain, kNormEps),
                        linalg::serial::per_head_rmsnorm(x, gain, kNormEps)));
}

TEST_CASE("elementwise helpers") {
    const Tensor2D a = random_tensor(3, 4, 14);
    const Tensor2D b = random_tensor(3, 4, 15);
    const Tensor2D s = linalg::add(a, b);
    const Tensor2D d = linalg::sub(s, b);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::fabs(d.data()[i] - a.data()[i]) <= 1e-15);
    const Tensor2D twice = linalg::scale(a, 2.0);
    Tensor2D acc = a;
    linalg::add_in_place(acc, a);
    CHECK(bitwise_equal(acc, twice));
    Tensor2D acc2 = a;
    linalg::add_scaled_in_place(acc2, a, 1.0);
    CHECK(bitwise_equal(acc2, twice));
    CHECK_THROWS_AS(linalg::add(a, Tensor2D(4, 3)), ShapeError);
}

TEST_CASE("column blocks copy out and scatter back") {
    const Tensor2D a = random_tensor(5, 8, 16);
    const Tensor2D block = linalg::col_block(a, 2, 6);
    REQUIRE(block.rows() == 5);
    REQUIRE(block.cols() == 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) CHECK(block.at(i, j) == a.at(i, j + 2));
    Tensor2D out(5, 8);
    linalg::set_col_block(out, 2, block);
    for (int i = 0; i < 5; ++i)
        for (int j = 2; j < 6; ++j) CHECK(out.at(i, j) == a.at(i, j));
}

TEST_CASE("ensure_finite rejects NaN") {
    Tensor2D a(2, 2);
    a.at(1, 1) = std::nan("");
    CHECK_THROWS_AS(a.ensure_finite("test"), NumericError);
}

TEST_CASE("single precision rounds through float") {
    Tensor2D a(1, 1, Precision::Single);
    a.at(0, 0) = 0.1;  // not float-representable
    a.round_to_precision();
    CHECK(a.at(0, 0) == static_cast<double>(static_cast<float>(0.1)));
}
