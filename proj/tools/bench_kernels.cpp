// SPDX-License-Identifier: Apache-2.0
// Benchmarks the parallel kernels against the serial reference implementations
// and verifies that both produce bit-identical results.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "difflora/linalg.hpp"
#include "difflora/rng.hpp"
#include "difflora/tensor.hpp"

using namespace difflora;

namespace {

Tensor2D random_tensor(int rows, int cols, Rng& rng) {
    Tensor2D t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    return t;
}

double seconds_per_call(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count() / iters;
}

bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Case {
    std::string name;
    double serial_s = 0.0;
    double parallel_s = 0.0;
    double flops = 0.0;
    bool identical = false;
};

void print_case(const Case& c) {
    std::printf("%-28s serial %9.3f us   parallel %9.3f us   speedup %5.2fx   %8.1f MFLOP/s   %s\n",
                c.name.c_str(), c.serial_s * 1e6, c.parallel_s * 1e6,
                c.serial_s / c.parallel_s, c.flops / c.parallel_s / 1e6,
                c.identical ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int iters = 20;
    std::vector<int> sizes{64, 128, 256, 512};
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--iters" && i + 1 < argc) {
            iters = std::atoi(argv[++i]);
        } else if (arg == "--quick") {
            sizes = {64, 128};
            iters = 5;
        } else {
            std::fprintf(stderr, "usage: %s [--iters N] [--quick]\n", argv[0]);
            return 2;
        }
    }

    Rng rng(42);
    bool all_identical = true;
    for (int n : sizes) {
        const Tensor2D a = random_tensor(n, n, rng);
        const Tensor2D b = random_tensor(n, n, rng);
        const CausalMask mask{n};
        std::span<const double> gain(a.row(0), static_cast<std::size_t>(n));

        {
            Case c;
            c.name = "matmul " + std::to_string(n) + "x" + std::to_string(n);
            c.flops = 2.0 * n * n * n;
            Tensor2D out_p, out_s;
            c.parallel_s = seconds_per_call([&] { out_p = linalg::matmul(a, b); }, iters);
            c.serial_s = seconds_per_call([&] { out_s = linalg::serial::matmul(a, b); }, iters);
            c.identical = bitwise_equal(out_p, out_s);
            all_identical = all_identical && c.identical;
            print_case(c);
        }
        {
            Case c;
            c.name = "scaled_scores " + std::to_string(n);
            c.flops = 2.0 * n * n * n;
            Tensor2D out_p, out_s;
            c.parallel_s = seconds_per_call([&] { out_p = linalg::scaled_scores(a, b, n); }, iters);
            c.serial_s =
                seconds_per_call([&] { out_s = linalg::serial::scaled_scores(a, b, n); }, iters);
            c.identical = bitwise_equal(out_p, out_s);
            all_identical = all_identical && c.identical;
            print_case(c);
        }
        {
            Case c;
            c.name = "masked_row_softmax " + std::to_string(n);
            c.flops = 4.0 * n * n / 2.0;
            Tensor2D out_p, out_s;
            c.parallel_s =
                seconds_per_call([&] { out_p = linalg::masked_row_softmax(a, mask); }, iters);
            c.serial_s = seconds_per_call(
                [&] { out_s = linalg::serial::masked_row_softmax(a, mask); }, iters);
            c.identical = bitwise_equal(out_p, out_s);
            all_identical = all_identical && c.identical;
            print_case(c);
        }
        {
            Case c;
            c.name = "per_head_rmsnorm " + std::to_string(n);
            c.flops = 3.0 * n * n;
            Tensor2D out_p, out_s;
            c.parallel_s = seconds_per_call(
                [&] { out_p = linalg::per_head_rmsnorm(a, gain, 1e-6); }, iters);
            c.serial_s = seconds_per_call(
                [&] { out_s = linalg::serial::per_head_rmsnorm(a, gain, 1e-6); }, iters);
            c.identical = bitwise_equal(out_p, out_s);
            all_identical = all_identical && c.identical;
            print_case(c);
        }
    }
    if (!all_identical) {
        std::fprintf(stderr, "parallel and serial kernels disagree\n");
        return 1;
    }
    return 0;
}
