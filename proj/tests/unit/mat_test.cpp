#include <doctest.h>

#include <cmath>

#include "core/mat.hpp"

using namespace memsig;

namespace {

MatD mk(int r, int c, std::initializer_list<double> vals) {
    MatD m(r, c);
    std::copy(vals.begin(), vals.end(), m.data.begin());
    return m;
}

// Reference product written the naive way; keeps the fast paths honest.
MatD slow_mul(const MatD& a, const MatD& b) {
    MatD out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double s = 0;
            for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

MatD transpose(const MatD& a) {
    MatD out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

void check_close(const MatD& a, const MatD& b, double tol = 1e-12) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(tol));
}

} // namespace

TEST_CASE("matmul matches naive product and identity") {
    const MatD a = mk(2, 3, {1, 2, 3, 4, 5, 6});
    const MatD b = mk(3, 2, {7, 8, 9, 10, 11, 12});
    MatD out;
    matmul(a, b, out);
    check_close(out, mk(2, 2, {58, 64, 139, 154}));

    MatD eye(3, 3);
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
    MatD same;
    matmul(eye, b, same);
    check_close(same, b);

    matmul(a, b, out, true); // accumulate doubles the result
    check_close(out, mk(2, 2, {116, 128, 278, 308}));
}

TEST_CASE("transposed products agree with explicit transposes") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 1 + int(rng.below(6));
        const int k = 1 + int(rng.below(6));
        const int n = 1 + int(rng.below(6));
        const MatD a = MatD::uniform(m, k, -2, 2, rng);
        const MatD b = MatD::uniform(n, k, -2, 2, rng); // for a * b^T
        const MatD c = MatD::uniform(m, n, -2, 2, rng); // for a^T * c

        MatD got;
        matmul_tb(a, b, got);
        check_close(got, slow_mul(a, transpose(b)));

        matmul_ta(a, c, got);
        check_close(got, slow_mul(transpose(a), c));
    }
}

TEST_CASE("mismatched shapes throw") {
    const MatD a(2, 3), b(2, 3);
    MatD out;
    CHECK_THROWS_AS(matmul(a, b, out), ShapeError);
    CHECK_THROWS_AS(matmul_tb(a, MatD(2, 4), out), ShapeError);
    CHECK_THROWS_AS(matmul_ta(a, MatD(3, 2), out), ShapeError);
    CHECK_THROWS_AS(add(a, MatD(3, 2), out), ShapeError);
    CHECK_THROWS_AS(hadamard(a, MatD(2, 4), out), ShapeError);
    MatD m(2, 3);
    std::vector<double> bias(2);
    CHECK_THROWS_AS(add_bias_row(m, std::span<const double>(bias)), ShapeError);
}

TEST_CASE("activations hit fixed points") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sigmoid(100.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sigmoid(-100.0) == doctest::Approx(0.0).epsilon(1e-12));
    double v[3] = {-1.5, 0.0, 2.5};
    relu_inplace(v, 3);
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
    CHECK(v[2] == 2.5);
}

TEST_CASE("softmax rows are normalized and uniform for equal logits") {
    MatD logits(3, 5);
    logits.fill(0.7);
    const MatD p = softmax_rows(logits);
    for (int i = 0; i < 3; ++i) {
        double sum = 0;
        for (int j = 0; j < 5; ++j) {
            CHECK(p.at(i, j) == doctest::Approx(0.2).epsilon(1e-14));
            sum += p.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
    // shift invariance
    MatD shifted = mk(1, 3, {1.0, 2.0, 3.0});
    MatD base = mk(1, 3, {101.0, 102.0, 103.0});
    check_close(softmax_rows(shifted), softmax_rows(base), 1e-12);
}

TEST_CASE("cross entropy of uniform logits is log |V|") {
    // 30 symbols: the all-zero model scores every target at 1/30.
    MatD logits(4, 30);
    std::vector<std::int32_t> targets = {0, 7, 15, 29};
    const double loss = cross_entropy(logits, targets, {}, static_cast<MatD*>(nullptr));
    CHECK(loss == doctest::Approx(3.4011973816621555).epsilon(1e-14));
}

TEST_CASE("cross entropy gradient matches central differences") {
    Rng rng(11);
    MatD logits = MatD::uniform(3, 5, -1, 1, rng);
    std::vector<std::int32_t> targets = {2, 0, 4};
    std::vector<std::uint8_t> mask = {1, 0, 1};
    MatD grad;
    cross_entropy(logits, targets, mask, &grad);
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double keep = logits.data[i];
        logits.data[i] = keep + h;
        const double up = cross_entropy(logits, targets, mask, static_cast<MatD*>(nullptr));
        logits.data[i] = keep - h;
        const double dn = cross_entropy(logits, targets, mask, static_cast<MatD*>(nullptr));
        logits.data[i] = keep;
        CHECK(grad.data[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
    // masked row gets no gradient
    for (int j = 0; j < 5; ++j) CHECK(grad.at(1, j) == 0.0);
}

TEST_CASE("cross entropy rejects bad inputs") {
    MatD logits(2, 4);
    std::vector<std::int32_t> targets = {1, 2};
    std::vector<std::uint8_t> none = {0, 0};
    CHECK_THROWS_AS(cross_entropy(logits, targets, none, static_cast<MatD*>(nullptr)), EmptyBatch);
    std::vector<std::int32_t> bad = {1, 9};
    CHECK_THROWS_AS(cross_entropy(logits, bad, {}, static_cast<MatD*>(nullptr)), UsageError);
    std::vector<std::int32_t> short_targets = {1};
    CHECK_THROWS_AS(cross_entropy(logits, short_targets, {}, static_cast<MatD*>(nullptr)),
                    ShapeError);
}
