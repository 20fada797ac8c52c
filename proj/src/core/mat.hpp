#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace memsig {

// Dense row-major matrix. float for training, double for gradient checks.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), T(0)) {}

    T* row(int i) { return data.data() + std::size_t(i) * cols; }
    const T* row(int i) const { return data.data() + std::size_t(i) * cols; }
    T& at(int i, int j) { return data[std::size_t(i) * cols + j]; }
    T at(int i, int j) const { return data[std::size_t(i) * cols + j]; }
    std::size_t size() const { return data.size(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    static Mat uniform(int r, int c, T lo, T hi, Rng& rng) {
        Mat m(r, c);
        for (auto& x : m.data) x = T(rng.uniform(double(lo), double(hi)));
        return m;
    }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

namespace detail {
inline void shape_fail(const char* op, int ar, int ac, int br, int bc) {
    throw ShapeError(std::string(op) + ": incompatible shapes [" + std::to_string(ar) + "x" +
                     std::to_string(ac) + "] vs [" + std::to_string(br) + "x" + std::to_string(bc) + "]");
}
} // namespace detail

// out (+)= a * b
template <typename T>
void matmul(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.cols != b.rows) detail::shape_fail("matmul", a.rows, a.cols, b.rows, b.cols);
    if (out.rows != a.rows || out.cols != b.cols) out = Mat<T>(a.rows, b.cols);
    const int n = b.cols;
    for (int i = 0; i < a.rows; ++i) {
        T* __restrict c = out.row(i);
        if (!accumulate) std::memset(c, 0, sizeof(T) * n);
        const T* __restrict ar = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T av = ar[k];
            if (av == T(0)) continue;
            const T* __restrict br = b.row(k);
            for (int j = 0; j < n; ++j) c[j] += av * br[j];
        }
    }
}

// out (+)= a * b^T
template <typename T>
void matmul_tb(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.cols != b.cols) detail::shape_fail("matmul_tb", a.rows, a.cols, b.cols, b.rows);
    if (out.rows != a.rows || out.cols != b.rows) out = Mat<T>(a.rows, b.rows);
    const int k = a.cols;
    for (int i = 0; i < a.rows; ++i) {
        const T* __restrict ar = a.row(i);
        T* __restrict c = out.row(i);
        int j = 0;
        // Four dot products at a time; helps the vectorizer reuse ar.
        for (; j + 4 <= b.rows; j += 4) {
            const T* __restrict b0 = b.row(j);
            const T* __restrict b1 = b.row(j + 1);
            const T* __restrict b2 = b.row(j + 2);
            const T* __restrict b3 = b.row(j + 3);
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int p = 0; p < k; ++p) {
                const T av = ar[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            if (accumulate) {
                c[j] += s0; c[j + 1] += s1; c[j + 2] += s2; c[j + 3] += s3;
            } else {
                c[j] = s0; c[j + 1] = s1; c[j + 2] = s2; c[j + 3] = s3;
            }
        }
        for (; j < b.rows; ++j) {
            const T* __restrict br = b.row(j);
            T s = 0;
            for (int p = 0; p < k; ++p) s += ar[p] * br[p];
            if (accumulate) c[j] += s; else c[j] = s;
        }
    }
}

// out (+)= a^T * b
template <typename T>
void matmul_ta(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.rows != b.rows) detail::shape_fail("matmul_ta", a.cols, a.rows, b.rows, b.cols);
    if (out.rows != a.cols || out.cols != b.cols) out = Mat<T>(a.cols, b.cols);
    if (!accumulate) out.fill(T(0));
    const int n = b.cols;
    for (int k = 0; k < a.rows; ++k) {
        const T* __restrict ar = a.row(k);
        const T* __restrict br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T av = ar[i];
            if (av == T(0)) continue;
            T* __restrict c = out.row(i);
            for (int j = 0; j < n; ++j) c[j] += av * br[j];
        }
    }
}

template <typename T>
void add(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
    if (a.rows != b.rows || a.cols != b.cols) detail::shape_fail("add", a.rows, a.cols, b.rows, b.cols);
    if (out.rows != a.rows || out.cols != a.cols) out = Mat<T>(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
}

template <typename T>
void hadamard(const Mat<T>& a, const Mat<T>& b, Mat<T>& out) {
    if (a.rows != b.rows || a.cols != b.cols) detail::shape_fail("hadamard", a.rows, a.cols, b.rows, b.cols);
    if (out.rows != a.rows || out.cols != a.cols) out = Mat<T>(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
}

// Broadcast-add a bias row to every row of m. The only broadcasting in the
// library; anything else is a shape error by construction.
template <typename T>
void add_bias_row(Mat<T>& m, std::span<const T> bias) {
    if (std::size_t(m.cols) != bias.size())
        detail::shape_fail("add_bias_row", m.rows, m.cols, 1, int(bias.size()));
    for (int i = 0; i < m.rows; ++i) {
        T* __restrict r = m.row(i);
        for (int j = 0; j < m.cols; ++j) r[j] += bias[j];
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void sigmoid_inplace(T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = sigmoid(p[i]);
}

template <typename T>
void tanh_inplace(T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = std::tanh(p[i]);
}

template <typename T>
void relu_inplace(T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
}

template <typename T>
Mat<T> sigmoid(const Mat<T>& m) {
    Mat<T> out = m;
    sigmoid_inplace(out.data.data(), out.size());
    return out;
}

template <typename T>
Mat<T> tanh(const Mat<T>& m) {
    Mat<T> out = m;
    tanh_inplace(out.data.data(), out.size());
    return out;
}

template <typename T>
Mat<T> relu(const Mat<T>& m) {
    Mat<T> out = m;
    relu_inplace(out.data.data(), out.size());
    return out;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
    Mat<T> out(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        const T* __restrict l = logits.row(i);
        T* __restrict o = out.row(i);
        T mx = l[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, l[j]);
        T sum = 0;
        for (int j = 0; j < logits.cols; ++j) {
            o[j] = std::exp(l[j] - mx);
            sum += o[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < logits.cols; ++j) o[j] *= inv;
    }
    return out;
}

inline int argmax(const float* p, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

// Mean negative log-likelihood over unmasked rows plus its gradient
// (softmax - one-hot, scaled by 1/unmasked-count). `targets` and `mask`
// align with logit rows; mask entry 0 marks a padded position.
template <typename T>
double cross_entropy(const Mat<T>& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask, Mat<T>* dlogits) {
    if (targets.size() != std::size_t(logits.rows))
        throw ShapeError("cross_entropy: target count " + std::to_string(targets.size()) +
                         " != logit rows " + std::to_string(logits.rows));
    if (!mask.empty() && mask.size() != targets.size())
        throw ShapeError("cross_entropy: mask length mismatch");

    std::size_t live = 0;
    if (mask.empty()) {
        live = targets.size();
    } else {
        for (auto m : mask) live += m ? 1 : 0;
    }
    if (live == 0) throw EmptyBatch("cross_entropy: all positions masked");

    if (dlogits) {
        if (dlogits->rows != logits.rows || dlogits->cols != logits.cols)
            *dlogits = Mat<T>(logits.rows, logits.cols);
        else
            dlogits->fill(T(0));
    }

    const T inv_live = T(1) / T(live);
    double loss = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const std::int32_t t = targets[i];
        if (t < 0 || t >= logits.cols)
            throw UsageError("cross_entropy: target id " + std::to_string(t) + " out of range");
        const T* __restrict l = logits.row(i);
        T mx = l[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, l[j]);
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) sum += std::exp(double(l[j] - mx));
        loss += std::log(sum) - double(l[t] - mx);
        if (dlogits) {
            T* __restrict d = dlogits->row(i);
            const T inv_sum = T(1.0 / sum);
            for (int j = 0; j < logits.cols; ++j)
                d[j] = std::exp(l[j] - mx) * inv_sum * inv_live;
            d[t] -= inv_live;
        }
    }
    return loss / double(live);
}

} // namespace memsig
