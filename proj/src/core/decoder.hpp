#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "core/mat.hpp"
#include "core/rng.hpp"
#include "core/rnn.hpp"

namespace memsig {

// Recall decoder: ReLU hidden layers over a frozen state vector, linear
// |V|-way output. Weight matrices are [next x prev], applied as x * W^T.
template <typename T>
struct Decoder {
    int input = 0;
    int output = 0;
    std::vector<int> hidden;       // widths; w/b hold hidden.size()+1 layers
    std::vector<Mat<T>> w;
    std::vector<std::vector<T>> b;

    int layer_count() const { return int(w.size()); }
};

using DecoderF = Decoder<float>;

inline std::size_t decoder_param_count(int input, std::span<const int> hidden, int output) {
    std::size_t total = 0;
    int prev = input;
    for (int width : hidden) {
        total += std::size_t(width) * prev + std::size_t(width);
        prev = width;
    }
    total += std::size_t(output) * prev + std::size_t(output);
    return total;
}

template <typename T>
std::size_t decoder_param_count(const Decoder<T>& d) {
    return decoder_param_count(d.input, std::span<const int>(d.hidden), d.output);
}

// Smallest uniform hidden width whose parameter count reaches `floor`.
inline std::vector<int> size_decoder(int state_width, std::size_t floor, int vocab,
                                     int depth = 2) {
    if (state_width < 1) throw UsageError("state width must be >= 1");
    if (vocab < 1) throw UsageError("vocab size must be >= 1");
    if (depth < 1) throw UsageError("decoder depth must be >= 1");
    auto count = [&](int w) {
        std::vector<int> widths(std::size_t(depth), w);
        return decoder_param_count(state_width, widths, vocab);
    };
    int lo = 1, hi = 1;
    while (count(hi) < floor) hi *= 2;
    while (lo < hi) {
        int mid = lo + (hi - lo) / 2;
        if (count(mid) < floor) lo = mid + 1; else hi = mid;
    }
    return std::vector<int>(std::size_t(depth), lo);
}

template <typename T>
Decoder<T> make_decoder(int input, std::vector<int> hidden, int output, std::uint64_t seed) {
    if (input < 1) throw UsageError("decoder input width must be >= 1");
    if (output < 1) throw UsageError("decoder output width must be >= 1");
    for (int w : hidden)
        if (w < 1) throw UsageError("decoder hidden widths must be >= 1");
    Decoder<T> d;
    d.input = input;
    d.output = output;
    d.hidden = std::move(hidden);
    Rng rng(seed);
    const T s = T(0.08);
    int prev = input;
    for (int width : d.hidden) {
        d.w.push_back(Mat<T>::uniform(width, prev, -s, s, rng));
        d.b.emplace_back(std::size_t(width), T(0));
        prev = width;
    }
    d.w.push_back(Mat<T>::uniform(output, prev, -s, s, rng));
    d.b.emplace_back(std::size_t(output), T(0));
    return d;
}

template <typename T, typename F>
void visit_params(Decoder<T>& d, F&& f) {
    for (std::size_t l = 0; l < d.w.size(); ++l) {
        f("w" + std::to_string(l), std::span<T>(d.w[l].data));
        f("b" + std::to_string(l), std::span<T>(d.b[l]));
    }
}

template <typename T, typename F>
void visit_params(const Decoder<T>& d, F&& f) {
    for (std::size_t l = 0; l < d.w.size(); ++l) {
        f("w" + std::to_string(l), std::span<const T>(d.w[l].data));
        f("b" + std::to_string(l), std::span<const T>(d.b[l]));
    }
}

template <typename T>
Decoder<T> clone_zeroed(const Decoder<T>& d) {
    Decoder<T> g = d;
    visit_params(g, [](const std::string&, std::span<T> p) {
        std::fill(p.begin(), p.end(), T(0));
    });
    return g;
}

template <typename Src, typename Dst>
Decoder<Dst> convert_decoder(const Decoder<Src>& d) {
    Decoder<Dst> o;
    o.input = d.input;
    o.output = d.output;
    o.hidden = d.hidden;
    for (const auto& m : d.w) {
        Mat<Dst> c(m.rows, m.cols);
        for (std::size_t i = 0; i < m.size(); ++i) c.data[i] = Dst(m.data[i]);
        o.w.push_back(std::move(c));
    }
    for (const auto& v : d.b) o.b.emplace_back(v.begin(), v.end());
    return o;
}

// Post-activation (and post-dropout) hidden outputs, kept for backward.
template <typename T>
struct DecoderCache {
    bool dropout = false;
    std::vector<Mat<T>> a;     // [B x width] per hidden layer
    std::vector<Mat<T>> drop;  // inverted dropout masks (train mode only)
    Mat<T> logits;             // [B x output]
};

template <typename T>
void decoder_forward(const Decoder<T>& d, const Mat<T>& x, DropoutMode mode, double keep_prob,
                     Rng* drop_rng, DecoderCache<T>& cache) {
    if (x.cols != d.input)
        throw ShapeError("decoder_forward: input width " + std::to_string(x.cols) + " != " +
                         std::to_string(d.input));
    const bool drop = mode == DropoutMode::train;
    if (drop && (keep_prob <= 0.0 || keep_prob > 1.0))
        throw UsageError("dropout keep probability must be in (0, 1]");
    if (drop && !drop_rng) throw UsageError("dropout requires an rng");
    const std::size_t nh = d.hidden.size();
    cache.dropout = drop;
    cache.a.resize(nh);
    cache.drop.resize(drop ? nh : 0);
    const T inv_keep = T(1.0 / keep_prob);
    const Mat<T>* below = &x;
    for (std::size_t l = 0; l < nh; ++l) {
        Mat<T>& a = cache.a[l];
        matmul_tb(*below, d.w[l], a);
        add_bias_row(a, std::span<const T>(d.b[l]));
        relu_inplace(a.data.data(), a.size());
        if (drop) {
            Mat<T>& mask = cache.drop[l];
            if (mask.rows != a.rows || mask.cols != a.cols) mask = Mat<T>(a.rows, a.cols);
            for (auto& mv : mask.data) mv = drop_rng->uniform() < keep_prob ? inv_keep : T(0);
            for (std::size_t i = 0; i < a.size(); ++i) a.data[i] *= mask.data[i];
        }
        below = &a;
    }
    matmul_tb(*below, d.w[nh], cache.logits);
    add_bias_row(cache.logits, std::span<const T>(d.b[nh]));
    detail::require_finite(std::span<const T>(cache.logits.data), "decoder_forward");
}

// Dropout masks fold into the stored activations, so a zero activation has a
// zero upstream gradient either way and the ReLU derivative can read a > 0.
template <typename T>
void decoder_backward(const Decoder<T>& d, const Mat<T>& x, const DecoderCache<T>& cache,
                      const Mat<T>& dlogits, Decoder<T>& grads) {
    const std::size_t nh = d.hidden.size();
    if (dlogits.rows != cache.logits.rows || dlogits.cols != cache.logits.cols)
        throw ShapeError("decoder_backward: dlogits shape mismatch");
    const Mat<T>& top = nh == 0 ? x : cache.a[nh - 1];
    matmul_ta(dlogits, top, grads.w[nh], true);
    detail::add_col_sums(dlogits, std::span<T>(grads.b[nh]));
    if (nh == 0) return;
    Mat<T> da;
    matmul(dlogits, d.w[nh], da);
    for (std::size_t l = nh; l-- > 0;) {
        const Mat<T>& a = cache.a[l];
        if (cache.dropout) {
            const Mat<T>& mask = cache.drop[l];
            for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= mask.data[i];
        }
        for (std::size_t i = 0; i < da.size(); ++i)
            if (a.data[i] <= T(0)) da.data[i] = T(0);
        const Mat<T>& below = l == 0 ? x : cache.a[l - 1];
        matmul_ta(da, below, grads.w[l], true);
        detail::add_col_sums(da, std::span<T>(grads.b[l]));
        if (l > 0) {
            Mat<T> next;
            matmul(da, d.w[l], next);
            da = std::move(next);
        }
    }
}

} // namespace memsig
