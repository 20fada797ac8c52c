#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

namespace memsig {
namespace detail {

template <typename T>
void fill_concat(Mat<T>& z, const Mat<T>& left, const Mat<T>& right) {
    if (left.rows != right.rows) shape_fail("concat", left.rows, left.cols, right.rows, right.cols);
    const int c = left.cols + right.cols;
    if (z.rows != left.rows || z.cols != c) z = Mat<T>(left.rows, c);
    for (int i = 0; i < left.rows; ++i) {
        std::memcpy(z.row(i), left.row(i), sizeof(T) * left.cols);
        std::memcpy(z.row(i) + left.cols, right.row(i), sizeof(T) * right.cols);
    }
}

template <typename T>
void copy_cols(Mat<T>& dst, int col0, const Mat<T>& src) {
    for (int i = 0; i < src.rows; ++i)
        std::memcpy(dst.row(i) + col0, src.row(i), sizeof(T) * src.cols);
}

template <typename T>
void add_col_sums(const Mat<T>& a, std::span<T> out) {
    if (out.size() != std::size_t(a.cols)) shape_fail("col_sums", a.rows, a.cols, 1, int(out.size()));
    for (int i = 0; i < a.rows; ++i) {
        const T* __restrict r = a.row(i);
        for (int j = 0; j < a.cols; ++j) out[j] += r[j];
    }
}

template <typename T>
void require_finite(std::span<const T> v, const char* what) {
    for (const T x : v)
        if (!std::isfinite(double(x))) throw NumericalError(std::string(what) + ": non-finite value");
}

template <typename T>
T dot(const T* __restrict a, const T* __restrict b, int n) {
    T s = 0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Shared body of the const/non-const parameter visitors. Stable order:
// embedding, per-layer kernel tensors, projection. lambda is data, not a
// parameter; with_lambda includes it for serialization.
template <typename M, typename F>
void visit_tensors_impl(M& m, bool with_lambda, F&& f) {
    auto emit = [&](const std::string& name, auto& container) {
        f(name, std::span(container.data(), container.size()));
    };
    f("embedding", std::span(m.embedding.data.data(), m.embedding.data.size()));
    const int layers = m.layer_count();
    for (int l = 0; l < layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        switch (m.kind) {
            case CellKind::lstm:
                f(p + "w", std::span(m.lstm[l].w.data.data(), m.lstm[l].w.data.size()));
                emit(p + "b", m.lstm[l].b);
                break;
            case CellKind::gru:
                f(p + "wz", std::span(m.gru[l].wz.data.data(), m.gru[l].wz.data.size()));
                f(p + "wr", std::span(m.gru[l].wr.data.data(), m.gru[l].wr.data.size()));
                f(p + "wh", std::span(m.gru[l].wh.data.data(), m.gru[l].wh.data.size()));
                emit(p + "bz", m.gru[l].bz);
                emit(p + "br", m.gru[l].br);
                emit(p + "bh", m.gru[l].bh);
                break;
            case CellKind::lstm_factorized:
                f(p + "w", std::span(m.fact[l].base.w.data.data(), m.fact[l].base.w.data.size()));
                emit(p + "b", m.fact[l].base.b);
                f(p + "u", std::span(m.fact[l].u.data.data(), m.fact[l].u.data.size()));
                f(p + "v", std::span(m.fact[l].v.data.data(), m.fact[l].v.data.size()));
                if (with_lambda) emit(p + "lambda", m.fact[l].lambda);
                break;
        }
    }
    f("proj.w", std::span(m.proj.data.data(), m.proj.data.size()));
    emit("proj.b", m.proj_b);
}

} // namespace detail

template <typename T, typename F>
void visit_params(CharLm<T>& m, F&& f) {
    detail::visit_tensors_impl(m, false, std::forward<F>(f));
}

template <typename T, typename F>
void visit_params(const CharLm<T>& m, F&& f) {
    detail::visit_tensors_impl(m, false, std::forward<F>(f));
}

// Every tensor including lambda; the serialization order.
template <typename T, typename F>
void visit_tensors(CharLm<T>& m, F&& f) {
    detail::visit_tensors_impl(m, true, std::forward<F>(f));
}

template <typename T, typename F>
void visit_tensors(const CharLm<T>& m, F&& f) {
    detail::visit_tensors_impl(m, true, std::forward<F>(f));
}

template <typename T>
CharLm<T> make_char_lm(const SymbolSet& symbols, CellKind kind, int layers, int state_size,
                       std::uint64_t seed) {
    if (layers < 1) throw UsageError("layer count must be >= 1");
    if (state_size < 1) throw UsageError("state size must be >= 1");
    CharLm<T> m;
    m.symbols = symbols;
    m.kind = kind;
    m.state = state_size;
    m.embed = state_size;
    const int v = symbols.size();
    const int n = state_size;
    Rng rng(seed);
    const T s = T(0.08);
    m.embedding = Mat<T>::uniform(v, n, -s, s, rng);
    for (int l = 0; l < layers; ++l) {
        switch (kind) {
            case CellKind::lstm: {
                LstmKernel<T> k;
                k.n = n;
                k.w = Mat<T>::uniform(4 * n, 2 * n, -s, s, rng);
                k.b.assign(std::size_t(4) * n, T(0));
                m.lstm.push_back(std::move(k));
                break;
            }
            case CellKind::gru: {
                GruKernel<T> k;
                k.n = n;
                k.wz = Mat<T>::uniform(n, 2 * n, -s, s, rng);
                k.wr = Mat<T>::uniform(n, 2 * n, -s, s, rng);
                k.wh = Mat<T>::uniform(n, 2 * n, -s, s, rng);
                k.bz.assign(std::size_t(n), T(0));
                k.br.assign(std::size_t(n), T(0));
                k.bh.assign(std::size_t(n), T(0));
                m.gru.push_back(std::move(k));
                break;
            }
            case CellKind::lstm_factorized: {
                FactorizedKernel<T> k;
                k.base.n = n;
                k.base.w = Mat<T>::uniform(4 * n, 2 * n, -s, s, rng);
                k.base.b.assign(std::size_t(4) * n, T(0));
                const int basis = v * v;
                k.u = Mat<T>::uniform(4 * n, basis, -s, s, rng);
                k.v = Mat<T>::uniform(basis, 2 * n, -s, s, rng);
                k.lambda.assign(std::size_t(basis), T(0));
                m.fact.push_back(std::move(k));
                break;
            }
        }
    }
    m.proj = Mat<T>::uniform(n, v, -s, s, rng);
    m.proj_b.assign(std::size_t(v), T(0));
    return m;
}

template <typename T>
CharLm<T> clone_zeroed(const CharLm<T>& m) {
    CharLm<T> g = m;
    visit_params(g, [](const std::string&, std::span<T> d) {
        std::fill(d.begin(), d.end(), T(0));
    });
    return g;
}

template <typename Src, typename Dst>
CharLm<Dst> convert_lm(const CharLm<Src>& m) {
    auto cm = [](const Mat<Src>& a) {
        Mat<Dst> b(a.rows, a.cols);
        for (std::size_t i = 0; i < a.size(); ++i) b.data[i] = Dst(a.data[i]);
        return b;
    };
    auto cv = [](const std::vector<Src>& a) { return std::vector<Dst>(a.begin(), a.end()); };
    CharLm<Dst> o;
    o.symbols = m.symbols;
    o.kind = m.kind;
    o.state = m.state;
    o.embed = m.embed;
    o.embedding = cm(m.embedding);
    for (const auto& k : m.lstm) o.lstm.push_back({k.n, cm(k.w), cv(k.b)});
    for (const auto& k : m.gru)
        o.gru.push_back({k.n, cm(k.wz), cm(k.wr), cm(k.wh), cv(k.bz), cv(k.br), cv(k.bh)});
    for (const auto& k : m.fact)
        o.fact.push_back({{k.base.n, cm(k.base.w), cv(k.base.b)}, cm(k.u), cm(k.v), cv(k.lambda)});
    o.proj = cm(m.proj);
    o.proj_b = cv(m.proj_b);
    return o;
}

inline std::size_t lm_param_count(const CharLm<float>& m) {
    std::size_t total = 0;
    visit_params(m, [&](const std::string&, std::span<const float> d) { total += d.size(); });
    return total;
}

inline std::uint64_t lm_param_hash(const CharLm<float>& m) {
    std::uint64_t h = fnv1a(nullptr, 0);
    visit_tensors(m, [&](const std::string& name, std::span<const float> d) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(d.data(), d.size() * sizeof(float), h);
    });
    return h;
}

template <typename T>
std::size_t layer_probe_floor(const CharLm<T>& m, int layer) {
    if (layer < 0 || layer >= m.layer_count())
        throw UsageError("layer index " + std::to_string(layer) + " out of range");
    const std::size_t emb = m.embedding.size();
    switch (m.kind) {
        case CellKind::lstm:
            return m.lstm[layer].w.size() + m.lstm[layer].b.size() + emb;
        case CellKind::gru: {
            const auto& k = m.gru[layer];
            return k.wz.size() + k.wr.size() + k.wh.size() + k.bz.size() + k.br.size() +
                   k.bh.size() + emb;
        }
        case CellKind::lstm_factorized: {
            const auto& k = m.fact[layer];
            return k.base.w.size() + k.base.b.size() + k.u.size() + k.v.size() + emb;
        }
    }
    return 0;
}

template <typename T>
void set_lambda(CharLm<T>& m, std::span<const double> lambda) {
    if (m.kind != CellKind::lstm_factorized)
        throw UsageError("lambda requires a factorized architecture");
    for (auto& k : m.fact) {
        if (lambda.size() != k.lambda.size())
            throw ShapeError("lambda length " + std::to_string(lambda.size()) + " != basis count " +
                             std::to_string(k.lambda.size()));
        for (std::size_t i = 0; i < lambda.size(); ++i) k.lambda[i] = T(lambda[i]);
    }
}

template <typename T>
void set_lambda_zero(CharLm<T>& m) {
    if (m.kind != CellKind::lstm_factorized)
        throw UsageError("lambda requires a factorized architecture");
    for (auto& k : m.fact) std::fill(k.lambda.begin(), k.lambda.end(), T(0));
}

template <typename T>
void set_lambda_onehot(CharLm<T>& m, int basis) {
    if (m.kind != CellKind::lstm_factorized)
        throw UsageError("lambda requires a factorized architecture");
    for (auto& k : m.fact) {
        if (basis < 0 || basis >= int(k.lambda.size()))
            throw UsageError("basis index " + std::to_string(basis) + " out of range");
        std::fill(k.lambda.begin(), k.lambda.end(), T(0));
        k.lambda[std::size_t(basis)] = T(1);
    }
}

// ---- single-step ops ------------------------------------------------------

template <typename T>
void lstm_step(const LstmKernel<T>& k, std::span<const T> x, std::span<const T> h_prev,
               std::span<const T> c_prev, std::span<T> h_out, std::span<T> c_out) {
    const int n = k.n;
    if (int(x.size() + h_prev.size()) != k.w.cols || int(h_prev.size()) != n ||
        int(c_prev.size()) != n || int(h_out.size()) != n || int(c_out.size()) != n)
        throw ShapeError("lstm_step: input widths do not match the kernel");
    detail::require_finite(x, "lstm_step");
    detail::require_finite(h_prev, "lstm_step");
    detail::require_finite(c_prev, "lstm_step");
    const int xw = int(x.size());
    std::vector<T> a(std::size_t(4) * n);
    for (int r = 0; r < 4 * n; ++r) {
        const T* __restrict w = k.w.row(r);
        a[r] = k.b[r] + detail::dot(w, x.data(), xw) + detail::dot(w + xw, h_prev.data(), n);
    }
    for (int j = 0; j < n; ++j) {
        const T f = sigmoid(a[j]);
        const T i = sigmoid(a[n + j]);
        const T o = sigmoid(a[2 * n + j]);
        const T in = std::tanh(a[3 * n + j]);
        const T c = f * c_prev[j] + i * in;
        c_out[j] = c;
        h_out[j] = o * std::tanh(c);
    }
}

template <typename T>
void gru_step(const GruKernel<T>& k, std::span<const T> x, std::span<const T> h_prev,
              std::span<T> h_out) {
    const int n = k.n;
    if (int(x.size() + h_prev.size()) != k.wz.cols || int(h_prev.size()) != n ||
        int(h_out.size()) != n)
        throw ShapeError("gru_step: input widths do not match the kernel");
    detail::require_finite(x, "gru_step");
    detail::require_finite(h_prev, "gru_step");
    const int xw = int(x.size());
    std::vector<T> z(n), r(n), hc(n);
    for (int j = 0; j < n; ++j) {
        const T* __restrict wz = k.wz.row(j);
        const T* __restrict wr = k.wr.row(j);
        z[j] = sigmoid(k.bz[j] + detail::dot(wz, x.data(), xw) +
                       detail::dot(wz + xw, h_prev.data(), n));
        r[j] = sigmoid(k.br[j] + detail::dot(wr, x.data(), xw) +
                       detail::dot(wr + xw, h_prev.data(), n));
    }
    // reset gate scales h_prev inside the candidate affine
    for (int j = 0; j < n; ++j) {
        const T* __restrict wh = k.wh.row(j);
        T s = k.bh[j] + detail::dot(wh, x.data(), xw);
        for (int p = 0; p < n; ++p) s += wh[xw + p] * (r[p] * h_prev[p]);
        hc[j] = std::tanh(s);
    }
    for (int j = 0; j < n; ++j) h_out[j] = z[j] * h_prev[j] + (T(1) - z[j]) * hc[j];
}

template <typename T>
void apply_factorized(const FactorizedKernel<T>& k, const Mat<T>& z, Mat<T>& out,
                      Mat<T>* q_cache, Mat<T>* p_cache) {
    matmul_tb(z, k.base.w, out);
    Mat<T> p_local;
    Mat<T>& p = p_cache ? *p_cache : p_local;
    matmul_tb(z, k.v, p); // [rows x basis]
    Mat<T> q_local;
    Mat<T>& q = q_cache ? *q_cache : q_local;
    if (q.rows != p.rows || q.cols != p.cols) q = Mat<T>(p.rows, p.cols);
    const std::size_t basis = k.lambda.size();
    for (int i = 0; i < p.rows; ++i) {
        const T* __restrict pr = p.row(i);
        T* __restrict qr = q.row(i);
        for (std::size_t j = 0; j < basis; ++j) qr[j] = pr[j] * k.lambda[j];
    }
    matmul_tb(q, k.u, out, true);
}

// ---- windowed forward -----------------------------------------------------

template <typename T>
void lm_forward(const CharLm<T>& m, const IdBatch& batch, DropoutMode mode, double keep_prob,
                Rng* drop_rng, LmCache<T>& cache) {
    const int nb = batch.batch, tw = batch.window;
    const int layers = m.layer_count(), n = m.state, v = m.vocab();
    if (nb < 1 || tw < 1) throw UsageError("lm_forward: empty batch");
    if (batch.inputs.size() != std::size_t(nb) * tw || batch.inputs.size() != batch.targets.size() ||
        batch.inputs.size() != batch.mask.size())
        throw ShapeError("lm_forward: batch layout mismatch");
    const bool drop = mode == DropoutMode::train && keep_prob < 1.0;
    if (mode == DropoutMode::train && !(keep_prob > 0.0 && keep_prob <= 1.0))
        throw UsageError("keep probability must be in (0,1]");
    if (drop && !drop_rng) throw UsageError("dropout requires an rng");

    cache.batch = nb;
    cache.window = tw;
    cache.layers = layers;
    cache.dropout = drop;
    cache.ids = batch;
    const std::size_t slots = std::size_t(layers) * tw;
    cache.z.resize(slots);
    cache.gates.resize(slots);
    cache.h.resize(slots);
    const bool is_gru = m.kind == CellKind::gru;
    const bool is_fact = m.kind == CellKind::lstm_factorized;
    if (!is_gru) {
        cache.c.resize(slots);
        cache.tc.resize(slots);
    }
    if (is_gru) cache.zh.resize(slots);
    if (is_fact) cache.q.resize(slots);
    if (drop) cache.drop.resize(slots);
    cache.x.resize(std::size_t(tw));
    if (cache.zero_state.rows != nb || cache.zero_state.cols != n) cache.zero_state = Mat<T>(nb, n);
    if (cache.hall.rows != nb * tw || cache.hall.cols != n) cache.hall = Mat<T>(nb * tw, n);

    const T inv_keep = T(1.0 / keep_prob);
    for (int t = 0; t < tw; ++t) {
        Mat<T>& x = cache.x[std::size_t(t)];
        if (x.rows != nb || x.cols != m.embed) x = Mat<T>(nb, m.embed);
        for (int b = 0; b < nb; ++b) {
            const std::int32_t id = batch.inputs[std::size_t(b) * tw + t];
            if (id < 0 || id >= v) throw UsageError("lm_forward: input id out of range");
            std::memcpy(x.row(b), m.embedding.row(id), sizeof(T) * m.embed);
        }
        const Mat<T>* below = &x;
        for (int l = 0; l < layers; ++l) {
            const std::size_t slot = std::size_t(l) * tw + t;
            const Mat<T>& h_prev = t == 0 ? cache.zero_state : cache.h[slot - 1];
            Mat<T>& z = cache.z[slot];
            detail::fill_concat(z, *below, h_prev);
            Mat<T>& h = cache.h[slot];
            if (h.rows != nb || h.cols != n) h = Mat<T>(nb, n);
            if (is_gru) {
                const GruKernel<T>& k = m.gru[l];
                Mat<T>& g = cache.gates[slot];
                if (g.rows != nb || g.cols != 3 * n) g = Mat<T>(nb, 3 * n);
                Mat<T>& a = cache.wb;
                matmul_tb(z, k.wz, a);
                add_bias_row(a, std::span<const T>(k.bz));
                sigmoid_inplace(a.data.data(), a.size());
                detail::copy_cols(g, 0, a);
                matmul_tb(z, k.wr, a);
                add_bias_row(a, std::span<const T>(k.br));
                sigmoid_inplace(a.data.data(), a.size());
                detail::copy_cols(g, n, a);
                Mat<T>& zh = cache.zh[slot];
                if (zh.rows != nb || zh.cols != 2 * n) zh = Mat<T>(nb, 2 * n);
                for (int b = 0; b < nb; ++b) {
                    std::memcpy(zh.row(b), below->row(b), sizeof(T) * n);
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hp = h_prev.row(b);
                    T* __restrict zr = zh.row(b) + n;
                    for (int j = 0; j < n; ++j) zr[j] = gr[n + j] * hp[j];
                }
                matmul_tb(zh, k.wh, a);
                add_bias_row(a, std::span<const T>(k.bh));
                tanh_inplace(a.data.data(), a.size());
                detail::copy_cols(g, 2 * n, a);
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hp = h_prev.row(b);
                    T* __restrict hr = h.row(b);
                    for (int j = 0; j < n; ++j)
                        hr[j] = gr[j] * hp[j] + (T(1) - gr[j]) * gr[2 * n + j];
                }
            } else {
                const LstmKernel<T>& base = is_fact ? m.fact[l].base : m.lstm[l];
                Mat<T>& a = cache.gates[slot];
                if (is_fact)
                    apply_factorized(m.fact[l], z, a, &cache.q[slot]);
                else
                    matmul_tb(z, base.w, a);
                add_bias_row(a, std::span<const T>(base.b));
                for (int b = 0; b < nb; ++b) {
                    T* ar = a.row(b);
                    sigmoid_inplace(ar, std::size_t(3) * n);
                    tanh_inplace(ar + 3 * n, std::size_t(n));
                }
                const Mat<T>& c_prev = t == 0 ? cache.zero_state : cache.c[slot - 1];
                Mat<T>& c = cache.c[slot];
                Mat<T>& tc = cache.tc[slot];
                if (c.rows != nb || c.cols != n) c = Mat<T>(nb, n);
                if (tc.rows != nb || tc.cols != n) tc = Mat<T>(nb, n);
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = a.row(b);
                    const T* __restrict cp = c_prev.row(b);
                    T* __restrict cr = c.row(b);
                    T* __restrict tr = tc.row(b);
                    T* __restrict hr = h.row(b);
                    for (int j = 0; j < n; ++j) {
                        const T cv = gr[j] * cp[j] + gr[n + j] * gr[3 * n + j];
                        cr[j] = cv;
                        const T tv = std::tanh(cv);
                        tr[j] = tv;
                        hr[j] = gr[2 * n + j] * tv;
                    }
                }
            }
            if (drop) {
                Mat<T>& mask = cache.drop[slot];
                if (mask.rows != nb || mask.cols != n) mask = Mat<T>(nb, n);
                for (auto& mv : mask.data) mv = drop_rng->uniform() < keep_prob ? inv_keep : T(0);
                hadamard(h, mask, cache.wa);
                below = &cache.wa;
            } else {
                below = &h;
            }
        }
        for (int b = 0; b < nb; ++b)
            std::memcpy(cache.hall.row(b * tw + t), below->row(b), sizeof(T) * n);
    }
    matmul(cache.hall, m.proj, cache.logits);
    add_bias_row(cache.logits, std::span<const T>(m.proj_b));
    detail::require_finite(std::span<const T>(cache.logits.data), "lm_forward");
}

// ---- windowed backward ----------------------------------------------------

template <typename T>
void lm_backward(const CharLm<T>& m, const LmCache<T>& cache, const Mat<T>& dlogits,
                 CharLm<T>& grads) {
    const int nb = cache.batch, tw = cache.window;
    const int layers = cache.layers, n = m.state, v = m.vocab();
    if (dlogits.rows != nb * tw || dlogits.cols != v)
        throw ShapeError("lm_backward: dlogits shape mismatch");
    const bool is_gru = m.kind == CellKind::gru;
    const bool is_fact = m.kind == CellKind::lstm_factorized;

    matmul_ta(cache.hall, dlogits, grads.proj, true);
    detail::add_col_sums(dlogits, std::span<T>(grads.proj_b));
    Mat<T> dhall;
    matmul_tb(dlogits, m.proj, dhall); // [nb*tw x n]

    std::vector<Mat<T>> dh_carry(std::size_t(layers), Mat<T>(nb, n));
    std::vector<Mat<T>> dc_carry;
    if (!is_gru) dc_carry.assign(std::size_t(layers), Mat<T>(nb, n));
    Mat<T> dh(nb, n), dx(nb, n), da, dz, dq, dp, daz, dar, dah, dzh, dzg;

    for (int t = tw - 1; t >= 0; --t) {
        for (int l = layers - 1; l >= 0; --l) {
            const std::size_t slot = std::size_t(l) * tw + t;
            if (l == layers - 1) {
                for (int b = 0; b < nb; ++b)
                    std::memcpy(dh.row(b), dhall.row(b * tw + t), sizeof(T) * n);
            } else {
                for (int b = 0; b < nb; ++b) std::memcpy(dh.row(b), dx.row(b), sizeof(T) * n);
            }
            if (cache.dropout) {
                const Mat<T>& mask = cache.drop[slot];
                for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] *= mask.data[i];
            }
            for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dh_carry[l].data[i];

            const Mat<T>& z = cache.z[slot];
            if (is_gru) {
                const GruKernel<T>& k = m.gru[l];
                const Mat<T>& g = cache.gates[slot];
                const Mat<T>& h_prev = t == 0 ? cache.zero_state : cache.h[slot - 1];
                if (daz.rows != nb || daz.cols != n) daz = Mat<T>(nb, n);
                if (dar.rows != nb || dar.cols != n) dar = Mat<T>(nb, n);
                if (dah.rows != nb || dah.cols != n) dah = Mat<T>(nb, n);
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hp = h_prev.row(b);
                    const T* __restrict dhr = dh.row(b);
                    T* __restrict az = daz.row(b);
                    T* __restrict ah = dah.row(b);
                    for (int j = 0; j < n; ++j) {
                        const T zg = gr[j];
                        const T hc = gr[2 * n + j];
                        const T dzg = dhr[j] * (hp[j] - hc);
                        az[j] = dzg * zg * (T(1) - zg);
                        ah[j] = dhr[j] * (T(1) - zg) * (T(1) - hc * hc);
                    }
                }
                matmul_ta(dah, cache.zh[slot], grads.gru[l].wh, true);
                detail::add_col_sums(dah, std::span<T>(grads.gru[l].bh));
                matmul(dah, k.wh, dzh); // [nb x 2n]
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hp = h_prev.row(b);
                    const T* __restrict drh = dzh.row(b) + n;
                    T* __restrict ar = dar.row(b);
                    for (int j = 0; j < n; ++j) {
                        const T r = gr[n + j];
                        ar[j] = drh[j] * hp[j] * r * (T(1) - r);
                    }
                }
                matmul_ta(daz, z, grads.gru[l].wz, true);
                detail::add_col_sums(daz, std::span<T>(grads.gru[l].bz));
                matmul_ta(dar, z, grads.gru[l].wr, true);
                detail::add_col_sums(dar, std::span<T>(grads.gru[l].br));
                matmul(daz, k.wz, dzg);
                matmul(dar, k.wr, dzg, true); // [nb x 2n]
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict dhr = dh.row(b);
                    const T* __restrict zhr = dzh.row(b);
                    const T* __restrict zgr = dzg.row(b);
                    T* __restrict dxr = dx.row(b);
                    T* __restrict cr = dh_carry[l].row(b);
                    for (int j = 0; j < n; ++j) {
                        dxr[j] = zhr[j] + zgr[j];
                        cr[j] = dhr[j] * gr[j] + zhr[n + j] * gr[n + j] + zgr[n + j];
                    }
                }
            } else {
                const LstmKernel<T>& base = is_fact ? m.fact[l].base : m.lstm[l];
                const Mat<T>& g = cache.gates[slot];
                const Mat<T>& tc = cache.tc[slot];
                const Mat<T>& c_prev = t == 0 ? cache.zero_state : cache.c[slot - 1];
                if (da.rows != nb || da.cols != 4 * n) da = Mat<T>(nb, 4 * n);
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict tr = tc.row(b);
                    const T* __restrict cp = c_prev.row(b);
                    const T* __restrict dhr = dh.row(b);
                    T* __restrict dcc = dc_carry[l].row(b);
                    T* __restrict dar2 = da.row(b);
                    for (int j = 0; j < n; ++j) {
                        const T f = gr[j], in = gr[n + j], o = gr[2 * n + j], cand = gr[3 * n + j];
                        const T dc = dcc[j] + dhr[j] * o * (T(1) - tr[j] * tr[j]);
                        dar2[j] = dc * cp[j] * f * (T(1) - f);
                        dar2[n + j] = dc * cand * in * (T(1) - in);
                        dar2[2 * n + j] = dhr[j] * tr[j] * o * (T(1) - o);
                        dar2[3 * n + j] = dc * in * (T(1) - cand * cand);
                        dcc[j] = dc * f;
                    }
                }
                if (is_fact) {
                    matmul_ta(da, z, grads.fact[l].base.w, true);
                    detail::add_col_sums(da, std::span<T>(grads.fact[l].base.b));
                    const FactorizedKernel<T>& k = m.fact[l];
                    matmul_ta(da, cache.q[slot], grads.fact[l].u, true);
                    matmul(da, k.u, dq); // [nb x basis]
                    if (dp.rows != dq.rows || dp.cols != dq.cols) dp = Mat<T>(dq.rows, dq.cols);
                    const std::size_t basis = k.lambda.size();
                    for (int b = 0; b < nb; ++b) {
                        const T* __restrict qr = dq.row(b);
                        T* __restrict pr = dp.row(b);
                        for (std::size_t j = 0; j < basis; ++j) pr[j] = qr[j] * k.lambda[j];
                    }
                    matmul_ta(dp, z, grads.fact[l].v, true);
                    matmul(da, base.w, dz);
                    matmul(dp, k.v, dz, true);
                } else {
                    matmul_ta(da, z, grads.lstm[l].w, true);
                    detail::add_col_sums(da, std::span<T>(grads.lstm[l].b));
                    matmul(da, base.w, dz); // [nb x 2n]
                }
                for (int b = 0; b < nb; ++b) {
                    const T* __restrict zr = dz.row(b);
                    std::memcpy(dx.row(b), zr, sizeof(T) * n);
                    std::memcpy(dh_carry[l].row(b), zr + n, sizeof(T) * n);
                }
            }
        }
        // dx now holds the embedded-input gradient for step t
        for (int b = 0; b < nb; ++b) {
            const std::int32_t id = cache.ids.inputs[std::size_t(b) * tw + t];
            T* __restrict er = grads.embedding.row(id);
            const T* __restrict dxr = dx.row(b);
            for (int j = 0; j < m.embed; ++j) er[j] += dxr[j];
        }
    }
}

// ---- segment-level evaluation ----------------------------------------------

namespace detail {

// Carries batched recurrent state across the steps of one segment batch.
// Rows step independently; dead rows feed zeros.
template <typename T>
struct SegmentStepper {
    const CharLm<T>& m;
    int rows;
    std::vector<Mat<T>> h, c;
    Mat<T> x, z, a, zh, g;

    SegmentStepper(const CharLm<T>& model, int nrows) : m(model), rows(nrows) {
        const int layers = m.layer_count(), n = m.state;
        h.assign(std::size_t(layers), Mat<T>(rows, n));
        if (m.kind != CellKind::gru) c.assign(std::size_t(layers), Mat<T>(rows, n));
        x = Mat<T>(rows, m.embed);
    }

    void step(std::span<const std::int32_t> ids) {
        const int layers = m.layer_count(), n = m.state, v = m.vocab();
        const bool is_gru = m.kind == CellKind::gru;
        const bool is_fact = m.kind == CellKind::lstm_factorized;
        for (int b = 0; b < rows; ++b) {
            const std::int32_t id = ids[std::size_t(b)];
            if (id < 0) {
                std::memset(x.row(b), 0, sizeof(T) * m.embed);
            } else {
                if (id >= v) throw UsageError("segment step: input id out of range");
                std::memcpy(x.row(b), m.embedding.row(id), sizeof(T) * m.embed);
            }
        }
        const Mat<T>* below = &x;
        for (int l = 0; l < layers; ++l) {
            fill_concat(z, *below, h[l]);
            if (is_gru) {
                const GruKernel<T>& k = m.gru[l];
                if (g.rows != rows || g.cols != 2 * n) g = Mat<T>(rows, 2 * n);
                matmul_tb(z, k.wz, a);
                add_bias_row(a, std::span<const T>(k.bz));
                sigmoid_inplace(a.data.data(), a.size());
                copy_cols(g, 0, a);
                matmul_tb(z, k.wr, a);
                add_bias_row(a, std::span<const T>(k.br));
                sigmoid_inplace(a.data.data(), a.size());
                copy_cols(g, n, a);
                if (zh.rows != rows || zh.cols != 2 * n) zh = Mat<T>(rows, 2 * n);
                for (int b = 0; b < rows; ++b) {
                    std::memcpy(zh.row(b), below->row(b), sizeof(T) * n);
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hp = h[l].row(b);
                    T* __restrict zr = zh.row(b) + n;
                    for (int j = 0; j < n; ++j) zr[j] = gr[n + j] * hp[j];
                }
                matmul_tb(zh, k.wh, a);
                add_bias_row(a, std::span<const T>(k.bh));
                tanh_inplace(a.data.data(), a.size());
                for (int b = 0; b < rows; ++b) {
                    const T* __restrict gr = g.row(b);
                    const T* __restrict hc = a.row(b);
                    T* __restrict hr = h[l].row(b);
                    for (int j = 0; j < n; ++j)
                        hr[j] = gr[j] * hr[j] + (T(1) - gr[j]) * hc[j];
                }
            } else {
                const LstmKernel<T>& base = is_fact ? m.fact[l].base : m.lstm[l];
                if (is_fact)
                    apply_factorized(m.fact[l], z, a);
                else
                    matmul_tb(z, base.w, a);
                add_bias_row(a, std::span<const T>(base.b));
                for (int b = 0; b < rows; ++b) {
                    T* ar = a.row(b);
                    sigmoid_inplace(ar, std::size_t(3) * n);
                    tanh_inplace(ar + 3 * n, std::size_t(n));
                    const T* __restrict gr = ar;
                    T* __restrict cr = c[l].row(b);
                    T* __restrict hr = h[l].row(b);
                    for (int j = 0; j < n; ++j) {
                        const T cv = gr[j] * cr[j] + gr[n + j] * gr[3 * n + j];
                        cr[j] = cv;
                        hr[j] = gr[2 * n + j] * std::tanh(cv);
                    }
                }
            }
            below = &h[l];
        }
    }
};

} // namespace detail

template <typename T>
double perplexity_segments(const CharLm<T>& m, std::span<const EncodedSegment* const> segments) {
    if (segments.empty()) throw EmptyDataset("perplexity: no segments");
    const int v = m.vocab(), n = m.state;
    std::vector<double> seg_nll(segments.size(), 0.0);
    std::size_t events = 0;
    for (const auto* seg : segments) events += seg->ids.size() > 1 ? seg->ids.size() - 1 : 0;
    if (events == 0) throw InsufficientData("perplexity: no symbol transitions to score");

    constexpr std::size_t kRows = 64;
    Mat<T> hlive, logits;
    std::vector<std::int32_t> feed;
    std::vector<std::int32_t> live_target;
    std::vector<std::size_t> live_seg;
    for (std::size_t s0 = 0; s0 < segments.size(); s0 += kRows) {
        const int nb = int(std::min(kRows, segments.size() - s0));
        detail::SegmentStepper<T> st(m, nb);
        std::size_t max_len = 0;
        for (int b = 0; b < nb; ++b) max_len = std::max(max_len, segments[s0 + b]->ids.size());
        feed.assign(std::size_t(nb), -1);
        for (std::size_t t = 0; t + 1 < max_len; ++t) {
            live_target.clear();
            live_seg.clear();
            int live = 0;
            for (int b = 0; b < nb; ++b) {
                const auto& ids = segments[s0 + b]->ids;
                feed[std::size_t(b)] = t < ids.size() ? ids[t] : -1;
                if (t + 1 < ids.size()) ++live;
            }
            st.step(feed);
            if (hlive.rows != live || hlive.cols != n) hlive = Mat<T>(live, n);
            int r = 0;
            for (int b = 0; b < nb; ++b) {
                const auto& ids = segments[s0 + b]->ids;
                if (t + 1 >= ids.size()) continue;
                std::memcpy(hlive.row(r), st.h.back().row(b), sizeof(T) * n);
                live_target.push_back(ids[t + 1]);
                live_seg.push_back(s0 + b);
                ++r;
            }
            if (live == 0) continue;
            matmul(hlive, m.proj, logits);
            add_bias_row(logits, std::span<const T>(m.proj_b));
            for (int i = 0; i < live; ++i) {
                const T* __restrict lr = logits.row(i);
                T mx = lr[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
                double sum = 0.0;
                for (int j = 0; j < v; ++j) sum += std::exp(double(lr[j] - mx));
                const std::int32_t tgt = live_target[std::size_t(i)];
                if (tgt < 0 || tgt >= v) throw UsageError("perplexity: target id out of range");
                seg_nll[live_seg[std::size_t(i)]] += std::log(sum) - double(lr[tgt] - mx);
            }
        }
    }
    double total = 0.0;
    for (const double s : seg_nll) total += s;
    if (!std::isfinite(total)) throw NumericalError("perplexity: diverged to non-finite loss");
    return std::exp(total / double(events));
}

template <typename T>
double perplexity(const CharLm<T>& m, const CorpusSplit& split, const std::string& part) {
    if (!(m.symbols == split.symbols()))
        throw IncompatibleCheckpoint("perplexity: model and corpus symbol sets differ");
    std::vector<const EncodedSegment*> segs;
    for (const auto idx : split.part(part)) segs.push_back(&split.segment(idx));
    return perplexity_segments(m, segs);
}

inline StateTrace extract_state_trace(const CharLm<float>& m, const CorpusSplit& split,
                                      const std::string& part, StateChoice choice,
                                      std::size_t max_positions) {
    if (choice == StateChoice::cell && m.kind == CellKind::gru)
        throw UsageError("cell-state traces require an lstm architecture");
    if (!(m.symbols == split.symbols()))
        throw IncompatibleCheckpoint("state trace: model and corpus symbol sets differ");

    std::vector<const EncodedSegment*> segs;
    std::vector<std::size_t> kept;
    std::size_t total = 0;
    for (const auto idx : split.part(part)) {
        if (max_positions && total >= max_positions) break;
        const auto& seg = split.segment(idx);
        std::size_t k = seg.ids.size();
        if (max_positions) k = std::min(k, max_positions - total);
        segs.push_back(&seg);
        kept.push_back(k);
        total += k;
    }
    if (total == 0) throw EmptyDataset("state trace: empty partition");

    const int layers = m.layer_count(), n = m.state;
    StateTrace tr;
    tr.symbols = m.symbols;
    tr.choice = choice;
    tr.width = n;
    tr.states.assign(std::size_t(layers), MatF(int(total), n));
    tr.ids.resize(total);
    std::vector<std::size_t> begin(segs.size());
    std::size_t acc = 0;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        begin[s] = acc;
        acc += kept[s];
        tr.segments.emplace_back(std::uint32_t(begin[s]), std::uint32_t(acc));
    }

    constexpr std::size_t kRows = 64;
    std::vector<std::int32_t> feed;
    for (std::size_t s0 = 0; s0 < segs.size(); s0 += kRows) {
        const int nb = int(std::min(kRows, segs.size() - s0));
        detail::SegmentStepper<float> st(m, nb);
        std::size_t max_len = 0;
        for (int b = 0; b < nb; ++b) max_len = std::max(max_len, kept[s0 + b]);
        feed.assign(std::size_t(nb), -1);
        for (std::size_t t = 0; t < max_len; ++t) {
            for (int b = 0; b < nb; ++b)
                feed[std::size_t(b)] = t < kept[s0 + b] ? segs[s0 + b]->ids[t] : -1;
            st.step(feed);
            for (int b = 0; b < nb; ++b) {
                if (t >= kept[s0 + b]) continue;
                const std::size_t row = begin[s0 + b] + t;
                tr.ids[row] = feed[std::size_t(b)];
                for (int l = 0; l < layers; ++l) {
                    const float* src = choice == StateChoice::cell ? st.c[std::size_t(l)].row(b)
                                                                   : st.h[std::size_t(l)].row(b);
                    std::memcpy(tr.states[std::size_t(l)].row(int(row)), src, sizeof(float) * n);
                }
            }
        }
    }
    for (const auto& s : tr.states)
        detail::require_finite(std::span<const float>(s.data), "state trace");
    return tr;
}

} // namespace memsig
