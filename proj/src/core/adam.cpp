#include "core/adam.hpp"

#include <cmath>
#include <span>

#include "core/error.hpp"

namespace memsig {

namespace {

std::vector<std::span<float>> param_spans(CharLm<float>& m) {
    std::vector<std::span<float>> out;
    visit_params(m, [&](const std::string&, std::span<float> p) { out.push_back(p); });
    return out;
}

std::vector<std::span<const float>> param_spans(const CharLm<float>& m) {
    std::vector<std::span<const float>> out;
    visit_params(m, [&](const std::string&, std::span<const float> p) { out.push_back(p); });
    return out;
}

} // namespace

AdamState adam_init(const CharLm<float>& model) {
    return adam_init_spans(param_spans(model));
}

AdamState adam_init_spans(const std::vector<std::span<const float>>& params) {
    AdamState st;
    for (const auto& p : params) {
        st.m.emplace_back(p.size(), 0.0f);
        st.v.emplace_back(p.size(), 0.0f);
    }
    return st;
}

void adam_step(CharLm<float>& model, const CharLm<float>& grads, AdamState& state,
               const AdamConfig& config, double clip_norm) {
    adam_step_spans(param_spans(model), param_spans(grads), state, config, clip_norm);
}

void adam_step_spans(const std::vector<std::span<float>>& ps,
                     const std::vector<std::span<const float>>& gs, AdamState& state,
                     const AdamConfig& config, double clip_norm) {
    if (gs.size() != ps.size() || state.m.size() != ps.size() || state.v.size() != ps.size())
        throw ShapeError("adam_step: model, gradient, and state tensor counts differ");
    if (clip_norm <= 0.0) throw UsageError("clip norm must be positive");

    double sq = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) {
        if (gs[i].size() != ps[i].size() || state.m[i].size() != ps[i].size())
            throw ShapeError("adam_step: tensor size mismatch");
        for (float g : gs[i]) sq += double(g) * double(g);
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
    double scale = norm > clip_norm ? clip_norm / norm : 1.0;

    state.step += 1;
    const double c1 = 1.0 - std::pow(config.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, double(state.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        float* p = ps[i].data();
        const float* g = gs[i].data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        for (std::size_t j = 0; j < ps[i].size(); ++j) {
            double gj = double(g[j]) * scale;
            double mj = config.beta1 * double(m[j]) + (1.0 - config.beta1) * gj;
            double vj = config.beta2 * double(v[j]) + (1.0 - config.beta2) * gj * gj;
            m[j] = float(mj);
            v[j] = float(vj);
            p[j] = float(double(p[j]) - config.lr * (mj / c1) / (std::sqrt(vj / c2) + config.eps));
        }
    }
}

} // namespace memsig
