#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "rng.hpp"

namespace memsig {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference gradient check over sampled coordinates of `params`.
// `loss` must be a deterministic function of the current parameter values
// (dropout off, fixed inputs); `analytic` aligns with `params`. 64-bit only:
// float models are promoted by the caller before checking.
inline GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> params,
                                  std::span<const double> analytic, double h, std::size_t samples,
                                  Rng& rng) {
    GradCheckReport report;
    if (params.empty()) return report;

    std::vector<std::size_t> coords;
    if (samples >= params.size()) {
        coords.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) coords[i] = i;
    } else {
        coords.reserve(samples);
        for (std::size_t i = 0; i < samples; ++i) coords.push_back(rng.below(params.size()));
    }

    for (std::size_t c : coords) {
        const double saved = params[c];
        params[c] = saved + h;
        const double up = loss();
        params[c] = saved - h;
        const double down = loss();
        params[c] = saved;

        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[c];
        // Central differences bottom out near eps*|loss|/h (~1e-11 here);
        // below that floor the relative error would measure noise, not the
        // gradient, so the denominator saturates at 1e-6.
        const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-6);
        const double rel = std::abs(a - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coord = c;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
        ++report.checked;
    }
    return report;
}

} // namespace memsig
