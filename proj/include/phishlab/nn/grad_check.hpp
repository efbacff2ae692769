#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "phishlab/error.hpp"

namespace phishlab::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;

    bool passed(double tolerance = 1e-4) const noexcept { return max_rel_error <= tolerance; }
};

/// Compares an analytic gradient with central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h coordinate by coordinate. The error for
/// a coordinate is |a - n| / max(1e-8, |a| + |n|); the maximum is reported.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point, std::span<const double> analytic, double h = 1e-5) {
    if (analytic.size() != point.size()) {
        throw ValidationError("grad_check: gradient length does not match point");
    }
    std::vector<double> x(point.begin(), point.end());
    GradCheckResult res;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = f(x);
        x[i] = saved - h;
        const double fm = f(x);
        x[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
            throw ValidationError("grad_check: non-finite value at coordinate " + std::to_string(i));
        }
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (err > res.max_rel_error || i == 0) {
            res = {err, i, a, numeric};
        }
    }
    return res;
}

} // namespace phishlab::nn
