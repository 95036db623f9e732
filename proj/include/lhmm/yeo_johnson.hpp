#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace lhmm {

struct YeoJohnsonParams {
    double lambda = 1.0;
};

// Four-branch Yeo-Johnson power transform. Continuous in both y and lambda.
inline double yj_transform(double y, double lambda) {
    if (y >= 0.0) {
        if (std::abs(lambda) > 1e-12) return (std::pow(1.0 + y, lambda) - 1.0) / lambda;
        return std::log1p(y);
    }
    double two_ml = 2.0 - lambda;
    if (std::abs(two_ml) > 1e-12) return -(std::pow(1.0 - y, two_ml) - 1.0) / two_ml;
    return -std::log1p(-y);
}

// Attainable range of the transform for a given lambda, as an open interval.
inline std::pair<double, double> yj_range(double lambda) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    if (lambda < 0.0) hi = -1.0 / lambda;
    if (lambda > 2.0) lo = -1.0 / (lambda - 2.0);
    return {lo, hi};
}

// Exact inverse of yj_transform. Throws std::domain_error when ystar lies
// outside the attainable range for this lambda.
inline double yj_inverse(double ystar, double lambda) {
    auto [lo, hi] = yj_range(lambda);
    if (!(ystar > lo && ystar < hi))
        throw std::domain_error("yj_inverse: value outside transform range");
    if (ystar >= 0.0) {
        if (std::abs(lambda) > 1e-12) return std::pow(lambda * ystar + 1.0, 1.0 / lambda) - 1.0;
        return std::expm1(ystar);
    }
    double two_ml = 2.0 - lambda;
    if (std::abs(two_ml) > 1e-12) return 1.0 - std::pow(1.0 - two_ml * ystar, 1.0 / two_ml);
    return -std::expm1(-ystar);
}

// Gaussian profile log-likelihood of the transformed series, including the
// Jacobian term (lambda - 1) * sum sign(y) log(1 + |y|).
inline double yj_profile_loglik(const std::vector<double>& series, double lambda) {
    const double n = static_cast<double>(series.size());
    double sum = 0.0, sumsq = 0.0, jac = 0.0;
    for (double y : series) {
        double ys = yj_transform(y, lambda);
        sum += ys;
        sumsq += ys * ys;
        jac += (y >= 0.0 ? 1.0 : -1.0) * std::log1p(std::abs(y));
    }
    double var = sumsq / n - (sum / n) * (sum / n);
    if (var < 1e-300) return -std::numeric_limits<double>::infinity();
    return -0.5 * n * std::log(var) + (lambda - 1.0) * jac;
}

// Maximum-likelihood lambda by golden-section search over [-5, 5].
inline YeoJohnsonParams fit_lambda(const std::vector<double>& series) {
    if (series.size() < 30) throw std::invalid_argument("fit_lambda: series too short");
    double mn = series[0], mx = series[0];
    for (double y : series) { mn = std::min(mn, y); mx = std::max(mx, y); }
    if (mx - mn < 1e-15) throw std::runtime_error("fit_lambda: zero variance");

    // The profile likelihood is unimodal in practice; bracket the maximum on
    // a coarse grid first so golden-section does not latch onto a shoulder.
    double best_l = 1.0, best_v = -std::numeric_limits<double>::infinity();
    for (double l = -5.0; l <= 5.0 + 1e-9; l += 0.5) {
        double v = yj_profile_loglik(series, l);
        if (v > best_v) { best_v = v; best_l = l; }
    }
    double a = std::max(-5.0, best_l - 0.5);
    double b = std::min(5.0, best_l + 0.5);
    const double gr = 0.6180339887498949;
    double x1 = b - gr * (b - a);
    double x2 = a + gr * (b - a);
    double f1 = yj_profile_loglik(series, x1);
    double f2 = yj_profile_loglik(series, x2);
    while (b - a > 1e-4) {
        if (f1 < f2) {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + gr * (b - a);
            f2 = yj_profile_loglik(series, x2);
        } else {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - gr * (b - a);
            f1 = yj_profile_loglik(series, x1);
        }
    }
    return YeoJohnsonParams{0.5 * (a + b)};
}

}  // namespace lhmm
