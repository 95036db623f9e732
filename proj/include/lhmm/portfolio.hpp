#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhmm/data.hpp"
#include "lhmm/linalg.hpp"
#include "lhmm/rng.hpp"

namespace lhmm {

// N Monte-Carlo samples x K stocks of n-week cumulative returns.
struct SimulatedReturnMatrix {
    Matrix R;  // N x K
};

struct ReturnMoments {
    std::vector<double> mean;  // length K
    Matrix cov;                // K x K
};

struct PortfolioWeights {
    std::vector<double> w;
    std::string objective;  // "min_variance" or "balanced"
    double q = 0.0;
};

// Cumulative return over the weeks: product of (1 + y_t).
inline double stock_return(const std::vector<double>& y) {
    double r = 1.0;
    for (double v : y) {
        if (v <= -1.0) throw std::domain_error("stock_return: weekly change <= -1");
        r *= 1.0 + v;
    }
    return r;
}

// Column means and sample covariance (denominator N-1).
inline ReturnMoments estimate_moments(const SimulatedReturnMatrix& sims) {
    const std::size_t N = sims.R.rows(), K = sims.R.cols();
    if (N < 2) throw std::invalid_argument("estimate_moments: need N >= 2");
    ReturnMoments m;
    m.mean.assign(K, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < K; ++k) m.mean[k] += sims.R(i, k);
    for (auto& v : m.mean) v /= static_cast<double>(N);
    m.cov = Matrix(K, K);
    std::vector<double> centered(K);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t k = 0; k < K; ++k) centered[k] = sims.R(i, k) - m.mean[k];
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t l = k; l < K; ++l) m.cov(k, l) += centered[k] * centered[l];
    }
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = k; l < K; ++l) {
            m.cov(k, l) /= static_cast<double>(N - 1);
            m.cov(l, k) = m.cov(k, l);
        }
    return m;
}

// Portfolio expectation and variance: E = w'mean, V = w' cov w.
inline std::pair<double, double> portfolio_moments(const ReturnMoments& m,
                                                   const std::vector<double>& w) {
    if (w.size() != m.mean.size()) throw std::invalid_argument("portfolio_moments: dimension mismatch");
    return {dot(w, m.mean), quad_form(m.cov, w)};
}

struct SolveOptions {
    int multistarts = 50;
    std::uint64_t seed = 12345;
};

namespace detail {

// Euclidean projection onto the probability simplex.
inline std::vector<double> project_simplex(std::vector<double> v) {
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, theta = 0.0;
    std::size_t rho = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        css += u[i];
        double t = (css - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) { rho = i + 1; theta = t; }
    }
    for (auto& x : v) x = std::max(0.0, x - theta);
    double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= s;
    return v;
}

// Projected gradient descent with Armijo backtracking; minimizes f over the
// simplex. f and grad are provided by the caller.
template <typename F, typename G>
std::vector<double> pgd_minimize(std::vector<double> w, F&& f, G&& grad, int max_iter = 2000) {
    double fw = f(w);
    double step = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        std::vector<double> g = grad(w);
        double gnorm = std::sqrt(dot(g, g));
        if (gnorm < 1e-14) break;
        step = std::min(step * 2.0, 1e4 / (gnorm + 1e-12));
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt) {
            std::vector<double> cand(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) cand[i] = w[i] - step * g[i];
            cand = project_simplex(std::move(cand));
            double fc = f(cand);
            double delta = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                double d = cand[i] - w[i];
                delta += d * d;
            }
            if (fc <= fw - 1e-4 * delta / std::max(step, 1e-300)) {
                if (delta < 1e-22) return cand;
                w = std::move(cand);
                fw = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return w;
}

inline std::vector<double> random_simplex_point(std::size_t K, Rng& rng) {
    std::exponential_distribution<double> ex(1.0);
    std::vector<double> w(K);
    double s = 0.0;
    for (auto& x : w) { x = ex(rng); s += x; }
    for (auto& x : w) x /= s;
    return w;
}

template <typename F, typename G>
std::vector<double> multistart_minimize(std::size_t K, F&& f, G&& grad, const SolveOptions& opts) {
    Rng rng = make_rng(opts.seed);
    std::vector<double> best;
    double best_f = std::numeric_limits<double>::infinity();
    auto consider = [&](std::vector<double> start) {
        auto w = pgd_minimize(std::move(start), f, grad);
        double v = f(w);
        if (v < best_f) { best_f = v; best = std::move(w); }
    };
    consider(std::vector<double>(K, 1.0 / static_cast<double>(K)));
    for (std::size_t k = 0; k < K && k < 8; ++k) {
        std::vector<double> e(K, 0.0);
        e[k] = 1.0;
        consider(std::move(e));
    }
    for (int r = 0; r < opts.multistarts; ++r) consider(random_simplex_point(K, rng));
    return best;
}

}  // namespace detail

// Minimum-variance allocation on the simplex subject to a positive expected
// return. A penalty keeps the (rarely binding) E(R) constraint feasible.
inline PortfolioWeights optimize_min_variance(const ReturnMoments& m,
                                              const SolveOptions& opts = {}) {
    const std::size_t K = m.mean.size();
    double max_e = *std::max_element(m.mean.begin(), m.mean.end());
    if (max_e < 1e-8) throw std::runtime_error("no positive-return allocation");
    constexpr double kMinExpected = 1e-8;
    constexpr double kPenalty = 1e6;
    auto f = [&](const std::vector<double>& w) {
        double v = quad_form(m.cov, w);
        double viol = std::max(0.0, kMinExpected - dot(w, m.mean));
        return v + kPenalty * viol * viol;
    };
    auto grad = [&](const std::vector<double>& w) {
        std::vector<double> g = matvec(m.cov, w);
        for (auto& x : g) x *= 2.0;
        double viol = std::max(0.0, kMinExpected - dot(w, m.mean));
        if (viol > 0.0)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2.0 * kPenalty * viol * m.mean[i];
        return g;
    };
    PortfolioWeights out;
    out.w = detail::multistart_minimize(K, f, grad, opts);
    out.objective = "min_variance";
    if (dot(out.w, m.mean) < kMinExpected) throw std::runtime_error("no positive-return allocation");
    return out;
}

// Balanced allocation: maximize E(R) - q sqrt(V(R)) on the simplex.
inline PortfolioWeights optimize_balanced(const ReturnMoments& m, double q,
                                          const SolveOptions& opts = {}) {
    if (q < 0.0) throw std::invalid_argument("optimize_balanced: q must be >= 0");
    const std::size_t K = m.mean.size();
    auto f = [&](const std::vector<double>& w) {
        double v = quad_form(m.cov, w);
        return -(dot(w, m.mean) - q * std::sqrt(v + 1e-12));
    };
    auto grad = [&](const std::vector<double>& w) {
        double v = quad_form(m.cov, w);
        double sv = std::sqrt(v + 1e-12);
        std::vector<double> cw = matvec(m.cov, w);
        std::vector<double> g(K);
        for (std::size_t i = 0; i < K; ++i) g[i] = -(m.mean[i] - q * cw[i] / sv);
        return g;
    };
    PortfolioWeights out;
    out.w = detail::multistart_minimize(K, f, grad, opts);
    // q = 0 is a linear program over the simplex; the exact optimum is the
    // highest-mean vertex with ties broken toward the lowest index.
    if (q == 0.0) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (m.mean[k] > m.mean[arg]) arg = k;
        std::vector<double> vertex(K, 0.0);
        vertex[arg] = 1.0;
        if (f(vertex) <= f(out.w)) out.w = vertex;
    }
    out.objective = "balanced";
    out.q = q;
    return out;
}

struct RealizedGain {
    double total_pct = 0.0;
    std::vector<double> sector_pct;  // per-sector decomposition, sums to total
};

// Realized percent gain of the allocation on a held-out return panel, with
// the per-sector decomposition used in backtest reports.
inline RealizedGain realized_gain(const PortfolioWeights& weights,
                                  const WeeklyReturnPanel& test_panel) {
    if (weights.w.size() != test_panel.num_stocks())
        throw std::runtime_error("realized_gain: weight/panel dimension mismatch");
    RealizedGain out;
    out.sector_pct.assign(test_panel.num_sectors(), 0.0);
    for (std::size_t d = 0; d < test_panel.num_sectors(); ++d) {
        for (std::size_t k : test_panel.sector_indices[d]) {
            std::vector<double> y(test_panel.num_weeks());
            for (std::size_t t = 0; t < y.size(); ++t) y[t] = test_panel.returns(k, t);
            out.sector_pct[d] += weights.w[k] * (stock_return(y) - 1.0) * 100.0;
        }
        out.total_pct += out.sector_pct[d];
    }
    return out;
}

// Number of strictly held positions (weights above threshold).
inline int transaction_count(const PortfolioWeights& weights, double threshold = 1e-6) {
    int c = 0;
    for (double w : weights.w)
        if (w > threshold) ++c;
    return c;
}

struct BootstrapCi {
    double low = 0.0;
    double high = 0.0;
    double mean = 0.0;
};

// Percentile bootstrap interval over resampled replicate gains.
inline BootstrapCi bootstrap_ci(const std::vector<double>& gains, double level, Rng& rng,
                                int resamples = 10000) {
    if (gains.size() < 10) throw std::invalid_argument("bootstrap_ci: need at least 10 replicates");
    BootstrapCi out;
    out.mean = std::accumulate(gains.begin(), gains.end(), 0.0) / static_cast<double>(gains.size());
    std::uniform_int_distribution<std::size_t> pick(0, gains.size() - 1);
    std::vector<double> means(resamples);
    for (int b = 0; b < resamples; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < gains.size(); ++i) s += gains[pick(rng)];
        means[b] = s / static_cast<double>(gains.size());
    }
    std::sort(means.begin(), means.end());
    double tail = 0.5 * (1.0 - level);
    auto quantile = [&](double p) {
        double pos = p * static_cast<double>(resamples - 1);
        std::size_t i = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(i);
        if (i + 1 >= means.size()) return means.back();
        return means[i] * (1.0 - frac) + means[i + 1] * frac;
    };
    out.low = quantile(tail);
    out.high = quantile(1.0 - tail);
    return out;
}

}  // namespace lhmm
