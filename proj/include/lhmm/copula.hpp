#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhmm/hmm.hpp"
#include "lhmm/linalg.hpp"
#include "lhmm/rng.hpp"

namespace lhmm {

// Copula correlation matrix together with the Spearman-scale parameters it
// was derived from.
struct CopulaCorrelation {
    Matrix Sigma;     // D x D, symmetric, unit diagonal, positive definite
    Matrix rho_star;  // D x D Spearman-scale parameters (unit diagonal)

    std::size_t dim() const { return Sigma.rows(); }
};

// States of a multivariate Markov chain; states(d, t) in {1..J}.
struct MmcSample {
    std::vector<std::vector<int>> states;  // D rows of length n
};

// Initial-state map: h(u) = j iff u falls in the j-th left-closed cumulative
// interval of alpha.
inline int serfozo_h(double u, const std::vector<double>& alpha) {
    double cum = 0.0;
    for (std::size_t j = 0; j + 1 < alpha.size(); ++j) {
        cum += alpha[j];
        if (u < cum) return static_cast<int>(j) + 1;
    }
    return static_cast<int>(alpha.size());
}

// Transition map: next state by cumulative row-interval membership of the
// Pi row for the previous state.
inline int serfozo_f(int prev, double u, const Matrix& Pi) {
    if (prev < 1 || static_cast<std::size_t>(prev) > Pi.rows())
        throw std::invalid_argument("serfozo_f: invalid previous state");
    double cum = 0.0;
    for (std::size_t j = 0; j + 1 < Pi.cols(); ++j) {
        cum += Pi(static_cast<std::size_t>(prev - 1), j);
        if (u < cum) return static_cast<int>(j) + 1;
    }
    return static_cast<int>(Pi.cols());
}

// Columns are i.i.d. MVN(0, Sigma) draws mapped through the standard Normal
// CDF, giving uniforms with Gaussian-copula dependence across rows.
inline Matrix sample_correlated_uniforms(const Matrix& Sigma, std::size_t n, Rng& rng) {
    const std::size_t D = Sigma.rows();
    Matrix chol;
    try {
        chol = cholesky_lower(Sigma);
    } catch (const std::exception&) {
        throw std::runtime_error("Sigma not positive definite");
    }
    Matrix u(D, n);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::vector<double> z(D), w(D);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t d = 0; d < D; ++d) z[d] = stdnorm(rng);
        for (std::size_t d = 0; d < D; ++d) {
            double s = 0.0;
            for (std::size_t k = 0; k <= d; ++k) s += chol(d, k) * z[k];
            u(d, t) = norm_cdf(s);
        }
    }
    return u;
}

// Build an MMC by chaining the Serfozo maps over correlated uniforms. Each
// row is marginally a Markov chain with its sector's parameters; the
// contemporaneous cross-row dependence comes solely from Sigma. With
// use_initial=false the first step uses the stationary distribution instead
// of alpha.
inline MmcSample generate_mmc(const std::vector<GaussianHmmParams>& hmms, const Matrix& Sigma,
                              std::size_t n, Rng& rng, bool use_initial = true) {
    const std::size_t D = hmms.size();
    if (D < 1) throw std::invalid_argument("generate_mmc: need at least one chain");
    if (Sigma.rows() != D || Sigma.cols() != D)
        throw std::invalid_argument("generate_mmc: Sigma dimension mismatch");
    Matrix u = sample_correlated_uniforms(Sigma, n, rng);
    MmcSample sample;
    sample.states.assign(D, std::vector<int>(n));
    for (std::size_t d = 0; d < D; ++d) {
        std::vector<double> first =
            use_initial ? hmms[d].alpha : stationary_distribution(hmms[d].Pi);
        sample.states[d][0] = serfozo_h(u(d, 0), first);
        for (std::size_t t = 1; t < n; ++t)
            sample.states[d][t] = serfozo_f(sample.states[d][t - 1], u(d, t), hmms[d].Pi);
    }
    return sample;
}

namespace detail {

// Fractional (average) ranks, ties averaged.
inline std::vector<double> fractional_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx < 1e-300 || syy < 1e-300) throw std::runtime_error("undefined correlation");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

// Sample Spearman correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: need equal lengths >= 2");
    return detail::pearson(detail::fractional_ranks(x), detail::fractional_ranks(y));
}

inline double spearman(const std::vector<int>& x, const std::vector<int>& y) {
    std::vector<double> xd(x.begin(), x.end()), yd(y.begin(), y.end());
    return spearman(xd, yd);
}

// Kruskal's relation between the Spearman and Pearson correlations of a
// bivariate Normal: rho = 2 sin(pi rho* / 6).
inline double kruskal_rho(double rho_star) {
    if (std::abs(rho_star) > 1.0) throw std::domain_error("kruskal_rho: |rho*| > 1");
    return 2.0 * std::sin(3.14159265358979323846 * rho_star / 6.0);
}

struct PairCalibration {
    double rho_star_hat = 0.0;  // Spearman-scale copula parameter
    double rho_hat = 0.0;       // Pearson-scale Sigma entry
    double achieved_r = 0.0;    // synthetic-state Spearman at the solution
};

struct CalibrateOptions {
    double tau = 0.005;        // step size for the fixed-step mode
    double eps = 0.01;
    std::size_t sim_len = 50000;
    bool fixed_step = false;   // upward-increment search instead of bisection
    bool use_initial = true;   // first chain step from alpha (vs stationary)
};

namespace detail {

// Synthetic-state Spearman at a given rho*, driven by common random numbers
// so the calibration curve is numerically monotone across evaluations.
class PairSimulator {
public:
    PairSimulator(const GaussianHmmParams& h1, const GaussianHmmParams& h2,
                  std::size_t sim_len, bool use_initial, Rng& rng)
        : h1_(h1), h2_(h2), use_initial_(use_initial), z1_(sim_len), z2_(sim_len) {
        std::normal_distribution<double> stdnorm(0.0, 1.0);
        for (std::size_t t = 0; t < sim_len; ++t) {
            z1_[t] = stdnorm(rng);
            z2_[t] = stdnorm(rng);
        }
    }

    double spearman_at(double rho_star) const {
        double rho = kruskal_rho(std::clamp(rho_star, -1.0, 1.0));
        double c = std::sqrt(std::max(0.0, 1.0 - rho * rho));
        const std::size_t n = z1_.size();
        std::vector<int> s1(n), s2(n);
        std::vector<double> first1 = use_initial_ ? h1_.alpha : stationary_distribution(h1_.Pi);
        std::vector<double> first2 = use_initial_ ? h2_.alpha : stationary_distribution(h2_.Pi);
        for (std::size_t t = 0; t < n; ++t) {
            double u1 = norm_cdf(z1_[t]);
            double u2 = norm_cdf(rho * z1_[t] + c * z2_[t]);
            if (t == 0) {
                s1[t] = serfozo_h(u1, first1);
                s2[t] = serfozo_h(u2, first2);
            } else {
                s1[t] = serfozo_f(s1[t - 1], u1, h1_.Pi);
                s2[t] = serfozo_f(s2[t - 1], u2, h2_.Pi);
            }
        }
        return spearman(s1, s2);
    }

private:
    const GaussianHmmParams& h1_;
    const GaussianHmmParams& h2_;
    bool use_initial_;
    std::vector<double> z1_, z2_;
};

}  // namespace detail

// Line search for the copula parameter of one chain pair: find rho* whose
// synthetic MMC has sample Spearman within eps of target_r. Default is
// bidirectional bisection on (-0.999, 0.999); the fixed-step mode reproduces
// the upward-increment search.
inline PairCalibration calibrate_pair(const GaussianHmmParams& hmm1, const GaussianHmmParams& hmm2,
                                      double target_r, const CalibrateOptions& opts, Rng& rng) {
    if (std::abs(target_r) >= 1.0) throw std::invalid_argument("calibrate_pair: |target_r| must be < 1");
    if (opts.eps <= 0.0) throw std::invalid_argument("calibrate_pair: eps must be positive");
    detail::PairSimulator sim(hmm1, hmm2, opts.sim_len, opts.use_initial, rng);

    auto result_at = [&](double rho_star, double r) {
        PairCalibration pc;
        pc.rho_star_hat = rho_star;
        pc.rho_hat = kruskal_rho(std::clamp(rho_star, -1.0, 1.0));
        pc.achieved_r = r;
        return pc;
    };

    if (opts.fixed_step) {
        double rho_star = target_r;
        double r = 0.0;
        while (std::abs(r - target_r) > opts.eps) {
            rho_star += opts.tau;
            if (rho_star > 0.999)
                throw std::runtime_error("calibrate_pair: target unreachable by fixed-step search");
            r = sim.spearman_at(rho_star);
        }
        return result_at(rho_star, r);
    }

    double lo = -0.999, hi = 0.999;
    double r_lo = sim.spearman_at(lo);
    double r_hi = sim.spearman_at(hi);
    if (target_r > r_hi + opts.eps || target_r < r_lo - opts.eps)
        throw std::runtime_error("calibrate_pair: target " + std::to_string(target_r) +
                                 " outside achievable range [" + std::to_string(r_lo) + ", " +
                                 std::to_string(r_hi) + "]");
    if (std::abs(r_lo - target_r) <= opts.eps && target_r <= r_lo) return result_at(lo, r_lo);
    if (std::abs(r_hi - target_r) <= opts.eps && target_r >= r_hi) return result_at(hi, r_hi);
    for (int iter = 0; iter < 200; ++iter) {
        double mid = 0.5 * (lo + hi);
        double r = sim.spearman_at(mid);
        if (std::abs(r - target_r) <= opts.eps) return result_at(mid, r);
        if (r < target_r) lo = mid; else hi = mid;
        if (hi - lo < 1e-12) break;
    }
    throw std::runtime_error("calibrate_pair: bisection failed to reach tolerance");
}

// Assemble the copula correlation matrix from pairwise estimates, repairing
// indefiniteness by eigenvalue clipping and rescaling back to unit diagonal.
inline CopulaCorrelation assemble_sigma(const Matrix& pair_rho, const Matrix& pair_rho_star) {
    const std::size_t D = pair_rho.rows();
    if (pair_rho.cols() != D) throw std::invalid_argument("assemble_sigma: matrix not square");
    for (std::size_t i = 0; i < D; ++i) {
        if (std::abs(pair_rho(i, i) - 1.0) > 1e-12)
            throw std::invalid_argument("assemble_sigma: diagonal must be 1");
        for (std::size_t j = 0; j < D; ++j)
            if (std::abs(pair_rho(i, j) - pair_rho(j, i)) > 1e-12)
                throw std::invalid_argument("assemble_sigma: matrix not symmetric");
    }
    CopulaCorrelation out;
    out.rho_star = pair_rho_star;
    out.Sigma = pair_rho;

    auto eig = eigen_symmetric(out.Sigma);
    double min_ev = *std::min_element(eig.values.begin(), eig.values.end());
    if (min_ev > 0.0) return out;

    for (double& ev : eig.values) if (ev <= 0.0) ev = 1e-6;
    Matrix repaired(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k)
                s += eig.vectors(i, k) * eig.values[k] * eig.vectors(j, k);
            repaired(i, j) = s;
        }
    // Rescale to unit diagonal so the result is a valid correlation matrix.
    std::vector<double> scale(D);
    for (std::size_t i = 0; i < D; ++i) scale[i] = 1.0 / std::sqrt(repaired(i, i));
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) repaired(i, j) *= scale[i] * scale[j];
    for (std::size_t i = 0; i < D; ++i) repaired(i, i) = 1.0;
    // Enforce exact symmetry against rounding.
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j) {
            double v = 0.5 * (repaired(i, j) + repaired(j, i));
            repaired(i, j) = v;
            repaired(j, i) = v;
        }
    out.Sigma = repaired;
    return out;
}

}  // namespace lhmm
