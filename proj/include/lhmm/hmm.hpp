#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhmm/linalg.hpp"
#include "lhmm/rng.hpp"

namespace lhmm {

constexpr double kVarianceFloor = 1e-8;

// Per-state Normal emission parameters for one sector: mu(k, j) and
// sigma2(k, j) for stock k in state j.
struct EmissionParams {
    Matrix mu;      // n_d x J
    Matrix sigma2;  // n_d x J
};

struct GaussianHmmParams {
    std::vector<double> alpha;  // initial distribution, length J
    Matrix Pi;                  // J x J row-stochastic transition matrix
    EmissionParams theta;
    int J = 2;

    std::size_t num_stocks() const { return theta.mu.rows(); }

    void validate() const {
        if (Pi.rows() != static_cast<std::size_t>(J) || Pi.cols() != static_cast<std::size_t>(J))
            throw std::invalid_argument("hmm params: Pi dimension mismatch");
        if (alpha.size() != static_cast<std::size_t>(J))
            throw std::invalid_argument("hmm params: alpha dimension mismatch");
        double asum = 0.0;
        for (double a : alpha) {
            if (a < -1e-12) throw std::invalid_argument("hmm params: negative alpha entry");
            asum += a;
        }
        if (std::abs(asum - 1.0) > 1e-9) throw std::invalid_argument("hmm params: alpha not normalized");
        for (int h = 0; h < J; ++h) {
            double rsum = 0.0;
            for (int j = 0; j < J; ++j) {
                if (Pi(h, j) < -1e-12) throw std::invalid_argument("hmm params: negative Pi entry");
                rsum += Pi(h, j);
            }
            if (std::abs(rsum - 1.0) > 1e-9) throw std::invalid_argument("hmm params: Pi row not stochastic");
        }
    }
};

// Decoded latent path; values in 1..J.
struct StateSequence {
    std::vector<int> states;
};

namespace detail {

// log N(y; mu, sigma2)
inline double log_normal_pdf(double y, double mu, double sigma2) {
    constexpr double kLogTwoPi = 1.8378770664093454836;
    double diff = y - mu;
    return -0.5 * (kLogTwoPi + std::log(sigma2) + diff * diff / sigma2);
}

// Joint log emission density per (state, time): sum over the sector's stocks.
inline Matrix log_emissions(const GaussianHmmParams& p, const Matrix& data) {
    const std::size_t nd = data.rows(), n = data.cols();
    Matrix logb(static_cast<std::size_t>(p.J), n);
    for (int j = 0; j < p.J; ++j) {
        for (std::size_t t = 0; t < n; ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < nd; ++k) {
                double y = data(k, t);
                if (std::isnan(y)) throw std::invalid_argument("hmm: NaN in data");
                s += log_normal_pdf(y, p.theta.mu(k, j), p.theta.sigma2(k, j));
            }
            logb(static_cast<std::size_t>(j), t) = s;
        }
    }
    return logb;
}

struct ForwardResult {
    Matrix alpha_hat;            // J x n, scaled forward variables
    std::vector<double> log_c;   // per-step log scaling constants
    double loglik;
};

// Scaled forward recursion working from shifted emission densities so that a
// 69-stock sector's joint densities do not underflow.
inline ForwardResult forward_scaled(const GaussianHmmParams& p, const Matrix& logb) {
    const std::size_t J = static_cast<std::size_t>(p.J), n = logb.cols();
    ForwardResult fr;
    fr.alpha_hat = Matrix(J, n);
    fr.log_c.resize(n);
    fr.loglik = 0.0;
    std::vector<double> prev(J), cur(J);
    for (std::size_t t = 0; t < n; ++t) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < J; ++j) m = std::max(m, logb(j, t));
        double c = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
            double b = std::exp(logb(j, t) - m);
            double a;
            if (t == 0) {
                a = p.alpha[j] * b;
            } else {
                double s = 0.0;
                for (std::size_t h = 0; h < J; ++h) s += prev[h] * p.Pi(h, j);
                a = s * b;
            }
            cur[j] = a;
            c += a;
        }
        if (!(c > 0.0)) throw std::runtime_error("hmm: forward recursion underflow");
        for (std::size_t j = 0; j < J; ++j) {
            cur[j] /= c;
            fr.alpha_hat(j, t) = cur[j];
        }
        fr.log_c[t] = std::log(c) + m;
        fr.loglik += fr.log_c[t];
        std::swap(prev, cur);
    }
    return fr;
}

// Scaled backward recursion consistent with forward_scaled's scaling.
inline Matrix backward_scaled(const GaussianHmmParams& p, const Matrix& logb,
                              const ForwardResult& fr) {
    const std::size_t J = static_cast<std::size_t>(p.J), n = logb.cols();
    Matrix beta_hat(J, n);
    for (std::size_t j = 0; j < J; ++j) beta_hat(j, n - 1) = 1.0;
    for (std::size_t t = n - 1; t-- > 0;) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < J; ++j) m = std::max(m, logb(j, t + 1));
        double scale = std::exp(fr.log_c[t + 1] - m);
        for (std::size_t h = 0; h < J; ++h) {
            double s = 0.0;
            for (std::size_t j = 0; j < J; ++j)
                s += p.Pi(h, j) * std::exp(logb(j, t + 1) - m) * beta_hat(j, t + 1);
            beta_hat(h, t) = s / scale;
        }
    }
    return beta_hat;
}

}  // namespace detail

// Marginal log-likelihood of a sector's return matrix under the HMM.
inline double log_likelihood(const GaussianHmmParams& params, const Matrix& data) {
    params.validate();
    return detail::forward_scaled(params, detail::log_emissions(params, data)).loglik;
}

struct BaumWelchResult {
    GaussianHmmParams params;
    std::vector<double> loglik_trace;  // one entry per completed E-step
    bool converged = false;
};

// Baum-Welch EM. The log-likelihood trace is non-decreasing up to 1e-9
// slack; iteration stops on relative change < tol or max_iter.
inline BaumWelchResult baum_welch(const Matrix& data, const GaussianHmmParams& init,
                                  int max_iter = 500, double tol = 1e-6) {
    init.validate();
    const std::size_t J = static_cast<std::size_t>(init.J);
    const std::size_t nd = data.rows(), n = data.cols();
    if (n < 2) throw std::invalid_argument("baum_welch: need at least 2 time points");

    BaumWelchResult res;
    res.params = init;
    int reseeds = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
        GaussianHmmParams& p = res.params;
        Matrix logb = detail::log_emissions(p, data);
        auto fr = detail::forward_scaled(p, logb);
        Matrix beta_hat = detail::backward_scaled(p, logb, fr);
        res.loglik_trace.push_back(fr.loglik);

        // gamma(j, t) posterior state probabilities
        Matrix gamma(J, n);
        for (std::size_t t = 0; t < n; ++t) {
            double norm = 0.0;
            for (std::size_t j = 0; j < J; ++j) {
                gamma(j, t) = fr.alpha_hat(j, t) * beta_hat(j, t);
                norm += gamma(j, t);
            }
            for (std::size_t j = 0; j < J; ++j) gamma(j, t) /= norm;
        }

        // Expected transition counts
        Matrix xi_sum(J, J);
        for (std::size_t t = 0; t + 1 < n; ++t) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < J; ++j) m = std::max(m, logb(j, t + 1));
            double denom = std::exp(fr.log_c[t + 1] - m);
            for (std::size_t h = 0; h < J; ++h)
                for (std::size_t j = 0; j < J; ++j)
                    xi_sum(h, j) += fr.alpha_hat(h, t) * p.Pi(h, j) *
                                    std::exp(logb(j, t + 1) - m) * beta_hat(j, t + 1) / denom;
        }

        // Occupancy check; a state the posterior never visits gets re-seeded
        // from data quantiles and the iteration restarts from there.
        std::vector<double> occ(J, 0.0);
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t t = 0; t < n; ++t) occ[j] += gamma(j, t);
        bool degenerate = false;
        for (std::size_t j = 0; j < J; ++j)
            if (occ[j] < 1e-8) degenerate = true;
        if (degenerate) {
            if (++reseeds > 10) throw std::runtime_error("baum_welch: persistent degenerate state");
            for (std::size_t j = 0; j < J; ++j) {
                if (occ[j] >= 1e-8) continue;
                for (std::size_t k = 0; k < nd; ++k) {
                    std::vector<double> row(n);
                    for (std::size_t t = 0; t < n; ++t) row[t] = data(k, t);
                    std::sort(row.begin(), row.end());
                    std::size_t half = n / 2;
                    std::size_t lo = (j % 2 == 0) ? half : 0;
                    std::size_t hi = (j % 2 == 0) ? n : half;
                    double mean = 0.0;
                    for (std::size_t t = lo; t < hi; ++t) mean += row[t];
                    mean /= static_cast<double>(hi - lo);
                    double var = 0.0;
                    for (std::size_t t = lo; t < hi; ++t) var += (row[t] - mean) * (row[t] - mean);
                    var = std::max(var / static_cast<double>(hi - lo), kVarianceFloor);
                    p.theta.mu(k, j) = mean;
                    p.theta.sigma2(k, j) = var;
                }
                p.alpha[j] = 1.0 / static_cast<double>(J);
            }
            double asum = std::accumulate(p.alpha.begin(), p.alpha.end(), 0.0);
            for (auto& a : p.alpha) a /= asum;
            res.loglik_trace.pop_back();
            continue;
        }

        // M-step
        for (std::size_t j = 0; j < J; ++j) p.alpha[j] = gamma(j, 0);
        for (std::size_t h = 0; h < J; ++h) {
            double denom = 0.0;
            for (std::size_t t = 0; t + 1 < n; ++t) denom += gamma(h, t);
            for (std::size_t j = 0; j < J; ++j) p.Pi(h, j) = xi_sum(h, j) / denom;
            double rsum = 0.0;
            for (std::size_t j = 0; j < J; ++j) rsum += p.Pi(h, j);
            for (std::size_t j = 0; j < J; ++j) p.Pi(h, j) /= rsum;
        }
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t k = 0; k < nd; ++k) {
                double num = 0.0;
                for (std::size_t t = 0; t < n; ++t) num += gamma(j, t) * data(k, t);
                double mu = num / occ[j];
                double vnum = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    double d = data(k, t) - mu;
                    vnum += gamma(j, t) * d * d;
                }
                p.theta.mu(k, j) = mu;
                p.theta.sigma2(k, j) = std::max(vnum / occ[j], kVarianceFloor);
            }
        }

        if (res.loglik_trace.size() >= 2) {
            double prev = res.loglik_trace[res.loglik_trace.size() - 2];
            double cur = res.loglik_trace.back();
            if (std::abs(cur - prev) < tol * (std::abs(prev) + 1e-12)) {
                res.converged = true;
                break;
            }
        }
    }
    return res;
}

// Free-parameter count: (J-1) initial + J(J-1) transition + 2*J*n_d emission.
inline int hmm_param_count(int J, std::size_t n_stocks) {
    return (J - 1) + J * (J - 1) + 2 * J * static_cast<int>(n_stocks);
}

inline double bic(const GaussianHmmParams& params, const Matrix& data) {
    double ll = log_likelihood(params, data);
    int p = hmm_param_count(params.J, params.num_stocks());
    return -2.0 * ll + static_cast<double>(p) * std::log(static_cast<double>(data.cols()));
}

namespace detail {

// Random restart initialization: flat-Dirichlet alpha and Pi rows, emissions
// from a random quantile split of each stock's series.
inline GaussianHmmParams random_init(const Matrix& data, int J, Rng& rng) {
    const std::size_t nd = data.rows(), n = data.cols();
    GaussianHmmParams p;
    p.J = J;
    p.alpha.resize(J);
    p.Pi = Matrix(J, J);
    std::gamma_distribution<double> gam(1.0, 1.0);
    double asum = 0.0;
    for (int j = 0; j < J; ++j) { p.alpha[j] = gam(rng); asum += p.alpha[j]; }
    for (int j = 0; j < J; ++j) p.alpha[j] /= asum;
    for (int h = 0; h < J; ++h) {
        double rsum = 0.0;
        for (int j = 0; j < J; ++j) { p.Pi(h, j) = gam(rng); rsum += p.Pi(h, j); }
        for (int j = 0; j < J; ++j) p.Pi(h, j) /= rsum;
    }
    p.theta.mu = Matrix(nd, J);
    p.theta.sigma2 = Matrix(nd, J);
    std::uniform_real_distribution<double> qdist(0.3, 0.7);
    for (std::size_t k = 0; k < nd; ++k) {
        std::vector<double> row(n);
        for (std::size_t t = 0; t < n; ++t) row[t] = data(k, t);
        std::sort(row.begin(), row.end());
        double q = qdist(rng);
        std::size_t cut = std::max<std::size_t>(2, std::min(n - 2, static_cast<std::size_t>(q * n)));
        for (int j = 0; j < J; ++j) {
            // state index 0 takes the upper split, matching bull-first labels
            std::size_t lo = (j == 0) ? cut : 0;
            std::size_t hi = (j == 0) ? n : cut;
            double mean = 0.0;
            for (std::size_t t = lo; t < hi; ++t) mean += row[t];
            mean /= static_cast<double>(hi - lo);
            double var = 0.0;
            for (std::size_t t = lo; t < hi; ++t) var += (row[t] - mean) * (row[t] - mean);
            var = std::max(var / static_cast<double>(hi - lo), kVarianceFloor);
            p.theta.mu(k, j) = mean;
            p.theta.sigma2(k, j) = var;
        }
    }
    return p;
}

}  // namespace detail

// Fit with random restarts; the restart with minimal BIC wins.
inline BaumWelchResult fit_with_restarts(const Matrix& data, int restarts, std::uint64_t seed,
                                         int J = 2, int max_iter = 500, double tol = 1e-6) {
    if (restarts < 1) throw std::invalid_argument("fit_with_restarts: restarts must be >= 1");
    BaumWelchResult best;
    double best_bic = std::numeric_limits<double>::infinity();
    int failures = 0;
    for (int r = 0; r < restarts; ++r) {
        Rng rng = make_rng(split_seed(seed, static_cast<std::uint64_t>(r)));
        try {
            auto init = detail::random_init(data, J, rng);
            auto res = baum_welch(data, init, max_iter, tol);
            double b = bic(res.params, data);
            if (b < best_bic) { best_bic = b; best = res; }
        } catch (const std::exception&) {
            ++failures;
        }
    }
    if (failures == restarts) throw std::runtime_error("fit_with_restarts: all restarts failed");
    return best;
}

// Most likely state path; ties break toward the lower state index.
inline StateSequence viterbi(const GaussianHmmParams& params, const Matrix& data) {
    params.validate();
    const std::size_t J = static_cast<std::size_t>(params.J), n = data.cols();
    Matrix logb = detail::log_emissions(params, data);
    Matrix delta(J, n);
    std::vector<std::vector<int>> psi(n, std::vector<int>(J, 0));
    for (std::size_t j = 0; j < J; ++j) {
        double la = params.alpha[j] > 0.0 ? std::log(params.alpha[j])
                                          : -std::numeric_limits<double>::infinity();
        delta(j, 0) = la + logb(j, 0);
    }
    for (std::size_t t = 1; t < n; ++t) {
        for (std::size_t j = 0; j < J; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t h = 0; h < J; ++h) {
                double lp = params.Pi(h, j) > 0.0 ? std::log(params.Pi(h, j))
                                                  : -std::numeric_limits<double>::infinity();
                double v = delta(h, t - 1) + lp;
                if (v > best) { best = v; arg = static_cast<int>(h); }
            }
            delta(j, t) = best + logb(j, t);
            psi[t][j] = arg;
        }
    }
    StateSequence seq;
    seq.states.resize(n);
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t j = 0; j < J; ++j)
        if (delta(j, n - 1) > best) { best = delta(j, n - 1); arg = static_cast<int>(j); }
    seq.states[n - 1] = arg + 1;
    for (std::size_t t = n - 1; t-- > 0;) seq.states[t] = psi[t + 1][seq.states[t + 1] - 1] + 1;
    return seq;
}

struct RelabelResult {
    GaussianHmmParams params;
    bool swapped = false;
    bool tie = false;
};

// Permute states so State 1 has the higher sum of per-stock mean-to-volatility
// ratios (the bull state). An exact tie keeps the original order.
inline RelabelResult relabel_states(const GaussianHmmParams& params) {
    if (params.J != 2) throw std::invalid_argument("relabel_states: requires J=2");
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < params.num_stocks(); ++k) {
        s1 += params.theta.mu(k, 0) / std::sqrt(params.theta.sigma2(k, 0));
        s2 += params.theta.mu(k, 1) / std::sqrt(params.theta.sigma2(k, 1));
    }
    RelabelResult res;
    res.params = params;
    if (s1 == s2) {
        res.tie = true;
        return res;
    }
    if (s1 > s2) return res;
    res.swapped = true;
    GaussianHmmParams& p = res.params;
    std::swap(p.alpha[0], p.alpha[1]);
    Matrix pi(2, 2);
    pi(0, 0) = params.Pi(1, 1);
    pi(0, 1) = params.Pi(1, 0);
    pi(1, 0) = params.Pi(0, 1);
    pi(1, 1) = params.Pi(0, 0);
    p.Pi = pi;
    for (std::size_t k = 0; k < params.num_stocks(); ++k) {
        std::swap(p.theta.mu(k, 0), p.theta.mu(k, 1));
        std::swap(p.theta.sigma2(k, 0), p.theta.sigma2(k, 1));
    }
    return res;
}

// Stationary distribution of an irreducible row-stochastic matrix.
inline std::vector<double> stationary_distribution(const Matrix& Pi) {
    if (Pi.rows() != Pi.cols()) throw std::invalid_argument("stationary: matrix not square");
    const std::size_t J = Pi.rows();
    // Irreducibility via reachability on the positive-entry digraph.
    auto reachable = [&](std::size_t from) {
        std::vector<bool> seen(J, false);
        std::vector<std::size_t> stack{from};
        seen[from] = true;
        while (!stack.empty()) {
            std::size_t h = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < J; ++j)
                if (Pi(h, j) > 0.0 && !seen[j]) { seen[j] = true; stack.push_back(j); }
        }
        return seen;
    };
    for (std::size_t i = 0; i < J; ++i) {
        auto seen = reachable(i);
        for (std::size_t j = 0; j < J; ++j)
            if (!seen[j]) throw std::runtime_error("stationary: chain is reducible");
    }
    // Solve eta (Pi - I) = 0 with the normalization sum(eta) = 1 replacing
    // the last equation.
    Matrix a(J, J);
    std::vector<double> b(J, 0.0);
    for (std::size_t col = 0; col < J; ++col)
        for (std::size_t j = 0; j < J; ++j)
            a(col, j) = Pi(j, col) - (j == col ? 1.0 : 0.0);
    for (std::size_t j = 0; j < J; ++j) a(J - 1, j) = 1.0;
    b[J - 1] = 1.0;
    auto eta = solve_linear(a, b);
    for (double& e : eta) e = std::max(e, 0.0);
    double s = std::accumulate(eta.begin(), eta.end(), 0.0);
    for (double& e : eta) e /= s;
    return eta;
}

// Conditional Normal draws for each stock given the week's state.
inline Matrix simulate_emissions(const GaussianHmmParams& params, const StateSequence& states,
                                 Rng& rng) {
    params.validate();
    const std::size_t nd = params.num_stocks(), n = states.states.size();
    Matrix out(nd, n);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    for (std::size_t t = 0; t < n; ++t) {
        int j = states.states[t] - 1;
        if (j < 0 || j >= params.J) throw std::invalid_argument("simulate_emissions: invalid state");
        for (std::size_t k = 0; k < nd; ++k) {
            out(k, t) = params.theta.mu(k, static_cast<std::size_t>(j)) +
                        std::sqrt(params.theta.sigma2(k, static_cast<std::size_t>(j))) * stdnorm(rng);
        }
    }
    return out;
}

}  // namespace lhmm
