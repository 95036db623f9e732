#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhmm/copula.hpp"
#include "lhmm/data.hpp"
#include "lhmm/hmm.hpp"
#include "lhmm/rng.hpp"
#include "lhmm/yeo_johnson.hpp"

namespace lhmm {

constexpr const char* kModelFormatVersion = "1.0";

struct SectorFit {
    std::string name;
    std::vector<std::string> tickers;
    GaussianHmmParams hmm;   // relabeled: state 1 is the bull state
    double bic = 0.0;
    double loglik = 0.0;
    int em_iterations = 0;
    bool relabel_tie = false;
};

// Fitted linked HMM: D sector HMMs, copula correlation matrix, per-stock
// Yeo-Johnson lambdas, and fit diagnostics.
struct LhmmModel {
    std::vector<SectorFit> sectors;
    CopulaCorrelation copula;
    std::vector<double> lambdas;       // global stock order
    Matrix observed_spearman;          // D x D, from decoded state sequences
    std::vector<std::string> dates;    // training return dates
    std::uint64_t seed = 0;

    std::size_t num_sectors() const { return sectors.size(); }
    std::size_t num_stocks() const {
        std::size_t k = 0;
        for (const auto& s : sectors) k += s.tickers.size();
        return k;
    }
    std::vector<GaussianHmmParams> sector_hmms() const {
        std::vector<GaussianHmmParams> h;
        for (const auto& s : sectors) h.push_back(s.hmm);
        return h;
    }
};

struct FitOptions {
    int restarts = 20;
    std::uint64_t seed = 0;
    int max_iter = 500;
    double tol = 1e-6;
    CalibrateOptions calibration;
    std::size_t synthetic_len = 10000;  // MMC length for stage-2 re-estimation
    bool with_copula = true;            // false: independent HMMs, Sigma = I
};

namespace detail {

// Empirical (alpha, Pi) frequencies from a synthetic state sequence.
inline void estimate_chain_frequencies(const std::vector<int>& states, int J,
                                       std::vector<double>& alpha, Matrix& Pi) {
    alpha.assign(J, 0.0);
    Pi = Matrix(J, J, 0.0);
    std::vector<double> occ(J, 0.0);
    for (std::size_t t = 0; t < states.size(); ++t) {
        alpha[states[t] - 1] += 1.0;
        if (t + 1 < states.size()) {
            occ[states[t] - 1] += 1.0;
            Pi(states[t] - 1, states[t + 1] - 1) += 1.0;
        }
    }
    double n = static_cast<double>(states.size());
    for (auto& a : alpha) a /= n;
    for (int h = 0; h < J; ++h) {
        if (occ[h] < 1.0) {
            for (int j = 0; j < J; ++j) Pi(h, j) = 1.0 / J;
        } else {
            for (int j = 0; j < J; ++j) Pi(h, j) /= occ[h];
        }
    }
    // Keep everything strictly positive so downstream recursions stay finite.
    for (int j = 0; j < J; ++j) alpha[j] = std::max(alpha[j], 1e-6);
    double asum = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    for (auto& a : alpha) a /= asum;
    for (int h = 0; h < J; ++h) {
        double rsum = 0.0;
        for (int j = 0; j < J; ++j) { Pi(h, j) = std::max(Pi(h, j), 1e-6); rsum += Pi(h, j); }
        for (int j = 0; j < J; ++j) Pi(h, j) /= rsum;
    }
}

}  // namespace detail

// Two-stage estimation. Stage 1: per-stock Yeo-Johnson, per-sector HMM fits
// with restarts, Viterbi decoding, bull/bear relabeling, observed pairwise
// Spearman correlations between decoded state sequences. Stage 2: pairwise
// copula calibration, PD repair, then per-sector Baum-Welch re-estimation
// initialized from frequencies of a synthetic MMC drawn at the calibrated
// Sigma.
inline LhmmModel fit_two_stage(const WeeklyReturnPanel& panel, const FitOptions& opts) {
    const std::size_t D = panel.num_sectors();
    if (D < 1) throw std::invalid_argument("fit_two_stage: panel has no sectors");
    for (std::size_t d = 0; d < D; ++d)
        if (panel.sector_indices[d].empty())
            throw std::invalid_argument("fit_two_stage: empty sector " + panel.sector_names[d]);

    LhmmModel model;
    model.seed = opts.seed;
    model.dates = panel.dates;

    // Per-stock Yeo-Johnson toward Normality; lambdas frozen for inversion.
    const std::size_t K = panel.num_stocks(), n = panel.num_weeks();
    model.lambdas.resize(K);
    Matrix transformed(K, n);
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> series(n);
        for (std::size_t t = 0; t < n; ++t) series[t] = panel.returns(k, t);
        model.lambdas[k] = fit_lambda(series).lambda;
        for (std::size_t t = 0; t < n; ++t)
            transformed(k, t) = yj_transform(series[t], model.lambdas[k]);
    }

    // Stage 1: independent sector fits on the transformed scale.
    std::vector<Matrix> sector_data(D);
    std::vector<StateSequence> decoded(D);
    for (std::size_t d = 0; d < D; ++d) {
        const auto& idx = panel.sector_indices[d];
        Matrix data(idx.size(), n);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t t = 0; t < n; ++t) data(i, t) = transformed(idx[i], t);
        sector_data[d] = data;

        SectorFit fit;
        fit.name = panel.sector_names[d];
        for (auto i : idx) fit.tickers.push_back(panel.tickers[i]);
        BaumWelchResult bw;
        try {
            bw = fit_with_restarts(data, opts.restarts, split_seed(opts.seed, d), 2,
                                   opts.max_iter, opts.tol);
        } catch (const std::exception& e) {
            throw std::runtime_error("fit failed for sector " + fit.name + ": " + e.what());
        }
        auto rel = relabel_states(bw.params);
        fit.hmm = rel.params;
        fit.relabel_tie = rel.tie;
        fit.loglik = bw.loglik_trace.empty() ? 0.0 : bw.loglik_trace.back();
        fit.em_iterations = static_cast<int>(bw.loglik_trace.size());
        fit.bic = bic(fit.hmm, data);
        decoded[d] = viterbi(fit.hmm, data);
        model.sectors.push_back(std::move(fit));
    }

    // Observed Spearman matrix between decoded state sequences. A sector
    // whose decoded path is constant carries no rank information; its
    // pairwise targets are set to 0.
    model.observed_spearman = Matrix::identity(D);
    for (std::size_t d1 = 0; d1 < D; ++d1) {
        for (std::size_t d2 = d1 + 1; d2 < D; ++d2) {
            double r = 0.0;
            try {
                r = spearman(decoded[d1].states, decoded[d2].states);
            } catch (const std::exception&) {
                r = 0.0;
            }
            model.observed_spearman(d1, d2) = r;
            model.observed_spearman(d2, d1) = r;
        }
    }

    if (!opts.with_copula || D == 1) {
        model.copula.Sigma = Matrix::identity(D);
        model.copula.rho_star = Matrix::identity(D);
        return model;
    }

    // Stage 2a: pairwise copula calibration and PD repair.
    Matrix pair_rho = Matrix::identity(D);
    Matrix pair_rho_star = Matrix::identity(D);
    std::size_t pair_id = 0;
    for (std::size_t d1 = 0; d1 < D; ++d1) {
        for (std::size_t d2 = d1 + 1; d2 < D; ++d2, ++pair_id) {
            Rng rng = make_rng(split_seed(opts.seed, 1000 + pair_id));
            double target = std::clamp(model.observed_spearman(d1, d2), -0.99, 0.99);
            auto pc = calibrate_pair(model.sectors[d1].hmm, model.sectors[d2].hmm, target,
                                     opts.calibration, rng);
            pair_rho(d1, d2) = pair_rho(d2, d1) = pc.rho_hat;
            pair_rho_star(d1, d2) = pair_rho_star(d2, d1) = pc.rho_star_hat;
        }
    }
    model.copula = assemble_sigma(pair_rho, pair_rho_star);

    // Stage 2b: re-estimate marginals. Draw a synthetic MMC at the calibrated
    // Sigma, estimate each chain's (alpha, Pi) by empirical frequencies, and
    // rerun Baum-Welch per sector with those as initial values.
    Rng rng = make_rng(split_seed(opts.seed, 2000));
    MmcSample synth = generate_mmc(model.sector_hmms(), model.copula.Sigma, opts.synthetic_len,
                                   rng, opts.calibration.use_initial);
    for (std::size_t d = 0; d < D; ++d) {
        GaussianHmmParams init = model.sectors[d].hmm;
        detail::estimate_chain_frequencies(synth.states[d], init.J, init.alpha, init.Pi);
        auto bw = baum_welch(sector_data[d], init, opts.max_iter, opts.tol);
        auto rel = relabel_states(bw.params);
        model.sectors[d].hmm = rel.params;
        model.sectors[d].relabel_tie = rel.tie;
        model.sectors[d].loglik = bw.loglik_trace.empty() ? 0.0 : bw.loglik_trace.back();
        model.sectors[d].em_iterations += static_cast<int>(bw.loglik_trace.size());
        model.sectors[d].bic = bic(model.sectors[d].hmm, sector_data[d]);
    }
    return model;
}

// Simulate one n_weeks return panel from the fitted model, inverse-mapped to
// the original return scale. Draws whose transformed value falls outside the
// inverse transform's range are resampled (capped per dataset).
inline Matrix simulate_dataset(const LhmmModel& model, std::size_t n_weeks, Rng& rng) {
    const std::size_t D = model.num_sectors();
    MmcSample states = generate_mmc(model.sector_hmms(), model.copula.Sigma, n_weeks, rng);
    Matrix out(model.num_stocks(), n_weeks);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::size_t resample_budget = 1000000;
    std::size_t k0 = 0;
    for (std::size_t d = 0; d < D; ++d) {
        const GaussianHmmParams& hmm = model.sectors[d].hmm;
        const std::size_t nd = hmm.num_stocks();
        for (std::size_t t = 0; t < n_weeks; ++t) {
            std::size_t j = static_cast<std::size_t>(states.states[d][t] - 1);
            for (std::size_t k = 0; k < nd; ++k) {
                double lambda = model.lambdas[k0 + k];
                auto [lo, hi] = yj_range(lambda);
                double ystar;
                do {
                    ystar = hmm.theta.mu(k, j) + std::sqrt(hmm.theta.sigma2(k, j)) * stdnorm(rng);
                    if (ystar > lo && ystar < hi) break;
                    if (resample_budget-- == 0)
                        throw std::runtime_error("simulate_dataset: resample budget exhausted");
                } while (true);
                out(k0 + k, t) = yj_inverse(ystar, lambda);
            }
        }
        k0 += nd;
    }
    return out;
}

// ---- JSON serialization -------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) return Matrix();
    Matrix m(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r)
        for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const LhmmModel& model) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["D"] = model.num_sectors();
    j["seed"] = model.seed;
    j["dates"] = model.dates;
    j["lambda"] = model.lambdas;
    j["Sigma"] = detail::matrix_to_json(model.copula.Sigma);
    j["rho_star"] = detail::matrix_to_json(model.copula.rho_star);
    j["observed_spearman"] = detail::matrix_to_json(model.observed_spearman);
    nlohmann::json sectors = nlohmann::json::array();
    for (const auto& s : model.sectors) {
        nlohmann::json sj;
        sj["name"] = s.name;
        sj["tickers"] = s.tickers;
        sj["alpha"] = s.hmm.alpha;
        sj["Pi"] = detail::matrix_to_json(s.hmm.Pi);
        sj["mu"] = detail::matrix_to_json(s.hmm.theta.mu);
        sj["sigma2"] = detail::matrix_to_json(s.hmm.theta.sigma2);
        sj["J"] = s.hmm.J;
        sj["bic"] = s.bic;
        sj["loglik"] = s.loglik;
        sj["em_iterations"] = s.em_iterations;
        sj["relabel_tie"] = s.relabel_tie;
        sectors.push_back(sj);
    }
    j["sectors"] = sectors;
    return j;
}

inline LhmmModel model_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j["format_version"].get<std::string>() != kModelFormatVersion)
        throw std::runtime_error("model file: unsupported format version");
    LhmmModel model;
    model.seed = j["seed"].get<std::uint64_t>();
    model.dates = j["dates"].get<std::vector<std::string>>();
    model.lambdas = j["lambda"].get<std::vector<double>>();
    model.copula.Sigma = detail::matrix_from_json(j["Sigma"]);
    model.copula.rho_star = detail::matrix_from_json(j["rho_star"]);
    model.observed_spearman = detail::matrix_from_json(j["observed_spearman"]);
    for (const auto& sj : j["sectors"]) {
        SectorFit s;
        s.name = sj["name"].get<std::string>();
        s.tickers = sj["tickers"].get<std::vector<std::string>>();
        s.hmm.alpha = sj["alpha"].get<std::vector<double>>();
        s.hmm.Pi = detail::matrix_from_json(sj["Pi"]);
        s.hmm.theta.mu = detail::matrix_from_json(sj["mu"]);
        s.hmm.theta.sigma2 = detail::matrix_from_json(sj["sigma2"]);
        s.hmm.J = sj["J"].get<int>();
        s.bic = sj["bic"].get<double>();
        s.loglik = sj["loglik"].get<double>();
        s.em_iterations = sj["em_iterations"].get<int>();
        s.relabel_tie = sj["relabel_tie"].get<bool>();
        s.hmm.validate();
        model.sectors.push_back(std::move(s));
    }
    if (model.lambdas.size() != model.num_stocks())
        throw std::runtime_error("model file: lambda count does not match stock count");
    return model;
}

inline void save_model(const LhmmModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    out << model_to_json(model).dump(2) << "\n";
}

inline LhmmModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    nlohmann::json j;
    in >> j;
    return model_from_json(j);
}

}  // namespace lhmm
