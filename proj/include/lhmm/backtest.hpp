#pragma once

#include <cmath>
#include <fstream>
#include <future>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhmm/data.hpp"
#include "lhmm/model.hpp"
#include "lhmm/portfolio.hpp"

namespace lhmm {

// Pipeline configuration. Defaults mirror the experimental protocol; every
// field can come from the JSON config file or a CLI override.
struct RunConfig {
    std::string prices;
    std::string sectors;
    std::string model_path;
    std::string output_dir = ".";
    std::string index_prices;  // optional date,close series for the baseline row
    std::string train_start, train_end;
    std::string test_start, test_end;
    int restarts = 20;
    std::size_t num_simulations = 10000;
    int replicates = 100;
    double q = 2.0;
    double eps = 0.01;
    double tau = 0.005;
    std::size_t sim_len = 50000;
    std::size_t min_weeks = 260;
    std::size_t sim_weeks = 0;  // 0: simulate the training-window length
    std::uint64_t seed = 0;
    int jobs = 1;

    void validate() const {
        if (restarts < 1 || replicates < 1 || num_simulations < 1 || min_weeks < 1 || jobs < 1)
            throw std::invalid_argument("config: counts must be >= 1");
        if (!train_start.empty() && !test_start.empty() && !(train_end < test_start))
            throw std::invalid_argument("config: train window must precede test window");
    }
};

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("prices", c.prices);
    get("sectors", c.sectors);
    get("model", c.model_path);
    get("output_dir", c.output_dir);
    get("index_prices", c.index_prices);
    get("train_start", c.train_start);
    get("train_end", c.train_end);
    get("test_start", c.test_start);
    get("test_end", c.test_end);
    get("restarts", c.restarts);
    get("num_simulations", c.num_simulations);
    get("replicates", c.replicates);
    get("q", c.q);
    get("eps", c.eps);
    get("tau", c.tau);
    get("sim_len", c.sim_len);
    get("min_weeks", c.min_weeks);
    get("sim_weeks", c.sim_weeks);
    get("seed", c.seed);
    get("jobs", c.jobs);
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    return config_from_json(j);
}

// Restrict a price panel to dates in [start, end] (ISO dates compare
// lexicographically). Empty bounds leave that side open.
inline PricePanel slice_window(const PricePanel& panel, const std::string& start,
                               const std::string& end) {
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < panel.num_dates(); ++t) {
        const std::string& d = panel.dates[t];
        if (!start.empty() && d < start) continue;
        if (!end.empty() && !(d <= end)) continue;
        keep.push_back(t);
    }
    if (keep.empty()) throw std::runtime_error("no observations in requested window");
    PricePanel out;
    out.tickers = panel.tickers;
    for (auto t : keep) out.dates.push_back(panel.dates[t]);
    out.closes = Matrix(panel.num_tickers(), keep.size());
    for (std::size_t k = 0; k < panel.num_tickers(); ++k)
        for (std::size_t i = 0; i < keep.size(); ++i) out.closes(k, i) = panel.closes(k, keep[i]);
    return out;
}

// Test-window return panel covering exactly the model's stocks, in the
// model's stock order. A model ticker missing from the window is an error.
inline WeeklyReturnPanel build_test_panel(const PricePanel& prices, const SectorMap& sectors,
                                          const LhmmModel& model, const std::string& start,
                                          const std::string& end) {
    PricePanel win = slice_window(prices, start, end);
    WeeklyReturnPanel out;
    out.dates.assign(win.dates.begin() + 1, win.dates.end());
    const std::size_t n = win.num_dates() - 1;
    out.returns = Matrix(model.num_stocks(), n);
    std::size_t k0 = 0;
    for (const auto& sector : model.sectors) {
        out.sector_names.push_back(sector.name);
        out.sector_indices.emplace_back();
        for (const auto& ticker : sector.tickers) {
            auto it = std::find(win.tickers.begin(), win.tickers.end(), ticker);
            if (it == win.tickers.end())
                throw std::runtime_error("test panel missing ticker " + ticker);
            std::size_t row = static_cast<std::size_t>(it - win.tickers.begin());
            for (std::size_t t = 0; t < n; ++t) {
                double prev = win.closes(row, t), cur = win.closes(row, t + 1);
                if (std::isnan(prev) || std::isnan(cur))
                    throw std::runtime_error("test panel missing ticker " + ticker + " on " +
                                             win.dates[t + 1]);
                out.returns(k0, t) = (cur - prev) / prev;
            }
            out.tickers.push_back(ticker);
            out.sector_indices.back().push_back(k0);
            ++k0;
        }
    }
    return out;
}

// Fit a model per the config (LHMM, or independent HMMs when with_copula is
// false) and write it to model_path.
inline LhmmModel run_fit(const RunConfig& cfg, bool with_copula = true) {
    auto [prices, sectors] = load_prices(cfg.prices, cfg.sectors);
    PricePanel win = slice_window(prices, cfg.train_start, cfg.train_end);
    PricePanel filtered = filter_history(win, cfg.min_weeks);
    WeeklyReturnPanel panel = compute_weekly_returns(filtered, sectors);

    FitOptions opts;
    opts.restarts = cfg.restarts;
    opts.seed = cfg.seed;
    opts.calibration.eps = cfg.eps;
    opts.calibration.tau = cfg.tau;
    opts.calibration.sim_len = cfg.sim_len;
    opts.with_copula = with_copula;
    LhmmModel model = fit_two_stage(panel, opts);
    if (!cfg.model_path.empty()) save_model(model, cfg.model_path);
    return model;
}

// N simulated datasets reduced to their n-week cumulative returns.
inline SimulatedReturnMatrix simulate_returns_matrix(const LhmmModel& model, std::size_t N,
                                                     std::size_t weeks, std::uint64_t seed) {
    SimulatedReturnMatrix sims;
    sims.R = Matrix(N, model.num_stocks());
    for (std::size_t i = 0; i < N; ++i) {
        Rng rng = make_rng(split_seed(seed, i));
        Matrix panel = simulate_dataset(model, weeks, rng);
        for (std::size_t k = 0; k < panel.rows(); ++k) {
            double r = 1.0;
            for (std::size_t t = 0; t < panel.cols(); ++t) r *= 1.0 + panel(k, t);
            sims.R(i, k) = r;
        }
    }
    return sims;
}

struct ReplicateResult {
    RealizedGain gain_minvar;
    RealizedGain gain_balanced;
    int tc_minvar = 0;
    int tc_balanced = 0;
};

namespace detail {

inline ReplicateResult run_replicate(const LhmmModel& model, const WeeklyReturnPanel& test_panel,
                                     const RunConfig& cfg, std::uint64_t rep_seed) {
    std::size_t weeks = cfg.sim_weeks > 0 ? cfg.sim_weeks : model.dates.size();
    auto sims = simulate_returns_matrix(model, cfg.num_simulations, weeks, rep_seed);
    auto moments = estimate_moments(sims);
    SolveOptions solve;
    solve.seed = split_seed(rep_seed, 7);
    auto wv = optimize_min_variance(moments, solve);
    auto wb = optimize_balanced(moments, cfg.q, solve);
    ReplicateResult res;
    res.gain_minvar = realized_gain(wv, test_panel);
    res.gain_balanced = realized_gain(wb, test_panel);
    res.tc_minvar = transaction_count(wv);
    res.tc_balanced = transaction_count(wb);
    return res;
}

inline nlohmann::json summarize_objective(const std::vector<RealizedGain>& gains,
                                          const std::vector<int>& transactions,
                                          const std::vector<std::string>& sector_names,
                                          std::uint64_t ci_seed) {
    nlohmann::json out;
    std::vector<double> totals;
    for (const auto& g : gains) totals.push_back(g.total_pct);
    Rng rng = make_rng(ci_seed);
    auto total_ci = bootstrap_ci(totals, 0.95, rng);
    out["total"] = {{"mean", total_ci.mean}, {"ci", {total_ci.low, total_ci.high}}};
    nlohmann::json per_sector = nlohmann::json::array();
    for (std::size_t d = 0; d < sector_names.size(); ++d) {
        std::vector<double> sg;
        for (const auto& g : gains) sg.push_back(g.sector_pct[d]);
        auto ci = bootstrap_ci(sg, 0.95, rng);
        per_sector.push_back({{"sector", sector_names[d]},
                              {"mean", ci.mean},
                              {"ci", {ci.low, ci.high}}});
    }
    out["per_sector"] = per_sector;
    double tmean = 0.0;
    for (int t : transactions) tmean += t;
    tmean /= static_cast<double>(transactions.size());
    double tvar = 0.0;
    for (int t : transactions) tvar += (t - tmean) * (t - tmean);
    double tsd = transactions.size() > 1
                     ? std::sqrt(tvar / static_cast<double>(transactions.size() - 1))
                     : 0.0;
    out["transactions"] = {{"mean", tmean}, {"sd", tsd}};
    return out;
}

}  // namespace detail

// Full replicate protocol for one fitted model: each replicate simulates N
// datasets, estimates moments, solves both objectives, and scores the
// resulting allocations on the test window. Replicates carry pre-split seeds
// so the report is identical for any jobs count.
inline nlohmann::json run_backtest_protocol(const LhmmModel& model,
                                            const WeeklyReturnPanel& test_panel,
                                            const RunConfig& cfg) {
    std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.replicates));
    auto worker = [&](std::size_t i) {
        results[i] = detail::run_replicate(model, test_panel, cfg,
                                           split_seed(cfg.seed, 3000 + i));
    };
    if (cfg.jobs <= 1) {
        for (std::size_t i = 0; i < results.size(); ++i) worker(i);
    } else {
        std::size_t next = 0;
        while (next < results.size()) {
            std::vector<std::future<void>> batch;
            for (int j = 0; j < cfg.jobs && next < results.size(); ++j, ++next)
                batch.push_back(std::async(std::launch::async, worker, next));
            for (auto& f : batch) f.get();
        }
    }

    std::vector<RealizedGain> gv, gb;
    std::vector<int> tv, tb;
    for (const auto& r : results) {
        gv.push_back(r.gain_minvar);
        gb.push_back(r.gain_balanced);
        tv.push_back(r.tc_minvar);
        tb.push_back(r.tc_balanced);
    }
    nlohmann::json out;
    out["min_variance"] =
        detail::summarize_objective(gv, tv, test_panel.sector_names, split_seed(cfg.seed, 9001));
    out["balanced"] =
        detail::summarize_objective(gb, tb, test_panel.sector_names, split_seed(cfg.seed, 9002));
    return out;
}

// Percent gain of a user-supplied index series (CSV: date,close) over the
// test window.
inline double index_gain_pct(const std::string& path, const std::string& start,
                             const std::string& end) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open index file: " + path);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::pair<std::string, double>> series;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip(line);
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("date", 0) == 0) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 2 fields");
        std::string date = detail::strip(fields[0]);
        if (!start.empty() && date < start) continue;
        if (!end.empty() && !(date <= end)) continue;
        series.emplace_back(date, std::stod(detail::strip(fields[1])));
    }
    if (series.size() < 2) throw std::runtime_error("index series has fewer than 2 points in window");
    std::sort(series.begin(), series.end());
    return (series.back().second / series.front().second - 1.0) * 100.0;
}

inline nlohmann::json make_report_header(const RunConfig& cfg) {
    nlohmann::json out;
    out["format_version"] = "1.0";
    out["q"] = cfg.q;
    out["replicates"] = cfg.replicates;
    out["num_simulations"] = cfg.num_simulations;
    out["seed"] = cfg.seed;
    out["test_window"] = {{"start", cfg.test_start}, {"end", cfg.test_end}};
    if (!cfg.index_prices.empty())
        out["index_gain_pct"] = index_gain_pct(cfg.index_prices, cfg.test_start, cfg.test_end);
    return out;
}

// Backtest a single fitted model (loaded from cfg.model_path).
inline nlohmann::json run_backtest(const RunConfig& cfg) {
    LhmmModel model = load_model(cfg.model_path);
    auto [prices, sectors] = load_prices(cfg.prices, cfg.sectors);
    WeeklyReturnPanel test_panel =
        build_test_panel(prices, sectors, model, cfg.test_start, cfg.test_end);
    nlohmann::json report = make_report_header(cfg);
    report["modes"] = {{"lhmm", run_backtest_protocol(model, test_panel, cfg)}};
    return report;
}

enum class CompareMode { Both, LhmmOnly, IndependentOnly };

// Fit LHMM and/or independent-HMMs models on the train window and backtest
// each; "both" gives the four-portfolio comparison (2 modes x 2 objectives).
inline nlohmann::json run_compare(const RunConfig& cfg, CompareMode mode = CompareMode::Both) {
    nlohmann::json report = make_report_header(cfg);
    nlohmann::json modes;
    auto [prices, sectors] = load_prices(cfg.prices, cfg.sectors);
    auto run_one = [&](bool with_copula) {
        RunConfig c = cfg;
        c.model_path = "";  // models saved under output_dir below
        LhmmModel model = run_fit(c, with_copula);
        if (!cfg.output_dir.empty())
            save_model(model, cfg.output_dir + (with_copula ? "/model_lhmm.json" : "/model_hmm.json"));
        WeeklyReturnPanel test_panel =
            build_test_panel(prices, sectors, model, cfg.test_start, cfg.test_end);
        nlohmann::json entry = run_backtest_protocol(model, test_panel, cfg);
        entry["Sigma"] = detail::matrix_to_json(model.copula.Sigma);
        entry["observed_spearman"] = detail::matrix_to_json(model.observed_spearman);
        return entry;
    };
    if (mode != CompareMode::IndependentOnly) modes["lhmm"] = run_one(true);
    if (mode != CompareMode::LhmmOnly) modes["independent_hmms"] = run_one(false);
    report["modes"] = modes;
    return report;
}

inline void write_weights_csv(const std::string& path, const PortfolioWeights& weights,
                              const WeeklyReturnPanel& panel) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write weights file: " + path);
    out << "ticker,sector,weight\n";
    out.precision(17);
    for (std::size_t d = 0; d < panel.num_sectors(); ++d)
        for (std::size_t k : panel.sector_indices[d])
            out << panel.tickers[k] << "," << panel.sector_names[d] << "," << weights.w[k] << "\n";
}

}  // namespace lhmm
