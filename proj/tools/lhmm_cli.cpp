// Command-line pipeline: ingest -> fit -> simulate -> optimize -> backtest
// -> compare -> report.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lhmm/backtest.hpp"

namespace {

using nlohmann::json;

struct CommonFlags {
    std::string config_path;
    std::string prices, sectors, model_path, output_dir, index_prices;
    std::string train_start, train_end, test_start, test_end;
    std::int64_t seed = -1;
    int jobs = 0;
    int restarts = 0;
    int replicates = 0;
    std::int64_t num_simulations = 0;
    double q = -1.0;
    std::int64_t min_weeks = 0;
    std::int64_t sim_weeks = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--prices", f.prices, "price CSV (date,ticker,close)");
    cmd->add_option("--sectors", f.sectors, "sector CSV (ticker,sector)");
    cmd->add_option("--model", f.model_path, "model JSON path");
    cmd->add_option("--output-dir", f.output_dir, "output directory");
    cmd->add_option("--index", f.index_prices, "index CSV (date,close) for the baseline row");
    cmd->add_option("--train-start", f.train_start, "train window start (YYYY-MM-DD)");
    cmd->add_option("--train-end", f.train_end, "train window end");
    cmd->add_option("--test-start", f.test_start, "test window start");
    cmd->add_option("--test-end", f.test_end, "test window end");
    cmd->add_option("--seed", f.seed, "root RNG seed");
    cmd->add_option("--jobs", f.jobs, "parallel replicate workers");
    cmd->add_option("--restarts", f.restarts, "Baum-Welch random restarts");
    cmd->add_option("--replicates", f.replicates, "backtest replicates");
    cmd->add_option("-N,--num-simulations", f.num_simulations, "simulated datasets per replicate");
    cmd->add_option("-q,--risk-aversion", f.q, "balanced-objective risk weight");
    cmd->add_option("--min-weeks", f.min_weeks, "minimum training history in weeks");
    cmd->add_option("--sim-weeks", f.sim_weeks, "simulation horizon (0: training length)");
}

lhmm::RunConfig resolve_config(const CommonFlags& f) {
    lhmm::RunConfig cfg;
    if (!f.config_path.empty()) cfg = lhmm::load_config(f.config_path);
    if (!f.prices.empty()) cfg.prices = f.prices;
    if (!f.sectors.empty()) cfg.sectors = f.sectors;
    if (!f.model_path.empty()) cfg.model_path = f.model_path;
    if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
    if (!f.index_prices.empty()) cfg.index_prices = f.index_prices;
    if (!f.train_start.empty()) cfg.train_start = f.train_start;
    if (!f.train_end.empty()) cfg.train_end = f.train_end;
    if (!f.test_start.empty()) cfg.test_start = f.test_start;
    if (!f.test_end.empty()) cfg.test_end = f.test_end;
    if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
    if (f.jobs > 0) cfg.jobs = f.jobs;
    if (f.restarts > 0) cfg.restarts = f.restarts;
    if (f.replicates > 0) cfg.replicates = f.replicates;
    if (f.num_simulations > 0) cfg.num_simulations = static_cast<std::size_t>(f.num_simulations);
    if (f.q >= 0.0) cfg.q = f.q;
    if (f.min_weeks > 0) cfg.min_weeks = static_cast<std::size_t>(f.min_weeks);
    if (f.sim_weeks >= 0) cfg.sim_weeks = static_cast<std::size_t>(f.sim_weeks);
    cfg.validate();
    return cfg;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out << j.dump(2) << "\n";
}

lhmm::WeeklyReturnPanel ingest_panel(const lhmm::RunConfig& cfg, const std::string& start,
                                     const std::string& end) {
    auto [prices, sectors] = lhmm::load_prices(cfg.prices, cfg.sectors);
    auto win = lhmm::slice_window(prices, start, end);
    auto filtered = lhmm::filter_history(win, cfg.min_weeks);
    return lhmm::compute_weekly_returns(filtered, sectors);
}

int cmd_ingest(const lhmm::RunConfig& cfg) {
    auto panel = ingest_panel(cfg, cfg.train_start, cfg.train_end);
    std::string out_path = cfg.output_dir + "/returns.csv";
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write output file: " + out_path);
    out << "date,ticker,return\n";
    out.precision(17);
    for (std::size_t k = 0; k < panel.num_stocks(); ++k)
        for (std::size_t t = 0; t < panel.num_weeks(); ++t)
            out << panel.dates[t] << "," << panel.tickers[k] << "," << panel.returns(k, t) << "\n";
    json summary = {{"stocks", panel.num_stocks()},
                    {"weeks", panel.num_weeks()},
                    {"sectors", panel.sector_names},
                    {"returns_csv", out_path}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_fit(const lhmm::RunConfig& cfg) {
    lhmm::RunConfig c = cfg;
    if (c.model_path.empty()) c.model_path = c.output_dir + "/model.json";
    auto model = lhmm::run_fit(c);
    json diag = {{"model", c.model_path},
                 {"D", model.num_sectors()},
                 {"stocks", model.num_stocks()},
                 {"Sigma", lhmm::detail::matrix_to_json(model.copula.Sigma)},
                 {"observed_spearman", lhmm::detail::matrix_to_json(model.observed_spearman)}};
    json sectors = json::array();
    for (const auto& s : model.sectors)
        sectors.push_back({{"name", s.name}, {"bic", s.bic}, {"loglik", s.loglik}});
    diag["sectors"] = sectors;
    write_json_file(cfg.output_dir + "/fit_report.json", diag);
    std::cout << diag.dump(2) << "\n";
    return 0;
}

int cmd_simulate(const lhmm::RunConfig& cfg) {
    auto model = lhmm::load_model(cfg.model_path);
    std::size_t weeks = cfg.sim_weeks > 0 ? cfg.sim_weeks : model.dates.size();
    lhmm::Rng rng = lhmm::make_rng(lhmm::split_seed(cfg.seed, 0));
    auto panel = lhmm::simulate_dataset(model, weeks, rng);
    std::string out_path = cfg.output_dir + "/simulated_returns.csv";
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write output file: " + out_path);
    out << "week,ticker,return\n";
    out.precision(17);
    std::size_t k0 = 0;
    for (const auto& s : model.sectors)
        for (const auto& ticker : s.tickers) {
            for (std::size_t t = 0; t < weeks; ++t)
                out << (t + 1) << "," << ticker << "," << panel(k0, t) << "\n";
            ++k0;
        }
    std::cout << json({{"simulated_csv", out_path}, {"weeks", weeks}}).dump(2) << "\n";
    return 0;
}

int cmd_optimize(const lhmm::RunConfig& cfg) {
    auto model = lhmm::load_model(cfg.model_path);
    std::size_t weeks = cfg.sim_weeks > 0 ? cfg.sim_weeks : model.dates.size();
    auto sims = lhmm::simulate_returns_matrix(model, cfg.num_simulations, weeks,
                                              lhmm::split_seed(cfg.seed, 1));
    auto moments = lhmm::estimate_moments(sims);
    lhmm::SolveOptions solve;
    solve.seed = lhmm::split_seed(cfg.seed, 7);

    json report;
    auto emit = [&](const lhmm::PortfolioWeights& w, const std::string& name) {
        auto [e, v] = lhmm::portfolio_moments(moments, w.w);
        std::string csv = cfg.output_dir + "/weights_" + name + ".csv";
        std::ofstream out(csv);
        if (!out) throw std::runtime_error("cannot write weights file: " + csv);
        out << "ticker,sector,weight\n";
        out.precision(17);
        std::size_t k0 = 0;
        for (const auto& s : model.sectors)
            for (const auto& ticker : s.tickers) out << ticker << "," << s.name << "," << w.w[k0++] << "\n";
        report[name] = {{"expected_return", e},
                        {"variance", v},
                        {"objective", name == "balanced" ? e - cfg.q * std::sqrt(v) : v},
                        {"transactions", lhmm::transaction_count(w)},
                        {"weights_csv", csv}};
    };
    emit(lhmm::optimize_min_variance(moments, solve), "min_variance");
    emit(lhmm::optimize_balanced(moments, cfg.q, solve), "balanced");
    write_json_file(cfg.output_dir + "/optimize_report.json", report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_backtest(const lhmm::RunConfig& cfg) {
    auto report = lhmm::run_backtest(cfg);
    write_json_file(cfg.output_dir + "/report.json", report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_compare(const lhmm::RunConfig& cfg, const std::string& mode) {
    lhmm::CompareMode m = lhmm::CompareMode::Both;
    if (mode == "lhmm") m = lhmm::CompareMode::LhmmOnly;
    else if (mode == "independent_hmms") m = lhmm::CompareMode::IndependentOnly;
    else if (!mode.empty() && mode != "both") throw std::runtime_error("unknown mode: " + mode);
    auto report = lhmm::run_compare(cfg, m);
    write_json_file(cfg.output_dir + "/report.json", report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

void print_objective_table(const json& obj, const std::string& title) {
    std::cout << "  " << title << ": total " << obj["total"]["mean"].get<double>() << "% (CI "
              << obj["total"]["ci"][0].get<double>() << ", " << obj["total"]["ci"][1].get<double>()
              << "); transactions " << obj["transactions"]["mean"].get<double>() << " +/- "
              << obj["transactions"]["sd"].get<double>() << "\n";
    for (const auto& row : obj["per_sector"])
        std::cout << "    " << row["sector"].get<std::string>() << ": "
                  << row["mean"].get<double>() << "% (" << row["ci"][0].get<double>() << ", "
                  << row["ci"][1].get<double>() << ")\n";
}

int cmd_report(const std::string& report_path) {
    std::ifstream in(report_path);
    if (!in) throw std::runtime_error("cannot open report file: " + report_path);
    json report;
    in >> report;
    std::cout.precision(4);
    for (auto& [mode, objectives] : report["modes"].items()) {
        std::cout << "mode: " << mode << "\n";
        for (const char* name : {"min_variance", "balanced"})
            if (objectives.contains(name)) print_objective_table(objectives[name], name);
    }
    if (report.contains("index_gain_pct"))
        std::cout << "index gain: " << report["index_gain_pct"].get<double>() << "%\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linked-HMM stock portfolio pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string compare_mode = "both";
    std::string report_path = "report.json";

    auto* ingest = app.add_subcommand("ingest", "load prices and emit the weekly return panel");
    auto* fit = app.add_subcommand("fit", "fit the linked HMM and write model.json");
    auto* simulate = app.add_subcommand("simulate", "simulate one return panel from a model");
    auto* optimize = app.add_subcommand("optimize", "optimize portfolio weights from a model");
    auto* backtest = app.add_subcommand("backtest", "replicate protocol against the test window");
    auto* compare = app.add_subcommand("compare", "backtest LHMM vs independent HMMs");
    auto* report = app.add_subcommand("report", "render a report JSON as text");
    for (auto* cmd : {ingest, fit, simulate, optimize, backtest, compare}) add_common(cmd, flags);
    compare->add_option("--mode", compare_mode, "lhmm | independent_hmms | both");
    report->add_option("--report", report_path, "report JSON to render");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) return cmd_report(report_path);
        lhmm::RunConfig cfg = resolve_config(flags);
        if (ingest->parsed()) return cmd_ingest(cfg);
        if (fit->parsed()) return cmd_fit(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (optimize->parsed()) return cmd_optimize(cfg);
        if (backtest->parsed()) return cmd_backtest(cfg);
        if (compare->parsed()) return cmd_compare(cfg, compare_mode);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json({{"error", e.what()}}).dump() << "\n";
        return 1;
    }
    return 2;
}
