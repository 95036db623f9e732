#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhmm/linalg.hpp"

namespace lhmm {

// Aligned panel of weekly closing prices. closes(k, t) is the price of
// tickers[k] at dates[t]; absent observations are NaN.
struct PricePanel {
    std::vector<std::string> tickers;
    std::vector<std::string> dates;  // ISO-8601, strictly increasing
    Matrix closes;                   // K x (n+1)

    std::size_t num_tickers() const { return tickers.size(); }
    std::size_t num_dates() const { return dates.size(); }
};

struct SectorMap {
    std::map<std::string, std::string> ticker_to_sector;

    const std::string& sector_of(const std::string& ticker) const {
        auto it = ticker_to_sector.find(ticker);
        if (it == ticker_to_sector.end())
            throw std::runtime_error("ticker without sector assignment: " + ticker);
        return it->second;
    }
};

// Return panel partitioned by sector. Stocks are ordered sector-major:
// sectors lexicographically, tickers lexicographically within each sector.
struct WeeklyReturnPanel {
    std::vector<std::string> tickers;            // global stock order
    std::vector<std::string> dates;              // n return dates (week t uses dates[t])
    Matrix returns;                              // K x n
    std::vector<std::string> sector_names;       // length D
    std::vector<std::vector<std::size_t>> sector_indices;  // per sector, indices into tickers

    std::size_t num_stocks() const { return tickers.size(); }
    std::size_t num_weeks() const { return returns.cols(); }
    std::size_t num_sectors() const { return sector_names.size(); }

    // Sub-matrix n_d x n of one sector's returns.
    Matrix sector_returns(std::size_t d) const {
        const auto& idx = sector_indices[d];
        Matrix m(idx.size(), returns.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t t = 0; t < returns.cols(); ++t)
                m(i, t) = returns(idx[i], t);
        return m;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

inline std::string strip(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Load long-format price and sector CSVs and align on the union of dates.
// Price CSV header: date,ticker,close. Sector CSV header: ticker,sector.
// Tickers are ordered sector-major (sectors and tickers lexicographic) so
// that all downstream matrix indices are fixed by the input files alone.
inline std::pair<PricePanel, SectorMap> load_prices(const std::string& price_file,
                                                    const std::string& sector_file) {
    std::ifstream sf(sector_file);
    if (!sf) throw std::runtime_error("cannot open sector file: " + sector_file);
    SectorMap sectors;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(sf, line)) {
        ++lineno;
        line = detail::strip(line);
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("ticker", 0) == 0) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2)
            throw std::runtime_error(sector_file + ":" + std::to_string(lineno) +
                                     ": expected 2 fields, got " + std::to_string(fields.size()));
        sectors.ticker_to_sector[detail::strip(fields[0])] = detail::strip(fields[1]);
    }

    std::ifstream pf(price_file);
    if (!pf) throw std::runtime_error("cannot open price file: " + price_file);
    std::map<std::pair<std::string, std::string>, double> cells;  // (ticker, date) -> close
    std::set<std::string> dates;
    std::set<std::string> tickers;
    lineno = 0;
    while (std::getline(pf, line)) {
        ++lineno;
        line = detail::strip(line);
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("date", 0) == 0) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw std::runtime_error(price_file + ":" + std::to_string(lineno) +
                                     ": expected 3 fields, got " + std::to_string(fields.size()));
        std::string date = detail::strip(fields[0]);
        std::string ticker = detail::strip(fields[1]);
        double close;
        try {
            std::size_t pos = 0;
            close = std::stod(detail::strip(fields[2]), &pos);
            if (pos != detail::strip(fields[2]).size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw std::runtime_error(price_file + ":" + std::to_string(lineno) +
                                     ": malformed close value '" + fields[2] + "'");
        }
        if (!(close > 0.0))
            throw std::runtime_error(price_file + ":" + std::to_string(lineno) +
                                     ": non-positive price for " + ticker + " on " + date);
        auto key = std::make_pair(ticker, date);
        if (cells.count(key))
            throw std::runtime_error(price_file + ":" + std::to_string(lineno) +
                                     ": duplicate observation for " + ticker + " on " + date);
        cells[key] = close;
        dates.insert(date);
        tickers.insert(ticker);
    }
    if (cells.empty()) throw std::runtime_error("price file contains no observations");

    // Validate sector coverage, then fix the sector-major ticker ordering.
    std::vector<std::pair<std::string, std::string>> order;  // (sector, ticker)
    for (const auto& t : tickers) order.emplace_back(sectors.sector_of(t), t);
    std::sort(order.begin(), order.end());

    PricePanel panel;
    panel.dates.assign(dates.begin(), dates.end());
    for (const auto& [sec, t] : order) panel.tickers.push_back(t);
    panel.closes = Matrix(panel.tickers.size(), panel.dates.size(),
                          std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < panel.tickers.size(); ++k) {
        for (std::size_t t = 0; t < panel.dates.size(); ++t) {
            auto it = cells.find({panel.tickers[k], panel.dates[t]});
            if (it != cells.end()) panel.closes(k, t) = it->second;
        }
    }
    return {panel, sectors};
}

// Keep tickers with a complete trailing history of at least min_weeks
// returns (min_weeks + 1 closes) and truncate everything to that common
// window. Tickers with any gap inside the window are dropped, not imputed.
inline PricePanel filter_history(const PricePanel& panel, std::size_t min_weeks) {
    if (min_weeks < 1) throw std::invalid_argument("min_weeks must be >= 1");
    if (panel.num_dates() < min_weeks + 1)
        throw std::runtime_error("no tickers satisfy history requirement");
    const std::size_t window = min_weeks + 1;
    const std::size_t start = panel.num_dates() - window;

    PricePanel out;
    out.dates.assign(panel.dates.begin() + static_cast<std::ptrdiff_t>(start), panel.dates.end());
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < panel.num_tickers(); ++k) {
        bool complete = true;
        for (std::size_t t = start; t < panel.num_dates(); ++t) {
            if (std::isnan(panel.closes(k, t))) { complete = false; break; }
        }
        if (complete) keep.push_back(k);
    }
    if (keep.empty()) throw std::runtime_error("no tickers satisfy history requirement");
    out.closes = Matrix(keep.size(), window);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.tickers.push_back(panel.tickers[keep[i]]);
        for (std::size_t t = 0; t < window; ++t) out.closes(i, t) = panel.closes(keep[i], start + t);
    }
    return out;
}

// Relative weekly price changes Y(k, t) = (X(k, t+1) - X(k, t)) / X(k, t),
// partitioned by sector. The panel must be complete (post-filter).
inline WeeklyReturnPanel compute_weekly_returns(const PricePanel& panel, const SectorMap& sectors) {
    if (panel.num_dates() < 2) throw std::invalid_argument("panel needs at least 2 dates");
    WeeklyReturnPanel out;
    out.tickers = panel.tickers;
    out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
    const std::size_t n = panel.num_dates() - 1;
    out.returns = Matrix(panel.num_tickers(), n);
    for (std::size_t k = 0; k < panel.num_tickers(); ++k) {
        for (std::size_t t = 0; t < n; ++t) {
            double prev = panel.closes(k, t);
            double cur = panel.closes(k, t + 1);
            if (std::isnan(prev) || std::isnan(cur))
                throw std::runtime_error("panel incomplete for ticker " + panel.tickers[k]);
            out.returns(k, t) = (cur - prev) / prev;
        }
    }
    // Sector partition; tickers are already sector-major from load_prices.
    for (std::size_t k = 0; k < panel.num_tickers(); ++k) {
        const std::string& sec = sectors.sector_of(panel.tickers[k]);
        if (out.sector_names.empty() || out.sector_names.back() != sec) {
            auto dup = std::find(out.sector_names.begin(), out.sector_names.end(), sec);
            if (dup != out.sector_names.end())
                throw std::runtime_error("tickers not grouped by sector in panel");
            out.sector_names.push_back(sec);
            out.sector_indices.emplace_back();
        }
        out.sector_indices.back().push_back(k);
    }
    return out;
}

}  // namespace lhmm
