#include "forgetlab/combiner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "forgetlab/error.hpp"

namespace forgetlab {

void CombineParams::validate() const {
    if (!(b >= 1.0) || !std::isfinite(b)) throw InvalidArgument("combine: b must be a finite real >= 1");
}

double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

LrDistribution combine_trials(std::span<const Trial> trials, const CombineParams& params) {
    params.validate();
    std::vector<const Trial*> used;
    for (const auto& t : trials)
        if (t.rank && (params.top_k == 0 || *t.rank < params.top_k)) used.push_back(&t);
    if (used.empty()) throw InvalidArgument("combine_trials: no ranked trials");
    // Ranks fix the summation order, so the input order never matters.
    std::sort(used.begin(), used.end(), [](const Trial* a, const Trial* b) {
        return *a->rank != *b->rank ? *a->rank < *b->rank : a->id < b->id;
    });

    std::vector<double> w(used.size()), terms(used.size());
    for (std::size_t j = 0; j < used.size(); ++j) w[j] = std::pow(params.b, -static_cast<double>(*used[j]->rank));
    const double wsum = pairwise_sum(w);

    std::array<double, kNumChoices> out{};
    for (std::size_t c = 0; c < kNumChoices; ++c) {
        double lo = used.front()->rates[c], hi = lo;
        for (std::size_t j = 0; j < used.size(); ++j) {
            const double r = used[j]->rates[c];
            if (!(r > 0.0)) throw InvalidArgument("combine_trials: trial " + std::to_string(used[j]->id) +
                                                  " has a nonpositive rate at choice " + std::to_string(c));
            terms[j] = w[j] * std::log(r);
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        out[c] = std::clamp(std::exp(pairwise_sum(terms) / wsum), lo, hi);
    }
    return LrDistribution(out);
}

LrDistribution combine_pairs(std::span<const LrDistribution> dists) {
    if (dists.empty()) throw InvalidArgument("combine_pairs: no distributions");
    std::array<double, kNumChoices> out{};
    std::vector<double> logs(dists.size());
    for (std::size_t c = 0; c < kNumChoices; ++c) {
        double lo = dists[0][c], hi = lo;
        for (std::size_t j = 0; j < dists.size(); ++j) {
            logs[j] = std::log(dists[j][c]);
            lo = std::min(lo, dists[j][c]);
            hi = std::max(hi, dists[j][c]);
        }
        std::sort(logs.begin(), logs.end());
        out[c] = std::clamp(std::exp(pairwise_sum(logs) / static_cast<double>(logs.size())), lo, hi);
    }
    return LrDistribution(out);
}

std::vector<std::pair<std::size_t, double>> report_distribution(const LrDistribution& d) {
    std::vector<std::pair<std::size_t, double>> rows;
    for (std::size_t c = 0; c < kNumChoices; ++c) rows.emplace_back(c, d[c]);
    return rows;
}

void write_distribution_csv(std::ostream& os, const LrDistribution& d) {
    os << "choice,rate\n";
    char buf[64];
    for (const auto& [c, r] : report_distribution(d)) {
        std::snprintf(buf, sizeof buf, "%zu,%.16e\n", c, r);
        os << buf;
    }
}

std::string distribution_csv(const LrDistribution& d) {
    std::ostringstream os;
    write_distribution_csv(os, d);
    return os.str();
}

LrDistribution read_distribution_csv(std::istream& is, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) -> void {
        throw Error(source + ":" + std::to_string(lineno) + ": " + what);
    };
    auto next = [&]() {
        while (std::getline(is, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };
    if (!next()) fail("empty distribution file");
    if (line != "choice,rate") fail("expected header 'choice,rate', got '" + line + "'");
    std::array<double, kNumChoices> rates{};
    std::array<bool, kNumChoices> seen{};
    std::size_t rows = 0;
    while (next()) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) fail("expected 'choice,rate', got '" + line + "'");
        std::size_t choice = 0, used = 0;
        double rate = 0.0;
        try {
            choice = std::stoul(line.substr(0, comma), &used);
            if (used != comma) throw std::invalid_argument("trailing");
            const std::string rs = line.substr(comma + 1);
            rate = std::stod(rs, &used);
            if (used != rs.size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            fail("cannot parse row '" + line + "'");
        }
        if (choice >= kNumChoices) fail("choice " + std::to_string(choice) + " out of range");
        if (seen[choice]) fail("duplicate choice " + std::to_string(choice));
        if (!(rate > 0.0) || !std::isfinite(rate)) fail("rate must be positive and finite");
        seen[choice] = true;
        rates[choice] = rate;
        ++rows;
    }
    if (rows != kNumChoices)
        throw Error(source + ": expected " + std::to_string(kNumChoices) + " rows, got " + std::to_string(rows));
    return LrDistribution(rates);
}

} // namespace forgetlab
