#include "forgetlab/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "forgetlab/error.hpp"

namespace forgetlab {

void SearchSpace::validate() const {
    if (!(low > 0.0 && std::isfinite(high) && low < high))
        throw InvalidArgument("search space needs 0 < low < high, got [" + std::to_string(low) + ", " +
                              std::to_string(high) + "]");
}

bool SearchSpace::contains(const LrDistribution& d) const {
    return std::all_of(d.rates().begin(), d.rates().end(), [&](double r) { return r >= low && r <= high; });
}

std::string_view trial_status_name(TrialStatus s) {
    switch (s) {
    case TrialStatus::Completed: return "completed";
    case TrialStatus::Diverged: return "diverged";
    case TrialStatus::Pruned: return "pruned";
    }
    return "unknown";
}

TrialStatus parse_trial_status(std::string_view text) {
    if (text == "completed") return TrialStatus::Completed;
    if (text == "diverged") return TrialStatus::Diverged;
    if (text == "pruned") return TrialStatus::Pruned;
    throw InvalidArgument("unknown trial status '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Hyperband

std::size_t HyperbandPlan::total_resource() const {
    std::size_t total = 0;
    for (const auto& b : brackets)
        for (const auto& r : b) total += r.n_configs * r.resource;
    return total;
}

std::size_t HyperbandPlan::total_runs() const {
    std::size_t total = 0;
    for (const auto& b : brackets)
        for (const auto& r : b) total += r.n_configs;
    return total;
}

HyperbandPlan hyperband_plan(std::size_t max_resource, std::size_t eta) {
    if (max_resource < 1) throw InvalidArgument("hyperband: max_resource must be >= 1");
    if (eta < 2) throw InvalidArgument("hyperband: eta must be >= 2");
    std::size_t s_max = 0;
    for (std::size_t p = eta; p <= max_resource; p *= eta) ++s_max;

    auto pow_eta = [eta](std::size_t e) {
        std::size_t v = 1;
        for (std::size_t i = 0; i < e; ++i) v *= eta;
        return v;
    };

    HyperbandPlan plan;
    plan.max_resource = max_resource;
    plan.eta = eta;
    for (std::size_t s = s_max + 1; s-- > 0;) {
        std::vector<Rung> bracket;
        std::size_t n = (s_max + 1) / (s + 1) * pow_eta(s);
        for (std::size_t i = 0; i <= s; ++i) {
            bracket.push_back({n, std::max<std::size_t>(1, max_resource / pow_eta(s - i))});
            n /= eta;
        }
        plan.brackets.push_back(std::move(bracket));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Proposer

namespace {

struct Kde {
    std::vector<double> points; // log10 rates
    double bandwidth = 0.0;

    double log_density(double x) const {
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double z = (x - points[i]) / bandwidth;
            terms[i] = -0.5 * z * z;
            mx = std::max(mx, terms[i]);
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        return mx + std::log(s / static_cast<double>(points.size())) - std::log(bandwidth);
    }
};

Kde fit(std::vector<double> pts, double min_bw) {
    const double n = static_cast<double>(pts.size());
    const double mean = std::accumulate(pts.begin(), pts.end(), 0.0) / n;
    double var = 0.0;
    for (double p : pts) var += (p - mean) * (p - mean);
    const double sigma = std::sqrt(var / n);
    return {std::move(pts), std::max(min_bw, 1.06 * sigma * std::pow(n, -0.2))};
}

// Reward descending, lower id first on ties.
bool better(const Trial& a, const Trial& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    return a.id < b.id;
}

} // namespace

LrDistribution propose(const std::vector<Trial>& history, const SearchSpace& space, Rng& rng,
                       const ProposerOptions& opts) {
    space.validate();
    const double lo = std::log10(space.low), hi = std::log10(space.high);
    auto clip = [&](double x) { return std::pow(10.0, std::clamp(x, lo, hi)); };
    std::array<double, kNumChoices> out{};

    if (history.size() < std::max<std::size_t>(opts.n_min, 2)) {
        std::uniform_real_distribution<double> u(lo, hi);
        for (auto& r : out) r = clip(u(rng));
        return LrDistribution(out);
    }

    std::vector<const Trial*> sorted;
    sorted.reserve(history.size());
    for (const auto& t : history) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(), [](const Trial* a, const Trial* b) { return better(*a, *b); });
    const auto n_good = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(opts.gamma * static_cast<double>(sorted.size()))), 1, sorted.size() - 1);

    std::array<Kde, kNumChoices> good, bad;
    for (std::size_t c = 0; c < kNumChoices; ++c) {
        std::vector<double> g, b;
        for (std::size_t i = 0; i < sorted.size(); ++i)
            (i < n_good ? g : b).push_back(std::log10(sorted[i]->rates[c]));
        good[c] = fit(std::move(g), opts.min_bandwidth);
        bad[c] = fit(std::move(b), opts.min_bandwidth);
    }

    std::uniform_int_distribution<std::size_t> pick(0, n_good - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < std::max<std::size_t>(opts.n_candidates, 1); ++k) {
        std::array<double, kNumChoices> cand{};
        double score = 0.0;
        for (std::size_t c = 0; c < kNumChoices; ++c) {
            const double x = std::clamp(good[c].points[pick(rng)] + good[c].bandwidth * noise(rng), lo, hi);
            cand[c] = x;
            score += good[c].log_density(x) - bad[c].log_density(x);
        }
        if (score > best_score) {
            best_score = score;
            for (std::size_t c = 0; c < kNumChoices; ++c) out[c] = clip(cand[c]);
        }
    }
    return LrDistribution(out);
}

// ---------------------------------------------------------------------------
// Trial store

void TrialStore::append(Trial t) { trials_.push_back(std::move(t)); }

void TrialStore::assign_ranks(std::size_t resource) {
    std::vector<Trial*> pool;
    for (auto& t : trials_) {
        t.rank.reset();
        if (t.status == TrialStatus::Completed && t.resource == resource) pool.push_back(&t);
    }
    std::sort(pool.begin(), pool.end(), [](const Trial* a, const Trial* b) { return better(*a, *b); });
    for (std::size_t r = 0; r < pool.size(); ++r) pool[r]->rank = r;
}

std::vector<Trial> TrialStore::ranked() const {
    std::vector<Trial> out;
    for (const auto& t : trials_)
        if (t.rank) out.push_back(t);
    std::sort(out.begin(), out.end(), [](const Trial& a, const Trial& b) { return *a.rank < *b.rank; });
    return out;
}

const Trial& TrialStore::best(std::optional<std::size_t> resource) const {
    const Trial* best = nullptr;
    for (const auto& t : trials_)
        if (t.status == TrialStatus::Completed && (!resource || t.resource == *resource) &&
            (best == nullptr || better(t, *best)))
            best = &t;
    if (best == nullptr)
        throw Error(resource ? "trial store holds no completed trial at resource " + std::to_string(*resource)
                             : std::string("trial store holds no completed trial"));
    return *best;
}

std::string TrialStore::to_json_line(const Trial& t) {
    nlohmann::ordered_json j;
    j["id"] = t.id;
    j["rates"] = t.rates.rates();
    j["resource"] = t.resource;
    j["status"] = trial_status_name(t.status);
    j["p_o"] = t.p_o;
    j["p_s"] = t.p_s;
    j["reward"] = t.reward;
    j["rank"] = t.rank ? nlohmann::ordered_json(*t.rank) : nlohmann::ordered_json(nullptr);
    j["wall_time_s"] = t.wall_time_s;
    return j.dump();
}

void TrialStore::write_jsonl(std::ostream& os) const {
    for (const auto& t : trials_) os << to_json_line(t) << '\n';
}

TrialStore TrialStore::read_jsonl(std::istream& is, std::string_view source) {
    TrialStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = std::string(source) + ":" + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            Trial t;
            t.id = j.at("id").get<std::size_t>();
            const auto rates = j.at("rates").get<std::vector<double>>();
            if (rates.size() != kNumChoices)
                throw Error("expected " + std::to_string(kNumChoices) + " rates, got " + std::to_string(rates.size()));
            std::array<double, kNumChoices> arr{};
            std::copy(rates.begin(), rates.end(), arr.begin());
            t.rates = LrDistribution(arr);
            t.resource = j.at("resource").get<std::size_t>();
            t.status = parse_trial_status(j.at("status").get<std::string>());
            t.p_o = j.at("p_o").get<double>();
            t.p_s = j.at("p_s").get<double>();
            t.reward = j.at("reward").get<double>();
            if (!j.at("rank").is_null()) t.rank = j.at("rank").get<std::size_t>();
            t.wall_time_s = j.at("wall_time_s").get<double>();
            store.append(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw Error(where + ": malformed trial record: " + e.what());
        } catch (const std::exception& e) {
            throw Error(where + ": " + e.what());
        }
    }
    return store;
}

// ---------------------------------------------------------------------------
// Search

namespace {

struct RunOutcome {
    ProtocolResult result;
    double seconds = 0.0;
};

// Observations at the highest resource level holding at least n_min of them.
std::vector<Trial> proposer_history(const std::vector<Trial>& all, std::size_t n_min) {
    std::vector<std::size_t> levels;
    for (const auto& t : all) levels.push_back(t.resource);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
        std::vector<Trial> at;
        for (const auto& t : all)
            if (t.resource == *it) at.push_back(t);
        if (at.size() >= n_min) return at;
    }
    return {};
}

} // namespace

SearchResult run_search(const TaskPair& pair, const HyperbandPlan& plan, const ProtocolConfig& base_cfg,
                        const ModelConfig& model_cfg, const SearchOptions& opts) {
    base_cfg.validate();
    model_cfg.validate();
    opts.space.validate();
    if (plan.brackets.empty()) throw InvalidArgument("run_search: empty hyperband plan");

    SearchResult out;
    std::optional<PhaseOneState> cached;
    if (opts.phase2_only) {
        ProtocolConfig c1 = base_cfg;
        c1.phase1_lr = base_cfg.phase1_lr.value_or(opts.baseline);
        cached = run_phase_one(pair, c1, Model::init(model_cfg));
        out.phase1_epochs += cached->loss.size();
    }

    auto run_one = [&](const LrDistribution& rates, std::size_t resource) {
        ProtocolConfig cfg = base_cfg;
        cfg.lr = rates;
        cfg.epochs_s = resource;
        const auto t0 = std::chrono::steady_clock::now();
        RunOutcome o;
        try {
            if (cached) {
                cfg.phase1_lr = base_cfg.phase1_lr.value_or(opts.baseline);
                o.result = run_phase_two(pair, cfg, *cached);
            } else {
                o.result = run_sequential(pair, cfg, Model::init(model_cfg));
            }
        } catch (const std::exception& e) {
            o.result = ProtocolResult{};
            o.result.status = RunStatus::Diverged;
            o.result.message = e.what();
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return o;
    };

    std::vector<Trial> observed;
    std::size_t next_id = 0;
    for (std::size_t bi = 0; bi < plan.brackets.size(); ++bi) {
        const auto& bracket = plan.brackets[bi];
        Rng rng(derive_seed(opts.seed, {0x6870ULL, bi}));
        const auto history = proposer_history(observed, opts.proposer.n_min);
        std::vector<LrDistribution> configs;
        configs.reserve(bracket.front().n_configs);
        const bool seed_baseline = bi == 0 || bi + 1 == plan.brackets.size();
        for (std::size_t i = 0; i < bracket.front().n_configs; ++i)
            configs.push_back(seed_baseline && i == 0 ? opts.baseline
                                                      : propose(history, opts.space, rng, opts.proposer));

        for (std::size_t ri = 0; ri < bracket.size(); ++ri) {
            const std::size_t resource = bracket[ri].resource;
            const auto n = static_cast<std::ptrdiff_t>(configs.size());
            std::vector<RunOutcome> outcomes(configs.size());
            const int workers = static_cast<int>(std::max<std::size_t>(1, opts.workers));
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) if (workers > 1)
            for (std::ptrdiff_t i = 0; i < n; ++i)
                outcomes[static_cast<std::size_t>(i)] = run_one(configs[static_cast<std::size_t>(i)], resource);

            std::vector<Trial> rung;
            rung.reserve(configs.size());
            for (std::size_t i = 0; i < configs.size(); ++i) {
                const auto& r = outcomes[i].result;
                Trial t;
                t.id = next_id++;
                t.rates = configs[i];
                t.resource = resource;
                t.status = r.status == RunStatus::Completed ? TrialStatus::Completed : TrialStatus::Diverged;
                t.p_o = r.p_o;
                t.p_s = r.p_s;
                t.reward = r.reward;
                t.wall_time_s = opts.record_wall_time ? outcomes[i].seconds : 0.0;
                if (!cached) out.phase1_epochs += r.loss_o.size();
                out.phase2_epochs += r.loss_s.size();
                rung.push_back(std::move(t));
            }

            if (ri + 1 < bracket.size()) {
                std::vector<std::size_t> order(rung.size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::sort(order.begin(), order.end(),
                          [&](std::size_t a, std::size_t b) { return better(rung[a], rung[b]); });
                const std::size_t keep = rung.size() / plan.eta;
                std::vector<bool> promoted(rung.size(), false);
                for (std::size_t k = 0; k < keep; ++k) promoted[order[k]] = true;
                configs.clear();
                for (std::size_t i = 0; i < rung.size(); ++i) {
                    if (promoted[i])
                        configs.push_back(rung[i].rates);
                    else if (rung[i].status == TrialStatus::Completed)
                        rung[i].status = TrialStatus::Pruned;
                }
            }
            for (const auto& t : rung) {
                observed.push_back(t);
                out.store.append(t);
            }
            if (opts.on_rung) opts.on_rung(rung);
        }
    }
    out.store.assign_ranks(plan.max_resource);
    return out;
}

} // namespace forgetlab
