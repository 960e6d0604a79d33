#include "forgetlab/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "forgetlab/combiner.hpp"
#include "forgetlab/config.hpp"
#include "forgetlab/error.hpp"
#include "forgetlab/hpo.hpp"

namespace forgetlab {

namespace fs = std::filesystem;

std::string_view eval_mode_name(EvalMode m) {
    switch (m) {
    case EvalMode::Flat: return "flat";
    case EvalMode::Dist: return "dist";
    case EvalMode::Ewc: return "ewc";
    }
    return "unknown";
}

EvalMode parse_eval_mode(std::string_view text) {
    if (text == "flat") return EvalMode::Flat;
    if (text == "dist") return EvalMode::Dist;
    if (text == "ewc") return EvalMode::Ewc;
    throw ConfigError("unknown mode '" + std::string(text) + "' (expected flat, dist or ewc)");
}

DirLock::DirLock(const fs::path& dir) : path_(dir / ".forgetlab.lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw Error("output directory '" + dir.string() + "' is locked by another run (delete " + path_.string() +
                    " if no forgetlab process is using it)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

std::size_t resolve_workers(std::optional<std::size_t> flag, std::size_t config_value) {
    if (flag) {
        if (*flag < 1) throw ConfigError("--workers must be >= 1");
        return *flag;
    }
    if (const char* env = std::getenv("FORGETLAB_WORKERS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError("FORGETLAB_WORKERS must be a positive integer, got '" +
                                                     std::string(env) + "'");
        return static_cast<std::size_t>(v);
    }
    return config_value;
}

namespace {

// Write to a sibling temp file, then rename, so readers never see a torn file.
void write_file(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) throw Error("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

ExperimentConfig load_with_overrides(const fs::path& config, const CommonOptions& opts) {
    ExperimentConfig cfg = load_config(config);
    if (opts.seed) cfg.set_seed(*opts.seed);
    if (opts.out) cfg.out_dir = *opts.out;
    cfg.workers = resolve_workers(opts.workers, cfg.workers);
    return cfg;
}

template <class F>
int guarded(std::ostream& log, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        log << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

int cmd_search(const fs::path& config, const CommonOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const ExperimentConfig cfg = load_with_overrides(config, opts);
        if (cfg.pairs.empty()) throw ConfigError(config.string() + ": no [pair NAME] sections to search");
        DirLock lock(cfg.out_dir);
        const DatasetRegistry data = build_datasets(cfg);
        const HyperbandPlan plan = hyperband_plan(cfg.max_resource, cfg.eta);
        for (const auto& spec : cfg.pairs) {
            const TaskPair pair = build_pair(cfg, spec, data);
            SearchOptions so = search_options(cfg);
            std::size_t rung_no = 0;
            so.on_rung = [&](const std::vector<Trial>& rung) {
                double best = 0.0;
                for (const auto& t : rung) best = std::max(best, t.reward);
                log << spec.name << ": rung " << rung_no++ << ", " << rung.size() << " trial(s) at "
                    << rung.front().resource << " epoch(s), best reward " << fmt(best) << '\n';
            };
            log << spec.name << ": " << plan.total_runs() << " runs, " << plan.total_resource()
                << " phase-2 epochs planned\n";
            const SearchResult res = run_search(pair, plan, cfg.protocol, cfg.model, so);
            std::ostringstream jsonl;
            res.store.write_jsonl(jsonl);
            write_file(cfg.out_dir / ("trials_" + spec.name + ".jsonl"), jsonl.str());
            const Trial& best = res.store.best(plan.max_resource);
            write_file(cfg.out_dir / ("best_" + spec.name + ".csv"), distribution_csv(best.rates));
            log << spec.name << ": best trial " << best.id << " reward " << fmt(best.reward) << " ("
                << res.phase2_epochs << " phase-2 epochs run)\n";
        }
        return kExitOk;
    });
}

int cmd_combine(const std::vector<fs::path>& logs, std::optional<double> b, std::optional<std::size_t> top_k,
                const fs::path& out_dir, std::ostream& log) {
    return guarded(log, [&] {
        if (logs.empty()) throw ConfigError("combine needs at least one trial log");
        CombineParams params;
        if (b) params.b = *b;
        if (top_k) params.top_k = *top_k;
        try {
            params.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
        std::vector<LrDistribution> per_pair;
        for (const auto& p : logs) {
            std::ifstream in(p);
            if (!in) throw Error("cannot read trial log '" + p.string() + "'");
            const TrialStore store = TrialStore::read_jsonl(in, p.string());
            if (store.empty()) throw Error("trial log '" + p.string() + "' is empty");
            const auto ranked = store.ranked();
            if (ranked.empty()) throw Error("trial log '" + p.string() + "' holds no ranked trial");
            per_pair.push_back(combine_trials(ranked, params));
            log << p.string() << ": " << ranked.size() << " ranked trial(s)\n";
        }
        DirLock lock(out_dir);
        write_file(out_dir / "combined.csv", distribution_csv(combine_pairs(per_pair)));
        log << "wrote " << (out_dir / "combined.csv").string() << '\n';
        return kExitOk;
    });
}

int cmd_evaluate(const fs::path& config, const std::optional<fs::path>& dist, EvalMode mode,
                 const CommonOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const ExperimentConfig cfg = load_with_overrides(config, opts);
        if (cfg.pairs.empty()) throw ConfigError(config.string() + ": no [pair NAME] sections to evaluate");
        ProtocolConfig pc = cfg.protocol;
        if (mode == EvalMode::Dist) {
            if (!dist) throw ConfigError("mode dist needs --dist PATH");
            std::ifstream in(*dist);
            if (!in) throw ConfigError("cannot read distribution '" + dist->string() + "'");
            pc.lr = read_distribution_csv(in, dist->string());
        } else {
            pc.lr = LrDistribution::flat(cfg.flat_lr);
            pc.ewc_enabled = mode == EvalMode::Ewc;
        }
        DirLock lock(cfg.out_dir);
        const DatasetRegistry data = build_datasets(cfg);
        const fs::path results = cfg.out_dir / "results.csv";
        const bool fresh = !fs::exists(results);
        std::ofstream out(results, std::ios::app);
        if (!out) throw Error("cannot write '" + results.string() + "'");
        if (fresh) out << "pair,mode,p_o_before,p_o,p_s,reward\n";
        for (const auto& spec : cfg.pairs) {
            const TaskPair pair = build_pair(cfg, spec, data);
            const ProtocolResult r = run_sequential(pair, pc, Model::init(cfg.model));
            if (r.status == RunStatus::Diverged) log << spec.name << ": run diverged: " << r.message << '\n';
            out << spec.name << ',' << eval_mode_name(mode) << ',' << fmt(r.p_o_before) << ',' << fmt(r.p_o) << ','
                << fmt(r.p_s) << ',' << fmt(r.reward) << '\n';
            log << spec.name << " [" << eval_mode_name(mode) << "]: p_o_before " << fmt(r.p_o_before) << ", p_o "
                << fmt(r.p_o) << ", p_s " << fmt(r.p_s) << ", reward " << fmt(r.reward) << '\n';
        }
        if (!out.flush()) throw Error("write to '" + results.string() + "' failed");
        return kExitOk;
    });
}

int cmd_report(const std::vector<fs::path>& files, std::ostream& out, std::ostream& log) {
    return guarded(log, [&] {
        if (files.empty()) throw ConfigError("report needs at least one file");
        for (const auto& p : files) {
            std::ifstream in(p);
            if (!in) throw Error("cannot read '" + p.string() + "'");
            out << "== " << p.string() << '\n';
            if (p.extension() == ".jsonl") {
                const TrialStore store = TrialStore::read_jsonl(in, p.string());
                std::size_t completed = 0, diverged = 0, pruned = 0;
                for (const auto& t : store.trials()) {
                    completed += t.status == TrialStatus::Completed;
                    diverged += t.status == TrialStatus::Diverged;
                    pruned += t.status == TrialStatus::Pruned;
                }
                out << "trials " << store.size() << " (completed " << completed << ", pruned " << pruned
                    << ", diverged " << diverged << ")\n";
                if (completed == 0) continue;
                const Trial& best = store.best();
                out << "best   id " << best.id << ", resource " << best.resource << ", p_o " << fmt(best.p_o)
                    << ", p_s " << fmt(best.p_s) << ", reward " << fmt(best.reward) << '\n';
                out << "rates  " << best.rates.to_string() << '\n';
            } else {
                const LrDistribution d = read_distribution_csv(in, p.string());
                out << "choice  rate\n";
                char buf[64];
                for (const auto& [c, r] : report_distribution(d)) {
                    std::snprintf(buf, sizeof buf, "%6zu  %.6e\n", c, r);
                    out << buf;
                }
            }
        }
        return kExitOk;
    });
}

} // namespace forgetlab
