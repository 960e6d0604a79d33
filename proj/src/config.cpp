#include "forgetlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>

#include "forgetlab/error.hpp"

namespace forgetlab {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool valid_name(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

struct Cursor {
    const std::string& source;
    std::size_t line = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(source + ":" + std::to_string(line) + ": " + what);
    }
};

std::size_t to_size(const Cursor& at, const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        at.fail("'" + key + "' expects a nonnegative integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const Cursor& at, const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        at.fail("'" + key + "' expects a nonnegative integer, got '" + v + "'");
    return out;
}

double to_real(const Cursor& at, const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::logic_error&) {
        at.fail("'" + key + "' expects a real number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(out)) at.fail("'" + key + "' expects a real number, got '" + v + "'");
    return out;
}

bool to_bool(const Cursor& at, const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    at.fail("'" + key + "' expects true or false, got '" + v + "'");
}

// A single value means flat, ten comma-separated values a full distribution.
LrDistribution to_dist(const Cursor& at, const std::string& key, const std::string& v) {
    try {
        if (v.find(',') == std::string::npos) return LrDistribution::flat(to_real(at, key, v));
        return LrDistribution::parse(v);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        at.fail("'" + key + "': " + e.what());
    }
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const auto item = trim(std::string_view(v).substr(start, comma == std::string::npos ? v.npos : comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

using Setter = std::function<void(const Cursor&, const std::string& key, const std::string& value)>;

} // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    protocol.seed = s;
    for (auto& p : pairs) p.seed = s;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    try {
        model.validate();
        protocol.validate();
        space.validate();
        combine.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        fail(e.what());
    }
    if (!(flat_lr > 0.0)) fail("protocol.flat_lr must be positive");
    if (max_resource < 1) fail("search.max_resource must be >= 1");
    if (eta < 2) fail("search.eta must be >= 2");
    if (workers < 1) fail("search.workers must be >= 1");
    std::set<std::string> names;
    for (const auto& d : datasets) {
        if (!names.insert(d.name).second) fail("dataset '" + d.name + "' defined twice");
        if (d.kind == DatasetSource::Kind::Synth && d.family.empty())
            fail("dataset '" + d.name + "' needs a family");
        if (d.kind == DatasetSource::Kind::Tsv && d.path.empty()) fail("dataset '" + d.name + "' needs a path");
    }
    std::set<std::string> pair_names;
    for (const auto& p : pairs) {
        if (!pair_names.insert(p.name).second) fail("pair '" + p.name + "' defined twice");
        if (p.sources.empty()) fail("pair '" + p.name + "' lists no sources");
        for (const auto& s : p.sources)
            if (!names.count(s)) fail("pair '" + p.name + "' references unknown dataset '" + s + "'");
    }
}

ExperimentConfig parse_config(std::istream& is, const std::string& source, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    std::optional<std::uint64_t> global_seed;
    std::optional<std::uint64_t> model_seed, protocol_seed;
    std::map<std::string, std::uint64_t> pair_seeds;

    std::map<std::string, Setter> top = {
        {"seed", [&](const Cursor& c, const std::string& k, const std::string& v) { global_seed = to_u64(c, k, v); }},
        {"out", [&](const Cursor&, const std::string&, const std::string& v) { cfg.out_dir = v; }},
    };
    std::map<std::string, Setter> model = {
        {"vocab_size", [&](const Cursor& c, auto& k, auto& v) { cfg.model.vocab_size = to_size(c, k, v); }},
        {"max_seq_len", [&](const Cursor& c, auto& k, auto& v) { cfg.model.max_seq_len = to_size(c, k, v); }},
        {"d_model", [&](const Cursor& c, auto& k, auto& v) { cfg.model.d_model = to_size(c, k, v); }},
        {"n_heads", [&](const Cursor& c, auto& k, auto& v) { cfg.model.n_heads = to_size(c, k, v); }},
        {"n_layers", [&](const Cursor& c, auto& k, auto& v) { cfg.model.n_layers = to_size(c, k, v); }},
        {"d_ff", [&](const Cursor& c, auto& k, auto& v) { cfg.model.d_ff = to_size(c, k, v); }},
        {"n_classes", [&](const Cursor& c, auto& k, auto& v) { cfg.model.n_classes = to_size(c, k, v); }},
        {"seed", [&](const Cursor& c, auto& k, auto& v) { model_seed = to_u64(c, k, v); }},
    };
    auto& pc = cfg.protocol;
    std::map<std::string, Setter> protocol = {
        {"epochs_o", [&](const Cursor& c, auto& k, auto& v) { pc.epochs_o = to_size(c, k, v); }},
        {"epochs_s", [&](const Cursor& c, auto& k, auto& v) { pc.epochs_s = to_size(c, k, v); }},
        {"batch_size", [&](const Cursor& c, auto& k, auto& v) { pc.batch_size = to_size(c, k, v); }},
        {"warmup_fraction", [&](const Cursor& c, auto& k, auto& v) { pc.warmup_fraction = to_real(c, k, v); }},
        {"flat_lr", [&](const Cursor& c, auto& k, auto& v) { cfg.flat_lr = to_real(c, k, v); }},
        {"phase1_lr", [&](const Cursor& c, auto& k, auto& v) { pc.phase1_lr = to_dist(c, k, v); }},
        {"ewc_lambda", [&](const Cursor& c, auto& k, auto& v) { pc.ewc_lambda = to_real(c, k, v); }},
        {"fisher_samples", [&](const Cursor& c, auto& k, auto& v) { pc.fisher_samples = to_size(c, k, v); }},
        {"retain_moments", [&](const Cursor& c, auto& k, auto& v) { pc.retain_moments = to_bool(c, k, v); }},
        {"seed", [&](const Cursor& c, auto& k, auto& v) { protocol_seed = to_u64(c, k, v); }},
    };
    std::map<std::string, Setter> search = {
        {"max_resource", [&](const Cursor& c, auto& k, auto& v) { cfg.max_resource = to_size(c, k, v); }},
        {"eta", [&](const Cursor& c, auto& k, auto& v) { cfg.eta = to_size(c, k, v); }},
        {"phase2_only", [&](const Cursor& c, auto& k, auto& v) { cfg.phase2_only = to_bool(c, k, v); }},
        {"record_wall_time", [&](const Cursor& c, auto& k, auto& v) { cfg.record_wall_time = to_bool(c, k, v); }},
        {"workers", [&](const Cursor& c, auto& k, auto& v) { cfg.workers = to_size(c, k, v); }},
        {"low", [&](const Cursor& c, auto& k, auto& v) { cfg.space.low = to_real(c, k, v); }},
        {"high", [&](const Cursor& c, auto& k, auto& v) { cfg.space.high = to_real(c, k, v); }},
    };
    std::map<std::string, Setter> combine = {
        {"b", [&](const Cursor& c, auto& k, auto& v) { cfg.combine.b = to_real(c, k, v); }},
        {"top_k", [&](const Cursor& c, auto& k, auto& v) { cfg.combine.top_k = to_size(c, k, v); }},
    };

    DatasetSource* ds = nullptr;
    ShiftSpec* ps = nullptr;
    std::map<std::string, Setter> dataset = {
        {"source",
         [&](const Cursor& c, auto&, auto& v) {
             if (v == "synth") ds->kind = DatasetSource::Kind::Synth;
             else if (v == "tsv") ds->kind = DatasetSource::Kind::Tsv;
             else c.fail("dataset source must be synth or tsv, got '" + v + "'");
         }},
        {"family", [&](const Cursor&, auto&, auto& v) { ds->family = v; }},
        {"path",
         [&](const Cursor&, auto&, auto& v) {
             std::filesystem::path p(v);
             ds->path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
         }},
        {"size", [&](const Cursor& c, auto& k, auto& v) { ds->synth.size = to_size(c, k, v); }},
        {"min_len", [&](const Cursor& c, auto& k, auto& v) { ds->synth.min_len = to_size(c, k, v); }},
        {"max_len", [&](const Cursor& c, auto& k, auto& v) { ds->synth.max_len = to_size(c, k, v); }},
        {"max_s_count", [&](const Cursor& c, auto& k, auto& v) { ds->synth.max_s_count = to_size(c, k, v); }},
        {"seed", [&](const Cursor& c, auto& k, auto& v) { ds->seed = to_u64(c, k, v); }},
    };
    std::map<std::string, Setter> pair = {
        {"kind",
         [&](const Cursor& c, auto&, auto& v) {
             try {
                 ps->kind = parse_shift_kind(v);
             } catch (const std::exception& e) {
                 c.fail(e.what());
             }
         }},
        {"sources", [&](const Cursor&, auto&, auto& v) { ps->sources = to_list(v); }},
        {"seed", [&](const Cursor& c, auto& k, auto& v) { pair_seeds[ps->name] = to_u64(c, k, v); }},
    };

    std::map<std::string, Setter>* current = &top;
    std::string section = "top level";
    std::set<std::string> seen_sections;
    std::set<std::pair<std::string, std::string>> seen_keys;
    Cursor at{source};
    std::string raw;
    while (std::getline(is, raw)) {
        ++at.line;
        std::string line = raw;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') at.fail("unterminated section header '" + line + "'");
            const std::string inner = trim(std::string_view(line).substr(1, line.size() - 2));
            const auto sp = inner.find_first_of(" \t");
            const std::string kind = inner.substr(0, sp);
            const std::string arg = sp == std::string::npos ? std::string() : trim(std::string_view(inner).substr(sp));
            if (kind == "dataset" || kind == "pair") {
                if (!valid_name(arg)) at.fail("[" + kind + " NAME] needs a name of letters, digits, '_', '-', '.'");
                if (kind == "dataset") {
                    cfg.datasets.push_back({});
                    ds = &cfg.datasets.back();
                    ds->name = arg;
                    current = &dataset;
                } else {
                    cfg.pairs.push_back({});
                    ps = &cfg.pairs.back();
                    ps->name = arg;
                    current = &pair;
                }
            } else {
                if (!arg.empty()) at.fail("section [" + kind + "] takes no name");
                if (kind == "model") current = &model;
                else if (kind == "protocol") current = &protocol;
                else if (kind == "search") current = &search;
                else if (kind == "combine") current = &combine;
                else at.fail("unknown section [" + kind + "]");
            }
            section = inner;
            if (!seen_sections.insert(section).second) at.fail("section [" + section + "] appears twice");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) at.fail("expected 'key = value', got '" + line + "'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) at.fail("missing key before '='");
        if (value.empty()) at.fail("missing value for '" + key + "'");
        const auto it = current->find(key);
        if (it == current->end()) at.fail("unknown key '" + key + "' in [" + section + "]");
        if (!seen_keys.insert({section, key}).second) at.fail("key '" + key + "' repeated in [" + section + "]");
        it->second(at, key, value);
    }

    cfg.set_seed(global_seed.value_or(cfg.seed));
    if (model_seed) cfg.model.seed = *model_seed;
    if (protocol_seed) cfg.protocol.seed = *protocol_seed;
    for (auto& p : cfg.pairs)
        if (pair_seeds.count(p.name)) p.seed = pair_seeds[p.name];
    cfg.protocol.lr = LrDistribution::flat(cfg.flat_lr > 0.0 ? cfg.flat_lr : kDefaultFlatLr);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    return parse_config(in, path.string(), path.parent_path());
}

DatasetRegistry build_datasets(const ExperimentConfig& cfg) {
    DatasetRegistry reg;
    for (const auto& d : cfg.datasets) {
        Dataset data;
        if (d.kind == DatasetSource::Kind::Synth) {
            SynthOptions o = d.synth;
            o.vocab_size = cfg.model.vocab_size;
            data = synth_task(d.family, d.seed.value_or(cfg.seed), o);
        } else {
            data = load_tsv(d.path, cfg.model.vocab_size);
        }
        data.name = d.name;
        reg.emplace(d.name, std::move(data));
    }
    return reg;
}

TaskPair build_pair(const ExperimentConfig& cfg, const ShiftSpec& spec, const DatasetRegistry& datasets) {
    Embedder embed;
    if (spec.kind == ShiftKind::Artificial) {
        auto model = std::make_shared<Model>(Model::init(cfg.model));
        embed = [model](const TokenBatch& b) { return model->extract_cls_embedding(b); };
    }
    TaskPair p = make_task_pair(spec, datasets, embed);
    p.name = spec.name;
    return p;
}

SearchOptions search_options(const ExperimentConfig& cfg) {
    SearchOptions o;
    o.seed = cfg.seed;
    o.workers = cfg.workers;
    o.space = cfg.space;
    o.baseline = LrDistribution::flat(cfg.flat_lr);
    o.phase2_only = cfg.phase2_only;
    o.record_wall_time = cfg.record_wall_time;
    return o;
}

} // namespace forgetlab
