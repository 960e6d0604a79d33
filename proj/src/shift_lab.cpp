#include "forgetlab/shift_lab.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "forgetlab/error.hpp"
#include "forgetlab/kmeans.hpp"
#include "forgetlab/random.hpp"

namespace forgetlab {

void Dataset::validate(std::size_t vocab_size) const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (e.tokens.empty()) throw InvalidArgument(name + ": example " + std::to_string(i) + " is empty");
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= n_classes)
            throw InvalidArgument(name + ": example " + std::to_string(i) + " has label " + std::to_string(e.label) +
                                  " outside " + std::to_string(n_classes) + " classes");
        for (std::size_t j = 0; j < e.tokens.size(); ++j)
            if (e.tokens[j] < 1 || static_cast<std::size_t>(e.tokens[j]) >= vocab_size)
                throw InvalidArgument(name + ": example " + std::to_string(i) + " token " + std::to_string(j) +
                                      " = " + std::to_string(e.tokens[j]) + " outside [1, " +
                                      std::to_string(vocab_size) + ")");
    }
}

std::string_view shift_kind_name(ShiftKind kind) {
    switch (kind) {
    case ShiftKind::DatasetPair: return "dataset-pair";
    case ShiftKind::SentenceLength: return "sentence-length";
    case ShiftKind::Artificial: return "artificial";
    }
    return "unknown";
}

ShiftKind parse_shift_kind(std::string_view text) {
    if (text == "dataset-pair" || text == "dataset") return ShiftKind::DatasetPair;
    if (text == "sentence-length" || text == "length") return ShiftKind::SentenceLength;
    if (text == "artificial") return ShiftKind::Artificial;
    throw InvalidArgument("unknown shift kind '" + std::string(text) + "'");
}

namespace {

enum class Family { Parity, Precedence, Conflict };

Family parse_family(std::string_view f) {
    if (f == "parity" || f == "A") return Family::Parity;
    if (f == "precedence" || f == "B") return Family::Precedence;
    if (f == "conflict" || f == "C") return Family::Conflict;
    throw InvalidArgument("unknown task family '" + std::string(f) + "'");
}

// Places `s` S-tokens and `t` T-tokens at random distinct positions of a
// filler sequence of length `len`.
std::vector<int> scatter(Rng& rng, std::size_t len, std::size_t s, std::size_t t, std::size_t vocab) {
    std::uniform_int_distribution<int> filler(kFillerFirst, static_cast<int>(vocab) - 1);
    std::uniform_int_distribution<int> s_tok(kMarkerSFirst, kMarkerSLast);
    std::uniform_int_distribution<int> t_tok(kMarkerTFirst, kMarkerTLast);
    std::vector<int> seq(len);
    for (auto& v : seq) v = filler(rng);
    std::vector<std::size_t> pos(len);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    std::shuffle(pos.begin(), pos.end(), rng);
    for (std::size_t i = 0; i < s; ++i) seq[pos[i]] = s_tok(rng);
    for (std::size_t i = 0; i < t; ++i) seq[pos[s + i]] = t_tok(rng);
    return seq;
}

} // namespace

Dataset synth_task(std::string_view family, std::uint64_t seed, const SynthOptions& opts) {
    const Family fam = parse_family(family);
    if (opts.min_len < 4 || opts.max_len < opts.min_len)
        throw InvalidArgument("synth_task: need 4 <= min_len <= max_len");
    if (opts.vocab_size <= static_cast<std::size_t>(kFillerFirst))
        throw InvalidArgument("synth_task: vocab_size must exceed the marker ids");
    if (opts.max_s_count < 1 || opts.max_s_count + 2 > opts.min_len)
        throw InvalidArgument("synth_task: max_s_count must lie in [1, min_len - 2]");
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(fam) + 1}));
    std::uniform_int_distribution<std::size_t> length(opts.min_len, opts.max_len);
    std::uniform_int_distribution<std::size_t> s_count(0, opts.max_s_count);
    std::uniform_int_distribution<std::size_t> one_two(1, 2);
    std::bernoulli_distribution coin(0.5);

    Dataset d;
    d.name = std::string(fam == Family::Parity ? "parity" : fam == Family::Precedence ? "precedence" : "conflict");
    d.n_classes = 2;
    d.examples.reserve(opts.size);
    for (std::size_t i = 0; i < opts.size; ++i) {
        const std::size_t len = length(rng);
        Example e;
        if (fam == Family::Precedence) {
            e.tokens = scatter(rng, len, one_two(rng), one_two(rng), opts.vocab_size);
            const auto fs = std::find_if(e.tokens.begin(), e.tokens.end(), is_s_token);
            const auto ft = std::find_if(e.tokens.begin(), e.tokens.end(), is_t_token);
            e.label = fs < ft ? 1 : 0;
        } else {
            const std::size_t s = s_count(rng);
            const std::size_t t = coin(rng) ? one_two(rng) : 0;
            e.tokens = scatter(rng, len, s, t, opts.vocab_size);
            const int parity = static_cast<int>(s % 2);
            e.label = fam == Family::Conflict && t > 0 ? 1 - parity : parity;
        }
        d.examples.push_back(std::move(e));
    }
    return d;
}

std::pair<Dataset, Dataset> split_by_length(const Dataset& d) {
    if (d.empty()) throw InvalidArgument("split_by_length: empty dataset");
    std::size_t total = 0, lo = d.examples.front().tokens.size(), hi = lo;
    for (const auto& e : d.examples) {
        total += e.tokens.size();
        lo = std::min(lo, e.tokens.size());
        hi = std::max(hi, e.tokens.size());
    }
    if (lo == hi) throw InvalidArgument("split_by_length: all sequences in '" + d.name + "' have length " +
                                        std::to_string(lo));
    const double mean = static_cast<double>(total) / static_cast<double>(d.size());
    Dataset shorter{d.name + "/short", d.n_classes, {}};
    Dataset longer{d.name + "/long", d.n_classes, {}};
    for (const auto& e : d.examples)
        (static_cast<double>(e.tokens.size()) < mean ? shorter : longer).examples.push_back(e);
    return {std::move(shorter), std::move(longer)};
}

std::vector<int> artificial_split(const Tensor& embeddings, std::uint64_t seed) {
    KMeansResult km = kmeans(embeddings, 2, seed);
    std::size_t n1 = 0;
    for (int a : km.assignment) n1 += a == 1 ? 1 : 0;
    const std::size_t n0 = km.assignment.size() - n1;
    const bool swap = n1 > n0 || (n1 == n0 && km.assignment[0] == 1);
    if (swap)
        for (auto& a : km.assignment) a = 1 - a;
    return km.assignment;
}

DataSplit train_test_split(const Dataset& d, std::uint64_t seed, double train_fraction) {
    if (d.size() < 2) throw InvalidArgument("train_test_split: '" + d.name + "' needs at least 2 examples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidArgument("train_test_split: train_fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(d.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, d.size() - 1);
    DataSplit s{{d.name + "/train", d.n_classes, {}}, {d.name + "/test", d.n_classes, {}}};
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? s.train : s.test).examples.push_back(d.examples[idx[i]]);
    return s;
}

TaskPair make_task_pair(const ShiftSpec& spec, const DatasetRegistry& datasets, const Embedder& embedder) {
    auto lookup = [&](const std::string& name) -> const Dataset& {
        const auto it = datasets.find(name);
        if (it == datasets.end()) throw InvalidArgument("pair '" + spec.name + "': unknown dataset '" + name + "'");
        return it->second;
    };
    const std::size_t want = spec.kind == ShiftKind::DatasetPair ? 2 : 1;
    if (spec.sources.size() != want)
        throw InvalidArgument("pair '" + spec.name + "': " + std::string(shift_kind_name(spec.kind)) + " shift takes " +
                              std::to_string(want) + " source dataset(s)");

    Dataset orig, shifted;
    switch (spec.kind) {
    case ShiftKind::DatasetPair:
        orig = lookup(spec.sources[0]);
        shifted = lookup(spec.sources[1]);
        break;
    case ShiftKind::SentenceLength:
        std::tie(orig, shifted) = split_by_length(lookup(spec.sources[0]));
        break;
    case ShiftKind::Artificial: {
        if (!embedder) throw InvalidArgument("pair '" + spec.name + "': artificial shift needs an embedding model");
        const Dataset& src = lookup(spec.sources[0]);
        TokenBatch batch;
        batch.reserve(src.size());
        for (const auto& e : src.examples) batch.push_back(e.tokens);
        const auto assign = artificial_split(embedder(batch), derive_seed(spec.seed, {0x6b6dULL}));
        orig = {src.name + "/cluster0", src.n_classes, {}};
        shifted = {src.name + "/cluster1", src.n_classes, {}};
        for (std::size_t i = 0; i < assign.size(); ++i)
            (assign[i] == 0 ? orig : shifted).examples.push_back(src.examples[i]);
        break;
    }
    }
    TaskPair p;
    p.name = spec.name;
    p.original = train_test_split(orig, derive_seed(spec.seed, {1}));
    p.shifted = train_test_split(shifted, derive_seed(spec.seed, {2}));
    return p;
}

Dataset load_tsv(std::istream& is, std::string name, std::size_t vocab_size) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(name + ": missing TSV header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int tok_col = -1, lab_col = -1, n_cols = 0;
    {
        std::istringstream hs(line);
        std::string col;
        while (std::getline(hs, col, '\t')) {
            if (col == "tokens") tok_col = n_cols;
            if (col == "label") lab_col = n_cols;
            ++n_cols;
        }
    }
    if (tok_col < 0 || lab_col < 0) throw ConfigError(name + ": header must name 'tokens' and 'label' columns");

    Dataset d;
    d.name = std::move(name);
    int max_label = 1;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, '\t')) cols.push_back(c);
        if (static_cast<int>(cols.size()) != n_cols)
            throw ConfigError(d.name + ":" + std::to_string(lineno) + ": expected " + std::to_string(n_cols) +
                              " columns");
        Example e;
        std::istringstream ts(cols[static_cast<std::size_t>(tok_col)]);
        std::string t;
        while (ts >> t) {
            int v = 0;
            const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
            if (r.ec != std::errc() || r.ptr != t.data() + t.size())
                throw ConfigError(d.name + ":" + std::to_string(lineno) + ": bad token '" + t + "'");
            if (v < 1 || static_cast<std::size_t>(v) >= vocab_size)
                throw ConfigError(d.name + ":" + std::to_string(lineno) + ": token " + t + " outside [1, " +
                                  std::to_string(vocab_size) + ")");
            e.tokens.push_back(v);
        }
        if (e.tokens.empty()) throw ConfigError(d.name + ":" + std::to_string(lineno) + ": empty token list");
        const auto& ls2 = cols[static_cast<std::size_t>(lab_col)];
        const auto r = std::from_chars(ls2.data(), ls2.data() + ls2.size(), e.label);
        if (r.ec != std::errc() || r.ptr != ls2.data() + ls2.size() || e.label < 0)
            throw ConfigError(d.name + ":" + std::to_string(lineno) + ": bad label '" + ls2 + "'");
        max_label = std::max(max_label, e.label);
        d.examples.push_back(std::move(e));
    }
    if (d.empty()) throw ConfigError(d.name + ": no examples");
    d.n_classes = static_cast<std::size_t>(max_label) + 1;
    return d;
}

Dataset load_tsv(const std::filesystem::path& path, std::size_t vocab_size) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file " + path.string());
    return load_tsv(in, path.stem().string(), vocab_size);
}

void write_tsv(std::ostream& os, const Dataset& d) {
    os << "tokens\tlabel\n";
    for (const auto& e : d.examples) {
        for (std::size_t i = 0; i < e.tokens.size(); ++i) os << (i ? " " : "") << e.tokens[i];
        os << '\t' << e.label << '\n';
    }
}

} // namespace forgetlab
