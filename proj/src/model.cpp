#include "forgetlab/model.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "forgetlab/error.hpp"
#include "forgetlab/random.hpp"

namespace forgetlab {

namespace {

constexpr std::size_t kEmbedParams = 4;
constexpr std::size_t kLayerParams = 16;

// Offsets inside one encoder layer.
enum LayerSlot : std::size_t {
    kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn1G, kLn1B, kW1, kB1, kW2, kB2, kLn2G, kLn2B
};

constexpr double kMaskedScore = -1e9;

} // namespace

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw InvalidArgument(std::string("model config: ") + name + " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(n_layers, "n_layers");
    positive(d_ff, "d_ff");
    positive(n_classes, "n_classes");
    if (vocab_size < 2) throw InvalidArgument("model config: vocab_size must leave room beyond the [CLS] id");
    if (d_model % n_heads != 0)
        throw InvalidArgument("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                              std::to_string(n_heads));
}

std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t embed = c.vocab_size * d + (c.max_seq_len + 1) * d + 2 * d;
    const std::size_t layer = 4 * (d * d + d) + 2 * d * c.d_ff + c.d_ff + d + 4 * d;
    const std::size_t head = d * c.n_classes + c.n_classes;
    return embed + c.n_layers * layer + head;
}

Model Model::init(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    const std::size_t d = config.d_model;
    Rng rng(derive_seed(config.seed, {0x6d6f64656cULL}));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));

    auto random = [&](std::string name, Shape shape) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = normal(rng);
        m.params_.push_back({std::move(name), std::move(t)});
    };
    auto constant = [&](std::string name, Shape shape, double v) {
        m.params_.push_back({std::move(name), Tensor(std::move(shape), v)});
    };

    random("embed.token", {config.vocab_size, d});
    random("embed.position", {config.max_seq_len + 1, d});
    constant("embed.ln.gamma", {d}, 1.0);
    constant("embed.ln.beta", {d}, 0.0);
    for (std::size_t l = 1; l <= config.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        random(p + "attn.wq", {d, d});
        constant(p + "attn.bq", {d}, 0.0);
        random(p + "attn.wk", {d, d});
        constant(p + "attn.bk", {d}, 0.0);
        random(p + "attn.wv", {d, d});
        constant(p + "attn.bv", {d}, 0.0);
        random(p + "attn.wo", {d, d});
        constant(p + "attn.bo", {d}, 0.0);
        constant(p + "ln1.gamma", {d}, 1.0);
        constant(p + "ln1.beta", {d}, 0.0);
        random(p + "ffn.w1", {d, config.d_ff});
        constant(p + "ffn.b1", {config.d_ff}, 0.0);
        random(p + "ffn.w2", {config.d_ff, d});
        constant(p + "ffn.b2", {d}, 0.0);
        constant(p + "ln2.gamma", {d}, 1.0);
        constant(p + "ln2.beta", {d}, 0.0);
    }
    constant("head.w", {d, config.n_classes}, 0.0);
    constant("head.b", {config.n_classes}, 0.0);
    m.reset_head(derive_seed(config.seed, {0x68656164ULL}));
    return m;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

std::size_t Model::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw InvalidArgument("unknown parameter '" + name + "'");
}

std::string Model::group_of(const std::string& name) { return name.substr(0, name.find('.')); }

BoundParams Model::bind(Graph& g, bool requires_grad) const {
    BoundParams b;
    b.ids.reserve(params_.size());
    for (const auto& p : params_) b.ids.push_back(g.leaf(p.value, requires_grad));
    return b;
}

void Model::validate_batch(const TokenBatch& batch) const {
    if (batch.empty()) throw InvalidArgument("empty token batch");
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& seq = batch[s];
        if (seq.size() > config_.max_seq_len)
            throw InvalidArgument("sequence " + std::to_string(s) + " has length " + std::to_string(seq.size()) +
                                  " > max_seq_len " + std::to_string(config_.max_seq_len));
        for (std::size_t i = 0; i < seq.size(); ++i)
            if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= config_.vocab_size)
                throw InvalidArgument("token id " + std::to_string(seq[i]) + " out of range [0, " +
                                      std::to_string(config_.vocab_size) + ") at sequence " + std::to_string(s) +
                                      " position " + std::to_string(i));
    }
}

NodeId Model::encode(Graph& g, const BoundParams& p, const TokenBatch& batch) const {
    validate_batch(batch);
    const std::size_t b = batch.size();
    const std::size_t d = config_.d_model, h = config_.n_heads;
    std::size_t longest = 0;
    bool ragged = false;
    for (const auto& s : batch) {
        if (!batch.empty() && s.size() != batch.front().size()) ragged = true;
        longest = std::max(longest, s.size());
    }
    const std::size_t t = longest + 1;

    std::vector<int> ids(b * t, kClsToken), pos(b * t);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < batch[i].size(); ++j) ids[i * t + j + 1] = batch[i][j];
        for (std::size_t j = 0; j < t; ++j) pos[i * t + j] = static_cast<int>(j);
    }

    NodeId mask = 0;
    if (ragged) {
        Tensor m({b * h, t, t});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t hh = 0; hh < h; ++hh)
                for (std::size_t q = 0; q < t; ++q)
                    for (std::size_t k = batch[i].size() + 1; k < t; ++k) m[((i * h + hh) * t + q) * t + k] = kMaskedScore;
        mask = g.leaf(std::move(m), false);
    }

    const auto& P = p.ids;
    NodeId x = g.add(g.embedding(P[0], std::move(ids), {b, t}), g.embedding(P[1], std::move(pos), {b, t}));
    x = g.layernorm(x, P[2], P[3]);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / h));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const NodeId* L = P.data() + kEmbedParams + l * kLayerParams;
        const NodeId q = g.split_heads(g.bias_add(g.matmul(x, L[kWq]), L[kBq]), h);
        const NodeId k = g.split_heads(g.bias_add(g.matmul(x, L[kWk]), L[kBk]), h);
        const NodeId v = g.split_heads(g.bias_add(g.matmul(x, L[kWv]), L[kBv]), h);
        NodeId scores = g.scale(g.batch_matmul(q, k, true), inv_sqrt);
        if (ragged) scores = g.add(scores, mask);
        const NodeId ctx = g.merge_heads(g.batch_matmul(g.softmax(scores), v, false), h);
        const NodeId attn = g.bias_add(g.matmul(ctx, L[kWo]), L[kBo]);
        x = g.layernorm(g.add(x, attn), L[kLn1G], L[kLn1B]);
        const NodeId hid = g.gelu(g.bias_add(g.matmul(x, L[kW1]), L[kB1]));
        const NodeId ff = g.bias_add(g.matmul(hid, L[kW2]), L[kB2]);
        x = g.layernorm(g.add(x, ff), L[kLn2G], L[kLn2B]);
    }
    return x;
}

NodeId Model::cls(Graph& g, const BoundParams& p, const TokenBatch& batch) const {
    const NodeId x = encode(g, p, batch);
    return g.gather_rows(x, std::vector<int>(batch.size(), 0));
}

NodeId Model::logits(Graph& g, const BoundParams& p, const TokenBatch& batch) const {
    const std::size_t head = params_.size() - 2;
    return g.bias_add(g.matmul(cls(g, p, batch), p.ids[head]), p.ids[head + 1]);
}

Tensor Model::forward_classify(const TokenBatch& batch) const {
    Graph g;
    const auto p = bind(g, false);
    return g.value(logits(g, p, batch));
}

Tensor Model::extract_cls_embedding(const TokenBatch& batch) const {
    Graph g;
    const auto p = bind(g, false);
    return g.value(cls(g, p, batch));
}

void Model::reset_head(std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config_.d_model)));
    const std::size_t head = params_.size() - 2;
    for (auto& v : params_[head].value.data()) v = normal(rng);
    params_[head + 1].value.fill(0.0);
}

std::vector<Tensor> Model::head() const {
    const std::size_t head = params_.size() - 2;
    return {params_[head].value, params_[head + 1].value};
}

void Model::set_head(const std::vector<Tensor>& head) {
    const std::size_t idx = params_.size() - 2;
    if (head.size() != 2 || head[0].shape() != params_[idx].value.shape() ||
        head[1].shape() != params_[idx + 1].value.shape())
        throw ShapeError("set_head: head tensors do not match the model's head shape");
    params_[idx].value = head[0];
    params_[idx + 1].value = head[1];
}

void Model::save(std::ostream& os) const {
    const auto& c = config_;
    os << "forgetlab-checkpoint 1\n";
    os << "config " << c.vocab_size << ' ' << c.max_seq_len << ' ' << c.d_model << ' ' << c.n_heads << ' '
       << c.n_layers << ' ' << c.d_ff << ' ' << c.n_classes << ' ' << c.seed << '\n';
    os << "params " << params_.size() << '\n';
    char buf[32];
    for (const auto& p : params_) {
        os << p.name << ' ' << p.value.rank();
        for (auto dim : p.value.shape()) os << ' ' << dim;
        os << '\n';
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", p.value[i]);
            os << (i ? " " : "") << buf;
        }
        os << '\n';
    }
}

Model Model::load(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "forgetlab-checkpoint" || version != 1)
        throw ConfigError("checkpoint: bad header");
    ModelConfig c;
    if (!(is >> tag) || tag != "config" ||
        !(is >> c.vocab_size >> c.max_seq_len >> c.d_model >> c.n_heads >> c.n_layers >> c.d_ff >> c.n_classes >>
          c.seed))
        throw ConfigError("checkpoint: bad config line");
    Model m = Model::init(c);
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "params" || count != m.params_.size())
        throw ConfigError("checkpoint: parameter count does not match the configuration");
    for (auto& p : m.params_) {
        std::string name;
        std::size_t rank = 0;
        if (!(is >> name >> rank) || name != p.name || rank != p.value.rank())
            throw ConfigError("checkpoint: expected parameter '" + p.name + "'");
        for (std::size_t i = 0; i < rank; ++i) {
            std::size_t dim = 0;
            if (!(is >> dim) || dim != p.value.dim(i)) throw ConfigError("checkpoint: shape mismatch for " + p.name);
        }
        for (auto& v : p.value.data()) {
            std::string tok;
            if (!(is >> tok)) throw ConfigError("checkpoint: truncated values for " + p.name);
            v = std::strtod(tok.c_str(), nullptr);
        }
    }
    return m;
}

} // namespace forgetlab
