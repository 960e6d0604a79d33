#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "forgetlab/gradcheck.hpp"

namespace fltest {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(shape);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

namespace {

// Relu inputs stay away from the kink so central differences are clean.
Tensor off_kink(const Shape& shape, Rng& rng) {
    Tensor t = random_tensor(shape, rng);
    for (auto& v : t.data()) v = v >= 0.0 ? v + 0.1 : v - 0.1;
    return t;
}

double check(std::vector<Tensor> inputs, Rng& rng,
             const std::function<NodeId(Graph&, std::span<const NodeId>)>& op) {
    Graph probe;
    std::vector<NodeId> ids;
    for (const auto& t : inputs) ids.push_back(probe.leaf(t));
    const Shape out_shape = probe.value(op(probe, ids)).shape();
    const Tensor weights = random_tensor(out_shape, rng);
    MultiLossBuilder f = [&](Graph& g, std::span<const NodeId> pts) {
        const NodeId y = op(g, pts);
        return g.sum(g.mul(y, g.leaf(weights, false)));
    };
    return finite_difference_check(f, inputs, 1e-5);
}

} // namespace

std::vector<OpCase> op_gradient_cases() {
    std::vector<OpCase> cases;
    auto add = [&](OpKind k, std::function<double(Rng&)> body) {
        cases.push_back({k, [body](std::uint64_t seed) {
                             Rng rng(seed);
                             return body(rng);
                         }});
    };
    add(OpKind::Leaf, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng)}, rng, [](Graph&, std::span<const NodeId> p) { return p[0]; });
    });
    add(OpKind::MatMul, [](Rng& rng) {
        return check({random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.matmul(p[0], p[1]); });
    });
    add(OpKind::Add, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.add(p[0], p[1]); });
    });
    add(OpKind::Mul, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.mul(p[0], p[1]); });
    });
    add(OpKind::BiasAdd, [](Rng& rng) {
        return check({random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.bias_add(p[0], p[1]); });
    });
    add(OpKind::Relu, [](Rng& rng) {
        return check({off_kink({3, 5}, rng)}, rng, [](Graph& g, std::span<const NodeId> p) { return g.relu(p[0]); });
    });
    add(OpKind::Gelu, [](Rng& rng) {
        return check({random_tensor({3, 5}, rng, 2.0)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.gelu(p[0]); });
    });
    add(OpKind::Softmax, [](Rng& rng) {
        return check({random_tensor({2, 3, 5}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.softmax(p[0]); });
    });
    add(OpKind::LayerNorm, [](Rng& rng) {
        return check({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.layernorm(p[0], p[1], p[2]); });
    });
    add(OpKind::Embedding, [](Rng& rng) {
        std::uniform_int_distribution<int> id(0, 6);
        std::vector<int> ids(6);
        for (auto& i : ids) i = id(rng);
        ids[1] = ids[0]; // a repeated row accumulates
        return check({random_tensor({7, 4}, rng)}, rng,
                     [ids](Graph& g, std::span<const NodeId> p) { return g.embedding(p[0], ids, {2, 3}); });
    });
    add(OpKind::Mean, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng)}, rng, [](Graph& g, std::span<const NodeId> p) { return g.mean(p[0]); });
    });
    add(OpKind::Sum, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng)}, rng, [](Graph& g, std::span<const NodeId> p) { return g.sum(p[0]); });
    });
    add(OpKind::CrossEntropy, [](Rng& rng) {
        std::uniform_int_distribution<int> lab(0, 2);
        std::vector<int> labels(4);
        for (auto& l : labels) l = lab(rng);
        return check({random_tensor({4, 3}, rng, 2.0)}, rng,
                     [labels](Graph& g, std::span<const NodeId> p) { return g.cross_entropy(p[0], labels); });
    });
    add(OpKind::Scale, [](Rng& rng) {
        return check({random_tensor({3, 4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.scale(p[0], -0.37); });
    });
    add(OpKind::BatchMatMul, [](Rng& rng) {
        const double plain = check({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)}, rng,
                                   [](Graph& g, std::span<const NodeId> p) { return g.batch_matmul(p[0], p[1], false); });
        const double trans = check({random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)}, rng,
                                   [](Graph& g, std::span<const NodeId> p) { return g.batch_matmul(p[0], p[1], true); });
        return std::max(plain, trans);
    });
    add(OpKind::SplitHeads, [](Rng& rng) {
        return check({random_tensor({2, 3, 4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.split_heads(p[0], 2); });
    });
    add(OpKind::MergeHeads, [](Rng& rng) {
        return check({random_tensor({4, 3, 2}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.merge_heads(p[0], 2); });
    });
    add(OpKind::GatherRows, [](Rng& rng) {
        return check({random_tensor({2, 3, 4}, rng)}, rng,
                     [](Graph& g, std::span<const NodeId> p) { return g.gather_rows(p[0], {2, 0}); });
    });
    return cases;
}

double model_gradient_error(const ModelConfig& cfg, std::uint64_t seed, std::size_t coords) {
    ModelConfig c = cfg;
    c.seed = seed;
    const Model model = Model::init(c);
    Rng rng(derive_seed(seed, {0x6763}));
    std::uniform_int_distribution<int> tok(1, static_cast<int>(c.vocab_size) - 1);
    std::uniform_int_distribution<std::size_t> len(2, std::min<std::size_t>(c.max_seq_len, 6));
    std::uniform_int_distribution<int> lab(0, static_cast<int>(c.n_classes) - 1);
    TokenBatch batch(3);
    std::vector<int> labels;
    for (auto& s : batch) {
        s.resize(len(rng));
        for (auto& t : s) t = tok(rng);
        labels.push_back(lab(rng));
    }
    std::vector<Tensor> points;
    for (const auto& p : model.params()) points.push_back(p.value);
    MultiLossBuilder f = [&](Graph& g, std::span<const NodeId> ids) {
        BoundParams bp{std::vector<NodeId>(ids.begin(), ids.end())};
        return g.cross_entropy(model.logits(g, bp, batch), labels);
    };
    return finite_difference_check(f, points, 1e-5, {coords, seed});
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    std::map<std::pair<int, int>, double> nij;
    std::map<int, double> ai, bj;
    for (std::size_t i = 0; i < a.size(); ++i) {
        nij[{a[i], b[i]}] += 1;
        ai[a[i]] += 1;
        bj[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sa = 0, sb = 0;
    for (const auto& [k, v] : nij) index += c2(v);
    for (const auto& [k, v] : ai) sa += c2(v);
    for (const auto& [k, v] : bj) sb += c2(v);
    const double expected = sa * sb / c2(n);
    const double max_index = (sa + sb) / 2;
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

std::array<double, kNumChoices> eq1_oracle(const std::vector<Trial>& trials, double b) {
    using Big = boost::multiprecision::cpp_dec_float_50;
    std::array<double, kNumChoices> out{};
    for (std::size_t c = 0; c < kNumChoices; ++c) {
        Big num = 0, den = 0;
        for (const auto& t : trials) {
            const Big w = boost::multiprecision::pow(Big(b), -Big(static_cast<double>(*t.rank)));
            num += w * boost::multiprecision::log(Big(t.rates[c]));
            den += w;
        }
        out[c] = static_cast<double>(boost::multiprecision::exp(num / den));
    }
    return out;
}

std::vector<Trial> random_ranked_trials(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(-7.0, -3.0);
    std::vector<Trial> ts(n);
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) ranks[i] = i;
    std::shuffle(ranks.begin(), ranks.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, kNumChoices> r{};
        for (auto& x : r) x = std::pow(10.0, u(rng));
        ts[i].id = i;
        ts[i].rates = LrDistribution(r);
        ts[i].resource = 27;
        ts[i].rank = ranks[i];
    }
    return ts;
}

TaskPair tiny_pair(std::uint64_t seed, std::size_t size) {
    SynthOptions o;
    o.size = size;
    o.max_s_count = 1;
    DatasetRegistry reg;
    reg["A"] = synth_task("A", seed, o);
    reg["C"] = synth_task("C", seed, o);
    return make_task_pair({"conflict", ShiftKind::DatasetPair, {"A", "C"}, seed}, reg);
}

ModelConfig tiny_model(std::uint64_t seed) {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.d_ff = 32;
    c.seed = seed;
    return c;
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

} // namespace fltest
