#include "forgetlab/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "forgetlab/error.hpp"
#include "forgetlab/random.hpp"

namespace forgetlab {

namespace {

constexpr std::size_t kEvalBatch = 128;
constexpr std::uint64_t kPhaseOne = 1, kPhaseTwo = 2;

void check_pair(const TaskPair& pair, const Model& model) {
    const auto& c = model.config();
    for (const Dataset* d : {&pair.original.train, &pair.original.test, &pair.shifted.train, &pair.shifted.test}) {
        if (d->empty()) throw InvalidArgument("pair '" + pair.name + "': split '" + d->name + "' is empty");
        d->validate(c.vocab_size);
        if (d->n_classes > c.n_classes)
            throw InvalidArgument("pair '" + pair.name + "': '" + d->name + "' has " + std::to_string(d->n_classes) +
                                  " classes but the head has " + std::to_string(c.n_classes));
        for (const auto& e : d->examples)
            if (e.tokens.size() > c.max_seq_len)
                throw InvalidArgument("pair '" + pair.name + "': '" + d->name + "' holds a sequence of length " +
                                      std::to_string(e.tokens.size()) + " > max_seq_len");
    }
}

} // namespace

void ProtocolConfig::validate() const {
    if (epochs_o < 1 || epochs_s < 1) throw InvalidArgument("protocol: epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("protocol: batch_size must be >= 1");
    if (fisher_samples < 1) throw InvalidArgument("protocol: fisher_samples must be >= 1");
    if (!(ewc_lambda >= 0.0)) throw InvalidArgument("protocol: ewc_lambda must be >= 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
        throw InvalidArgument("protocol: warmup_fraction must lie in (0, 1)");
}

std::string_view run_status_name(RunStatus s) { return s == RunStatus::Completed ? "completed" : "diverged"; }

double evaluate(const Model& model, const std::vector<Tensor>& head, const Dataset& d) {
    Model m = model;
    m.set_head(head);
    return evaluate(m, d);
}

double evaluate(const Model& model, const Dataset& d) {
    if (d.empty()) throw InvalidArgument("evaluate: dataset '" + d.name + "' is empty");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < d.size(); start += kEvalBatch) {
        const std::size_t end = std::min(d.size(), start + kEvalBatch);
        TokenBatch batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(d.examples[i].tokens);
        const Tensor logits = model.forward_classify(batch);
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits.at(i, j) > logits.at(i, arg)) arg = j;
            if (static_cast<int>(arg) == d.examples[start + i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

std::vector<double> train_phase(Model& model, AdamState& adam, const Dataset& data, const LrDistribution& lr,
                                std::size_t epochs, const ProtocolConfig& cfg, std::uint64_t stream,
                                const FisherState* fisher) {
    if (data.empty()) throw InvalidArgument("train_phase: dataset '" + data.name + "' is empty");
    const GroupMapping mapping = map_choices_to_layers(model.config().n_layers);
    const std::size_t bs = cfg.batch_size;
    const std::size_t steps_per_epoch = (data.size() + bs - 1) / bs;
    const std::size_t total = epochs * steps_per_epoch;

    std::vector<double> curve;
    std::vector<std::size_t> order(data.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, {stream, epoch}));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
            const std::size_t end = std::min(order.size(), start + bs);
            TokenBatch batch;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(data.examples[order[i]].tokens);
                labels.push_back(data.examples[order[i]].label);
            }
            Graph g;
            const auto bound = model.bind(g, true);
            const NodeId loss = g.cross_entropy(model.logits(g, bound, batch), std::move(labels));
            double value = g.value(loss).item();
            Gradients grads = g.backward(loss);
            std::vector<Tensor> flat;
            flat.reserve(bound.ids.size());
            for (auto id : bound.ids) flat.push_back(grads.take(id));
            if (fisher != nullptr && fisher->lambda != 0.0) {
                value += ewc_penalty(model.params(), *fisher);
                const auto pg = ewc_penalty_gradient(model.params(), *fisher);
                for (std::size_t i = 0; i < flat.size(); ++i)
                    for (std::size_t j = 0; j < flat[i].size(); ++j) flat[i][j] += pg[i][j];
            }
            if (!std::isfinite(value))
                throw NumericError("non-finite training loss at step " + std::to_string(step));
            adam_step(adam, model, flat, lr, mapping, step, total, cfg.warmup_fraction);
            epoch_loss += value * static_cast<double>(end - start);
        }
        curve.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return curve;
}

PhaseOneState run_phase_one(const TaskPair& pair, const ProtocolConfig& cfg, Model model) {
    cfg.validate();
    check_pair(pair, model);
    PhaseOneState st{std::move(model), {}, {}, 0.0, {}, false, {}};
    st.model.reset_head(derive_seed(cfg.seed, {kPhaseOne, 0x68ULL}));
    st.adam = AdamState(st.model.params());
    try {
        st.loss = train_phase(st.model, st.adam, pair.original.train, cfg.phase1_lr.value_or(cfg.lr), cfg.epochs_o,
                              cfg, kPhaseOne);
        st.p_o_before = evaluate(st.model, pair.original.test);
    } catch (const NumericError& e) {
        st.diverged = true;
        st.message = std::string("phase 1 diverged: ") + e.what();
    }
    st.head_o = st.model.head();
    return st;
}

ProtocolResult run_phase_two(const TaskPair& pair, const ProtocolConfig& cfg, PhaseOneState st) {
    cfg.validate();
    ProtocolResult r;
    r.loss_o = st.loss;
    r.p_o_before = st.p_o_before;
    if (st.diverged) {
        r.status = RunStatus::Diverged;
        r.message = st.message;
        r.p_o_before = 0.0;
        return r;
    }
    try {
        std::optional<FisherState> fisher;
        if (cfg.ewc_enabled) {
            TokenBatch anchor;
            for (const auto& e : pair.original.train.examples) anchor.push_back(e.tokens);
            fisher = estimate_fisher(st.model, anchor, cfg.fisher_samples, cfg.ewc_lambda,
                                     derive_seed(cfg.seed, {kPhaseTwo, 0x66ULL}));
        }
        st.model.reset_head(derive_seed(cfg.seed, {kPhaseTwo, 0x68ULL}));
        if (!cfg.retain_moments) st.adam = AdamState(st.model.params());
        r.loss_s = train_phase(st.model, st.adam, pair.shifted.train, cfg.lr, cfg.epochs_s, cfg, kPhaseTwo,
                               fisher ? &*fisher : nullptr);
        r.p_s = evaluate(st.model, pair.shifted.test);
        r.p_o = evaluate(st.model, st.head_o, pair.original.test);
        r.reward = r.p_o + r.p_s;
    } catch (const NumericError& e) {
        r = ProtocolResult{};
        r.status = RunStatus::Diverged;
        r.loss_o = st.loss;
        r.message = std::string("phase 2 diverged: ") + e.what();
    }
    return r;
}

ProtocolResult run_sequential(const TaskPair& pair, const ProtocolConfig& cfg, Model model) {
    return run_phase_two(pair, cfg, run_phase_one(pair, cfg, std::move(model)));
}

} // namespace forgetlab
