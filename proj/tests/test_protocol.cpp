#include <doctest.h>

#include <algorithm>

#include "forgetlab/error.hpp"
#include "forgetlab/protocol.hpp"
#include "support.hpp"

using namespace forgetlab;

namespace {

ProtocolConfig quick(std::size_t epochs = 2) {
    ProtocolConfig c;
    c.epochs_o = epochs;
    c.epochs_s = epochs;
    return c;
}

Dataset constant_labels(int label, std::size_t n) {
    Dataset d{"const", 2, {}};
    for (std::size_t i = 0; i < n; ++i) d.examples.push_back({{13 + static_cast<int>(i % 40), 20, 30}, label});
    return d;
}

TaskPair self_pair(std::uint64_t seed) {
    SynthOptions o;
    o.size = 1500;
    o.max_s_count = 1;
    DatasetRegistry reg{{"A", synth_task("A", seed, o)}};
    return make_task_pair({"self", ShiftKind::DatasetPair, {"A", "A"}, seed}, reg);
}

} // namespace

TEST_SUITE("protocol") {

TEST_CASE("config validation") {
    ProtocolConfig c;
    c.epochs_s = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK_THROWS_AS(run_sequential(fltest::tiny_pair(1), c, Model::init(fltest::tiny_model())), InvalidArgument);
    c = ProtocolConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = ProtocolConfig{};
    c.ewc_lambda = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK(ProtocolConfig{}.epochs_o == 5);
    CHECK(ProtocolConfig{}.batch_size == 16);
    CHECK(ProtocolConfig{}.seed == 999);
}

TEST_CASE("evaluate breaks ties toward class 0 and ignores order") {
    Model m = Model::init(fltest::tiny_model());
    std::vector<Tensor> zero_head = m.head();
    for (auto& t : zero_head)
        for (auto& v : t.data()) v = 0.0;
    CHECK(evaluate(m, zero_head, constant_labels(0, 10)) == 1.0);
    CHECK(evaluate(m, zero_head, constant_labels(1, 10)) == 0.0);
    CHECK_THROWS_AS(evaluate(m, Dataset{}), InvalidArgument);

    const TaskPair p = fltest::tiny_pair(3, 400);
    Dataset shuffled = p.original.test;
    std::reverse(shuffled.examples.begin(), shuffled.examples.end());
    CHECK(evaluate(m, shuffled) == evaluate(m, p.original.test));
}

TEST_CASE("random heads score near chance on balanced data") {
    const TaskPair p = fltest::tiny_pair(5, 1000);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Model m = Model::init(fltest::tiny_model(seed));
        m.reset_head(seed * 31);
        const double acc = evaluate(m, p.original.test);
        CAPTURE(seed);
        CHECK(acc >= 0.35);
        CHECK(acc <= 0.65);
    }
}

TEST_CASE("a single training example is memorized") {
    Model m = Model::init(fltest::tiny_model());
    m.reset_head(1);
    Dataset one{"one", 2, {{{1, 20, 21, 22}, 1}}};
    AdamState adam(m.params());
    ProtocolConfig c;
    const auto curve = train_phase(m, adam, one, LrDistribution::flat(1e-2), 30, c, 0);
    CHECK(curve.size() == 30);
    CHECK(curve.back() < curve.front());
    CHECK(evaluate(m, one) == 1.0);
}

TEST_CASE("runs are deterministic and the reward is the exact sum") {
    const TaskPair p = fltest::tiny_pair(2);
    const ProtocolResult a = run_sequential(p, quick(), Model::init(fltest::tiny_model()));
    const ProtocolResult b = run_sequential(p, quick(), Model::init(fltest::tiny_model()));
    CHECK(a == b);
    CHECK(a.status == RunStatus::Completed);
    CHECK(a.reward == a.p_o + a.p_s);
    CHECK(a.loss_o.size() == 2);
    CHECK(a.loss_s.size() == 2);
    for (double v : {a.p_o, a.p_s, a.p_o_before}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("phase split matches the one-call run") {
    const TaskPair p = fltest::tiny_pair(4);
    const ProtocolConfig c = quick();
    const PhaseOneState st = run_phase_one(p, c, Model::init(fltest::tiny_model()));
    CHECK(run_phase_two(p, c, st) == run_sequential(p, c, Model::init(fltest::tiny_model())));
}

TEST_CASE("zero EWC importance reproduces the plain run") {
    const TaskPair p = fltest::tiny_pair(6);
    ProtocolConfig c = quick();
    const ProtocolResult plain = run_sequential(p, c, Model::init(fltest::tiny_model()));
    c.ewc_enabled = true;
    c.ewc_lambda = 0.0;
    CHECK(run_sequential(p, c, Model::init(fltest::tiny_model())) == plain);
    c.ewc_lambda = 675.0;
    const ProtocolResult ewc = run_sequential(p, c, Model::init(fltest::tiny_model()));
    CHECK(ewc.status == RunStatus::Completed);
    CHECK_FALSE(ewc.loss_s == plain.loss_s);
    CHECK(ewc.loss_o == plain.loss_o);
}

TEST_CASE("an exploding learning rate ends as a diverged run with zero reward") {
    const TaskPair p = fltest::tiny_pair(7);
    ProtocolConfig c = quick(1);
    c.lr = LrDistribution::flat(1e150);
    const ProtocolResult r = run_sequential(p, c, Model::init(fltest::tiny_model()));
    CHECK(r.status == RunStatus::Diverged);
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.message.empty());
}

TEST_CASE("a dataset paired with itself scores alike on both sides") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const TaskPair p = self_pair(seed);
        ProtocolConfig c = quick(4);
        c.lr = LrDistribution::flat(3e-3);
        const ProtocolResult r = run_sequential(p, c, Model::init(fltest::tiny_model(seed)));
        CAPTURE(seed);
        CAPTURE(r.p_o);
        CAPTURE(r.p_s);
        CHECK(std::fabs(r.p_o - r.p_s) < 0.05);
    }
}

TEST_CASE("sequences longer than the model limit are rejected up front") {
    TaskPair p = fltest::tiny_pair(1);
    p.shifted.test.examples[0].tokens.assign(17, 20);
    CHECK_THROWS_AS(run_sequential(p, quick(1), Model::init(fltest::tiny_model())), InvalidArgument);
}

} // TEST_SUITE
