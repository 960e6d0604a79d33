#include <doctest.h>

#include <sstream>

#include "forgetlab/error.hpp"
#include "forgetlab/kmeans.hpp"
#include "forgetlab/shift_lab.hpp"
#include "support.hpp"

using namespace forgetlab;

namespace {

struct Blobs {
    Tensor points;
    std::vector<int> membership;
};

Blobs two_blobs(std::size_t per_blob, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t d = 5;
    Blobs b{Tensor({2 * per_blob, d}), {}};
    for (std::size_t i = 0; i < 2 * per_blob; ++i) {
        const int which = i % 2 == 0 ? 0 : 1;
        b.membership.push_back(which);
        for (std::size_t j = 0; j < d; ++j) b.points.at(i, j) = (which ? 10.0 : -10.0) + noise(rng);
    }
    return b;
}

Dataset with_lengths(const std::vector<std::size_t>& lens) {
    Dataset d{"lens", 2, {}};
    for (std::size_t i = 0; i < lens.size(); ++i) d.examples.push_back({std::vector<int>(lens[i], 20), static_cast<int>(i % 2)});
    return d;
}

} // namespace

TEST_SUITE("kmeans") {

TEST_CASE("separated blobs are recovered exactly") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Blobs b = two_blobs(30, seed);
        const KMeansResult r = kmeans(b.points, 2, seed);
        CHECK(fltest::adjusted_rand_index(r.assignment, b.membership) == doctest::Approx(1.0));
        CHECK(r.converged);
    }
}

TEST_CASE("objective never increases across iterations") {
    Rng rng(4);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Tensor pts = fltest::random_tensor({200, 3}, rng);
        const KMeansResult r = kmeans(pts, 4, seed);
        REQUIRE(r.objective.size() >= 2);
        for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
    }
}

TEST_CASE("identical points leave a cluster empty and still terminate") {
    const Tensor pts({12, 3}, 2.5);
    const KMeansResult r = kmeans(pts, 2, 7);
    CHECK(r.assignment.size() == 12);
    CHECK(r.iterations <= 100);
    CHECK(r.objective.back() == 0.0);
}

TEST_CASE("same input and seed give the same assignment; bad inputs throw") {
    Rng rng(8);
    const Tensor pts = fltest::random_tensor({50, 4}, rng);
    CHECK(kmeans(pts, 3, 11).assignment == kmeans(pts, 3, 11).assignment);
    CHECK_THROWS_AS(kmeans(pts, 0, 1), InvalidArgument);
    CHECK_THROWS_AS(kmeans(Tensor({2, 2}, 0.0), 3, 1), InvalidArgument);
    CHECK_THROWS_AS(kmeans(Tensor({8}, 0.0), 2, 1), ShapeError);
}

} // TEST_SUITE

TEST_SUITE("shift_lab") {

TEST_CASE("generators are deterministic and follow their label rules") {
    SynthOptions o;
    o.size = 300;
    o.min_len = 8;
    o.max_len = 15;
    for (const char* fam : {"parity", "precedence", "conflict"}) {
        CAPTURE(fam);
        const Dataset a = synth_task(fam, 7, o), b = synth_task(fam, 7, o);
        CHECK(a == b);
        CHECK_FALSE(a == synth_task(fam, 8, o));
        CHECK_NOTHROW(a.validate(64));
        for (const auto& e : a.examples) {
            const auto s = std::count_if(e.tokens.begin(), e.tokens.end(), is_s_token);
            const bool t = std::any_of(e.tokens.begin(), e.tokens.end(), is_t_token);
            CHECK(e.tokens.size() >= 8);
            CHECK(e.tokens.size() <= 15);
            if (std::string(fam) == "parity") {
                CHECK(e.label == s % 2);
                if (s == 0) CHECK(e.label == 0);
            } else if (std::string(fam) == "conflict") {
                CHECK(e.label == (t ? 1 - s % 2 : s % 2));
            } else {
                const auto fs = std::find_if(e.tokens.begin(), e.tokens.end(), is_s_token);
                const auto ft = std::find_if(e.tokens.begin(), e.tokens.end(), is_t_token);
                CHECK(e.label == (fs < ft ? 1 : 0));
            }
        }
    }
    CHECK(synth_task("A", 7, o) == synth_task("parity", 7, o));
    CHECK_THROWS_AS(synth_task("D", 7, o), InvalidArgument);
    o.max_s_count = 7;
    CHECK_THROWS_AS(synth_task("A", 7, o), InvalidArgument);
}

TEST_CASE("every family is balanced within 45-55% over 10 seeds") {
    SynthOptions o;
    o.size = 2000;
    for (const char* fam : {"parity", "precedence", "conflict"})
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            CAPTURE(fam);
            CAPTURE(seed);
            const Dataset d = synth_task(fam, seed, o);
            double ones = 0;
            for (const auto& e : d.examples) ones += e.label;
            const double frac = ones / static_cast<double>(d.size());
            CHECK(frac >= 0.45);
            CHECK(frac <= 0.55);
        }
}

TEST_CASE("length split at the mean") {
    const auto [o, s] = split_by_length(with_lengths({2, 2, 4, 4}));
    CHECK(o.size() == 2);
    CHECK(s.size() == 2);
    for (const auto& e : o.examples) CHECK(e.tokens.size() == 2);
    CHECK_THROWS_AS(split_by_length(with_lengths({3, 3, 3})), InvalidArgument);
    CHECK_THROWS_AS(split_by_length(Dataset{}), InvalidArgument);

    SynthOptions opt;
    opt.size = 500;
    opt.min_len = 4;
    opt.max_len = 16;
    opt.max_s_count = 2;
    const Dataset d = synth_task("B", 3, opt);
    const auto [lo, hi] = split_by_length(d);
    CHECK(lo.size() + hi.size() == d.size());
    CHECK(split_by_length(d).first == lo);
}

TEST_CASE("pair ordering matters and specs are reproducible") {
    SynthOptions o;
    o.size = 100;
    DatasetRegistry reg{{"A", synth_task("A", 1, o)}, {"B", synth_task("B", 1, o)}};
    const TaskPair ab = make_task_pair({"ab", ShiftKind::DatasetPair, {"A", "B"}, 5}, reg);
    const TaskPair ba = make_task_pair({"ba", ShiftKind::DatasetPair, {"B", "A"}, 5}, reg);
    CHECK(ab.original.train.size() == 80);
    CHECK(ab.original.test.size() == 20);
    CHECK_FALSE(ab.original.train == ba.original.train);
    const TaskPair again = make_task_pair({"ab", ShiftKind::DatasetPair, {"A", "B"}, 5}, reg);
    CHECK(again.original.train == ab.original.train);
    CHECK(again.shifted.test == ab.shifted.test);

    CHECK_THROWS_AS(make_task_pair({"x", ShiftKind::DatasetPair, {"A", "Z"}, 5}, reg), InvalidArgument);
    CHECK_THROWS_AS(make_task_pair({"x", ShiftKind::DatasetPair, {"A"}, 5}, reg), InvalidArgument);
    CHECK_THROWS_AS(make_task_pair({"x", ShiftKind::Artificial, {"A"}, 5}, reg), InvalidArgument);
    CHECK(parse_shift_kind(shift_kind_name(ShiftKind::SentenceLength)) == ShiftKind::SentenceLength);
    CHECK_THROWS_AS(parse_shift_kind("sideways"), InvalidArgument);
}

TEST_CASE("artificial pairs follow the cluster sizes") {
    SynthOptions o;
    o.size = 150;
    DatasetRegistry reg{{"A", synth_task("A", 2, o)}};
    const Model m = Model::init(fltest::tiny_model());
    Embedder emb = [&](const TokenBatch& b) { return m.extract_cls_embedding(b); };
    const TaskPair p = make_task_pair({"art", ShiftKind::Artificial, {"A"}, 9}, reg, emb);

    TokenBatch batch;
    for (const auto& e : reg["A"].examples) batch.push_back(e.tokens);
    const auto assign = artificial_split(emb(batch), derive_seed(9, {0x6b6dULL}));
    const auto n0 = static_cast<std::size_t>(std::count(assign.begin(), assign.end(), 0));
    CHECK(n0 >= assign.size() - n0);
    CHECK(p.original.train.size() + p.original.test.size() == n0);
    CHECK(p.shifted.train.size() + p.shifted.test.size() == assign.size() - n0);
    CHECK(make_task_pair({"art", ShiftKind::Artificial, {"A"}, 9}, reg, emb).shifted.train == p.shifted.train);
}

TEST_CASE("TSV round trip and line-numbered errors") {
    SynthOptions o;
    o.size = 20;
    o.min_len = 4;
    o.max_len = 9;
    o.max_s_count = 2;
    const Dataset d = synth_task("C", 4, o);
    std::stringstream ss;
    write_tsv(ss, d);
    const Dataset back = load_tsv(ss, d.name, 64);
    CHECK(back.examples == d.examples);

    auto fails_with = [](const std::string& text, const std::string& needle) {
        std::istringstream is(text);
        try {
            load_tsv(is, "f.tsv", 64);
        } catch (const ConfigError& e) {
            return std::string(e.what()).find(needle) != std::string::npos;
        }
        return false;
    };
    CHECK(fails_with("", "missing TSV header"));
    CHECK(fails_with("words\tlabel\n", "header"));
    CHECK(fails_with("tokens\tlabel\n1 2\t0\n3 x\t1\n", "f.tsv:3: bad token"));
    CHECK(fails_with("tokens\tlabel\n1 64\t0\n", "f.tsv:2: token 64"));
    CHECK(fails_with("tokens\tlabel\n1 2\tq\n", "f.tsv:2: bad label"));
    CHECK(fails_with("tokens\tlabel\n", "no examples"));
    CHECK_THROWS_AS(load_tsv(std::filesystem::path("/nonexistent/x.tsv"), 64), ConfigError);
}

} // TEST_SUITE
