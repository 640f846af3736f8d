#include "gdahin/hgt.hpp"

#include <catch_amalgamated.hpp>

#include "gdahin/synthetic.hpp"
#include "testutil.hpp"

using namespace gda;
using gda::test::fd_gradient;
using gda::test::rel_err;

namespace {

struct Env {
    ParamStore params;
    HgtExtractor ex;
    MessageGraph mg;
};

/// One node type with a single self-relation given by an undirected edge list.
Env single_type_env(int n_nodes, const std::vector<std::pair<int, int>>& edges,
                    HgtConfig cfg, uint64_t seed) {
    Env e;
    e.ex = HgtExtractor(cfg, {0}, 1);
    Rng rng(seed);
    e.ex.register_params(e.params, rng);
    e.ex.bind(e.params);
    e.mg.slot_counts = {n_nodes};
    MessageChannel fwd, rev;
    fwd.rel_pair = 0;
    rev.rel_pair = 0;
    rev.reverse = true;
    for (const auto& [s, d] : edges) {
        fwd.edge_src.push_back(s);
        fwd.edge_dst.push_back(d);
        rev.edge_src.push_back(d);
        rev.edge_dst.push_back(s);
    }
    e.mg.channels = {fwd, rev};
    return e;
}

std::vector<Mat> run_extract(Env& e, const Mat& input) {
    ad::Tape t;
    StepVars sv = StepVars::make(t, e.params);
    auto out = e.ex.extract(t, sv, e.mg, {ad::constant(t, input)});
    return {out[0]->val};
}

void set_identity_params(Env& e) {
    for (auto& entry : e.params.entries()) {
        if (entry.name.ends_with(".mu"))
            entry.value = Mat::Ones(1, 1);
        else
            entry.value = Mat::Identity(entry.value.rows(), entry.value.cols());
    }
}

}  // namespace

TEST_CASE("attention weights: singleton and symmetric neighbours", "[hgt]") {
    HgtConfig cfg{1, 1, 3, 0.0};
    Rng rng(3);

    SECTION("a single neighbour takes all the attention") {
        Env e = single_type_env(2, {{0, 1}}, cfg, 1);
        Mat x = gaussian_matrix(rng, 2, 3, 1.0);
        ad::Tape t;
        StepVars sv = StepVars::make(t, e.params);
        AttentionDebug dbg;
        e.ex.layer_forward(t, sv, e.mg, {ad::constant(t, x)}, 0, nullptr, &dbg);
        for (const auto& sh : dbg.entries)
            for (long i = 0; i < sh.weights.size(); ++i)
                REQUIRE(sh.weights(i) == Catch::Approx(1.0));
    }

    SECTION("two neighbours with identical keys split attention evenly") {
        Env e = single_type_env(3, {{1, 0}, {2, 0}}, cfg, 2);
        Mat x(3, 3);
        x.row(0) = Eigen::RowVector3d(0.3, -0.2, 0.5);
        x.row(1) = Eigen::RowVector3d(1.0, 2.0, -1.0);
        x.row(2) = x.row(1);  // identical key source
        ad::Tape t;
        StepVars sv = StepVars::make(t, e.params);
        AttentionDebug dbg;
        e.ex.layer_forward(t, sv, e.mg, {ad::constant(t, x)}, 0, nullptr, &dbg);
        bool saw_pair = false;
        for (const auto& sh : dbg.entries) {
            std::vector<double> at0;
            for (size_t i = 0; i < sh.dst.size(); ++i)
                if (sh.dst[i] == 0) at0.push_back(sh.weights(static_cast<long>(i)));
            if (at0.size() == 2) {
                saw_pair = true;
                REQUIRE(at0[0] == Catch::Approx(0.5));
                REQUIRE(at0[1] == Catch::Approx(0.5));
            }
        }
        REQUIRE(saw_pair);
    }
}

TEST_CASE("attention rows sum to one for every node with neighbours", "[hgt]") {
    HgtConfig cfg{2, 4, 8, 0.0};
    Rng rng(5);
    std::vector<std::pair<int, int>> edges;
    std::uniform_int_distribution<int> pick(0, 9);
    for (int k = 0; k < 25; ++k) {
        int a = pick(rng), b = pick(rng);
        if (a != b) edges.emplace_back(a, b);
    }
    Env e = single_type_env(10, edges, cfg, 7);
    Mat x = gaussian_matrix(rng, 10, 8, 1.0);
    ad::Tape t;
    StepVars sv = StepVars::make(t, e.params);
    AttentionDebug dbg;
    e.ex.layer_forward(t, sv, e.mg, {ad::constant(t, x)}, 0, nullptr, &dbg);
    REQUIRE_FALSE(dbg.entries.empty());
    for (const auto& sh : dbg.entries) {
        std::map<int, double> sums;
        for (size_t i = 0; i < sh.dst.size(); ++i)
            sums[sh.dst[i]] += sh.weights(static_cast<long>(i));
        for (const auto& [node, s] : sums) REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("identity parameters match a dense hand computation", "[hgt]") {
    HgtConfig cfg{1, 1, 3, 0.0};
    Env e = single_type_env(4, {{0, 1}, {2, 1}, {3, 1}, {1, 0}}, cfg, 11);
    set_identity_params(e);
    Rng rng(13);
    Mat x = gaussian_matrix(rng, 4, 3, 0.7);

    std::vector<Mat> out = run_extract(e, x);

    // Dense oracle: per destination, softmax((x_src . x_dst)/sqrt(3)) over its
    // incoming undirected edges, then out = x + tanh(sum a * x_src).
    std::vector<std::vector<int>> incoming(4);
    auto add_edge = [&](int s, int d) { incoming[static_cast<size_t>(d)].push_back(s); };
    for (const auto& [s, d] : std::vector<std::pair<int, int>>{{0, 1}, {2, 1}, {3, 1}, {1, 0}}) {
        add_edge(s, d);
        add_edge(d, s);
    }
    Mat expect = x;
    for (int v = 0; v < 4; ++v) {
        const auto& nbrs = incoming[static_cast<size_t>(v)];
        if (nbrs.empty()) continue;
        Vec logits(static_cast<long>(nbrs.size()));
        for (size_t i = 0; i < nbrs.size(); ++i)
            logits(static_cast<long>(i)) = x.row(nbrs[i]).dot(x.row(v)) / std::sqrt(3.0);
        Vec a = (logits.array() - logits.maxCoeff()).exp();
        a /= a.sum();
        Eigen::RowVector3d agg = Eigen::RowVector3d::Zero();
        for (size_t i = 0; i < nbrs.size(); ++i)
            agg += a(static_cast<long>(i)) * x.row(nbrs[i]);
        expect.row(v) = x.row(v) + agg.array().tanh().matrix();
    }
    REQUIRE((out[0] - expect).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero layers pass inputs through unchanged", "[hgt]") {
    HgtConfig cfg{0, 2, 4, 0.0};
    Env e = single_type_env(3, {{0, 1}}, cfg, 17);
    Rng rng(19);
    Mat x = gaussian_matrix(rng, 3, 4, 1.0);
    REQUIRE(run_extract(e, x)[0] == x);
}

TEST_CASE("receptive field is exactly the layer count", "[hgt]") {
    HgtConfig cfg{2, 2, 6, 0.0};
    // Path 0-1-2-3-4.
    Env e = single_type_env(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, cfg, 23);
    Rng rng(29);
    Mat x = gaussian_matrix(rng, 5, 6, 1.0);
    Mat base = run_extract(e, x)[0];

    SECTION("a 3-hop-away perturbation leaves the output bit-identical") {
        Mat x2 = x;
        x2.row(4).array() += 1.0;  // distance 4 from node 0
        Mat out = run_extract(e, x2)[0];
        REQUIRE(out.row(0) == base.row(0));
        Mat x3 = x;
        x3.row(3).array() += 1.0;  // distance 3 from node 0
        REQUIRE(run_extract(e, x3)[0].row(0) == base.row(0));
    }

    SECTION("a 2-hop perturbation changes the output") {
        Mat x2 = x;
        x2.row(2).array() += 1.0;
        REQUIRE((run_extract(e, x2)[0].row(0) - base.row(0)).cwiseAbs().maxCoeff() > 1e-12);
    }

    SECTION("the centre of a star depends on every leaf after two layers") {
        Env star = single_type_env(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}, cfg, 31);
        Mat sx = gaussian_matrix(rng, 5, 6, 1.0);
        Mat sbase = run_extract(star, sx)[0];
        for (int leaf = 1; leaf < 5; ++leaf) {
            Mat sx2 = sx;
            sx2.row(leaf).array() += 0.5;
            REQUIRE((run_extract(star, sx2)[0].row(0) - sbase.row(0)).cwiseAbs().maxCoeff() >
                    1e-12);
        }
    }
}

TEST_CASE("permuting nodes within a type permutes outputs identically", "[hgt]") {
    HgtConfig cfg{2, 2, 6, 0.0};
    std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {2, 0}, {3, 1}};
    Env e = single_type_env(4, edges, cfg, 37);
    Rng rng(41);
    Mat x = gaussian_matrix(rng, 4, 6, 1.0);
    Mat base = run_extract(e, x)[0];

    std::vector<int> perm = {2, 0, 3, 1};  // new index of old node i
    std::vector<std::pair<int, int>> pedges;
    for (const auto& [s, d] : edges)
        pedges.emplace_back(perm[static_cast<size_t>(s)], perm[static_cast<size_t>(d)]);
    Env ep = single_type_env(4, pedges, cfg, 37);  // same seed, same parameters
    Mat px(4, 6);
    for (int i = 0; i < 4; ++i) px.row(perm[static_cast<size_t>(i)]) = x.row(i);
    Mat pout = run_extract(ep, px)[0];
    for (int i = 0; i < 4; ++i)
        REQUIRE((pout.row(perm[static_cast<size_t>(i)]) - base.row(i)).cwiseAbs().maxCoeff() <
                1e-12);
}

TEST_CASE("isolated nodes keep their input through the residual path", "[hgt]") {
    HgtConfig cfg{2, 2, 4, 0.0};
    Env e = single_type_env(4, {{0, 1}}, cfg, 43);  // nodes 2 and 3 isolated
    Rng rng(47);
    Mat x = gaussian_matrix(rng, 4, 4, 1.0);
    Mat out = run_extract(e, x)[0];
    REQUIRE(out.row(2) == x.row(2));
    REQUIRE(out.row(3) == x.row(3));
    REQUIRE((out.row(0) - x.row(0)).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("message graph construction pairs relations and drops private views",
          "[hgt]") {
    SyntheticConfig scfg;
    scfg.num_classes = 2;
    scfg.shared_types = {"P", "A"};
    scfg.shared_counts = {6, 5};
    scfg.shared_dims = {3, 3};
    scfg.private_source_types = {"T"};
    scfg.private_target_types = {"F"};
    scfg.private_source_counts = {4};
    scfg.private_target_counts = {3};
    scfg.private_source_dims = {2};
    scfg.private_target_dims = {2};
    scfg.target_type = "A";
    scfg.relations = {{"P-A", "P-A"}, {"P-T", "P-F"}};
    scfg.edge_prob = 0.4;
    scfg.latent_rank = 2;
    DomainPair pair = generate_synthetic_pair(scfg, 51);

    MessageGraph full = build_message_graph(pair.source, pair.schema, true);
    REQUIRE(full.slot_counts == std::vector<int>{6, 5, 4});
    REQUIRE(full.channels.size() == 4);  // two relations, forward + reverse

    MessageGraph shared = build_message_graph(pair.source, pair.schema, false);
    REQUIRE(shared.slot_counts == std::vector<int>{6, 5});
    REQUIRE(shared.channels.size() == 2);  // private-touching relation dropped
    for (const auto& c : shared.channels) REQUIRE(c.rel_pair == 0);

    MessageGraph tgt = build_message_graph(pair.target, pair.schema, true);
    REQUIRE(tgt.slot_counts == std::vector<int>{6, 5, 3});
}

TEST_CASE("relations beyond the parameter tables are config errors", "[hgt]") {
    HgtConfig cfg{1, 1, 4, 0.0};
    Env e = single_type_env(2, {{0, 1}}, cfg, 53);
    e.mg.channels[0].rel_pair = 3;  // no such table
    Rng rng(59);
    Mat x = gaussian_matrix(rng, 2, 4, 1.0);
    ad::Tape t;
    StepVars sv = StepVars::make(t, e.params);
    REQUIRE_THROWS_AS(e.ex.layer_forward(t, sv, e.mg, {ad::constant(t, x)}, 0), ConfigError);
}

TEST_CASE("extractor parameters pass finite-difference checks", "[hgt]") {
    HgtConfig cfg{2, 2, 4, 0.0};
    Env e = single_type_env(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}}, cfg, 61);
    Rng rng(67);
    const Mat x = gaussian_matrix(rng, 6, 4, 0.8);
    const Mat target = gaussian_matrix(rng, 6, 4, 0.8);

    auto loss_value = [&]() {
        ad::Tape t;
        StepVars sv = StepVars::make(t, e.params);
        auto out = e.ex.extract(t, sv, e.mg, {ad::constant(t, x)});
        return ad::mse(t, out[0], target)->scalar();
    };

    std::vector<Mat> analytic;
    {
        ad::Tape t;
        StepVars sv = StepVars::make(t, e.params);
        auto out = e.ex.extract(t, sv, e.mg, {ad::constant(t, x)});
        ad::Var loss = ad::mse(t, out[0], target);
        t.backward(loss);
        for (size_t i = 0; i < e.params.size(); ++i)
            analytic.push_back(sv.leaves[i]->has_grad()
                                   ? sv.leaves[i]->grad
                                   : Mat::Zero(e.params.entries()[i].value.rows(),
                                               e.params.entries()[i].value.cols()));
    }

    for (size_t pi = 0; pi < e.params.size(); ++pi) {
        Mat& value = e.params.entries()[pi].value;
        Mat numeric = fd_gradient(
            [&](const Mat& m) {
                Mat saved = value;
                value = m;
                double out = loss_value();
                value = saved;
                return out;
            },
            value, 1e-5);
        INFO("parameter " << e.params.entries()[pi].name);
        REQUIRE(rel_err(analytic[pi], numeric) < 1e-4);
    }
}
