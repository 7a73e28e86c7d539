#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "graphfm/error.hpp"
#include "graphfm/model.hpp"
#include "oracles.hpp"

using namespace graphfm;
using fixtures::random_batch;
using fixtures::toy_schema;

namespace {

constexpr double kModelFdTol = 1e-4;   // full composed model vs central differences
constexpr double kAggTol = 1e-10;      // forward vs naive reference

Tensor named(const Model& m, const std::string& name) {  // handle copy, cheap
    for (const auto& [n, t] : m.params())
        if (n == name) return t;
    throw std::runtime_error("missing param " + name);
}

bool has_param(const Model& m, const std::string& prefix) {
    for (const auto& [n, t] : m.params())
        if (n.rfind(prefix, 0) == 0) return true;
    return false;
}

/// Worst finite-difference error over every parameter of the model, for a
/// weighted-sum-of-logits loss (random projection, so index bugs can't cancel).
std::pair<double, std::string> worst_fd_err(const std::function<Tensor(Tape&)>& fwd,
                                            const ParamList& params) {
    for (const auto& [name, p] : params) p.zero_grad();
    Tape tape;
    tape.backward(fwd(tape));
    double worst = 0.0;
    std::string worst_name;
    for (const auto& [name, p] : params) {
        double err = oracle::max_grad_err([&] { Tape t; return fwd(t).item(); }, p, p.grad());
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    }
    return {worst, worst_name};
}

/// Moves every parameter to O(1) magnitude. At init the embeddings are tiny,
/// which parks the scorer's relu preactivations within the finite-difference
/// epsilon of the kink; differencing there measures the kink, not the
/// gradient.
void scramble_params(const ParamList& params, uint64_t seed) {
    Rng rng(seed);
    for (const auto& [name, p] : params) {
        Tensor t = p;
        for (double& v : t.values()) v = rng.uniform(-0.8, 0.8);
    }
}

Tensor projected_logits(Tape& tape, const Model& m, const Batch& batch, const std::vector<double>& r) {
    Tensor logits = m.forward(tape, batch);
    Tensor proj = Tensor::from({static_cast<int64_t>(r.size())}, r);
    return sum_all(tape, hadamard(tape, logits, proj));
}

std::vector<double> random_projection(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> r;
    for (int64_t i = 0; i < n; ++i) r.push_back(rng.uniform(0.25, 1.0));
    return r;
}

// ---- naive reference --------------------------------------------------------
// A from-scratch reimplementation of the whole forward pass with plain loops,
// pulling parameter values out of the model by name. Shares no math with the
// library; selection uses the full-sort oracle.

using Vec = std::vector<double>;

Vec ref_matvec(const Vec& w, int64_t rows, int64_t cols, const Vec& x) {
    Vec out(static_cast<size_t>(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out[static_cast<size_t>(r)] += w[static_cast<size_t>(r * cols + c)] * x[static_cast<size_t>(c)];
    return out;
}

std::vector<double> reference_logits(const GraphFM& model, const DatasetSchema& schema,
                                     const Batch& batch) {
    const ModelConfig& cfg = model.config();
    const int64_t B = batch.size;
    const int64_t n = schema.n_fields();
    const int64_t d = cfg.dim;
    const int64_t hw = cfg.head_width();

    // Embedding lookup.
    std::vector<std::vector<Vec>> e(static_cast<size_t>(B), std::vector<Vec>(static_cast<size_t>(n)));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t f = 0; f < n; ++f) {
            const Vec& table = named(model, "embed." + schema.fields[static_cast<size_t>(f)].name).values();
            Vec row(static_cast<size_t>(d));
            if (schema.fields[static_cast<size_t>(f)].kind == FieldKind::categorical) {
                int32_t idx = batch.cat[static_cast<size_t>(schema.cat_slot[static_cast<size_t>(f)])]
                                       [static_cast<size_t>(b)];
                for (int64_t c = 0; c < d; ++c) row[static_cast<size_t>(c)] = table[static_cast<size_t>(idx * d + c)];
            } else {
                double v = batch.num[static_cast<size_t>(schema.num_slot[static_cast<size_t>(f)])]
                                    [static_cast<size_t>(b)];
                for (int64_t c = 0; c < d; ++c) row[static_cast<size_t>(c)] = v * table[static_cast<size_t>(c)];
            }
            e[static_cast<size_t>(b)][static_cast<size_t>(f)] = std::move(row);
        }

    auto nonlin = [&](double v) {
        switch (cfg.nonlin) {
            case Nonlin::relu: return v > 0.0 ? v : 0.0;
            case Nonlin::sigmoid: return 1.0 / (1.0 + std::exp(-v));
            case Nonlin::elu: return v > 0.0 ? v : std::expm1(v);
        }
        return v;
    };

    std::vector<std::vector<std::vector<Vec>>> reps;  // layer -> b -> i -> vec(d)
    for (int64_t k = 0; k < cfg.layers; ++k) {
        const std::string pre = "layer" + std::to_string(k) + ".";
        std::vector<std::vector<Vec>> enew(static_cast<size_t>(B),
                                           std::vector<Vec>(static_cast<size_t>(n)));
        for (int64_t b = 0; b < B; ++b) {
            auto& eb = e[static_cast<size_t>(b)];
            // interaction vectors and selection probabilities
            std::vector<std::vector<Vec>> t(static_cast<size_t>(n), std::vector<Vec>(static_cast<size_t>(n)));
            std::vector<Vec> p(static_cast<size_t>(n), Vec(static_cast<size_t>(n), 1.0));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    Vec tij(static_cast<size_t>(d));
                    for (int64_t c = 0; c < d; ++c)
                        tij[static_cast<size_t>(c)] =
                            eb[static_cast<size_t>(i)][static_cast<size_t>(c)] * eb[static_cast<size_t>(j)][static_cast<size_t>(c)];
                    t[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::move(tij);
                }
            if (cfg.variant != Variant::no_select) {
                const Vec& w1 = named(model, pre + "select.w1").values();
                const Vec& b1 = named(model, pre + "select.b1").values();
                const Vec& w2 = named(model, pre + "select.w2").values();
                const Vec& b2 = named(model, pre + "select.b2").values();
                const int64_t hid = cfg.hidden;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        Vec h = ref_matvec(w1, hid, d, t[static_cast<size_t>(i)][static_cast<size_t>(j)]);
                        double z = b2[0];
                        for (int64_t q = 0; q < hid; ++q) {
                            double hv = std::max(0.0, h[static_cast<size_t>(q)] + b1[static_cast<size_t>(q)]);
                            z += w2[static_cast<size_t>(q)] * hv;
                        }
                        p[static_cast<size_t>(i)][static_cast<size_t>(j)] = 1.0 / (1.0 + std::exp(-z));
                    }
            }
            // kept sets
            std::vector<std::vector<int64_t>> kept(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                if (cfg.variant == Variant::no_select) {
                    for (int64_t j = 0; j < n; ++j) kept[static_cast<size_t>(i)].push_back(j);
                } else {
                    kept[static_cast<size_t>(i)] =
                        oracle::topm_sorted(p[static_cast<size_t>(i)], cfg.m[static_cast<size_t>(k)]);
                }
            }
            // heads
            for (int64_t i = 0; i < n; ++i) {
                std::vector<Vec> head_outs;
                for (int64_t h = 0; h < cfg.heads; ++h) {
                    const std::string hp = pre + "head" + std::to_string(h) + ".";
                    const Vec& wa = named(model, hp + "wa").values();
                    const Vec& av = named(model, hp + "a").values();
                    std::vector<Vec> tt;
                    Vec c;
                    for (int64_t j : kept[static_cast<size_t>(i)]) {
                        Vec v = ref_matvec(wa, hw, d, t[static_cast<size_t>(i)][static_cast<size_t>(j)]);
                        double score = 0.0;
                        for (int64_t q = 0; q < hw; ++q) score += av[static_cast<size_t>(q)] * v[static_cast<size_t>(q)];
                        c.push_back(score >= 0.0 ? score : cfg.leaky_slope * score);
                        tt.push_back(std::move(v));
                    }
                    double cmax = *std::max_element(c.begin(), c.end());
                    double denom = 0.0;
                    for (double v : c) denom += std::exp(v - cmax);
                    Vec acc(static_cast<size_t>(hw), 0.0);
                    for (size_t idx = 0; idx < kept[static_cast<size_t>(i)].size(); ++idx) {
                        int64_t j = kept[static_cast<size_t>(i)][idx];
                        double alpha = std::exp(c[idx] - cmax) / denom;
                        double weight = alpha;
                        if (cfg.variant != Variant::no_select)
                            weight *= p[static_cast<size_t>(i)][static_cast<size_t>(j)];
                        const Vec* agg = &tt[idx];
                        Vec node;
                        if (cfg.variant == Variant::no_interact) {
                            node = ref_matvec(wa, hw, d, eb[static_cast<size_t>(j)]);
                            agg = &node;
                        }
                        for (int64_t q = 0; q < hw; ++q) acc[static_cast<size_t>(q)] += weight * (*agg)[static_cast<size_t>(q)];
                    }
                    head_outs.push_back(std::move(acc));
                }
                Vec row(static_cast<size_t>(d), 0.0);
                if (cfg.head_pool == HeadPool::concat) {
                    int64_t off = 0;
                    for (const Vec& ho : head_outs) {
                        for (int64_t q = 0; q < hw; ++q) row[static_cast<size_t>(off + q)] = ho[static_cast<size_t>(q)];
                        off += hw;
                    }
                } else {
                    for (const Vec& ho : head_outs)
                        for (int64_t q = 0; q < hw; ++q) row[static_cast<size_t>(q)] += ho[static_cast<size_t>(q)];
                    for (double& v : row) v /= static_cast<double>(head_outs.size());
                }
                for (double& v : row) v = nonlin(v);
                enew[static_cast<size_t>(b)][static_cast<size_t>(i)] = std::move(row);
            }
        }
        e = enew;
        reps.push_back(std::move(enew));
    }

    // concat layer outputs, mean over fields, project
    const Vec& out_p = named(model, "out.p").values();
    std::vector<double> logits;
    for (int64_t b = 0; b < B; ++b) {
        Vec star(static_cast<size_t>(cfg.layers * d), 0.0);
        for (int64_t f = 0; f < n; ++f)
            for (int64_t k = 0; k < cfg.layers; ++k)
                for (int64_t c = 0; c < d; ++c)
                    star[static_cast<size_t>(k * d + c)] +=
                        reps[static_cast<size_t>(k)][static_cast<size_t>(b)][static_cast<size_t>(f)][static_cast<size_t>(c)];
        double z = 0.0;
        for (size_t q = 0; q < star.size(); ++q)
            z += out_p[q] * star[q] / static_cast<double>(n);
        logits.push_back(z);
    }
    return logits;
}

void check_against_reference(const GraphFM& model, const DatasetSchema& schema, const Batch& batch) {
    Tape tape(false);
    Tensor got = model.forward(tape, batch);
    std::vector<double> want = reference_logits(model, schema, batch);
    REQUIRE(got.size() == static_cast<int64_t>(want.size()));
    for (size_t b = 0; b < want.size(); ++b) {
        CAPTURE(b);
        CHECK(oracle::rel_err(got.values()[b], want[b]) < kAggTol);
    }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("default m halves the neighborhood per layer") {
    CHECK(ModelConfig::default_m(7, 3) == std::vector<int64_t>{7, 4, 2});
    CHECK(ModelConfig::default_m(4, 3) == std::vector<int64_t>{4, 2, 1});
    CHECK(ModelConfig::default_m(1, 4) == std::vector<int64_t>{1, 1, 1, 1});
}

TEST_CASE("config validation") {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.resolve(7);
    CHECK(cfg.hidden == 8);  // defaulted to dim
    CHECK(cfg.m == std::vector<int64_t>{7, 4});
    CHECK(cfg.head_width() == 4);

    ModelConfig bad = cfg;
    bad.m = {7};
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);
    bad = cfg;
    bad.m = {7, 9};
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);
    bad = cfg;
    bad.m = {7, 0};
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);
    bad = cfg;
    bad.dim = 6;
    bad.heads = 4;
    bad.m.clear();
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);  // width not divisible
    bad = cfg;
    bad.variant = Variant::single_head;
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);  // two heads
    bad = cfg;
    bad.leaky_slope = 0.0;
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);
    bad = cfg;
    bad.layers = 0;
    CHECK_THROWS_AS(bad.resolve(7), ConfigError);

    ModelConfig sh = make_variant(cfg, Variant::single_head);
    CHECK(sh.heads == 1);
    sh.m.clear();
    sh.resolve(7);
    CHECK(sh.head_width() == 8);  // single head runs at full width
}

TEST_CASE("config json round trip") {
    ModelConfig cfg;
    cfg.dim = 12;
    cfg.layers = 2;
    cfg.heads = 3;
    cfg.m = {5, 2};
    cfg.hidden = 7;
    cfg.nonlin = Nonlin::elu;
    cfg.head_pool = HeadPool::average;
    cfg.leaky_slope = 0.1;
    cfg.variant = Variant::no_interact;
    ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.dim == cfg.dim);
    CHECK(back.layers == cfg.layers);
    CHECK(back.heads == cfg.heads);
    CHECK(back.m == cfg.m);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.nonlin == cfg.nonlin);
    CHECK(back.head_pool == cfg.head_pool);
    CHECK(back.leaky_slope == cfg.leaky_slope);
    CHECK(back.variant == cfg.variant);
    CHECK_THROWS_AS(variant_from_string("both"), ConfigError);
}

TEST_CASE("embed_batch semantics and scatter gradients") {
    DatasetSchema s = toy_schema({3, 2}, 1);
    Rng rng(7);
    EmbeddingTables emb = make_embedding_tables(s, 2, 0.5, rng);
    emb.tables[0].values() = {0, 0, 10, 11, 20, 21};
    emb.tables[1].values() = {5, 6, 7, 8};
    emb.tables[2].values() = {100, 200};

    Batch b;
    b.size = 2;
    b.cat = {{2, 0}, {1, 1}};
    b.num = {{0.5, -2.0}};
    b.labels = {1, 0};

    Tape tape(false);
    Tensor e = embed_batch(tape, emb, b);
    CHECK(e.shape() == Shape{2, 3, 2});
    CHECK(e.at({0, 0, 0}) == 20);  // c0 row 2
    CHECK(e.at({0, 0, 1}) == 21);
    CHECK(e.at({1, 0, 0}) == 0);   // c0 unknown row
    CHECK(e.at({0, 1, 0}) == 7);   // c1 row 1
    CHECK(e.at({0, 2, 0}) == 50);  // 0.5 * 100
    CHECK(e.at({1, 2, 1}) == -400);

    // Gradient: weighted sum, checked against finite differences per table.
    std::vector<double> r = random_projection(2 * 3 * 2, 3);
    auto fwd = [&](Tape& t) {
        Tensor out = embed_batch(t, emb, b);
        Tensor proj = Tensor::from({2, 3, 2}, r);
        return sum_all(t, hadamard(t, out, proj));
    };
    ParamList params;
    for (size_t i = 0; i < emb.tables.size(); ++i)
        params.emplace_back("t" + std::to_string(i), emb.tables[i]);
    auto [err, name] = worst_fd_err(fwd, params);
    CAPTURE(name);
    CHECK(err < 1e-6);

    // Rows never touched by the batch keep exactly zero gradient.
    const std::vector<double>& g0 = emb.tables[0].grad();
    CHECK(g0[2] == 0.0);  // row 1 (value x1) absent from the batch
    CHECK(g0[3] == 0.0);
    CHECK(g0[4] != 0.0);  // row 2 was used

    // Numeric gradient carries the input value.
    const std::vector<double>& g2 = emb.tables[2].grad();
    CHECK(g2[0] == doctest::Approx(0.5 * r[4] + -2.0 * r[10]).epsilon(1e-12));

    // Out-of-range index is data corruption, not UB.
    Batch bad = b;
    bad.cat[0][0] = 3;
    Tape t2(false);
    CHECK_THROWS_AS(embed_batch(t2, emb, bad), DataError);
}

TEST_CASE("edge scores are symmetric, bitwise") {
    DatasetSchema s = toy_schema({4, 4, 3, 5}, 1);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.heads = 2;
    GraphFM model(s, cfg, 11);
    Batch b = random_batch(s, 3, 5);

    Tape tape(false);
    ForwardCapture cap;
    model.forward(tape, b, &cap);
    REQUIRE(cap.probs.size() == 2);
    for (const Tensor& p : cap.probs) {
        const int64_t n = p.dim(1);
        for (int64_t bi = 0; bi < p.dim(0); ++bi)
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    REQUIRE(p.at({bi, i, j}) == p.at({bi, j, i}));  // exact, not approximate
                    REQUIRE(p.at({bi, i, j}) > 0.0);
                    REQUIRE(p.at({bi, i, j}) < 1.0);
                }
    }
}

TEST_CASE("zeroed scorer head is a coin flip") {
    DatasetSchema s = toy_schema({3, 3, 3}, 0);
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.layers = 1;
    cfg.heads = 1;
    GraphFM model(s, cfg, 2);
    Tensor w2 = named(model, "layer0.select.w2");
    std::fill(w2.values().begin(), w2.values().end(), 0.0);

    Batch b = random_batch(s, 2, 9);
    Tape tape(false);
    ForwardCapture cap;
    model.forward(tape, b, &cap);
    for (double v : cap.probs[0].values()) CHECK(v == 0.5);
}

TEST_CASE("forward matches the naive reference") {
    SUBCASE("dense selection (m = n)") {
        DatasetSchema s = toy_schema({4, 3, 5, 4}, 0);
        ModelConfig cfg;
        cfg.dim = 4;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.m = {4};
        GraphFM model(s, cfg, 21);
        check_against_reference(model, s, random_batch(s, 3, 22));
    }
    SUBCASE("hard selection (m < n)") {
        DatasetSchema s = toy_schema({4, 3, 5, 4, 3}, 1);
        ModelConfig cfg;
        cfg.dim = 4;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.m = {4, 2};
        GraphFM model(s, cfg, 23);
        check_against_reference(model, s, random_batch(s, 4, 24));
    }
    SUBCASE("three layers, single head") {
        DatasetSchema s = toy_schema({4, 4, 4, 4}, 0);
        ModelConfig cfg;
        cfg.dim = 3;
        cfg.layers = 3;
        cfg.heads = 1;
        cfg.m = {4, 2, 1};
        cfg.variant = Variant::single_head;
        GraphFM model(s, cfg, 25);
        check_against_reference(model, s, random_batch(s, 3, 26));
    }
    SUBCASE("no_select keeps every pair") {
        DatasetSchema s = toy_schema({4, 3, 4}, 1);
        ModelConfig cfg;
        cfg.dim = 4;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.variant = Variant::no_select;
        GraphFM model(s, cfg, 27);
        check_against_reference(model, s, random_batch(s, 3, 28));
    }
    SUBCASE("no_interact aggregates transformed nodes") {
        DatasetSchema s = toy_schema({4, 3, 4, 5}, 0);
        ModelConfig cfg;
        cfg.dim = 4;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.m = {3, 2};
        cfg.variant = Variant::no_interact;
        GraphFM model(s, cfg, 29);
        check_against_reference(model, s, random_batch(s, 3, 30));
    }
    SUBCASE("averaged heads") {
        DatasetSchema s = toy_schema({4, 3, 4}, 0);
        ModelConfig cfg;
        cfg.dim = 4;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.head_pool = HeadPool::average;
        cfg.m = {3, 2};
        GraphFM model(s, cfg, 31);
        CHECK(model.config().head_width() == 4);
        check_against_reference(model, s, random_batch(s, 3, 32));
    }
    SUBCASE("elu layer nonlinearity") {
        DatasetSchema s = toy_schema({4, 3, 4}, 0);
        ModelConfig cfg;
        cfg.dim = 2;
        cfg.layers = 2;
        cfg.heads = 1;
        cfg.nonlin = Nonlin::elu;
        cfg.m = {3, 2};
        GraphFM model(s, cfg, 33);
        check_against_reference(model, s, random_batch(s, 3, 34));
    }
}

TEST_CASE("attention is a distribution over exactly the kept pairs") {
    DatasetSchema s = toy_schema({4, 3, 5, 4, 3, 4}, 1);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 3;
    cfg.heads = 2;
    cfg.m = {7, 4, 2};
    GraphFM model(s, cfg, 41);
    Batch b = random_batch(s, 5, 42);

    Tape tape(false);
    ForwardCapture cap;
    model.forward(tape, b, &cap);
    REQUIRE(cap.mask.size() == 3);
    REQUIRE(cap.alpha.size() == 3);

    for (size_t k = 0; k < 3; ++k) {
        const Tensor& mask = cap.mask[k];
        const Tensor& mp = cap.masked_p[k];
        const Tensor& probs = cap.probs[k];
        const int64_t n = mask.dim(1);
        for (int64_t bi = 0; bi < mask.dim(0); ++bi)
            for (int64_t i = 0; i < n; ++i) {
                int64_t nonzero = 0;
                for (int64_t j = 0; j < n; ++j) {
                    double mv = mask.at({bi, i, j});
                    REQUIRE((mv == 0.0 || mv == 1.0));
                    nonzero += mv == 1.0;
                    // masked probabilities are the raw ones, zeroed off-mask
                    REQUIRE(mp.at({bi, i, j}) == probs.at({bi, i, j}) * mv);
                }
                REQUIRE(nonzero == cfg.m[k]);
                for (const Tensor& alpha : cap.alpha[k]) {
                    double sum = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        double av = alpha.at({bi, i, j});
                        if (mask.at({bi, i, j}) == 0.0)
                            REQUIRE(av == 0.0);
                        else
                            REQUIRE(av > 0.0);
                        sum += av;
                    }
                    REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-9));
                }
            }
    }
}

TEST_CASE("a single kept neighbor takes all the attention") {
    DatasetSchema s = toy_schema({4, 3, 4, 5}, 0);
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.m = {1};
    GraphFM model(s, cfg, 51);
    Batch b = random_batch(s, 3, 52);

    Tape tape(false);
    ForwardCapture cap;
    model.forward(tape, b, &cap);
    const Tensor& alpha = cap.alpha[0][0];
    const Tensor& mask = cap.mask[0];
    for (int64_t bi = 0; bi < alpha.dim(0); ++bi)
        for (int64_t i = 0; i < alpha.dim(1); ++i)
            for (int64_t j = 0; j < alpha.dim(2); ++j)
                CHECK(alpha.at({bi, i, j}) == (mask.at({bi, i, j}) == 1.0 ? 1.0 : 0.0));
}

TEST_CASE("field order does not change the prediction") {
    // Same rows presented under two field orders; parameters moved across by
    // name. The prediction must agree to reassociation-level noise.
    const std::vector<int> vocab = {4, 3, 5, 4, 3};
    DatasetSchema s1 = toy_schema(vocab, 0);

    std::vector<size_t> perm = {3, 0, 4, 1, 2};
    DatasetSchema s2;
    s2.label_column = "y";
    for (size_t f : perm) {
        s2.fields.push_back(s1.fields[f]);
        s2.vocabs.push_back(s1.vocabs[f]);
    }
    s2.finalize();

    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.m = {4, 2};
    GraphFM m1(s1, cfg, 61);
    GraphFM m2(s2, cfg, 62);  // different init, then overwritten below
    for (const auto& [name, t] : m2.params()) {
        Tensor dst = t;
        dst.copy_values_from(named(m1, name));
    }

    Batch b1 = random_batch(s1, 6, 63);
    Batch b2 = b1;
    for (size_t f2 = 0; f2 < perm.size(); ++f2)
        b2.cat[f2] = b1.cat[perm[f2]];  // all-categorical: slot == field position

    Tape t1(false), t2(false);
    Tensor l1 = m1.forward(t1, b1);
    Tensor l2 = m2.forward(t2, b2);
    for (int64_t i = 0; i < l1.size(); ++i)
        CHECK(oracle::rel_err(l1.values()[static_cast<size_t>(i)], l2.values()[static_cast<size_t>(i)]) <
              1e-8);
}

TEST_CASE("rows are independent across the batch") {
    DatasetSchema s = toy_schema({4, 3, 5}, 1);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.m = {3, 2};
    GraphFM model(s, cfg, 71);
    Batch full = random_batch(s, 5, 72);

    Tape tape(false);
    Tensor combined = model.forward(tape, full);
    for (int64_t r = 0; r < full.size; ++r) {
        Batch one;
        one.size = 1;
        for (const auto& col : full.cat) one.cat.push_back({col[static_cast<size_t>(r)]});
        for (const auto& col : full.num) one.num.push_back({col[static_cast<size_t>(r)]});
        one.labels = {full.labels[static_cast<size_t>(r)]};
        Tape t(false);
        Tensor single = model.forward(t, one);
        CHECK(single.values()[0] == combined.values()[static_cast<size_t>(r)]);
    }
}

TEST_CASE("fm pairwise term equals the brute-force sum") {
    DatasetSchema s = toy_schema({5, 4, 3, 6}, 2);
    FmModel model(s, 5, 81);
    Batch b = random_batch(s, 4, 82);

    Tape tape(false);
    Tensor logits = model.forward(tape, b);

    const int64_t n = s.n_fields();
    const int64_t d = 5;
    for (int64_t r = 0; r < b.size; ++r) {
        // assemble this row's embedding matrix and linear term by hand
        std::vector<double> e;
        double lin = named(model, "bias").values()[0];
        for (int64_t f = 0; f < n; ++f) {
            const std::string& fname = s.fields[static_cast<size_t>(f)].name;
            const std::vector<double>& emb = named(model, "embed." + fname).values();
            const std::vector<double>& w = named(model, "w." + fname).values();
            if (s.fields[static_cast<size_t>(f)].kind == FieldKind::categorical) {
                int32_t idx = b.cat[static_cast<size_t>(s.cat_slot[static_cast<size_t>(f)])]
                                   [static_cast<size_t>(r)];
                for (int64_t c = 0; c < d; ++c) e.push_back(emb[static_cast<size_t>(idx * d + c)]);
                lin += w[static_cast<size_t>(idx)];
            } else {
                double v = b.num[static_cast<size_t>(s.num_slot[static_cast<size_t>(f)])]
                                [static_cast<size_t>(r)];
                for (int64_t c = 0; c < d; ++c) e.push_back(v * emb[static_cast<size_t>(c)]);
                lin += v * w[0];
            }
        }
        double want = lin + oracle::fm_pairwise_brute(e, n, d);
        CHECK(oracle::rel_err(logits.values()[static_cast<size_t>(r)], want) < 1e-10);
    }
}

TEST_CASE("lr is the additive model") {
    DatasetSchema s = toy_schema({3, 2}, 1);
    LrModel model(s, 91);
    named(model, "w.c0").values() = {0.0, 1.0, 2.0};
    named(model, "w.c1").values() = {0.5, -1.0};
    named(model, "w.n0").values() = {3.0};
    named(model, "bias").values() = {0.25};

    Batch b;
    b.size = 2;
    b.cat = {{2, 1}, {1, 0}};
    b.num = {{2.0, 0.0}};
    b.labels = {1, 0};
    Tape tape(false);
    Tensor logits = model.forward(tape, b);
    CHECK(logits.values()[0] == doctest::Approx(2.0 + -1.0 + 6.0 + 0.25).epsilon(1e-12));
    CHECK(logits.values()[1] == doctest::Approx(1.0 + 0.5 + 0.0 + 0.25).epsilon(1e-12));
}

TEST_CASE("full model gradients match finite differences") {
    // Six-field toy with the whole stack live: hard selection, two heads, two
    // layers, a numeric field.
    DatasetSchema s = toy_schema({4, 3, 4, 5, 3}, 1);
    Batch b = random_batch(s, 4, 101);
    std::vector<double> r = random_projection(4, 102);

    auto run = [&](ModelConfig cfg, uint64_t seed) {
        GraphFM model(s, cfg, seed);
        scramble_params(model.params(), seed + 1);
        auto fwd = [&](Tape& t) { return projected_logits(t, model, b, r); };
        auto [err, name] = worst_fd_err(fwd, model.params());
        CAPTURE(name);
        CHECK(err < kModelFdTol);
    };

    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.m = {4, 2};
    cfg.hidden = 3;
    SUBCASE("full") { run(cfg, 103); }
    SUBCASE("no_select") { run(make_variant(cfg, Variant::no_select), 104); }
    SUBCASE("no_interact") { run(make_variant(cfg, Variant::no_interact), 105); }
    SUBCASE("single_head") { run(make_variant(cfg, Variant::single_head), 106); }
    SUBCASE("averaged heads") {
        ModelConfig avg = cfg;
        avg.head_pool = HeadPool::average;
        run(avg, 107);
    }
    SUBCASE("elu") {
        ModelConfig e = cfg;
        e.nonlin = Nonlin::elu;
        run(e, 108);
    }
}

TEST_CASE("baseline gradients match finite differences") {
    DatasetSchema s = toy_schema({4, 3, 5}, 1);
    Batch b = random_batch(s, 5, 111);
    std::vector<double> r = random_projection(5, 112);

    LrModel lr(s, 113);
    auto [lr_err, lr_name] = worst_fd_err([&](Tape& t) { return projected_logits(t, lr, b, r); },
                                          lr.params());
    CAPTURE(lr_name);
    CHECK(lr_err < 1e-6);

    FmModel fm(s, 4, 114);
    auto [fm_err, fm_name] = worst_fd_err([&](Tape& t) { return projected_logits(t, fm, b, r); },
                                          fm.params());
    CAPTURE(fm_name);
    CHECK(fm_err < 1e-6);
}

TEST_CASE("selection learns only through surviving pairs") {
    DatasetSchema s = toy_schema({4, 3, 4, 5}, 0);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.m = {2};
    GraphFM model(s, cfg, 121);
    Batch b = random_batch(s, 3, 122);

    for (const auto& [name, p] : model.params()) p.zero_grad();
    Tape tape;
    ForwardCapture cap;
    Tensor logits = model.forward(tape, b, &cap);
    tape.backward(sum_all(tape, logits));

    // Gradient reaches the scorer (through kept probabilities)…
    double w1_norm = 0.0;
    for (double g : named(model, "layer0.select.w1").grad()) w1_norm += g * g;
    CHECK(w1_norm > 0.0);

    // …and d/d p is exactly zero on pairs the mask dropped.
    const Tensor& probs = cap.probs[0];
    const Tensor& mask = cap.mask[0];
    const std::vector<double>& pg = probs.grad();
    bool any_kept_nonzero = false;
    for (int64_t i = 0; i < probs.size(); ++i) {
        if (mask.values()[static_cast<size_t>(i)] == 0.0)
            CHECK(pg[static_cast<size_t>(i)] == 0.0);
        else
            any_kept_nonzero = any_kept_nonzero || pg[static_cast<size_t>(i)] != 0.0;
    }
    CHECK(any_kept_nonzero);
}

TEST_CASE("variants reshape the parameter set and the function") {
    DatasetSchema s = toy_schema({4, 3, 4}, 1);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.m = {3, 2};

    GraphFM full(s, cfg, 131);
    GraphFM no_sel(s, make_variant(cfg, Variant::no_select), 131);
    GraphFM no_int(s, make_variant(cfg, Variant::no_interact), 131);

    CHECK(has_param(full, "layer0.select."));
    CHECK(!has_param(no_sel, "layer0.select."));
    CHECK(has_param(no_int, "layer0.select."));  // still scores interactions

    Batch b = random_batch(s, 4, 132);
    Tape t1(false), t2(false), t3(false);
    Tensor lf = full.forward(t1, b);
    Tensor ls = no_sel.forward(t2, b);
    Tensor li = no_int.forward(t3, b);
    CHECK(lf.values() != ls.values());
    CHECK(lf.values() != li.values());

    // no_select really keeps everything
    ForwardCapture cap;
    Tape t4(false);
    no_sel.forward(t4, b, &cap);
    for (double v : cap.masked_p[0].values()) CHECK(v == 1.0);
    for (double v : cap.mask[0].values()) CHECK(v == 1.0);
}

TEST_CASE("degenerate sizes still run") {
    SUBCASE("single field") {
        DatasetSchema s = toy_schema({4}, 0);
        ModelConfig cfg;
        cfg.dim = 3;
        cfg.layers = 2;
        cfg.heads = 1;
        GraphFM model(s, cfg, 141);
        CHECK(model.config().m == std::vector<int64_t>{1, 1});
        Batch b = random_batch(s, 2, 142);
        Tape tape(false);
        Tensor logits = model.forward(tape, b);
        CHECK(logits.all_finite());
        check_against_reference(model, s, b);
    }
    SUBCASE("batch of one, one layer") {
        DatasetSchema s = toy_schema({3, 3}, 0);
        ModelConfig cfg;
        cfg.dim = 2;
        cfg.layers = 1;
        cfg.heads = 1;
        GraphFM model(s, cfg, 143);
        Batch b = random_batch(s, 1, 144);
        Tape tape(false);
        CHECK(model.forward(tape, b).all_finite());
    }
}

TEST_CASE("model factory dispatches on kind") {
    DatasetSchema s = toy_schema({3, 3}, 0);
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    CHECK(make_model("lr", s, cfg, 1)->kind() == "lr");
    CHECK(make_model("fm", s, cfg, 1)->kind() == "fm");
    CHECK(make_model("graphfm", s, cfg, 1)->kind() == "graphfm");
    CHECK_THROWS_AS(make_model("gbdt", s, cfg, 1), ConfigError);
}

}  // TEST_SUITE
