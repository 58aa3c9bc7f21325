// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tyler/error.hpp"
#include "tyler/toy.hpp"
#include "tyler/train.hpp"

using namespace tyler;
using ad::Matrix;

namespace {

ad::ParameterSet two_tensors() {
    ad::ParameterSet p;
    p.add("a", (Matrix(3, 1) << 1.0, -2.0, 0.5).finished());
    p.add("b", (Matrix(1, 2) << 4.0, 0.0).finished());
    return p;
}

ad::Gradients grads_of(const ad::ParameterSet& p, Matrix a, Matrix b) {
    ad::Gradients g(p);
    g[0] = std::move(a);
    g[1] = std::move(b);
    return g;
}

/// Toy dataset written once per test binary.
const std::filesystem::path& toy_dir() {
    static test_util::TempDir root;
    static const auto dir = [] {
        auto d = root.path() / "toy";
        write_toy_dataset(d);
        return d;
    }();
    return dir;
}

struct ToyRun {
    DatasetBundle bundle;
    EmbeddingStore store;
};

ToyRun toy_run() {
    ToyRun r{load_bundle(toy_dir()), toy_store(16)};
    r.store.bind(r.bundle, MissingPolicy::Hash, 0);
    return r;
}

}  // namespace

TEST(MarginLoss, HandExamples) {
    std::vector<double> p1{5}, n1{1}, p2{20}, p3{5, 20}, n3{1, 1};
    EXPECT_EQ(margin_loss(p1, n1, 10), 6.0);
    EXPECT_EQ(margin_loss(p2, n1, 10), 0.0);
    EXPECT_EQ(margin_loss(p3, n3, 10), 6.0);
    EXPECT_THROW(margin_loss(p3, n1, 10), DomainError);
}

TEST(Adam, SingleStepHandOracle) {
    auto p = two_tensors();
    AdamState s(p);
    const double lr = 0.01;
    Matrix ga = (Matrix(3, 1) << 0.5, -2.0, 0.0).finished();
    Matrix gb = (Matrix(1, 2) << 1e-3, 3.0).finished();
    adam_step(s, p, grads_of(p, ga, gb), lr);
    // fresh state: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    auto step = [&](double g) { return lr * g / (std::abs(g) + 1e-8); };
    EXPECT_NEAR(p.value(0)(0, 0), 1.0 - step(0.5), 1e-15);
    EXPECT_NEAR(p.value(0)(1, 0), -2.0 - step(-2.0), 1e-15);
    EXPECT_EQ(p.value(0)(2, 0), 0.5);
    EXPECT_NEAR(p.value(1)(0, 0), 4.0 - step(1e-3), 1e-15);
    EXPECT_NEAR(p.value(1)(0, 1), 0.0 - step(3.0), 1e-15);
    EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientAndZeroRateAreIdentity) {
    auto p = two_tensors();
    const auto a0 = p.value(0), b0 = p.value(1);
    AdamState s(p);
    for (int i = 0; i < 5; ++i) adam_step(s, p, ad::Gradients(p), 0.1);
    EXPECT_EQ(p.value(0), a0);
    EXPECT_EQ(p.value(1), b0);
    AdamState s2(p);
    for (int i = 0; i < 5; ++i)
        adam_step(s2, p, grads_of(p, Matrix::Constant(3, 1, 7.0), Matrix::Constant(1, 2, -1.0)), 0.0);
    EXPECT_EQ(p.value(0), a0);
    EXPECT_EQ(p.value(1), b0);
}

TEST(Adam, ConstantGradientStepApproachesRate) {
    auto p = two_tensors();
    AdamState s(p);
    const double lr = 1e-3;
    double before = p.value(0)(0, 0), delta = 0;
    for (int i = 0; i < 2000; ++i) {
        adam_step(s, p, grads_of(p, Matrix::Constant(3, 1, 0.3), Matrix::Constant(1, 2, 0.3)), lr);
        delta = before - p.value(0)(0, 0);
        before = p.value(0)(0, 0);
    }
    EXPECT_NEAR(delta, lr, 1e-9);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdate) {
    auto p = two_tensors();
    const auto a0 = p.value(0);
    AdamState s(p);
    Matrix bad = Matrix::Zero(1, 2);
    bad(0, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(adam_step(s, p, grads_of(p, Matrix::Ones(3, 1), bad), 0.1), NumericError);
    EXPECT_EQ(p.value(0), a0);
    EXPECT_EQ(s.step, 0u);
}

TEST(NegativeSampling, TwoEntityEnumeration) {
    KnowledgeGraph g({{0, 0, 1}}, 2);
    Rng rng(1);
    std::set<std::tuple<EntityId, RelationId, EntityId>> seen;
    for (int i = 0; i < 200; ++i) {
        auto t = sample_negative(g, {0, 0, 1}, rng);
        seen.insert({t.head, t.rel, t.tail});
    }
    // head swap gives (b,r,b), tail swap gives (a,r,a)
    EXPECT_EQ(seen, (std::set<std::tuple<EntityId, RelationId, EntityId>>{{0, 0, 0}, {1, 0, 1}}));
    EXPECT_THROW(sample_negative(g, {0, 0, 1}, rng, false), SamplingExhaustedError);
}

TEST(NegativeSampling, FilteredAndBalanced) {
    auto g = test_util::synthetic_graph(30, 10, 2);
    Rng rng(99);
    std::size_t heads = 0;
    const Triple pos = g.triples()[3];
    for (int i = 0; i < 1000; ++i) {
        auto t = sample_negative(g, pos, rng);
        EXPECT_FALSE(g.has_triple(t));
        EXPECT_EQ(t.rel, pos.rel);
        EXPECT_TRUE((t.head == pos.head) != (t.tail == pos.tail));
        if (t.head != pos.head) ++heads;
    }
    // binomial(1000, 0.5): sigma = sqrt(250)
    EXPECT_LT(std::abs(static_cast<double>(heads) - 500.0), 5 * std::sqrt(250.0));

    Rng a(5), b(5);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_negative(g, pos, a), sample_negative(g, pos, b));
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
    auto r = toy_run();
    auto c = oracle::tiny_config(4, true);
    c.relation_count = 2;
    c.semantic.plm_dim = 16;
    auto model = Model::create(c);
    const auto& t = r.bundle.train.triples();
    std::vector<Triple> pos{t[0], t[5], t[9]};
    Rng rng(3);
    std::vector<Triple> neg;
    for (const auto& p : pos) neg.push_back(sample_negative(r.bundle.train, p, rng));
    auto batch = batch_loss(model, r.bundle.train, &r.store, pos, neg, 10.0, 1);
    EXPECT_GT(batch.loss, 0.0);
    auto num = oracle::numeric_gradient(
        model.params(),
        [&] { return batch_loss(model, r.bundle.train, &r.store, pos, neg, 10.0, 1).loss; }, 1e-5);
    double worst = 0;
    for (std::size_t p = 0; p < num.size(); ++p)
        for (Eigen::Index i = 0; i < num[p].size(); ++i)
            worst = std::max(worst, oracle::relative_error(batch.grads[p].data()[i], num[p].data()[i]));
    EXPECT_LT(worst, 1e-4);

    auto threaded = batch_loss(model, r.bundle.train, &r.store, pos, neg, 10.0, 3);
    EXPECT_EQ(threaded.loss, batch.loss);
    for (std::size_t p = 0; p < num.size(); ++p) EXPECT_EQ(threaded.grads[p], batch.grads[p]);
}

TEST(BatchLoss, SatisfiedMarginContributesNothing) {
    auto r = toy_run();
    auto c = oracle::tiny_config(4, false);
    c.relation_count = 2;
    auto model = Model::create(c);
    const auto& t = r.bundle.train.triples();
    std::vector<Triple> pos{t[0]}, neg{t[0]};  // f(pos) - f(neg) = 0 < margin
    auto active = batch_loss(model, r.bundle.train, nullptr, pos, neg, 1e-3, 1);
    EXPECT_NEAR(active.loss, 1e-3, 1e-9);
    // a negative margin is never violated here, so loss and gradient vanish
    auto idle = batch_loss(model, r.bundle.train, nullptr, pos, neg, -1.0, 1);
    EXPECT_EQ(idle.loss, 0.0);
    for (std::size_t p = 0; p < idle.grads.size(); ++p) EXPECT_TRUE(idle.grads[p].isZero(0.0));
}

TEST(Config, DefaultsMatchPublishedSettings) {
    TrainConfig c;
    EXPECT_EQ(c.lr, 1e-3);
    EXPECT_EQ(c.epochs, 50);
    EXPECT_EQ(c.patience, 100);
    EXPECT_EQ(c.batch_size, 16u);
    EXPECT_EQ(c.margin, 10.0);
    EXPECT_EQ(c.hops, 3);
    EXPECT_EQ(c.sem_dim, 24u);
    EXPECT_EQ(c.model_config(4, 16).input_dim(), 32u);
}

TEST(Config, ParsesJsonAndKeyValue) {
    auto j = parse_train_config(R"({"lr": 0.5, "epochs": 3, "aggregation": "mean", "semantic": false})");
    EXPECT_EQ(j.lr, 0.5);
    EXPECT_EQ(j.epochs, 3);
    EXPECT_EQ(j.aggregation, Aggregation::Mean);
    EXPECT_FALSE(j.semantic_enabled);
    EXPECT_EQ(j.batch_size, 16u);

    auto kv = parse_train_config("# desk run\nlr = 0.5\nepochs=3  # short\n\naggregation = mean\nsemantic = false\n");
    EXPECT_EQ(kv.lr, 0.5);
    EXPECT_EQ(kv.epochs, 3);
    EXPECT_EQ(kv.aggregation, Aggregation::Mean);
    EXPECT_FALSE(kv.semantic_enabled);

    TrainConfig base;
    base.seed = 77;
    EXPECT_EQ(parse_train_config("margin = 2", base).seed, 77u);

    EXPECT_THROW(parse_train_config("{\"nope\": 1}"), FormatError);
    EXPECT_THROW(parse_train_config("nope = 1"), FormatError);
    EXPECT_THROW(parse_train_config("lr 0.5"), FormatError);
    EXPECT_THROW(parse_train_config("{\"lr\": \"fast\"}"), FormatError);
    EXPECT_THROW(parse_train_config("{\"lr\": "), FormatError);
}

TEST(Config, RoundTripAndValidation) {
    TrainConfig c;
    c.lr = 0.25;
    c.aggregation = Aggregation::TypeOnly;
    c.seed = 123456789012345ULL;
    auto back = parse_train_config(train_config_to_json(c));
    EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), DomainError);
    TrainConfig neg;
    neg.lr = -1;
    EXPECT_THROW(neg.validate(), DomainError);
    test_util::TempDir dir;
    EXPECT_THROW(load_train_config(dir.path() / "missing.cfg"), NotFoundError);
}

TEST(Fit, ZeroRateKeepsInitialParameters) {
    auto r = toy_run();
    TrainConfig c;
    c.lr = 0.0;
    c.epochs = 2;
    c.validate_every = 2;
    auto fit_result = fit(r.bundle, &r.store, c);
    auto init = Model::create(c.model_config(2, 16));
    for (std::size_t i = 0; i < init.params().size(); ++i)
        EXPECT_EQ(fit_result.model.params().value(i), init.params().value(i));
    EXPECT_FALSE(fit_result.log.events.empty());
}

TEST(Fit, SameSeedSameLog) {
    auto r = toy_run();
    TrainConfig c;
    c.epochs = 3;
    c.validate_every = 4;
    c.seed = 11;
    std::vector<std::string> streamed;
    auto a = fit(r.bundle, &r.store, c, [&](const ValidationEvent& e) { streamed.push_back(event_to_json(e)); });
    c.threads = 3;
    auto b = fit(r.bundle, &r.store, c);
    ASSERT_EQ(a.log.events.size(), b.log.events.size());
    ASSERT_EQ(streamed.size(), a.log.events.size());
    for (std::size_t i = 0; i < a.log.events.size(); ++i) {
        EXPECT_EQ(event_to_json(a.log.events[i]), event_to_json(b.log.events[i]));
        EXPECT_EQ(streamed[i], event_to_json(a.log.events[i]));
    }
    EXPECT_EQ(a.log.epoch_losses, b.log.epoch_losses);
    // the final partial stretch is validated too
    EXPECT_EQ(a.log.events.back().batch, a.log.batches);
}

TEST(Fit, EmptyValidationWarns) {
    auto r = toy_run();
    r.bundle.valid = KnowledgeGraph{};
    TrainConfig c;
    c.epochs = 1;
    auto res = fit(r.bundle, &r.store, c);
    EXPECT_TRUE(res.log.events.empty());
    ASSERT_EQ(res.log.warnings.size(), 1u);
    EXPECT_FALSE(res.log.stopped_early);
    EXPECT_EQ(res.log.epoch_losses.size(), 1u);
}

TEST(Fit, SemanticNeedsStore) {
    auto r = toy_run();
    TrainConfig c;
    EXPECT_THROW(fit(r.bundle, nullptr, c), DomainError);
    c.semantic_enabled = false;
    c.epochs = 1;
    EXPECT_NO_THROW(fit(r.bundle, nullptr, c));
}

TEST(Fit, ToyLossDecreasesOverFirstEpochs) {
    auto r = toy_run();
    int decreasing = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrainConfig c;
        c.epochs = 5;
        c.seed = seed;
        auto res = fit(r.bundle, &r.store, c);
        const auto& l = res.log.epoch_losses;
        bool ok = l.size() == 5;
        for (std::size_t i = 1; ok && i < l.size(); ++i) ok = l[i] < l[i - 1];
        decreasing += ok;
    }
    EXPECT_GE(decreasing, 18);
}
