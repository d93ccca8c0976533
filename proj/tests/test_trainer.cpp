#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "nsync/adam.hpp"
#include "nsync/common.hpp"
#include "nsync/rng.hpp"
#include "nsync/trainer.hpp"

using namespace nsync;

namespace {

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

GradVector gv(const std::vector<double>& vals) {
    GradLayout lay;
    lay.entries.push_back({"g", {static_cast<int64_t>(vals.size())}, 0});
    lay.total = vals.size();
    GradVector v = GradVector::zeros(lay);
    std::copy(vals.begin(), vals.end(), v.values.begin());
    return v;
}

GradVector random_gv(int dim, RandomStream& rng) {
    std::vector<double> vals(static_cast<size_t>(dim));
    for (double& v : vals) v = rng.normal();
    return gv(vals);
}

DenoiserConfig tiny_cfg() {
    DenoiserConfig c;
    c.d_data = 8;
    c.d_hidden = 12;
    c.n_layers = 2;
    c.d_time = 4;
    c.d_e = 6;
    return c;
}

Dataset synth_dataset(int n, int d, int n_classes, uint64_t seed, const char* source) {
    RandomStream rng(seed);
    Dataset ds;
    ds.d_data = d;
    ds.source = source;
    ds.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        LabeledSample& s = ds.samples[static_cast<size_t>(i)];
        s.x = Tensor::zeros({d});
        for (double& v : s.x.data) v = rng.normal();
        s.caption = {i % n_classes, kTokenNone};
    }
    return ds;
}

TrainConfig short_cfg(Variant v, int iterations) {
    TrainConfig cfg;
    cfg.variant = v;
    cfg.iterations = iterations;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.seed = 99;
    cfg.log_every = 5;
    cfg.checkpoint_every = 0;
    return cfg;
}

std::vector<double> dataset_bytes(const Dataset& ds) {
    std::vector<double> flat;
    for (const LabeledSample& s : ds.samples) {
        flat.insert(flat.end(), s.x.data.begin(), s.x.data.end());
        flat.push_back(static_cast<double>(s.caption.content_class));
        flat.push_back(static_cast<double>(s.caption.style_token));
    }
    return flat;
}

}  // namespace

namespace reference {

// Plain double-precision projection for cross-checking the exact path.
std::vector<double> project_naive(const std::vector<double>& src, const std::vector<double>& dst,
                                  double eps_g) {
    double dot = 0.0, nsq = 0.0;
    for (size_t i = 0; i < src.size(); ++i) {
        dot += src[i] * dst[i];
        nsq += dst[i] * dst[i];
    }
    std::vector<double> out(src.size(), 0.0);
    if (nsq < eps_g) return out;
    for (size_t i = 0; i < src.size(); ++i) out[i] = dot / nsq * dst[i];
    return out;
}

// Duplicate of one baseline finetuning run, written against the public
// stream names op for op so the production loop has an independent twin.
std::vector<double> ti_run(nsync::Model model, const nsync::Dataset& pos,
                           const nsync::TrainConfig& cfg) {
    using namespace nsync;
    set_adaptation_mode(model, cfg.mode, derive_seed(cfg.seed, stream_tag::kAdapt));
    RandomStream batch_pos = derive_stream(cfg.seed, stream_tag::kBatchPos);
    RandomStream draw_pos = derive_stream(cfg.seed, stream_tag::kDrawPos);
    const NoiseSchedule sched = model.sched.make();
    const DenoiseGraphFn fwd = denoise_fn(model);
    const GradLayout layout = model.params.trainable_layout();
    AdamState opt = AdamState::init(layout, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
    Graph g;
    const int n = static_cast<int>(pos.samples.size());
    const size_t B = static_cast<size_t>(cfg.batch);
    for (int step = 1; step <= cfg.iterations; ++step) {
        std::vector<const LabeledSample*> batch(B);
        for (auto& p : batch) p = &pos.samples[static_cast<size_t>(batch_pos.uniform_int(n))];
        std::vector<int> ts(B);
        std::vector<Tensor> eps(B);
        for (size_t i = 0; i < B; ++i) {
            ts[i] = draw_pos.uniform_int(sched.T);
            eps[i] = Tensor::zeros({model.cfg.d_data});
            for (double& e : eps[i].data) e = draw_pos.normal();
        }
        g.reset();
        std::vector<Var> losses;
        for (size_t i = 0; i < B; ++i) {
            Caption cap{batch[i]->caption.content_class, kTokenStyle};
            Var cond = embed_caption_g(g, model, cap);
            losses.push_back(ti_loss(g, fwd, batch[i]->x, ts[i], eps[i], cond, sched));
        }
        Var loss = g.scale(g.add_n(losses), 1.0 / static_cast<double>(B));
        GradVector grad = g.backward(loss, model.params);
        adam_step(model.params, grad, opt);
    }
    return model.params.flatten_trainable().values;
}

}  // namespace reference

TEST_CASE("variant names round-trip and unknown names are rejected") {
    for (Variant v : {Variant::Baseline, Variant::MeanPair, Variant::MeanAnchored,
                      Variant::Orthogonal, Variant::OrthogonalAnchored}) {
        CHECK(parse_variant(variant_name(v)) == v);
    }
    CHECK(variant_name(Variant::Baseline) == "ti");
    CHECK(variant_name(Variant::MeanPair) == "ctm");
    CHECK(variant_name(Variant::MeanAnchored) == "ctma");
    CHECK(variant_name(Variant::Orthogonal) == "cto");
    CHECK(variant_name(Variant::OrthogonalAnchored) == "ctoa");
    CHECK_THROWS_AS(parse_variant("ctob"), ConfigError);
    CHECK_THROWS_AS(parse_variant(""), ConfigError);
}

TEST_CASE("branch requirements per variant") {
    CHECK_FALSE(variant_uses_negatives(Variant::Baseline));
    CHECK(variant_uses_negatives(Variant::MeanPair));
    CHECK(variant_uses_negatives(Variant::MeanAnchored));
    CHECK(variant_uses_negatives(Variant::Orthogonal));
    CHECK(variant_uses_negatives(Variant::OrthogonalAnchored));
    CHECK_FALSE(variant_uses_anchor(Variant::Baseline));
    CHECK_FALSE(variant_uses_anchor(Variant::MeanPair));
    CHECK(variant_uses_anchor(Variant::MeanAnchored));
    CHECK_FALSE(variant_uses_anchor(Variant::Orthogonal));
    CHECK(variant_uses_anchor(Variant::OrthogonalAnchored));
}

TEST_CASE("projection hand cases are exact") {
    GradVector p1 = project(gv({1.0, 0.0}), gv({0.0, 1.0}), 1e-12);
    CHECK(p1.values[0] == 0.0);
    CHECK(p1.values[1] == 0.0);

    GradVector p2 = project(gv({2.0, 2.0}), gv({1.0, 0.0}), 1e-12);
    CHECK(p2.values[0] == 2.0);
    CHECK(p2.values[1] == 0.0);

    GradVector p3 = project(gv({3.0, 4.0}), gv({0.0, 2.0}), 1e-12);
    CHECK(p3.values[0] == 0.0);
    CHECK(p3.values[1] == 4.0);
}

TEST_CASE("projection onto a vector below the squared-norm floor is the zero vector") {
    // 2^-40 < 1e-12 < 2^-38, so the floor splits these two targets cleanly.
    GradVector src = gv({1.0, 1.0});
    GradVector below = project(src, gv({0x1p-20, 0x1p-20}), 2e-12);
    CHECK(below.values[0] == 0.0);
    CHECK(below.values[1] == 0.0);
    GradVector above = project(src, gv({0x1p-19, 0x1p-19}), 2e-12);
    CHECK(above.values[0] != 0.0);

    GradVector zero = project(src, gv({0.0, 0.0}), 1e-12);
    CHECK(zero.values[0] == 0.0);
    CHECK(zero.values[1] == 0.0);
}

TEST_CASE("projection matches a naive double-precision oracle at 50 dimensions") {
    RandomStream rng(4242);
    for (int rep = 0; rep < 40; ++rep) {
        GradVector src = random_gv(50, rng);
        GradVector dst = random_gv(50, rng);
        std::vector<double> naive = reference::project_naive(src.values, dst.values, 1e-12);
        GradVector exact = project(src, dst, 1e-12);
        for (size_t i = 0; i < naive.size(); ++i) {
            CHECK(std::abs(exact.values[i] - naive[i]) <= 1e-12 * (1.0 + std::abs(naive[i])));
        }
    }
}

TEST_CASE("rescaling the projection target by an exactly representable factor is bitwise invisible") {
    // Dyadic targets keep c * dst exactly representable for every factor here.
    RandomStream rng(777);
    for (int rep = 0; rep < 25; ++rep) {
        GradVector src = random_gv(33, rng);
        std::vector<double> dvals(33);
        for (double& d : dvals) d = static_cast<double>(rng.uniform_int(4097) - 2048) * 0x1p-10;
        GradVector dst = gv(dvals);
        if (dst.dot(dst) < 1e-6) continue;
        GradVector base = project(src, dst, 1e-12);
        for (double c : {-3.0, 0.5, 10.0}) {
            std::vector<double> scaled(33);
            for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = c * dvals[i];
            GradVector got = project(src, gv(scaled), 1e-12);
            CHECK(bits_equal(got.values, base.values));
        }
    }
}

TEST_CASE("halving an arbitrary projection target is bitwise invisible") {
    RandomStream rng(778);
    for (int rep = 0; rep < 25; ++rep) {
        GradVector src = random_gv(64, rng);
        GradVector dst = random_gv(64, rng);
        std::vector<double> halved(dst.values);
        for (double& d : halved) d *= 0.5;
        CHECK(bits_equal(project(src, gv(halved), 1e-12).values,
                         project(src, dst, 1e-12).values));
    }
}

TEST_CASE("projection rejects mismatched layouts and a non-positive floor") {
    CHECK_THROWS_AS(project(gv({1.0, 2.0}), gv({1.0, 2.0, 3.0}), 1e-12), ConfigError);
    CHECK_THROWS_AS(project(gv({1.0}), gv({1.0}), 0.0), ConfigError);
    CHECK_THROWS_AS(project(gv({1.0}), gv({1.0}), -1e-12), ConfigError);
}

TEST_CASE("anchored orthogonal combination reproduces the hand-worked case exactly") {
    BranchGrads g{gv({1.0, 1.0}), gv({0.0, 1.0}), gv({1.0, 0.0})};
    GradVector out = combine_gradients(Variant::OrthogonalAnchored, g, 1e-12);
    CHECK(out.values[0] == 0.0);
    CHECK(out.values[1] == 2.0);
}

TEST_CASE("orthogonal combination cancels a parallel negative exactly") {
    BranchGrads g{gv({2.0, 4.0}), std::nullopt, gv({1.0, 2.0})};
    GradVector out = combine_gradients(Variant::Orthogonal, g, 1e-12);
    CHECK(out.values[0] == 0.0);
    CHECK(out.values[1] == 0.0);
}

TEST_CASE("orthogonal combination leaves an orthogonal positive untouched") {
    BranchGrads g{gv({1.0, 0.0}), std::nullopt, gv({0.0, 1.0})};
    GradVector out = combine_gradients(Variant::Orthogonal, g, 1e-12);
    CHECK(out.values[0] == 1.0);
    CHECK(out.values[1] == 0.0);
}

TEST_CASE("baseline combination passes the positive gradient through bitwise") {
    GradVector pos = gv({0.1, -0.7, 3.25});
    BranchGrads g{pos, gv({1.0, 1.0, 1.0}), gv({2.0, 2.0, 2.0})};
    CHECK(bits_equal(combine_gradients(Variant::Baseline, g, 1e-12).values, pos.values));
}

TEST_CASE("mean combinations average the branches") {
    BranchGrads pair{gv({1.0, 3.0}), std::nullopt, gv({3.0, 1.0})};
    GradVector ctm = combine_gradients(Variant::MeanPair, pair, 1e-12);
    CHECK(ctm.values[0] == 2.0);
    CHECK(ctm.values[1] == 2.0);

    BranchGrads triple{gv({1.0, 2.0}), gv({2.0, 3.0}), gv({3.0, 1.0})};
    GradVector ctma = combine_gradients(Variant::MeanAnchored, triple, 1e-12);
    CHECK(ctma.values[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(ctma.values[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("combination rejects missing required branches") {
    BranchGrads only_pos{gv({1.0, 2.0}), std::nullopt, std::nullopt};
    CHECK_THROWS_AS(combine_gradients(Variant::MeanPair, only_pos, 1e-12), ConfigError);
    CHECK_THROWS_AS(combine_gradients(Variant::Orthogonal, only_pos, 1e-12), ConfigError);
    BranchGrads no_anchor{gv({1.0, 2.0}), std::nullopt, gv({1.0, 0.0})};
    CHECK_THROWS_AS(combine_gradients(Variant::MeanAnchored, no_anchor, 1e-12), ConfigError);
    CHECK_THROWS_AS(combine_gradients(Variant::OrthogonalAnchored, no_anchor, 1e-12), ConfigError);
    CHECK_THROWS_AS(combine_gradients(Variant::Baseline,
                                      BranchGrads{gv({std::numeric_limits<double>::infinity()}),
                                                  std::nullopt, std::nullopt},
                                      1e-12),
                    NumericError);
}

TEST_CASE("orthogonal update is numerically orthogonal to the negative gradient") {
    RandomStream rng(31337);
    for (int dim : {16, 256}) {
        for (int rep = 0; rep < 100; ++rep) {
            GradVector pos = random_gv(dim, rng);
            GradVector neg = random_gv(dim, rng);
            BranchGrads g{pos, std::nullopt, neg};
            GradVector out = combine_gradients(Variant::Orthogonal, g, 1e-12);
            CHECK(std::abs(out.dot(neg)) <= 1e-9 * pos.norm() * neg.norm());
        }
    }
}

TEST_CASE("step stats carry a fixed column order and mark absent branches") {
    CHECK(StepStats::csv_header() ==
          "step,loss_pos,loss_anchor,loss_neg,norm_pos,norm_anchor,norm_neg,norm_update,"
          "cos_pos_neg,cos_pos_anchor");
    StepStats st;
    st.step = 7;
    st.loss_pos = 0.5;
    st.norm_pos = 1.0;
    st.norm_update = 1.0;
    const std::string row = st.csv_row();
    CHECK(row.substr(0, 2) == "7,");
    CHECK(row.find("nan") != std::string::npos);
}

TEST_CASE("a baseline run reproduces the duplicate-path loop bit for bit") {
    Model base = init_base_model(tiny_cfg(), 3, 555);
    Dataset pos = synth_dataset(6, 8, 3, 2001, "styleworld");
    TrainConfig cfg = short_cfg(Variant::Baseline, 500);

    Model trained = base;
    TrainResult res = train(trained, pos, nullptr, cfg);
    CHECK(res.steps == 500);

    std::vector<double> expect = reference::ti_run(base, pos, cfg);
    CHECK(bits_equal(trained.params.flatten_trainable().values, expect));
}

TEST_CASE("training twice from the same seed is bitwise deterministic") {
    Dataset pos = synth_dataset(6, 8, 3, 2002, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2003, "model");
    TrainConfig cfg = short_cfg(Variant::OrthogonalAnchored, 50);

    Model a = init_base_model(tiny_cfg(), 3, 556);
    Model b = a;
    TrainResult ra = train(a, pos, &neg, cfg);
    TrainResult rb = train(b, pos, &neg, cfg);
    CHECK(bits_equal(a.params.flatten_trainable().values, b.params.flatten_trainable().values));
    REQUIRE(ra.stats.size() == rb.stats.size());
    for (size_t i = 0; i < ra.stats.size(); ++i) {
        CHECK(ra.stats[i].csv_row() == rb.stats[i].csv_row());
    }
}

TEST_CASE("the baseline variant never reads the negative dataset") {
    Dataset pos = synth_dataset(6, 8, 3, 2004, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2005, "model");
    TrainConfig cfg = short_cfg(Variant::Baseline, 50);

    Model without = init_base_model(tiny_cfg(), 3, 557);
    Model with = without;
    train(without, pos, nullptr, cfg);
    train(with, pos, &neg, cfg);
    CHECK(bits_equal(without.params.flatten_trainable().values,
                     with.params.flatten_trainable().values));
}

TEST_CASE("training mutates neither dataset") {
    Dataset pos = synth_dataset(6, 8, 3, 2006, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2007, "model");
    const std::vector<double> pos_before = dataset_bytes(pos);
    const std::vector<double> neg_before = dataset_bytes(neg);
    Model m = init_base_model(tiny_cfg(), 3, 558);
    train(m, pos, &neg, short_cfg(Variant::OrthogonalAnchored, 20));
    CHECK(bits_equal(dataset_bytes(pos), pos_before));
    CHECK(bits_equal(dataset_bytes(neg), neg_before));
}

TEST_CASE("stats arrive on the logging grid with finite branch values") {
    Dataset pos = synth_dataset(6, 8, 3, 2008, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2009, "model");
    TrainConfig cfg = short_cfg(Variant::OrthogonalAnchored, 20);
    cfg.log_every = 3;
    Model m = init_base_model(tiny_cfg(), 3, 559);

    std::vector<int> seen;
    TrainSinks sinks;
    sinks.on_stats = [&](const StepStats& st) { seen.push_back(st.step); };
    TrainResult res = train(m, pos, &neg, cfg, sinks);

    CHECK(seen == std::vector<int>{3, 6, 9, 12, 15, 18});
    REQUIRE(res.stats.size() == 6);
    for (const StepStats& st : res.stats) {
        CHECK(std::isfinite(st.loss_pos));
        CHECK(std::isfinite(st.loss_anchor));
        CHECK(std::isfinite(st.loss_neg));
        CHECK(std::isfinite(st.norm_update));
        CHECK(std::abs(st.cos_pos_neg) <= 1.0);
        CHECK(std::abs(st.cos_pos_anchor) <= 1.0);
    }
}

TEST_CASE("a baseline run marks the unused branches as absent") {
    Dataset pos = synth_dataset(6, 8, 3, 2010, "styleworld");
    Model m = init_base_model(tiny_cfg(), 3, 560);
    TrainConfig cfg = short_cfg(Variant::Baseline, 10);
    cfg.log_every = 10;
    TrainResult res = train(m, pos, nullptr, cfg);
    REQUIRE(res.stats.size() == 1);
    const StepStats& st = res.stats[0];
    CHECK(std::isfinite(st.loss_pos));
    CHECK(std::isnan(st.loss_anchor));
    CHECK(std::isnan(st.loss_neg));
    CHECK(std::isnan(st.norm_anchor));
    CHECK(std::isnan(st.norm_neg));
    CHECK(std::isnan(st.cos_pos_neg));
    CHECK(std::isnan(st.cos_pos_anchor));
}

TEST_CASE("checkpoint sink fires on its own grid and zero disables it") {
    Dataset pos = synth_dataset(6, 8, 3, 2011, "styleworld");
    TrainConfig cfg = short_cfg(Variant::Baseline, 4);
    cfg.log_every = 2;
    cfg.checkpoint_every = 2;

    std::vector<int> snaps;
    TrainSinks sinks;
    sinks.on_checkpoint = [&](int step, const Model&) { snaps.push_back(step); };
    Model m = init_base_model(tiny_cfg(), 3, 561);
    train(m, pos, nullptr, cfg, sinks);
    CHECK(snaps == std::vector<int>{2, 4});

    snaps.clear();
    cfg.checkpoint_every = 0;
    Model m2 = init_base_model(tiny_cfg(), 3, 561);
    train(m2, pos, nullptr, cfg, sinks);
    CHECK(snaps.empty());
}

TEST_CASE("a style-token negative identical to the positive cancels the shared-draw update") {
    // One positive, one equal negative, shared draws: both branches build the
    // same graph, so the orthogonal rule subtracts the gradient from itself.
    Dataset pos = synth_dataset(1, 8, 1, 2012, "styleworld");
    Dataset neg = pos;
    neg.source = "model";

    TrainConfig cfg = short_cfg(Variant::Orthogonal, 10);
    cfg.batch = 3;
    cfg.share_branch_draws = true;

    Model m = init_base_model(tiny_cfg(), 3, 562);
    set_adaptation_mode(m, cfg.mode, derive_seed(cfg.seed, stream_tag::kAdapt));
    const std::vector<double> start = m.params.flatten_trainable().values;
    train(m, pos, &neg, cfg);
    CHECK(bits_equal(m.params.flatten_trainable().values, start));

    // Independent per-branch draws break the tie and the parameters move.
    cfg.share_branch_draws = false;
    Model m2 = init_base_model(tiny_cfg(), 3, 562);
    set_adaptation_mode(m2, cfg.mode, derive_seed(cfg.seed, stream_tag::kAdapt));
    const std::vector<double> start2 = m2.params.flatten_trainable().values;
    train(m2, pos, &neg, cfg);
    CHECK_FALSE(bits_equal(m2.params.flatten_trainable().values, start2));
}

TEST_CASE("generic-conditioned negatives carry no style-token gradient") {
    // In style-token mode only the style embedding is trainable, and the mean
    // variants condition the negative branch with the generic token, so that
    // branch's gradient is identically zero.
    Dataset pos = synth_dataset(6, 8, 3, 2013, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2014, "model");
    TrainConfig cfg = short_cfg(Variant::MeanPair, 10);
    cfg.log_every = 5;
    Model m = init_base_model(tiny_cfg(), 3, 563);
    TrainResult res = train(m, pos, &neg, cfg);
    REQUIRE(res.stats.size() == 2);
    for (const StepStats& st : res.stats) {
        CHECK(st.norm_neg == 0.0);
        CHECK(st.cos_pos_neg == 0.0);
        CHECK(std::isfinite(st.loss_neg));
        CHECK(st.norm_pos > 0.0);
    }
}

TEST_CASE("per-triplet projection equals the batch path at batch size one") {
    Dataset pos = synth_dataset(6, 8, 3, 2015, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2016, "model");
    TrainConfig cfg = short_cfg(Variant::OrthogonalAnchored, 25);
    cfg.batch = 1;

    Model a = init_base_model(tiny_cfg(), 3, 564);
    Model b = a;
    cfg.per_triplet_projection = false;
    train(a, pos, &neg, cfg);
    cfg.per_triplet_projection = true;
    train(b, pos, &neg, cfg);
    CHECK(bits_equal(a.params.flatten_trainable().values, b.params.flatten_trainable().values));
}

TEST_CASE("per-triplet projection is a no-op for the baseline variant") {
    Dataset pos = synth_dataset(6, 8, 3, 2017, "styleworld");
    TrainConfig cfg = short_cfg(Variant::Baseline, 25);
    Model a = init_base_model(tiny_cfg(), 3, 565);
    Model b = a;
    cfg.per_triplet_projection = false;
    train(a, pos, nullptr, cfg);
    cfg.per_triplet_projection = true;
    train(b, pos, nullptr, cfg);
    CHECK(bits_equal(a.params.flatten_trainable().values, b.params.flatten_trainable().values));
}

TEST_CASE("per-triplet projection at full batch runs and diverges from the batch path") {
    Dataset pos = synth_dataset(6, 8, 3, 2018, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2019, "model");
    TrainConfig cfg = short_cfg(Variant::OrthogonalAnchored, 25);

    Model a = init_base_model(tiny_cfg(), 3, 566);
    Model b = a;
    cfg.per_triplet_projection = false;
    TrainResult ra = train(a, pos, &neg, cfg);
    cfg.per_triplet_projection = true;
    TrainResult rb = train(b, pos, &neg, cfg);
    CHECK_FALSE(bits_equal(a.params.flatten_trainable().values,
                           b.params.flatten_trainable().values));
    REQUIRE(!ra.stats.empty());
    REQUIRE(!rb.stats.empty());
    CHECK(std::isfinite(rb.stats.back().norm_update));
}

TEST_CASE("low-rank finetuning moves the adapters and logs finite stats") {
    LoraSpec spec;
    spec.targets = {"denoiser/W1"};
    spec.rank = 2;
    spec.alpha = 2.0;

    Model m = init_base_model(tiny_cfg(), 3, 567);
    set_adaptation_mode(m, AdaptationMode::LowRank, 11, &spec);
    const std::vector<double> start = m.params.flatten_trainable().values;

    Dataset pos = synth_dataset(6, 8, 3, 2020, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2021, "model");
    TrainConfig cfg = short_cfg(Variant::OrthogonalAnchored, 20);
    cfg.mode = AdaptationMode::LowRank;
    cfg.log_every = 10;
    TrainResult res = train(m, pos, &neg, cfg);

    CHECK_FALSE(bits_equal(m.params.flatten_trainable().values, start));
    REQUIRE(res.stats.size() == 2);
    CHECK(std::isfinite(res.stats.back().loss_pos));
    CHECK(std::isfinite(res.stats.back().norm_update));
}

TEST_CASE("invalid training configurations are rejected up front") {
    Dataset pos = synth_dataset(6, 8, 3, 2022, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2023, "model");
    Model m = init_base_model(tiny_cfg(), 3, 568);

    TrainConfig cfg = short_cfg(Variant::Baseline, 10);
    cfg.iterations = 0;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
    cfg = short_cfg(Variant::Baseline, 10);
    cfg.batch = 0;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
    cfg = short_cfg(Variant::Baseline, 10);
    cfg.lr = 0.0;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
    cfg = short_cfg(Variant::Baseline, 10);
    cfg.log_every = 0;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
    cfg = short_cfg(Variant::Baseline, 10);
    cfg.eps_g = 0.0;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
    cfg = short_cfg(Variant::Baseline, 10);
    cfg.checkpoint_every = -1;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);

    Dataset empty;
    empty.d_data = 8;
    CHECK_THROWS_AS(train(m, empty, nullptr, short_cfg(Variant::Baseline, 10)), ConfigError);

    Dataset wrong_dim = synth_dataset(4, 5, 3, 2024, "styleworld");
    CHECK_THROWS_AS(train(m, wrong_dim, nullptr, short_cfg(Variant::Baseline, 10)), ConfigError);
}

TEST_CASE("variants that need branches reject runs that cannot supply them") {
    Dataset pos = synth_dataset(6, 8, 3, 2025, "styleworld");
    Dataset neg = synth_dataset(9, 8, 3, 2026, "model");

    Model m1 = init_base_model(tiny_cfg(), 3, 569);
    CHECK_THROWS_AS(train(m1, pos, nullptr, short_cfg(Variant::Orthogonal, 10)), ConfigError);

    Model m2 = init_base_model(tiny_cfg(), 3, 569);
    Dataset empty_neg;
    empty_neg.d_data = 8;
    CHECK_THROWS_AS(train(m2, pos, &empty_neg, short_cfg(Variant::Orthogonal, 10)), ConfigError);

    Model m3 = init_base_model(tiny_cfg(), 3, 569);
    Dataset one_pos = synth_dataset(1, 8, 1, 2027, "styleworld");
    Dataset one_neg = synth_dataset(2, 8, 1, 2028, "model");
    CHECK_THROWS_AS(train(m3, one_pos, &one_neg, short_cfg(Variant::OrthogonalAnchored, 10)),
                    ConfigError);

    // Negatives must cover every content class the positives use.
    Model m4 = init_base_model(tiny_cfg(), 3, 569);
    Dataset gap_neg = synth_dataset(4, 8, 2, 2029, "model");
    CHECK_THROWS_AS(train(m4, pos, &gap_neg, short_cfg(Variant::Orthogonal, 10)), ConfigError);

    Model m5 = init_base_model(tiny_cfg(), 3, 569);
    Dataset bad_class = synth_dataset(4, 8, 3, 2030, "model");
    bad_class.samples[0].caption.content_class = 7;
    CHECK_THROWS_AS(train(m5, pos, &bad_class, short_cfg(Variant::Orthogonal, 10)), ConfigError);
}

TEST_CASE("an adapted model must match the configured regime") {
    Dataset pos = synth_dataset(6, 8, 3, 2031, "styleworld");
    Model m = init_base_model(tiny_cfg(), 3, 570);
    set_adaptation_mode(m, AdaptationMode::StyleToken, 1);
    TrainConfig cfg = short_cfg(Variant::Baseline, 10);
    cfg.mode = AdaptationMode::LowRank;
    CHECK_THROWS_AS(train(m, pos, nullptr, cfg), ConfigError);
}

TEST_CASE("pretraining trains every parameter and the loss trends downward") {
    Dataset data = synth_dataset(16, 8, 3, 2033, "styleworld");
    Model m = init_base_model(tiny_cfg(), 3, 580);
    PretrainConfig cfg;
    cfg.iterations = 300;
    cfg.batch = 8;
    cfg.lr = 3e-3;
    cfg.seed = 5;
    cfg.log_every = 25;

    std::vector<int> seen;
    PretrainResult res = pretrain(m, data, cfg,
                                  [&](const PretrainStat& st) { seen.push_back(st.step); });
    CHECK(res.steps == 300);
    REQUIRE(res.stats.size() == 12);
    CHECK(seen.size() == 12);
    CHECK(seen.front() == 25);
    CHECK(seen.back() == 300);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 3; ++i) head += res.stats[static_cast<size_t>(i)].loss;
    for (int i = 9; i < 12; ++i) tail += res.stats[static_cast<size_t>(i)].loss;
    CHECK(tail < head);
    CHECK(PretrainStat::csv_header() == "step,loss,grad_norm");
    CHECK(res.stats[0].csv_row().substr(0, 3) == "25,");
}

TEST_CASE("pretraining is bitwise deterministic") {
    Dataset data = synth_dataset(10, 8, 3, 2034, "styleworld");
    PretrainConfig cfg;
    cfg.iterations = 40;
    cfg.batch = 4;
    cfg.seed = 6;
    Model a = init_base_model(tiny_cfg(), 3, 581);
    Model b = a;
    pretrain(a, data, cfg);
    pretrain(b, data, cfg);
    CHECK(bits_equal(a.params.flatten_trainable().values, b.params.flatten_trainable().values));
}

TEST_CASE("pretraining rejects adapted models and bad inputs") {
    Dataset data = synth_dataset(10, 8, 3, 2035, "styleworld");
    Model adapted = init_base_model(tiny_cfg(), 3, 582);
    set_adaptation_mode(adapted, AdaptationMode::StyleToken, 1);
    CHECK_THROWS_AS(pretrain(adapted, data, {}), ConfigError);

    Model m = init_base_model(tiny_cfg(), 3, 582);
    Dataset empty;
    empty.d_data = 8;
    CHECK_THROWS_AS(pretrain(m, empty, {}), ConfigError);
    Dataset wrong = synth_dataset(4, 5, 3, 2036, "styleworld");
    CHECK_THROWS_AS(pretrain(m, wrong, {}), ConfigError);
    PretrainConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(pretrain(m, data, bad), ConfigError);
    bad = {};
    bad.lr = -1.0;
    CHECK_THROWS_AS(pretrain(m, data, bad), ConfigError);
}

TEST_CASE("the loss trends downward over a short baseline run") {
    Dataset pos = synth_dataset(8, 8, 3, 2032, "styleworld");
    TrainConfig cfg = short_cfg(Variant::Baseline, 400);
    cfg.lr = 5e-3;
    cfg.log_every = 50;
    Model m = init_base_model(tiny_cfg(), 3, 571);
    TrainResult res = train(m, pos, nullptr, cfg);
    REQUIRE(res.stats.size() == 8);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 2; ++i) head += res.stats[static_cast<size_t>(i)].loss_pos;
    for (int i = 6; i < 8; ++i) tail += res.stats[static_cast<size_t>(i)].loss_pos;
    CHECK(tail < head);
}
