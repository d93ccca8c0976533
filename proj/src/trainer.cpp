#include "nsync/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nsync/common.hpp"
#include "nsync/exact.hpp"
#include "nsync/rng.hpp"
#include "nsync/ti_loss.hpp"

namespace nsync {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "ti";
        case Variant::MeanPair: return "ctm";
        case Variant::MeanAnchored: return "ctma";
        case Variant::Orthogonal: return "cto";
        case Variant::OrthogonalAnchored: return "ctoa";
    }
    throw ConfigError("unknown variant enum value");
}

Variant parse_variant(const std::string& name) {
    if (name == "ti") return Variant::Baseline;
    if (name == "ctm") return Variant::MeanPair;
    if (name == "ctma") return Variant::MeanAnchored;
    if (name == "cto") return Variant::Orthogonal;
    if (name == "ctoa") return Variant::OrthogonalAnchored;
    throw ConfigError(str_cat("unknown variant '", name, "' (expected ti, ctm, ctma, cto, or ctoa)"));
}

bool variant_uses_negatives(Variant v) { return v != Variant::Baseline; }

bool variant_uses_anchor(Variant v) {
    return v == Variant::MeanAnchored || v == Variant::OrthogonalAnchored;
}

StepStats::StepStats() {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    loss_pos = loss_anchor = loss_neg = nan;
    norm_pos = norm_anchor = norm_neg = norm_update = nan;
    cos_pos_neg = cos_pos_anchor = nan;
}

std::string StepStats::csv_header() {
    return "step,loss_pos,loss_anchor,loss_neg,norm_pos,norm_anchor,norm_neg,norm_update,"
           "cos_pos_neg,cos_pos_anchor";
}

std::string StepStats::csv_row() const {
    std::string out = std::to_string(step);
    for (double v : {loss_pos, loss_anchor, loss_neg, norm_pos, norm_anchor, norm_neg,
                     norm_update, cos_pos_neg, cos_pos_anchor}) {
        out += ',';
        out += std::isnan(v) ? "nan" : fmt_double(v);
    }
    return out;
}

GradVector project(const GradVector& src, const GradVector& dst, double eps_g) {
    NSYNC_CHECK(src.layout == dst.layout, "projection between mismatched layouts");
    NSYNC_CHECK(eps_g > 0.0, "projection floor must be positive, got ", eps_g);
    GradVector out = GradVector::zeros(src.layout);
    ExactSum s_dot = exact_dot(src.values, dst.values);
    ExactSum s_nsq = exact_dot(dst.values, dst.values);
    if (s_nsq.compare(eps_g) < 0) return out;
    for (size_t i = 0; i < out.values.size(); ++i) {
        if (dst.values[i] == 0.0 || s_dot.sign() == 0) continue;
        ExactSum num;
        num.add_scaled(s_dot, dst.values[i]);
        out.values[i] = exact_div(num, s_nsq);
    }
    NSYNC_CHECK_NUM(out.all_finite(), "non-finite projection component");
    return out;
}

GradVector combine_gradients(Variant v, const BranchGrads& g, double eps_g) {
    const bool need_neg = variant_uses_negatives(v);
    const bool need_anc = variant_uses_anchor(v);
    NSYNC_CHECK(!need_neg || g.neg.has_value(),
                "variant ", variant_name(v), " needs a negative-branch gradient");
    NSYNC_CHECK(!need_anc || g.anchor.has_value(),
                "variant ", variant_name(v), " needs an anchor-branch gradient");

    GradVector out = g.pos;
    switch (v) {
        case Variant::Baseline:
            break;
        case Variant::MeanPair:
            out.axpy(1.0, *g.neg).scale(0.5);
            break;
        case Variant::MeanAnchored:
            out.axpy(1.0, *g.anchor).axpy(1.0, *g.neg).scale(1.0 / 3.0);
            break;
        case Variant::Orthogonal:
            out.axpy(-1.0, project(g.pos, *g.neg, eps_g));
            break;
        case Variant::OrthogonalAnchored:
            out.axpy(-1.0, project(g.pos, *g.neg, eps_g));
            out.axpy(1.0, project(g.pos, *g.anchor, eps_g));
            break;
    }
    const std::string bad = out.first_non_finite();
    NSYNC_CHECK_NUM(bad.empty(), "non-finite combined gradient in ", bad);
    return out;
}

namespace {

struct BranchDraw {
    int t = 0;
    Tensor eps;
};

// Per triplet: timestep first, then the noise vector.
std::vector<BranchDraw> make_draws(RandomStream& rng, int batch, int T, int d_data) {
    std::vector<BranchDraw> draws(static_cast<size_t>(batch));
    for (auto& d : draws) {
        d.t = rng.uniform_int(T);
        d.eps = Tensor::zeros({d_data});
        for (double& e : d.eps.data) e = rng.normal();
    }
    return draws;
}

struct BranchOut {
    double loss = 0.0;
    GradVector grad;
};

BranchOut branch_pass(Graph& g, const Model& m, const DenoiseGraphFn& fwd,
                      const NoiseSchedule& sched, const char* branch,
                      const std::vector<const LabeledSample*>& samples, int token,
                      const std::vector<BranchDraw>& draws) {
    try {
        g.reset();
        std::vector<Var> losses;
        losses.reserve(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            Caption cap{samples[i]->caption.content_class, token};
            Var cond = embed_caption_g(g, m, cap);
            losses.push_back(ti_loss(g, fwd, samples[i]->x, draws[i].t, draws[i].eps, cond, sched));
        }
        Var loss = g.scale(g.add_n(losses), 1.0 / static_cast<double>(samples.size()));
        BranchOut out;
        out.loss = g.scalar_value(loss);
        out.grad = g.backward(loss, m.params);
        return out;
    } catch (const NumericError& e) {
        throw NumericError(str_cat(branch, " branch: ", e.what()));
    }
}

double safe_cosine(const GradVector& a, const GradVector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace

TrainResult train(Model& model, const Dataset& positives, const Dataset* negatives,
                  const TrainConfig& cfg, const TrainSinks& sinks) {
    NSYNC_CHECK(cfg.iterations >= 1, "iterations must be >= 1, got ", cfg.iterations);
    NSYNC_CHECK(cfg.batch >= 1, "batch must be >= 1, got ", cfg.batch);
    NSYNC_CHECK(cfg.lr > 0.0, "lr must be positive, got ", cfg.lr);
    NSYNC_CHECK(cfg.log_every >= 1, "log_every must be >= 1, got ", cfg.log_every);
    NSYNC_CHECK(cfg.checkpoint_every >= 0, "checkpoint_every must be >= 0, got ",
                cfg.checkpoint_every);
    NSYNC_CHECK(cfg.eps_g > 0.0, "eps_g must be positive, got ", cfg.eps_g);
    NSYNC_CHECK(!positives.samples.empty(), "positive dataset is empty");
    NSYNC_CHECK(positives.d_data == model.cfg.d_data, "positive dataset dimension ",
                positives.d_data, " does not match model dimension ", model.cfg.d_data);

    if (model.mode == AdaptationMode::None) {
        set_adaptation_mode(model, cfg.mode, derive_seed(cfg.seed, stream_tag::kAdapt));
    } else {
        NSYNC_CHECK(model.mode == cfg.mode, "model is adapted as ",
                    adaptation_mode_name(model.mode), " but config asks for ",
                    adaptation_mode_name(cfg.mode));
    }

    const bool use_neg = variant_uses_negatives(cfg.variant);
    const bool use_anc = variant_uses_anchor(cfg.variant);
    const int n_pos = static_cast<int>(positives.samples.size());
    if (use_anc) {
        NSYNC_CHECK(n_pos >= 2, "anchored variants need at least two positives, got ", n_pos);
    }

    // Negatives are bucketed by content class; each triplet draws one from
    // its positive's bucket.
    std::vector<std::vector<const LabeledSample*>> neg_bucket;
    if (use_neg) {
        NSYNC_CHECK(negatives != nullptr, "variant ", variant_name(cfg.variant),
                    " needs a negative dataset");
        NSYNC_CHECK(!negatives->samples.empty(), "negative dataset is empty");
        NSYNC_CHECK(negatives->d_data == model.cfg.d_data, "negative dataset dimension ",
                    negatives->d_data, " does not match model dimension ", model.cfg.d_data);
        neg_bucket.resize(static_cast<size_t>(model.n_content));
        for (const LabeledSample& s : negatives->samples) {
            const int c = s.caption.content_class;
            NSYNC_CHECK(c >= 0 && c < model.n_content, "negative sample has content class ", c,
                        " outside the model's ", model.n_content, " classes");
            neg_bucket[static_cast<size_t>(c)].push_back(&s);
        }
        for (const LabeledSample& s : positives.samples) {
            NSYNC_CHECK(!neg_bucket[static_cast<size_t>(s.caption.content_class)].empty(),
                        "no negatives for content class ", s.caption.content_class);
        }
    }

    RandomStream batch_pos = derive_stream(cfg.seed, stream_tag::kBatchPos);
    RandomStream batch_anc = derive_stream(cfg.seed, stream_tag::kBatchAnchor);
    RandomStream batch_neg = derive_stream(cfg.seed, stream_tag::kBatchNeg);
    RandomStream draw_pos = derive_stream(cfg.seed, stream_tag::kDrawPos);
    RandomStream draw_anc = derive_stream(cfg.seed, stream_tag::kDrawAnchor);
    RandomStream draw_neg = derive_stream(cfg.seed, stream_tag::kDrawNeg);
    RandomStream draw_shared = derive_stream(cfg.seed, stream_tag::kDrawShared);

    const NoiseSchedule sched = model.sched.make();
    const DenoiseGraphFn fwd = denoise_fn(model);
    const GradLayout layout = model.params.trainable_layout();
    NSYNC_CHECK(layout.total > 0, "model has no trainable parameters after adaptation");

    AdamState opt = AdamState::init(layout, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});

    // Mean-style variants condition the negative branch with the generic
    // token; orthogonal ones keep the style token on every branch.
    const int neg_token =
        (cfg.variant == Variant::MeanPair || cfg.variant == Variant::MeanAnchored)
            ? kTokenGeneric
            : kTokenStyle;

    Graph g;
    TrainResult result;
    const size_t B = static_cast<size_t>(cfg.batch);

    for (int step = 1; step <= cfg.iterations; ++step) {
        std::vector<const LabeledSample*> pos(B), anc, neg;
        std::vector<size_t> pos_idx(B);
        for (size_t i = 0; i < B; ++i) {
            pos_idx[i] = static_cast<size_t>(batch_pos.uniform_int(n_pos));
            pos[i] = &positives.samples[pos_idx[i]];
        }
        if (use_anc) {
            anc.resize(B);
            for (size_t i = 0; i < B; ++i) {
                // Uniform over positives excluding the triplet's own positive.
                size_t a = static_cast<size_t>(batch_anc.uniform_int(n_pos - 1));
                if (a >= pos_idx[i]) ++a;
                anc[i] = &positives.samples[a];
            }
        }
        if (use_neg) {
            neg.resize(B);
            for (size_t i = 0; i < B; ++i) {
                const auto& bucket = neg_bucket[static_cast<size_t>(pos[i]->caption.content_class)];
                neg[i] = bucket[static_cast<size_t>(
                    batch_neg.uniform_int(static_cast<int>(bucket.size())))];
            }
        }

        std::vector<BranchDraw> d_pos, d_anc, d_neg;
        if (cfg.share_branch_draws) {
            d_pos = make_draws(draw_shared, cfg.batch, sched.T, model.cfg.d_data);
            if (use_anc) d_anc = d_pos;
            if (use_neg) d_neg = d_pos;
        } else {
            d_pos = make_draws(draw_pos, cfg.batch, sched.T, model.cfg.d_data);
            if (use_anc) d_anc = make_draws(draw_anc, cfg.batch, sched.T, model.cfg.d_data);
            if (use_neg) d_neg = make_draws(draw_neg, cfg.batch, sched.T, model.cfg.d_data);
        }

        BranchGrads grads{GradVector::zeros(layout), std::nullopt, std::nullopt};
        StepStats st;
        st.step = step;
        GradVector update = GradVector::zeros(layout);

        if (cfg.per_triplet_projection && cfg.variant != Variant::Baseline) {
            // Combine each triplet's gradients first, then average the
            // combined updates.
            GradVector mean_pos = GradVector::zeros(layout);
            GradVector mean_anc = GradVector::zeros(layout);
            GradVector mean_neg = GradVector::zeros(layout);
            double loss_pos = 0.0, loss_anc = 0.0, loss_neg = 0.0;
            for (size_t i = 0; i < B; ++i) {
                BranchGrads one{GradVector::zeros(layout), std::nullopt, std::nullopt};
                BranchOut p = branch_pass(g, model, fwd, sched, "positive", {pos[i]}, kTokenStyle,
                                          {d_pos[i]});
                one.pos = p.grad;
                loss_pos += p.loss;
                mean_pos.axpy(1.0, p.grad);
                if (use_anc) {
                    BranchOut a = branch_pass(g, model, fwd, sched, "anchor", {anc[i]},
                                              kTokenStyle, {d_anc[i]});
                    one.anchor = a.grad;
                    loss_anc += a.loss;
                    mean_anc.axpy(1.0, a.grad);
                }
                if (use_neg) {
                    BranchOut ng = branch_pass(g, model, fwd, sched, "negative", {neg[i]},
                                               neg_token, {d_neg[i]});
                    one.neg = ng.grad;
                    loss_neg += ng.loss;
                    mean_neg.axpy(1.0, ng.grad);
                }
                update.axpy(1.0, combine_gradients(cfg.variant, one, cfg.eps_g));
            }
            const double inv = 1.0 / static_cast<double>(B);
            update.scale(inv);
            grads.pos = mean_pos.scale(inv);
            st.loss_pos = loss_pos * inv;
            if (use_anc) {
                grads.anchor = mean_anc.scale(inv);
                st.loss_anchor = loss_anc * inv;
            }
            if (use_neg) {
                grads.neg = mean_neg.scale(inv);
                st.loss_neg = loss_neg * inv;
            }
        } else {
            BranchOut p = branch_pass(g, model, fwd, sched, "positive", pos, kTokenStyle, d_pos);
            grads.pos = std::move(p.grad);
            st.loss_pos = p.loss;
            if (use_anc) {
                BranchOut a = branch_pass(g, model, fwd, sched, "anchor", anc, kTokenStyle, d_anc);
                grads.anchor = std::move(a.grad);
                st.loss_anchor = a.loss;
            }
            if (use_neg) {
                BranchOut ng = branch_pass(g, model, fwd, sched, "negative", neg, neg_token, d_neg);
                grads.neg = std::move(ng.grad);
                st.loss_neg = ng.loss;
            }
            update = combine_gradients(cfg.variant, grads, cfg.eps_g);
        }

        st.norm_pos = grads.pos.norm();
        st.norm_update = update.norm();
        if (grads.anchor) {
            st.norm_anchor = grads.anchor->norm();
            st.cos_pos_anchor = safe_cosine(grads.pos, *grads.anchor);
        }
        if (grads.neg) {
            st.norm_neg = grads.neg->norm();
            st.cos_pos_neg = safe_cosine(grads.pos, *grads.neg);
        }

        adam_step(model.params, update, opt);

        if (step % cfg.log_every == 0) {
            result.stats.push_back(st);
            if (sinks.on_stats) sinks.on_stats(st);
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && sinks.on_checkpoint) {
            sinks.on_checkpoint(step, model);
        }
        result.steps = step;
    }
    return result;
}

std::string PretrainStat::csv_header() { return "step,loss,grad_norm"; }

std::string PretrainStat::csv_row() const {
    return str_cat(step, ",", fmt_double(loss), ",", fmt_double(grad_norm));
}

PretrainResult pretrain(Model& model, const Dataset& data, const PretrainConfig& cfg,
                        const std::function<void(const PretrainStat&)>& on_stats) {
    NSYNC_CHECK(cfg.iterations >= 1, "iterations must be >= 1, got ", cfg.iterations);
    NSYNC_CHECK(cfg.batch >= 1, "batch must be >= 1, got ", cfg.batch);
    NSYNC_CHECK(cfg.lr > 0.0, "lr must be positive, got ", cfg.lr);
    NSYNC_CHECK(cfg.log_every >= 1, "log_every must be >= 1, got ", cfg.log_every);
    NSYNC_CHECK(model.mode == AdaptationMode::None, "pretraining expects an unadapted model");
    NSYNC_CHECK(!data.samples.empty(), "pretraining dataset is empty");
    NSYNC_CHECK(data.d_data == model.cfg.d_data, "dataset dimension ", data.d_data,
                " does not match model dimension ", model.cfg.d_data);

    RandomStream batch_rng = derive_stream(cfg.seed, stream_tag::kBatchPretrain);
    RandomStream draw_rng = derive_stream(cfg.seed, stream_tag::kDrawPretrain);
    const NoiseSchedule sched = model.sched.make();
    const DenoiseGraphFn fwd = denoise_fn(model);
    const GradLayout layout = model.params.trainable_layout();
    NSYNC_CHECK(layout.total > 0, "model has no trainable parameters");
    AdamState opt = AdamState::init(layout, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});

    Graph g;
    PretrainResult result;
    const int n = static_cast<int>(data.samples.size());
    for (int step = 1; step <= cfg.iterations; ++step) {
        std::vector<const LabeledSample*> batch(static_cast<size_t>(cfg.batch));
        for (auto& p : batch) p = &data.samples[static_cast<size_t>(batch_rng.uniform_int(n))];
        std::vector<BranchDraw> draws = make_draws(draw_rng, cfg.batch, sched.T, model.cfg.d_data);
        BranchOut out = branch_pass(g, model, fwd, sched, "pretraining", batch, kTokenGeneric,
                                    draws);
        adam_step(model.params, out.grad, opt);
        if (step % cfg.log_every == 0) {
            PretrainStat st{step, out.loss, out.grad.norm()};
            result.stats.push_back(st);
            if (on_stats) on_stats(st);
        }
        result.steps = step;
    }
    return result;
}

}  // namespace nsync
