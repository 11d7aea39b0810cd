#pragma once

// End-to-end runs on the synthetic world: the progressive curriculum, the from-scratch
// baseline, evaluation and the component ablation.

#include "proclip/curriculum.hpp"
#include "proclip/data.hpp"
#include "proclip/eval.hpp"
#include "proclip/pretrain.hpp"

#include <optional>
#include <string>
#include <vector>

namespace proclip {

struct Experiment {
    ExperimentConfig config;
    SyntheticWorld world;
    CorpusSplit corpus;
    Teachers teachers;
    Matrix prototype_llm;  // canonical LLM embedding of every class, row = class id
};

[[nodiscard]] inline std::vector<int> all_classes(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) v[static_cast<std::size_t>(c)] = c;
    return v;
}

[[nodiscard]] inline Experiment prepare_experiment(const ExperimentConfig& cfg) {
    cfg.train.validate();
    SyntheticWorld world = generate_world(cfg.train.seed, cfg.world);
    CorpusSplit corpus = sample_corpus(world, cfg.n_per_class, cfg.split);
    Teachers teachers = pretrain_teachers(world, cfg.pretrain);
    Matrix protos = canonical_llm(world, all_classes(cfg.world.n_classes));
    return {cfg, std::move(world), std::move(corpus), std::move(teachers), std::move(protos)};
}

[[nodiscard]] inline DistillationData distillation_data(const CorpusSplit& corpus,
                                                        const ToyEncoder& text_encoder) {
    return {corpus.finetune.llm, text_encoder.predict(corpus.finetune.captions).matrix()};
}

[[nodiscard]] inline ContrastiveData contrastive_data(const CorpusSplit& corpus) {
    return {corpus.finetune.images, corpus.finetune.llm};
}

namespace detail {

inline EmbeddingBatch embed(const ToyEncoder& enc, const Matrix& x) {
    return l2_normalize(enc.predict(x)).batch;
}

inline Matrix select_rows(const Matrix& m, const std::vector<int>& ids) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(ids[i]);
    return out;
}

// Labels re-indexed to positions within `classes`.
inline std::vector<int> local_labels(const std::vector<int>& ids, const std::vector<int>& classes) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids) {
        auto it = std::find(classes.begin(), classes.end(), id);
        require(it != classes.end(), "evaluate: sample class not in the evaluated class set");
        out.push_back(static_cast<int>(it - classes.begin()));
    }
    return out;
}

}  // namespace detail

/// Retrieval on the fine-tune eval split, zero-shot accuracy on held-out classes (prototypes
/// restricted to those classes), fine-tune-class accuracy and image-encoder drift from
/// `reference` over the eval and held-out images.
[[nodiscard]] inline MetricsReport evaluate_model(const std::string& label, const ToyEncoder& image_encoder,
                                                  const ToyEncoder& projector, const ToyEncoder& reference,
                                                  const CorpusSplit& corpus, const Matrix& prototype_llm) {
    MetricsReport r;
    r.label = label;
    const auto& eval = corpus.retrieval_eval;
    if (eval.size() > 0) {
        const auto v = detail::embed(image_encoder, eval.images);
        const auto t = detail::embed(projector, eval.llm);
        const auto r1 = recall_at_k(v, t, 1);
        const auto r5 = recall_at_k(v, t, std::min<Eigen::Index>(5, eval.size()));
        r.i2t_r1 = r1.image_to_text;
        r.t2i_r1 = r1.text_to_image;
        r.i2t_r5 = r5.image_to_text;
        r.t2i_r5 = r5.text_to_image;
        const auto protos = detail::embed(projector, detail::select_rows(prototype_llm, corpus.finetune_classes));
        r.finetune_accuracy =
            zero_shot_accuracy(v, protos, detail::local_labels(eval.class_ids, corpus.finetune_classes));
    }
    const auto& held = corpus.heldout;
    if (held.size() > 0 && !corpus.heldout_classes.empty()) {
        const auto v = detail::embed(image_encoder, held.images);
        const auto protos = detail::embed(projector, detail::select_rows(prototype_llm, corpus.heldout_classes));
        r.heldout_accuracy =
            zero_shot_accuracy(v, protos, detail::local_labels(held.class_ids, corpus.heldout_classes));
    }
    Matrix probes(eval.size() + held.size(), eval.images.cols());
    if (eval.size() > 0) probes.topRows(eval.size()) = eval.images;
    if (held.size() > 0) probes.bottomRows(held.size()) = held.images;
    r.mean_drift = drift_metric(image_encoder, reference, probes);
    return r;
}

struct ProclipRun {
    Stage1Result stage1;
    std::optional<Stage2Result> stage2;
    MetricsReport report;

    [[nodiscard]] const ToyEncoder& projector() const {
        return stage2 ? stage2->projector : stage1.projector;
    }
};

/// Stage 1, then stage 2 when the toggles enable it, evaluated against the pretrained encoder.
[[nodiscard]] inline ProclipRun run_proclip(const Experiment& ex, const TrainConfig& cfg,
                                            const std::string& label = "proclip",
                                            const BatchObserver& observe = {}) {
    cfg.validate();
    ProclipRun out{run_stage1(cfg, distillation_data(ex.corpus, ex.teachers.text_encoder),
                              initial_projector(cfg, ex.config.world.dims), observe),
                   std::nullopt,
                   {}};
    const ToyEncoder& pretrained = ex.teachers.image_encoder;
    if (cfg.losses.runs_stage2()) {
        out.stage2 = run_stage2(cfg, contrastive_data(ex.corpus), out.stage1.projector, pretrained, observe);
        out.report = evaluate_model(label, out.stage2->image_encoder, out.stage2->projector, pretrained,
                                    ex.corpus, ex.prototype_llm);
    } else {
        out.report = evaluate_model(label, pretrained, out.stage1.projector, pretrained, ex.corpus,
                                    ex.prototype_llm);
    }
    return out;
}

struct BaselineRun {
    Stage2Result result;
    MetricsReport report;
};

[[nodiscard]] inline BaselineRun run_baseline(const Experiment& ex, const TrainConfig& cfg,
                                              const BatchObserver& observe = {}) {
    Stage2Result r = run_baseline(cfg, contrastive_data(ex.corpus), initial_projector(cfg, ex.config.world.dims),
                                  ex.teachers.image_encoder, observe);
    MetricsReport report = evaluate_model("baseline_contrastive", r.image_encoder, r.projector,
                                          ex.teachers.image_encoder, ex.corpus, ex.prototype_llm);
    return {std::move(r), std::move(report)};
}

/// Runs the path selected by `cfg.mode` and returns its metrics.
[[nodiscard]] inline MetricsReport run_configured(const Experiment& ex, const TrainConfig& cfg) {
    return cfg.mode == Mode::BaselineContrastive ? run_baseline(ex, cfg).report : run_proclip(ex, cfg).report;
}

/// The four component rows:{ins}, {ins, struct}, {ins, struct, info}, {ins, struct, info, reg}.
[[nodiscard]] inline std::vector<std::pair<std::string, LossToggles>> ablation_rows() {
    return {{"ins", {true, false, false, false}},
            {"ins+struct", {true, true, false, false}},
            {"ins+struct+info", {true, true, true, false}},
            {"ins+struct+info+reg", {true, true, true, true}}};
}

[[nodiscard]] inline std::string toggle_label(const LossToggles& t) {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += "+";
        s += name;
    };
    add(t.ins, "ins");
    add(t.structure, "struct");
    add(t.info, "info");
    add(t.reg, "reg");
    return s;
}

/// One metrics row per toggle set. Rows without stage-2 terms skip stage 2 entirely and are
/// evaluated with the pretrained image encoder.
[[nodiscard]] inline std::vector<MetricsReport> run_ablation(
    const Experiment& ex, TrainConfig cfg,
    const std::vector<std::pair<std::string, LossToggles>>& rows = ablation_rows()) {
    for (const auto& [label, toggles] : rows) {
        cfg.losses = toggles;
        cfg.validate();
    }
    std::vector<MetricsReport> out;
    for (const auto& [label, toggles] : rows) {
        cfg.losses = toggles;
        out.push_back(run_proclip(ex, cfg, label).report);
    }
    return out;
}

}  // namespace proclip
