#pragma once

#include "proclip/checkpoint.hpp"
#include "proclip/data.hpp"
#include "proclip/eval.hpp"
#include "proclip/losses.hpp"
#include "proclip/models.hpp"
#include "proclip/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace proclip {

// ---------------------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------------------

struct StageConfig {
    int batch_size = 1024;
    int epochs = 4;
    double lr = 1e-5;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-6;

    [[nodiscard]] AdamWConfig adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }
};

struct Stage2Config : StageConfig {
    double lambda = 0.0004;
    double ema_alpha = 0.999;

    Stage2Config() { batch_size = 4096; }
};

enum class Mode { ProClip, BaselineContrastive };

/// Which loss terms take part. Stage 1 uses ins/struct, stage 2 uses info/reg.
struct LossToggles {
    bool ins = true;
    bool structure = true;
    bool info = true;
    bool reg = true;

    [[nodiscard]] bool runs_stage2() const { return info || reg; }
};

struct TrainConfig {
    StageConfig stage1;
    Stage2Config stage2;
    std::uint64_t seed = 0;
    std::string schedule = "cosine";
    Reduction reduction = Reduction::Sum;
    Mode mode = Mode::ProClip;
    LossToggles losses;
    double init_tau = 0.07;

    void validate() const {
        for (const StageConfig* s : {static_cast<const StageConfig*>(&stage1),
                                     static_cast<const StageConfig*>(&stage2)}) {
            require(s->batch_size >= 1, "config: batch_size must be positive");
            require(s->epochs >= 1, "config: epochs must be positive");
            require(s->lr > 0.0, "config: lr must be positive");
            require(s->weight_decay >= 0.0, "config: weight_decay must be non-negative");
            require(s->beta1 > 0.0 && s->beta1 < 1.0, "config: beta1 must lie in (0, 1)");
            require(s->beta2 > 0.0 && s->beta2 < 1.0, "config: beta2 must lie in (0, 1)");
            require(s->adam_eps > 0.0, "config: adam_eps must be positive");
        }
        require(stage2.lambda >= 0.0, "config: lambda must be non-negative");
        require(stage2.ema_alpha >= 0.0 && stage2.ema_alpha <= 1.0, "config: ema_alpha must lie in [0, 1]");
        require(schedule == "cosine", "config: only the cosine schedule is supported");
        require(init_tau > 0.0, "config: init_tau must be positive");
        require(!(losses.reg && !losses.info), "config: the regularizer requires the contrastive term");
        require(losses.ins || losses.structure, "config: stage 1 needs at least one distillation term");
    }
};

/// Hyperparameters of the teacher pretraining that stands in for CLIP pretraining.
struct PretrainSpec {
    int per_class = 64;
    int epochs = 10;
    int batch_size = 256;
    double lr = 2e-3;
    double weight_decay = 0.05;
    int eval_per_class = 2;
    double min_recall = 0.9;
};

/// Everything needed to reproduce one synthetic experiment end to end.
struct ExperimentConfig {
    TrainConfig train;
    WorldSpec world;
    SplitSpec split;
    int n_per_class = 16;
    PretrainSpec pretrain;
};

/// Desk-scale profile: batches 64/256, mean reduction with the regularizer weight rescaled to
/// match, and learning rates and epochs raised for a toy world that trains in seconds.
[[nodiscard]] inline ExperimentConfig desk_profile() {
    ExperimentConfig cfg;
    cfg.train.reduction = Reduction::Mean;
    cfg.train.stage1.batch_size = 64;
    cfg.train.stage1.epochs = 60;
    cfg.train.stage1.lr = 3e-3;
    cfg.train.stage2.batch_size = 256;
    cfg.train.stage2.epochs = 40;
    cfg.train.stage2.lr = 1e-3;
    cfg.train.stage2.lambda = 0.3;
    return cfg;
}

// ---------------------------------------------------------------------------------------
// Loss log
// ---------------------------------------------------------------------------------------

struct LogRow {
    std::int64_t step = 0;
    std::string stage;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_ins = 0.0;
    double loss_struct = 0.0;
    double loss_info = 0.0;
    double loss_reg = 0.0;
    double tau = 0.0;
};

inline constexpr std::string_view kLogHeader =
    "step,stage,lr,loss_total,loss_ins,loss_struct,loss_info,loss_reg,tau";

[[nodiscard]] inline std::string to_csv_line(const LogRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(r.step), r.stage.c_str(), r.lr, r.loss_total, r.loss_ins,
                  r.loss_struct, r.loss_info, r.loss_reg, r.tau);
    return buf;
}

struct LossLog {
    std::vector<LogRow> rows;

    /// Mean total loss of each epoch, given the number of steps per epoch.
    [[nodiscard]] std::vector<double> epoch_means(std::int64_t steps_per_epoch) const {
        std::vector<double> out;
        for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(steps_per_epoch)) {
            const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(steps_per_epoch));
            double sum = 0.0;
            for (std::size_t i = start; i < end; ++i) sum += rows[i].loss_total;
            out.push_back(sum / static_cast<double>(end - start));
        }
        return out;
    }

    [[nodiscard]] std::string to_csv(bool header = true) const {
        std::string out;
        if (header) out.append(kLogHeader).append("\n");
        for (const auto& r : rows) out.append(to_csv_line(r)).append("\n");
        return out;
    }
};

// ---------------------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------------------

/// Optional observer of every training batch (row indices into the training set).
using BatchObserver = std::function<void(std::string_view stage, std::span<const Eigen::Index> rows)>;

/// Text-only stage-1 data: offline LLM embeddings and the frozen text encoder's outputs.
struct DistillationData {
    Matrix llm;
    Matrix teacher_text;
};

/// Paired stage-2 data: raw image features and offline LLM embeddings.
struct ContrastiveData {
    Matrix images;
    Matrix llm;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

/// Batches of one epoch: a permutation seeded with seed + epoch, cut into full batches.
/// A set smaller than one batch forms a single batch.
inline std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n, int batch_size,
                                                            std::uint64_t seed, int epoch) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng rng(seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto b = static_cast<std::size_t>(std::min<Eigen::Index>(batch_size, n));
    std::vector<std::vector<Eigen::Index>> out;
    for (std::size_t start = 0; start + b <= perm.size(); start += b)
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(start + b));
    return out;
}

inline std::int64_t steps_per_epoch(Eigen::Index n, int batch_size) {
    return std::max<std::int64_t>(1, n / std::min<Eigen::Index>(batch_size, n));
}

inline void check_finite_loss(double value, std::string_view stage, std::int64_t step) {
    if (!std::isfinite(value))
        throw NumericalError("non-finite loss in " + std::string(stage) + " at step " +
                                 std::to_string(step),
                             step);
}

// Trainable parameters of several encoders plus an optional scalar, with matching gradients.
struct ParamSet {
    std::vector<ParamView> params;
    std::vector<std::span<const double>> grads;

    void add(ToyEncoder& enc, const MlpGradients& g) {
        auto p = enc.trainable_parameters();
        auto gv = gradient_views(g);
        params.insert(params.end(), p.begin(), p.end());
        grads.insert(grads.end(), gv.begin(), gv.end());
    }
};

}  // namespace detail

inline constexpr std::uint64_t kProjectorSalt = 11;

/// The freshly initialized projector shared by the curriculum and the baseline.
[[nodiscard]] inline ToyEncoder initial_projector(const TrainConfig& cfg, const WorldDims& dims) {
    return ToyEncoder("projector",
                      make_projector(dims.llm, dims.hidden, dims.clip, derive_seed(cfg.seed, kProjectorSalt)));
}

struct Stage1Result {
    ToyEncoder projector;
    LossLog log;
    std::int64_t steps_per_epoch = 0;
};

/// Stage 1: distill the frozen text encoder into the projector. Only the projector trains.
[[nodiscard]] inline Stage1Result run_stage1(const TrainConfig& cfg, const DistillationData& data,
                                             ToyEncoder projector, const BatchObserver& observe = {}) {
    cfg.validate();
    const Eigen::Index n = data.llm.rows();
    if (n == 0) throw ConfigError("run_stage1: empty corpus");
    require(data.teacher_text.rows() == n, "run_stage1: llm and teacher rows differ");
    require(data.llm.cols() == projector.input_dim(), "run_stage1: llm width does not match projector");
    require(data.teacher_text.cols() == projector.output_dim(),
            "run_stage1: teacher width does not match projector output");

    const auto& sc = cfg.stage1;
    const std::int64_t per_epoch = detail::steps_per_epoch(n, sc.batch_size);
    const std::int64_t total = per_epoch * sc.epochs;
    OptimizerState opt;
    Stage1Result out;
    out.steps_per_epoch = per_epoch;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
        for (const auto& rows : detail::epoch_batches(n, sc.batch_size, cfg.seed, epoch)) {
            if (observe) observe("stage1", rows);
            const Matrix x = detail::gather_rows(data.llm, rows);
            const EmbeddingBatch teacher(detail::gather_rows(data.teacher_text, rows));
            const EmbeddingBatch student = projector.forward(x);

            LogRow row;
            row.step = step;
            row.stage = "stage1";
            row.tau = cfg.init_tau;
            Matrix grad = Matrix::Zero(student.rows(), student.cols());
            if (cfg.losses.ins) {
                const LossValue l = instance_alignment_loss(student, teacher, cfg.reduction);
                row.loss_ins = l.value;
                grad += *l.grad("student");
            }
            if (cfg.losses.structure) {
                const LossValue l = structure_alignment_loss(student, teacher, cfg.reduction);
                row.loss_struct = l.value;
                if (const Matrix* g = l.grad("student")) grad += *g;
            }
            row.loss_total = row.loss_ins + row.loss_struct;
            detail::check_finite_loss(row.loss_total, "stage1", step);

            row.lr = cosine_lr(step, total, sc.lr);
            detail::ParamSet ps;
            const MlpGradients g = projector.backward(grad);
            ps.add(projector, g);
            adamw_step(ps.params, ps.grads, opt, row.lr, sc.adamw());
            out.log.rows.push_back(std::move(row));
            ++step;
        }
    }
    out.projector = std::move(projector);
    return out;
}

struct Stage2Result {
    ToyEncoder image_encoder;
    ToyEncoder projector;
    double log_tau = 0.0;
    EmaTeacher ema;
    LossLog log;
    std::int64_t steps_per_epoch = 0;
};

namespace detail {

// Contrastive tuning loop shared by stage 2 and the from-scratch baseline.
inline Stage2Result contrastive_loop(const TrainConfig& cfg, const ContrastiveData& data,
                                     ToyEncoder image_encoder, ToyEncoder projector, bool use_reg,
                                     int epochs, std::string_view stage,
                                     const BatchObserver& observe) {
    const Eigen::Index n = data.images.rows();
    if (n == 0) throw ConfigError("contrastive tuning: empty corpus");
    require(data.llm.rows() == n, "contrastive tuning: image and text rows differ");
    require(data.images.cols() == image_encoder.input_dim(), "contrastive tuning: image width mismatch");
    require(data.llm.cols() == projector.input_dim(), "contrastive tuning: llm width mismatch");
    require(image_encoder.output_dim() == projector.output_dim(),
            "contrastive tuning: image and text embedding dimensions differ");

    const auto& sc = cfg.stage2;
    const double lambda = use_reg ? sc.lambda : 0.0;
    const std::int64_t per_epoch = steps_per_epoch(n, sc.batch_size);
    const std::int64_t total = per_epoch * epochs;
    EmaTeacher ema(image_encoder, sc.ema_alpha);
    double log_tau = std::log(cfg.init_tau);
    OptimizerState opt;
    LossLog log;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const auto& rows : epoch_batches(n, sc.batch_size, cfg.seed, epoch)) {
            if (observe) observe(stage, rows);
            const Matrix img = gather_rows(data.images, rows);
            const Matrix txt = gather_rows(data.llm, rows);
            const EmbeddingBatch v_raw = image_encoder.forward(img);
            const EmbeddingBatch t_raw = projector.forward(txt);
            const EmbeddingBatch ema_raw =
                use_reg ? ema.predict(img) : EmbeddingBatch(v_raw.rows(), v_raw.cols());

            const LossValue loss = tuning_loss(v_raw, t_raw, ema_raw, log_tau, lambda, cfg.reduction);
            LogRow row;
            row.step = step;
            row.stage = std::string(stage);
            row.loss_total = loss.value;
            row.loss_info = loss.term("info");
            row.loss_reg = loss.term("reg");
            row.tau = std::exp(log_tau);
            check_finite_loss(row.loss_total, stage, step);

            row.lr = cosine_lr(step, total, sc.lr);
            ParamSet ps;
            const MlpGradients gi = image_encoder.backward(*loss.grad("image"));
            const MlpGradients gt = projector.backward(*loss.grad("text"));
            ps.add(image_encoder, gi);
            ps.add(projector, gt);
            const Matrix& g_tau = *loss.grad("log_tau");
            ps.params.push_back({"log_tau", {&log_tau, 1}, {}, false});
            ps.grads.emplace_back(g_tau.data(), 1);
            adamw_step(ps.params, ps.grads, opt, row.lr, sc.adamw());
            ema.update(image_encoder);
            log.rows.push_back(std::move(row));
            ++step;
        }
    }
    return {std::move(image_encoder), std::move(projector), log_tau, std::move(ema), std::move(log),
            per_epoch};
}

}  // namespace detail

/// Stage 2: contrastive tuning of the image encoder and projector, regularized towards an
/// EMA copy of the image encoder that starts as an exact copy.
[[nodiscard]] inline Stage2Result run_stage2(const TrainConfig& cfg, const ContrastiveData& data,
                                             ToyEncoder stage1_projector, ToyEncoder image_encoder,
                                             const BatchObserver& observe = {}) {
    cfg.validate();
    require(cfg.losses.info, "run_stage2: stage 2 requires the contrastive term");
    return detail::contrastive_loop(cfg, data, std::move(image_encoder), std::move(stage1_projector),
                                    cfg.losses.reg, cfg.stage2.epochs, "stage2", observe);
}

/// From-scratch alignment: a fresh projector and the pretrained image encoder trained with
/// the contrastive loss only, for stage1.epochs + stage2.epochs epochs.
[[nodiscard]] inline Stage2Result run_baseline(const TrainConfig& cfg, const ContrastiveData& data,
                                               ToyEncoder fresh_projector, ToyEncoder image_encoder,
                                               const BatchObserver& observe = {}) {
    cfg.validate();
    return detail::contrastive_loop(cfg, data, std::move(image_encoder), std::move(fresh_projector),
                                    /*use_reg=*/false, cfg.stage1.epochs + cfg.stage2.epochs,
                                    "baseline", observe);
}

}  // namespace proclip
