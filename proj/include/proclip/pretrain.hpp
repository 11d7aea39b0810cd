#pragma once

#include "proclip/curriculum.hpp"
#include "proclip/data.hpp"
#include "proclip/eval.hpp"

#include <string>
#include <vector>

namespace proclip {

/// The pretrained dual encoder: the image tower that stage 2 starts from and the frozen text
/// tower that stage 1 distills from.
struct Teachers {
    ToyEncoder image_encoder;
    ToyEncoder text_encoder;
    double log_tau = 0.0;
    RecallRates recall;
    LossLog log;
};

namespace detail {
enum PretrainStream : std::uint64_t { kPretrainData = 5, kPretrainEval = 6, kImageInit = 21, kTextInit = 22 };
}

/// Contrastive pretraining of fresh image and text encoders on every class of the world,
/// so that an aligned pair exists before any fine-tuning. Fails with ConfigError when the
/// pair does not reach `spec.min_recall` Recall@1 on fresh draws from the same classes.
[[nodiscard]] inline Teachers pretrain_teachers(const SyntheticWorld& world, const PretrainSpec& spec) {
    require(spec.per_class >= 1 && spec.epochs >= 1 && spec.batch_size >= 2 && spec.lr > 0.0,
            "pretrain_teachers: invalid pretraining spec");
    const auto& d = world.spec.dims;
    std::vector<int> all(static_cast<std::size_t>(world.spec.n_classes));
    for (int c = 0; c < world.spec.n_classes; ++c) all[static_cast<std::size_t>(c)] = c;

    Rng data_rng(derive_seed(world.seed, detail::kPretrainData));
    const PairedSet train = draw_samples(world, all, spec.per_class, data_rng);

    ToyEncoder image("image_encoder",
                     make_projector(d.image, d.hidden, d.clip, derive_seed(world.seed, detail::kImageInit)));
    ToyEncoder text("text_encoder",
                    make_projector(d.caption, d.hidden, d.clip, derive_seed(world.seed, detail::kTextInit)));

    TrainConfig cfg;
    cfg.seed = derive_seed(world.seed, detail::kPretrainData);
    cfg.stage1.batch_size = spec.batch_size;
    cfg.stage2.batch_size = spec.batch_size;
    cfg.stage2.epochs = spec.epochs;
    cfg.stage2.lr = spec.lr;
    cfg.stage2.weight_decay = spec.weight_decay;
    cfg.losses.reg = false;
    Stage2Result r = detail::contrastive_loop(cfg, {train.images, train.captions}, std::move(image),
                                              std::move(text), /*use_reg=*/false, spec.epochs,
                                              "pretrain", {});

    Rng eval_rng(derive_seed(world.seed, detail::kPretrainEval));
    const PairedSet eval = draw_samples(world, all, spec.eval_per_class, eval_rng);
    const auto v = l2_normalize(r.image_encoder.predict(eval.images)).batch;
    const auto t = l2_normalize(r.projector.predict(eval.captions)).batch;

    Teachers out{std::move(r.image_encoder), std::move(r.projector), r.log_tau, recall_at_k(v, t, 1),
                 std::move(r.log)};
    out.text_encoder.freeze();
    const double worst = std::min(out.recall.image_to_text, out.recall.text_to_image);
    if (worst < spec.min_recall)
        throw ConfigError("pretrain_teachers: Recall@1 " + std::to_string(worst) + " below " +
                          std::to_string(spec.min_recall) + "; the synthetic world is misconfigured");
    return out;
}

}  // namespace proclip
