#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace proclip;

namespace {

WorldDims small_dims() {
    WorldDims d;
    d.latent = 3;
    d.image = 7;
    d.caption = 5;
    d.llm = 6;
    d.clip = 4;
    d.hidden = 8;
    return d;
}

TrainConfig small_config() {
    TrainConfig cfg = desk_profile().train;
    cfg.seed = 3;
    cfg.stage1.batch_size = 8;
    cfg.stage1.epochs = 3;
    cfg.stage2.batch_size = 8;
    cfg.stage2.epochs = 3;
    return cfg;
}

struct SmallData {
    DistillationData distill;
    ContrastiveData contrast;
    ToyEncoder image_encoder;
};

SmallData small_data(Eigen::Index n = 24) {
    Rng rng(17);
    const auto d = small_dims();
    SmallData s;
    s.distill = {gaussian_matrix(n, d.llm, rng), gaussian_matrix(n, d.clip, rng)};
    s.contrast = {gaussian_matrix(n, d.image, rng), s.distill.llm};
    s.image_encoder = ToyEncoder("image_encoder", make_projector(d.image, d.hidden, d.clip, 99));
    return s;
}

}  // namespace

TEST(EpochBatches, PermutationSeededBySeedPlusEpoch) {
    const auto a = detail::epoch_batches(20, 6, 5, 2);
    EXPECT_EQ(a, detail::epoch_batches(20, 6, 7, 0));
    EXPECT_NE(a, detail::epoch_batches(20, 6, 5, 3));
    ASSERT_EQ(a.size(), 3u);
    std::set<Eigen::Index> seen;
    for (const auto& b : a) {
        EXPECT_EQ(b.size(), 6u);
        for (auto i : b) {
            EXPECT_TRUE(seen.insert(i).second);
            EXPECT_LT(i, 20);
        }
    }
    const auto small = detail::epoch_batches(5, 64, 0, 0);
    ASSERT_EQ(small.size(), 1u);
    EXPECT_EQ(small[0].size(), 5u);
    EXPECT_EQ(detail::steps_per_epoch(5, 64), 1);
    EXPECT_EQ(detail::steps_per_epoch(20, 6), 3);
}

TEST(TrainConfig, RegularizerWithoutContrastiveRejected) {
    TrainConfig cfg;
    cfg.losses = {true, true, false, true};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.losses = {false, false, true, true};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.losses = {false, true, false, false};
    EXPECT_NO_THROW(cfg.validate());
    cfg.stage2.lambda = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainConfig, DefaultsAndDeskProfile) {
    const TrainConfig d;
    EXPECT_EQ(d.stage1.batch_size, 1024);
    EXPECT_EQ(d.stage1.epochs, 4);
    EXPECT_EQ(d.stage1.lr, 1e-5);
    EXPECT_EQ(d.stage2.batch_size, 4096);
    EXPECT_EQ(d.stage2.lambda, 0.0004);
    EXPECT_EQ(d.stage2.ema_alpha, 0.999);
    EXPECT_EQ(d.stage1.adam_eps, 1e-6);
    EXPECT_EQ(d.stage1.beta2, 0.98);
    EXPECT_EQ(d.init_tau, 0.07);
    const auto desk = desk_profile().train;
    EXPECT_EQ(desk.stage1.batch_size, 64);
    EXPECT_EQ(desk.stage2.batch_size, 256);
    EXPECT_EQ(desk.reduction, Reduction::Mean);
}

TEST(Stage1, DeterministicLogAndWeights) {
    const auto data = small_data();
    const auto cfg = small_config();
    const auto p0 = initial_projector(cfg, small_dims());
    const auto a = run_stage1(cfg, data.distill, p0);
    const auto b = run_stage1(cfg, data.distill, p0);
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
    EXPECT_EQ(a.projector, b.projector);
    EXPECT_EQ(a.log.rows.size(), 9u);
    EXPECT_EQ(a.steps_per_epoch, 3);
    EXPECT_FALSE(a.projector == p0);
}

TEST(Stage1, LogShapeAndSchedule) {
    const auto data = small_data();
    const auto cfg = small_config();
    const auto r = run_stage1(cfg, data.distill, initial_projector(cfg, small_dims()));
    EXPECT_EQ(r.log.rows.front().lr, cfg.stage1.lr);
    for (std::size_t i = 0; i < r.log.rows.size(); ++i) {
        const auto& row = r.log.rows[i];
        EXPECT_EQ(row.step, static_cast<std::int64_t>(i));
        EXPECT_EQ(row.stage, "stage1");
        EXPECT_EQ(row.loss_info, 0.0);
        EXPECT_EQ(row.loss_reg, 0.0);
        EXPECT_NEAR(row.loss_total, row.loss_ins + row.loss_struct, 1e-12);
        if (i > 0) EXPECT_LE(row.lr, r.log.rows[i - 1].lr);
    }
    EXPECT_EQ(r.log.epoch_means(r.steps_per_epoch).size(), 3u);
}

TEST(Stage1, TeacherMatchingProjectorGivesZeroLoss) {
    auto data = small_data();
    const auto cfg = small_config();
    const auto p0 = initial_projector(cfg, small_dims());
    data.distill.teacher_text = p0.predict(data.distill.llm).matrix();
    const auto r = run_stage1(cfg, data.distill, p0);
    EXPECT_LT(std::abs(r.log.rows.front().loss_total), 1e-9);
}

TEST(Stage1, LossDecreasesOnRealizableTeacher) {
    auto data = small_data();
    data.distill.teacher_text = make_projector(6, 8, 4, 5).predict(data.distill.llm).matrix();
    auto cfg = small_config();
    cfg.stage1.epochs = 40;
    const auto r = run_stage1(cfg, data.distill, initial_projector(cfg, small_dims()));
    const auto means = r.log.epoch_means(r.steps_per_epoch);
    EXPECT_LT(means.back(), 0.3 * means.front());
}

TEST(Stage2, DeterministicAndRegularizerStartsAtZero) {
    const auto data = small_data();
    const auto cfg = small_config();
    const auto p0 = initial_projector(cfg, small_dims());
    const auto a = run_stage2(cfg, data.contrast, p0, data.image_encoder);
    const auto b = run_stage2(cfg, data.contrast, p0, data.image_encoder);
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
    EXPECT_EQ(a.image_encoder, b.image_encoder);
    EXPECT_EQ(a.log_tau, b.log_tau);
    EXPECT_LT(std::abs(a.log.rows.front().loss_reg), 1e-12);
    EXPECT_DOUBLE_EQ(a.log.rows.front().tau, 0.07);
    EXPECT_GT(a.log.rows.back().loss_reg, 0.0);
    EXPECT_NE(a.log_tau, std::log(0.07));
    EXPECT_FALSE(a.image_encoder == data.image_encoder);
}

TEST(Stage2, BaselineMatchesStage2WithoutRegularizerAtFirstStep) {
    const auto data = small_data();
    auto cfg = small_config();
    const auto fresh = initial_projector(cfg, small_dims());
    const auto base = run_baseline(cfg, data.contrast, fresh, data.image_encoder);
    EXPECT_EQ(base.log.rows.size(), 18u);
    EXPECT_EQ(base.log.rows.front().stage, "baseline");
    cfg.stage2.lambda = 0.0;
    const auto s2 = run_stage2(cfg, data.contrast, fresh, data.image_encoder);
    EXPECT_EQ(base.log.rows.front().loss_total, s2.log.rows.front().loss_total);
    EXPECT_EQ(base.log.rows.front().loss_info, s2.log.rows.front().loss_info);
    for (const auto& row : base.log.rows) EXPECT_EQ(row.loss_reg, 0.0);
}

TEST(Stage2, NonFiniteLossAborts) {
    const auto data = small_data();
    auto cfg = small_config();
    cfg.init_tau = 1e-320;
    try {
        (void)run_stage2(cfg, data.contrast, initial_projector(cfg, small_dims()), data.image_encoder);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.step(), 0);
    }
}

TEST(Stage2, RejectsMismatchedData) {
    auto data = small_data();
    const auto cfg = small_config();
    data.contrast.llm = data.contrast.llm.topRows(10).eval();
    EXPECT_THROW((void)run_stage2(cfg, data.contrast, initial_projector(cfg, small_dims()), data.image_encoder),
                 ConfigError);
}

class ExperimentTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ExperimentConfig cfg = desk_profile();
        cfg.train.stage1.epochs = 4;
        cfg.train.stage2.epochs = 2;
        ex_ = new Experiment(prepare_experiment(cfg));
    }
    static void TearDownTestSuite() {
        delete ex_;
        ex_ = nullptr;
    }
    static Experiment* ex_;
};

Experiment* ExperimentTest::ex_ = nullptr;

TEST_F(ExperimentTest, HeldOutClassesNeverTrained) {
    const auto& c = ex_->corpus;
    const std::set<int> held(c.heldout_classes.begin(), c.heldout_classes.end());
    EXPECT_EQ(held.size(), 8u);
    for (int id : c.finetune.class_ids) EXPECT_EQ(held.count(id), 0u);
    std::set<std::string> stages;
    Eigen::Index max_row = -1;
    auto observe = [&](std::string_view stage, std::span<const Eigen::Index> rows) {
        stages.insert(std::string(stage));
        for (auto r : rows) {
            max_row = std::max(max_row, r);
            EXPECT_EQ(held.count(c.finetune.class_ids[static_cast<std::size_t>(r)]), 0u);
        }
    };
    (void)run_proclip(*ex_, ex_->config.train, "proclip", observe);
    (void)run_baseline(*ex_, ex_->config.train, observe);
    EXPECT_EQ(stages, (std::set<std::string>{"stage1", "stage2", "baseline"}));
    EXPECT_LT(max_row, c.finetune.size());
}

TEST_F(ExperimentTest, TeachersUntouchedByTraining) {
    const Teachers before = ex_->teachers;
    (void)run_proclip(*ex_, ex_->config.train);
    EXPECT_EQ(before.image_encoder, ex_->teachers.image_encoder);
    EXPECT_EQ(before.text_encoder, ex_->teachers.text_encoder);
    EXPECT_TRUE(ex_->teachers.text_encoder.frozen());
}

TEST_F(ExperimentTest, AblationRows) {
    const auto rows = run_ablation(*ex_, ex_->config.train);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].label, "ins");
    EXPECT_EQ(rows[3].label, "ins+struct+info+reg");
    EXPECT_EQ(rows[0].mean_drift, 0.0);
    EXPECT_EQ(rows[1].mean_drift, 0.0);
    EXPECT_GT(rows[2].mean_drift, 0.0);
    for (const auto& r : rows) {
        EXPECT_GE(r.heldout_accuracy, 0.0);
        EXPECT_LE(r.heldout_accuracy, 1.0);
    }
    EXPECT_EQ(toggle_label({true, true, true, true}), "ins+struct+info+reg");
    EXPECT_EQ(toggle_label({false, true, false, false}), "struct");
}

TEST_F(ExperimentTest, ConfiguredModeDispatch) {
    TrainConfig cfg = ex_->config.train;
    cfg.mode = Mode::BaselineContrastive;
    EXPECT_EQ(run_configured(*ex_, cfg).label, "baseline_contrastive");
    cfg.mode = Mode::ProClip;
    EXPECT_EQ(run_configured(*ex_, cfg).label, "proclip");
}

TEST_F(ExperimentTest, UntrainedProjectorReportWellFormed) {
    const auto& t = ex_->teachers;
    const auto r = evaluate_model("untrained", t.image_encoder,
                                  initial_projector(ex_->config.train, ex_->config.world.dims), t.image_encoder,
                                  ex_->corpus, ex_->prototype_llm);
    for (double v : {r.i2t_r1, r.i2t_r5, r.t2i_r1, r.t2i_r5, r.heldout_accuracy, r.finetune_accuracy}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.mean_drift, 0.0);
}
