#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace proclip;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(PROCLIP_SOURCE_DIR) / "configs";

}  // namespace

TEST(Config, EmptyDocumentIsDeskProfile) {
    EXPECT_EQ(to_json(parse_config("{}")), to_json(desk_profile()));
}

TEST(Config, RoundTrip) {
    ExperimentConfig c = desk_profile();
    c.train.seed = 42;
    c.train.stage2.lambda = 0.125;
    c.train.losses.reg = false;
    c.train.mode = Mode::BaselineContrastive;
    c.train.reduction = Reduction::Sum;
    c.world.noise_sigma = 0.2;
    c.split.heldout_classes = 4;
    c.pretrain.epochs = 3;
    const auto back = parse_config(to_json(c).dump());
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.train.seed, 42u);
    EXPECT_EQ(back.train.mode, Mode::BaselineContrastive);
    EXPECT_FALSE(back.train.losses.reg);
}

TEST(Config, PartialOverride) {
    const auto c = parse_config(R"({"stage1": {"epochs": 7}, "losses": {"struct": false}})");
    EXPECT_EQ(c.train.stage1.epochs, 7);
    EXPECT_EQ(c.train.stage1.batch_size, desk_profile().train.stage1.batch_size);
    EXPECT_FALSE(c.train.losses.structure);
    EXPECT_TRUE(c.train.losses.ins);
}

TEST(Config, Rejections) {
    EXPECT_THROW((void)parse_config(R"({"stage3": {}})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"stage1": {"momentum": 0.9}})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"stage1": {"epochs": "four"}})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"reduction": "median"})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"mode": "clip"})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"schedule": "linear"})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"losses": {"info": false}})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"stage2": {"lambda": -0.1}})"), ConfigError);
    EXPECT_THROW((void)parse_config(R"({"stage1": {"lr": )"), ConfigError);
    EXPECT_THROW((void)parse_config("[]"), ConfigError);
    EXPECT_THROW((void)load_config(kConfigs / "does_not_exist.json"), ConfigError);
}

TEST(Config, ShippedFiles) {
    const auto desk = load_config(kConfigs / "desk.json");
    EXPECT_EQ(to_json(desk), to_json(desk_profile()));
    const auto full = load_config(kConfigs / "full_scale.json");
    const TrainConfig d;
    EXPECT_EQ(detail::stage_json(full.train.stage1), detail::stage_json(d.stage1));
    EXPECT_EQ(detail::stage_json(full.train.stage2), detail::stage_json(d.stage2));
    EXPECT_EQ(full.train.stage2.lambda, d.stage2.lambda);
    EXPECT_EQ(full.train.stage2.ema_alpha, d.stage2.ema_alpha);
    EXPECT_EQ(full.train.reduction, Reduction::Sum);
    EXPECT_EQ(full.train.init_tau, 0.07);
}
