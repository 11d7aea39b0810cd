#include "helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace proclip;
using proclip::testing::random_batch;

namespace {

// Recall@k by sorting every row of the similarity matrix (stable, so lower index wins ties).
double sorted_recall(const Matrix& sim, Eigen::Index k) {
    int hits = 0;
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(sim.cols()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sim(i, a) > sim(i, b); });
        const auto pos = std::find(order.begin(), order.end(), i) - order.begin();
        hits += pos < k;
    }
    return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

}  // namespace

TEST(Recall, MatchesSortingOracle) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = l2_normalize(random_batch(9, 4, rng)).batch;
        const auto t = l2_normalize(random_batch(9, 4, rng)).batch;
        const Matrix sim = v.matrix() * t.matrix().transpose();
        for (Eigen::Index k : {1, 3, 9}) {
            const auto r = recall_at_k(v, t, k);
            EXPECT_DOUBLE_EQ(r.image_to_text, sorted_recall(sim, k));
            EXPECT_DOUBLE_EQ(r.text_to_image, sorted_recall(sim.transpose(), k));
        }
        EXPECT_DOUBLE_EQ(recall_at_k(v, t, 9).image_to_text, 1.0);
    }
}

TEST(Recall, PerfectAlignmentAndTies) {
    Rng rng(9);
    const auto v = l2_normalize(random_batch(6, 6, rng)).batch;
    const auto r = recall_at_k(v, v, 1);
    EXPECT_EQ(r.image_to_text, 1.0);
    EXPECT_EQ(r.text_to_image, 1.0);
    // identical candidates: only the lowest index counts as a hit at k = 1
    const EmbeddingBatch same(Matrix::Ones(4, 2));
    const auto tied = recall_at_k(same, same, 1);
    EXPECT_DOUBLE_EQ(tied.image_to_text, 0.25);
    EXPECT_DOUBLE_EQ(recall_at_k(same, same, 2).image_to_text, 0.5);
}

TEST(Recall, RejectsBadArguments) {
    Rng rng(1);
    const auto a = random_batch(4, 3, rng);
    EXPECT_THROW((void)recall_at_k(a, a, 0), ConfigError);
    EXPECT_THROW((void)recall_at_k(a, a, 5), ConfigError);
    EXPECT_THROW((void)recall_at_k(a, random_batch(3, 3, rng), 1), ConfigError);
}

TEST(ZeroShot, AccuracyAndTieBreak) {
    Matrix protos(3, 2);
    protos << 1, 0, 0, 1, -1, 0;
    Matrix img(4, 2);
    img << 0.9, 0.1, 0.1, 0.9, -1, 0.2, 1, 1;
    const EmbeddingBatch p(protos), v(img);
    EXPECT_EQ(classify(v, p), (std::vector<int>{0, 1, 2, 0}));
    EXPECT_DOUBLE_EQ(zero_shot_accuracy(v, p, {0, 1, 2, 1}), 0.75);
    EXPECT_DOUBLE_EQ(zero_shot_accuracy(v, p, {1, 0, 0, 2}), 0.0);
    EXPECT_THROW((void)zero_shot_accuracy(v, p, {0, 1, 3, 0}), ConfigError);
    EXPECT_THROW((void)zero_shot_accuracy(v, p, {0, 1}), ConfigError);
}

TEST(ZeroShot, AccuracyInUnitInterval) {
    Rng rng(2);
    std::uniform_int_distribution<int> label(0, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = random_batch(12, 3, rng);
        const auto p = random_batch(5, 3, rng);
        std::vector<int> y(12);
        for (int& l : y) l = label(rng);
        const double acc = zero_shot_accuracy(v, p, y);
        EXPECT_GE(acc, 0.0);
        EXPECT_LE(acc, 1.0);
    }
}

TEST(Drift, ZeroForSelfAndTriangleInequality) {
    Rng rng(3);
    const ToyEncoder a("e", make_projector(5, 6, 3, 1));
    const ToyEncoder b("e", make_projector(5, 6, 3, 2));
    const ToyEncoder c("e", make_projector(5, 6, 3, 3));
    const Matrix probes = gaussian_matrix(20, 5, rng);
    EXPECT_EQ(drift_metric(a, a, probes), 0.0);
    EXPECT_GT(drift_metric(a, b, probes), 0.0);
    EXPECT_NEAR(drift_metric(a, b, probes), drift_metric(b, a, probes), 1e-12);
    EXPECT_LE(drift_metric(a, c, probes), drift_metric(a, b, probes) + drift_metric(b, c, probes) + 1e-9);
    EXPECT_EQ(drift_metric(a, b, Matrix(0, 5)), 0.0);
    EXPECT_THROW((void)drift_metric(a, ToyEncoder("e", make_projector(4, 6, 3, 1)), probes), ConfigError);
}

TEST(Metrics, JsonKeyOrderAndTable) {
    MetricsReport r;
    r.label = "x";
    r.i2t_r1 = 0.5;
    r.t2i_r1 = 0.25;
    EXPECT_DOUBLE_EQ(r.recall_at_1(), 0.375);
    const auto j = to_json(r);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    EXPECT_EQ(keys, (std::vector<std::string>{"label", "i2t_recall_at_1", "i2t_recall_at_5", "t2i_recall_at_1",
                                              "t2i_recall_at_5", "heldout_zero_shot_accuracy",
                                              "finetune_accuracy", "mean_drift"}));
    const auto table = format_table({r});
    EXPECT_NE(table.find("label"), std::string::npos);
    EXPECT_NE(table.find("0.500"), std::string::npos);
    EXPECT_EQ(to_json(std::vector<MetricsReport>{r, r}).size(), 2u);
}

TEST(Gradcheck, LargestAllowedShapes) {
    GradcheckOptions o;
    o.batch = 6;
    o.dim = 5;
    for (auto kind : {LossKind::Instance, LossKind::Structure, LossKind::InfoNce, LossKind::SelfDistillReg}) {
        const auto r = gradcheck(kind, 4, o);
        EXPECT_TRUE(r.passed) << to_string(kind) << " " << r.worst_input << " " << r.max_rel_error;
        EXPECT_GT(r.checked, 0u);
    }
}

TEST(Checkpoint, EncoderRoundTrip) {
    ToyEncoder enc("image_encoder", make_projector(5, 7, 3, 4));
    Checkpoint ck;
    store(ck, enc);
    store_scalar(ck, "log_tau", -2.5);
    const auto back = decode_checkpoint(encode_checkpoint(ck));
    EXPECT_EQ(back, ck);
    EXPECT_TRUE(back.has_prefix("image_encoder"));
    EXPECT_FALSE(back.has_prefix("image"));
    EXPECT_EQ(load_encoder(back, "image_encoder"), enc);
    EXPECT_TRUE(load_encoder(back, "image_encoder", true).frozen());
    EXPECT_EQ(load_scalar(back, "log_tau"), -2.5);
    EXPECT_THROW((void)load_scalar(back, "tau"), ConfigError);
    EXPECT_THROW((void)load_encoder(back, "projector"), ConfigError);

    ToyEncoder other("image_encoder", make_projector(5, 7, 3, 9));
    load(back, other);
    EXPECT_EQ(other, enc);
    ToyEncoder wrong("image_encoder", make_projector(5, 8, 3, 9));
    EXPECT_THROW(load(back, wrong), ConfigError);
}

TEST(Checkpoint, ByteLayout) {
    Checkpoint ck;
    ck.add({"ab", {2}, {1.0, -1.0}});
    const auto bytes = encode_checkpoint(ck);
    ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 2u + 4u + 8u + 16u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PCLP");
    EXPECT_EQ(bytes[8], 2);
    EXPECT_EQ(bytes[12], 'a');
    EXPECT_EQ(bytes[14], 1);
    EXPECT_EQ(bytes[18], 2);
    double v = 0.0;
    std::memcpy(&v, bytes.data() + 34, 8);
    EXPECT_EQ(v, -1.0);
}

TEST(Checkpoint, MalformedInput) {
    Checkpoint ck;
    ck.add({"w", {2, 2}, {1, 2, 3, 4}});
    const auto bytes = encode_checkpoint(ck);
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
        if (cut == 8) continue;  // header only: a valid empty checkpoint
        EXPECT_THROW((void)decode_checkpoint(io::Bytes(bytes.begin(), bytes.begin() + cut)), ParseError)
            << cut;
    }
    EXPECT_TRUE(decode_checkpoint(io::Bytes(bytes.begin(), bytes.begin() + 8)).tensors().empty());
    auto dup = bytes;
    dup.insert(dup.end(), bytes.begin() + 8, bytes.end());
    try {
        (void)decode_checkpoint(dup);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), bytes.size());
    }
    EXPECT_THROW(ck.add({"w", {1}, {0}}), ConfigError);
    EXPECT_THROW(ck.add({"v", {3}, {0}}), ConfigError);
}
