#pragma once

#include "proclip/embedding.hpp"
#include "proclip/losses.hpp"
#include "proclip/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace proclip {

// ---------------------------------------------------------------------------------------
// Retrieval and classification
// ---------------------------------------------------------------------------------------

struct RecallRates {
    double image_to_text = 0.0;
    double text_to_image = 0.0;
};

namespace detail {

// Rank of column `target` in row `row` of `scores`: number of candidates that beat it, where
// equal scores at a lower index also beat it (lowest-index tie-break).
inline Eigen::Index rank_of(const Matrix& scores, Eigen::Index row, Eigen::Index target) {
    const double s = scores(row, target);
    Eigen::Index rank = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        if (j == target) continue;
        const double c = scores(row, j);
        if (c > s || (c == s && j < target)) ++rank;
    }
    return rank;
}

}  // namespace detail

/// Fraction of queries whose true partner (same row index) is in the top-k by dot product.
[[nodiscard]] inline RecallRates recall_at_k(const EmbeddingBatch& image, const EmbeddingBatch& text,
                                             Eigen::Index k) {
    require(image.rows() == text.rows(), "recall_at_k: row counts differ");
    require(image.rows() >= 1, "recall_at_k: empty batch");
    require(k >= 1 && k <= image.rows(), "recall_at_k: k must lie in [1, B]");
    const Matrix sim = similarity_matrix(image, text);
    const Matrix sim_t = sim.transpose();
    Eigen::Index hits_i2t = 0;
    Eigen::Index hits_t2i = 0;
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        if (detail::rank_of(sim, i, i) < k) ++hits_i2t;
        if (detail::rank_of(sim_t, i, i) < k) ++hits_t2i;
    }
    const auto n = static_cast<double>(sim.rows());
    return {static_cast<double>(hits_i2t) / n, static_cast<double>(hits_t2i) / n};
}

/// Index of the most similar prototype for every row; ties go to the lower class id.
[[nodiscard]] inline std::vector<int> classify(const EmbeddingBatch& image,
                                               const EmbeddingBatch& prototypes) {
    require(image.cols() == prototypes.cols(), "classify: dimension mismatch");
    require(prototypes.rows() >= 1, "classify: no prototypes");
    const Matrix scores = image.matrix() * prototypes.matrix().transpose();
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(i, c) > scores(i, best)) best = c;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

[[nodiscard]] inline double zero_shot_accuracy(const EmbeddingBatch& image,
                                               const EmbeddingBatch& prototypes,
                                               const std::vector<int>& labels) {
    require(static_cast<Eigen::Index>(labels.size()) == image.rows(),
            "zero_shot_accuracy: one label per image required");
    for (int y : labels)
        require(y >= 0 && y < prototypes.rows(), "zero_shot_accuracy: label out of range");
    if (labels.empty()) return 0.0;
    const auto predicted = classify(image, prototypes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Mean over probes of |E(x) - E_ref(x)|.
[[nodiscard]] inline double drift_metric(const ToyEncoder& encoder, const ToyEncoder& reference,
                                         const Matrix& probes) {
    require(encoder.input_dim() == reference.input_dim() &&
                encoder.output_dim() == reference.output_dim(),
            "drift_metric: encoders have different shapes");
    if (probes.rows() == 0) return 0.0;
    const Matrix diff = encoder.predict(probes).matrix() - reference.predict(probes).matrix();
    return diff.rowwise().norm().mean();
}

// ---------------------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------------------

struct MetricsReport {
    std::string label;
    double i2t_r1 = 0.0;
    double i2t_r5 = 0.0;
    double t2i_r1 = 0.0;
    double t2i_r5 = 0.0;
    double heldout_accuracy = 0.0;
    double finetune_accuracy = 0.0;
    double mean_drift = 0.0;

    [[nodiscard]] double recall_at_1() const { return 0.5 * (i2t_r1 + t2i_r1); }
};

[[nodiscard]] inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["i2t_recall_at_1"] = r.i2t_r1;
    j["i2t_recall_at_5"] = r.i2t_r5;
    j["t2i_recall_at_1"] = r.t2i_r1;
    j["t2i_recall_at_5"] = r.t2i_r5;
    j["heldout_zero_shot_accuracy"] = r.heldout_accuracy;
    j["finetune_accuracy"] = r.finetune_accuracy;
    j["mean_drift"] = r.mean_drift;
    return j;
}

[[nodiscard]] inline nlohmann::ordered_json to_json(const std::vector<MetricsReport>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) j.push_back(to_json(r));
    return j;
}

/// Aligned plain-text table, one row per report.
[[nodiscard]] inline std::string format_table(const std::vector<MetricsReport>& rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %7s %7s %7s %7s  %8s %8s  %8s\n", static_cast<int>(width),
                  "label", "I2T@1", "I2T@5", "T2I@1", "T2I@5", "heldout", "finetune", "drift");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %7.3f %7.3f %7.3f %7.3f  %8.3f %8.3f  %8.4f\n",
                      static_cast<int>(width), r.label.c_str(), r.i2t_r1, r.i2t_r5, r.t2i_r1,
                      r.t2i_r5, r.heldout_accuracy, r.finetune_accuracy, r.mean_drift);
        out << buf;
    }
    return out.str();
}

// ---------------------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------------------

enum class LossKind { Instance, Structure, Distillation, InfoNce, SelfDistillReg, Tuning };

[[nodiscard]] inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::Instance: return "instance";
        case LossKind::Structure: return "structure";
        case LossKind::Distillation: return "distillation";
        case LossKind::InfoNce: return "info_nce";
        case LossKind::SelfDistillReg: return "self_distill_reg";
        case LossKind::Tuning: return "tuning";
    }
    return "unknown";
}

struct GradcheckOptions {
    Eigen::Index batch = 4;
    Eigen::Index dim = 3;
    double h = 1e-5;
    double tol = 1e-4;
    // Coordinates whose analytic and numeric gradients are both below this are compared
    // with the absolute tolerance instead (relative error is meaningless near zero).
    double zero_floor = 1e-5;
    double abs_tol = 1e-8;
    double kink_tol = 1e-6;
    double lambda = 0.5;  // regularizer weight used for the Tuning kind
};

struct GradcheckReport {
    LossKind kind = LossKind::Instance;
    bool passed = true;
    double max_rel_error = 0.0;
    double max_abs_error_near_zero = 0.0;
    std::string worst_input;  // e.g. "student[2,1]"
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

namespace detail {

struct GradcheckInstance {
    std::map<std::string, Matrix> trainable;  // perturbed inputs
    std::map<std::string, Matrix> fixed;      // teacher / EMA batches
};

inline Matrix normalized_rows(Matrix m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
    return m;
}

inline GradcheckInstance make_instance(LossKind kind, const GradcheckOptions& o, Rng& rng) {
    GradcheckInstance inst;
    switch (kind) {
        case LossKind::Instance:
        case LossKind::Structure:
        case LossKind::Distillation:
        case LossKind::SelfDistillReg:
            inst.trainable["student"] = gaussian_matrix(o.batch, o.dim, rng);
            inst.fixed["teacher"] = gaussian_matrix(o.batch, o.dim, rng);
            break;
        case LossKind::InfoNce: {
            inst.trainable["image"] = normalized_rows(gaussian_matrix(o.batch, o.dim, rng));
            inst.trainable["text"] = normalized_rows(gaussian_matrix(o.batch, o.dim, rng));
            std::uniform_real_distribution<double> u(std::log(0.07), 0.0);
            inst.trainable["log_tau"] = Matrix::Constant(1, 1, u(rng));
            break;
        }
        case LossKind::Tuning: {
            inst.trainable["image"] = gaussian_matrix(o.batch, o.dim, rng);
            inst.trainable["text"] = gaussian_matrix(o.batch, o.dim, rng);
            std::uniform_real_distribution<double> u(std::log(0.07), 0.0);
            inst.trainable["log_tau"] = Matrix::Constant(1, 1, u(rng));
            inst.fixed["teacher"] = gaussian_matrix(o.batch, o.dim, rng);
            break;
        }
    }
    return inst;
}

inline LossValue evaluate(LossKind kind, const GradcheckInstance& in, const GradcheckOptions& o) {
    const auto& t = in.trainable;
    auto batch = [](const Matrix& m) { return EmbeddingBatch(m); };
    switch (kind) {
        case LossKind::Instance:
            return instance_alignment_loss(batch(t.at("student")), batch(in.fixed.at("teacher")));
        case LossKind::Structure:
            return structure_alignment_loss(batch(t.at("student")), batch(in.fixed.at("teacher")));
        case LossKind::Distillation:
            return distillation_loss(batch(t.at("student")), batch(in.fixed.at("teacher")));
        case LossKind::SelfDistillReg:
            return self_distill_reg_loss(batch(t.at("student")), batch(in.fixed.at("teacher")));
        case LossKind::InfoNce:
            return info_nce_loss(batch(t.at("image")), batch(t.at("text")), t.at("log_tau")(0, 0));
        case LossKind::Tuning:
            return tuning_loss(batch(t.at("image")), batch(t.at("text")), batch(in.fixed.at("teacher")),
                               t.at("log_tau")(0, 0), o.lambda);
    }
    return {};
}

// Distance from the nearest non-differentiable point touching row `row` of the student:
// the instance norm at zero, the pairwise norm at coincidence, and |.| at a tie.
inline double kink_margin(LossKind kind, const GradcheckInstance& in, Eigen::Index row) {
    double margin = std::numeric_limits<double>::infinity();
    const bool has_ins = kind == LossKind::Instance || kind == LossKind::Distillation ||
                         kind == LossKind::SelfDistillReg || kind == LossKind::Tuning;
    const bool has_struct = kind == LossKind::Structure || kind == LossKind::Distillation ||
                            kind == LossKind::SelfDistillReg || kind == LossKind::Tuning;
    if (!has_ins && !has_struct) return margin;
    const Matrix& s = kind == LossKind::Tuning ? in.trainable.at("image") : in.trainable.at("student");
    const Matrix& t = in.fixed.at("teacher");
    if (has_ins) margin = std::min(margin, (s.row(row) - t.row(row)).norm());
    if (has_struct) {
        for (Eigen::Index j = 0; j < s.rows(); ++j) {
            if (j == row) continue;
            const double ds = (s.row(row) - s.row(j)).norm();
            const double dt = (t.row(row) - t.row(j)).norm();
            margin = std::min({margin, ds, std::abs(ds - dt)});
        }
    }
    return margin;
}

}  // namespace detail

/// Central-difference check of every trainable coordinate of a random instance.
[[nodiscard]] inline GradcheckReport gradcheck(LossKind kind, std::uint64_t seed,
                                               const GradcheckOptions& opts = {}) {
    require(opts.h >= 1e-7 && opts.h <= 1e-3, "gradcheck: h must lie in [1e-7, 1e-3]");
    Rng rng(seed);
    detail::GradcheckInstance inst = detail::make_instance(kind, opts, rng);
    const LossValue analytic = detail::evaluate(kind, inst, opts);

    GradcheckReport report;
    report.kind = kind;
    // a perturbation of size h can itself cross a kink, so the exclusion band is at least 2h
    const double band = std::max(opts.kink_tol, 2.0 * opts.h);

    for (auto& [name, values] : inst.trainable) {
        const Matrix* g = analytic.grad(name);
        for (Eigen::Index r = 0; r < values.rows(); ++r) {
            const bool near_kink = name != "log_tau" && name != "text" &&
                                   detail::kink_margin(kind, inst, r) < band;
            for (Eigen::Index c = 0; c < values.cols(); ++c) {
                if (near_kink) {
                    ++report.skipped;
                    continue;
                }
                const double saved = values(r, c);
                values(r, c) = saved + opts.h;
                const double up = detail::evaluate(kind, inst, opts).value;
                values(r, c) = saved - opts.h;
                const double down = detail::evaluate(kind, inst, opts).value;
                values(r, c) = saved;

                const double numeric = (up - down) / (2.0 * opts.h);
                const double a = g ? (*g)(r, c) : 0.0;
                const double diff = std::abs(a - numeric);
                const double scale = std::max(std::abs(a), std::abs(numeric));
                ++report.checked;
                const std::string where =
                    name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
                if (scale < opts.zero_floor) {
                    report.max_abs_error_near_zero = std::max(report.max_abs_error_near_zero, diff);
                    if (diff >= opts.abs_tol) report.passed = false;
                    continue;
                }
                const double rel = diff / scale;
                if (rel > report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_input = where;
                }
                if (rel >= opts.tol) report.passed = false;
            }
        }
    }
    return report;
}

}  // namespace proclip
