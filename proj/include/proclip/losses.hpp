#pragma once

#include "proclip/embedding.hpp"

#include <cmath>
#include <map>
#include <string>

namespace proclip {

/// Sum reproduces the loss formulas literally; Mean divides each sum by its number of terms.
enum class Reduction { Sum, Mean };

/// A scalar loss together with gradients for the trainable inputs.
/// Gradients through teacher / EMA batches are never produced (stop-gradient).
struct LossValue {
    double value = 0.0;
    std::map<std::string, Matrix> grads;
    // Named component values ("ins", "struct", "info", "reg") for logging.
    std::map<std::string, double> terms;
    // Set when the loss is degenerate for this input (structure loss with B < 2).
    bool warning = false;

    [[nodiscard]] const Matrix* grad(const std::string& name) const {
        auto it = grads.find(name);
        return it == grads.end() ? nullptr : &it->second;
    }

    [[nodiscard]] double term(const std::string& name) const {
        auto it = terms.find(name);
        return it == terms.end() ? 0.0 : it->second;
    }
};

namespace detail {

inline void accumulate(std::map<std::string, Matrix>& into, const std::string& name,
                       const Matrix& g, double scale = 1.0) {
    auto it = into.find(name);
    if (it == into.end())
        into.emplace(name, scale * g);
    else
        it->second += scale * g;
}

inline double reduce_scale(Reduction r, double count) {
    return (r == Reduction::Mean && count > 0) ? 1.0 / count : 1.0;
}

// Log-softmax of every row, with per-row max subtraction.
inline Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        out.row(i) = logits.row(i).array() - lse;
    }
    return out;
}

}  // namespace detail

/// Sum over rows of the smoothed distance between student and teacher rows.
[[nodiscard]] inline LossValue instance_alignment_loss(const EmbeddingBatch& student,
                                                       const EmbeddingBatch& teacher,
                                                       Reduction reduction = Reduction::Sum) {
    require(student.rows() == teacher.rows() && student.cols() == teacher.cols(),
            "instance_alignment_loss: student and teacher shapes differ");
    const double scale = detail::reduce_scale(reduction, static_cast<double>(student.rows()));
    LossValue out;
    Matrix grad = Matrix::Zero(student.rows(), student.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < student.rows(); ++i) {
        const auto diff = (student.row(i) - teacher.row(i)).eval();
        const double sq = diff.squaredNorm();
        total += smooth_norm(sq);
        grad.row(i) = diff / std::sqrt(sq + kNormEps);
    }
    out.value = scale * total;
    out.grads.emplace("student", scale * grad);
    out.terms["ins"] = out.value;
    return out;
}

/// Sum over pairs i<j of |d_student(i,j) - d_teacher(i,j)|. The two batches may live in
/// spaces of different dimension; only their pairwise distances are compared.
[[nodiscard]] inline LossValue structure_alignment_loss(const EmbeddingBatch& student,
                                                        const EmbeddingBatch& teacher,
                                                        Reduction reduction = Reduction::Sum) {
    require(student.rows() == teacher.rows(),
            "structure_alignment_loss: student and teacher batch sizes differ");
    LossValue out;
    const auto n = student.rows();
    if (n < 2) {
        out.warning = true;
        out.terms["struct"] = 0.0;
        return out;
    }
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    const double scale = detail::reduce_scale(reduction, pairs);
    const Matrix& s = student.matrix();
    const DistanceMatrix dt = pairwise_euclidean(teacher);

    Matrix grad = Matrix::Zero(n, student.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto diff = (s.row(i) - s.row(j)).eval();
            const double sq = diff.squaredNorm();
            const double gap = smooth_norm(sq) - dt(i, j);
            total += std::abs(gap);
            // subgradient 0 at an exact tie
            const double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
            if (sign == 0.0) continue;
            const auto g = (sign / std::sqrt(sq + kNormEps)) * diff;
            grad.row(i) += g;
            grad.row(j) -= g;
        }
    }
    out.value = scale * total;
    out.grads.emplace("student", scale * grad);
    out.terms["struct"] = out.value;
    return out;
}

/// Stage-1 objective: instance + structure alignment against a frozen teacher.
[[nodiscard]] inline LossValue distillation_loss(const EmbeddingBatch& student,
                                                 const EmbeddingBatch& teacher,
                                                 Reduction reduction = Reduction::Sum) {
    LossValue ins = instance_alignment_loss(student, teacher, reduction);
    LossValue st = structure_alignment_loss(student, teacher, reduction);
    LossValue out;
    out.value = ins.value + st.value;
    out.grads = std::move(ins.grads);
    if (const Matrix* g = st.grad("student")) detail::accumulate(out.grads, "student", *g);
    out.terms["ins"] = ins.value;
    out.terms["struct"] = st.value;
    out.warning = st.warning;
    return out;
}

/// Symmetric InfoNCE over the B x B logits <image_i, text_j> / tau with tau = exp(log_tau).
/// Inputs are expected to be L2-normalized. Gradients: "image", "text", "log_tau" (1 x 1).
[[nodiscard]] inline LossValue info_nce_loss(const EmbeddingBatch& image, const EmbeddingBatch& text,
                                             double log_tau, Reduction reduction = Reduction::Sum) {
    require(image.rows() == text.rows() && image.cols() == text.cols(),
            "info_nce_loss: image and text shapes differ");
    require(std::isfinite(log_tau), "info_nce_loss: log_tau must be finite");
    const auto n = image.rows();
    const double tau = std::exp(log_tau);
    const double scale = detail::reduce_scale(reduction, 2.0 * static_cast<double>(n));

    const Matrix logits = similarity_matrix(image, text) / tau;
    const Matrix log_p_img = detail::log_softmax_rows(logits);               // image -> text
    const Matrix log_p_txt = detail::log_softmax_rows(logits.transpose());   // text -> image

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total -= log_p_img(i, i) + log_p_txt(i, i);

    // dL/dlogits = (P_img - I) + (P_txt - I)^T
    Matrix g_logits = log_p_img.array().exp().matrix() + log_p_txt.array().exp().matrix().transpose();
    g_logits.diagonal().array() -= 2.0;
    g_logits *= scale;

    LossValue out;
    out.value = scale * total;
    out.grads.emplace("image", g_logits * text.matrix() / tau);
    out.grads.emplace("text", g_logits.transpose() * image.matrix() / tau);
    Matrix g_tau(1, 1);
    g_tau(0, 0) = -(g_logits.array() * logits.array()).sum();
    out.grads.emplace("log_tau", std::move(g_tau));
    out.terms["info"] = out.value;
    return out;
}

/// Self-distillation regularizer against the EMA encoder's outputs. Same form as the
/// stage-1 distillation loss; the gradient key is "student".
[[nodiscard]] inline LossValue self_distill_reg_loss(const EmbeddingBatch& student_img,
                                                     const EmbeddingBatch& ema_img,
                                                     Reduction reduction = Reduction::Sum) {
    require(student_img.cols() == ema_img.cols(),
            "self_distill_reg_loss: student and EMA dimensions differ");
    LossValue out = distillation_loss(student_img, ema_img, reduction);
    out.terms.clear();
    out.terms["reg"] = out.value;
    return out;
}

/// Stage-2 objective: InfoNCE on normalized embeddings + lambda * regularizer on raw image
/// embeddings. Takes raw encoder outputs; gradients "image" and "text" are with respect to
/// those raw outputs, "log_tau" with respect to the log temperature.
[[nodiscard]] inline LossValue tuning_loss(const EmbeddingBatch& image_raw,
                                           const EmbeddingBatch& text_raw,
                                           const EmbeddingBatch& ema_raw, double log_tau,
                                           double lambda, Reduction reduction = Reduction::Sum) {
    if (!(lambda >= 0.0)) throw ConfigError("tuning_loss: lambda must be non-negative");
    const NormalizedBatch v = l2_normalize(image_raw);
    const NormalizedBatch t = l2_normalize(text_raw);
    LossValue info = info_nce_loss(v.batch, t.batch, log_tau, reduction);

    LossValue out;
    out.value = info.value;
    out.terms["info"] = info.value;
    out.grads.emplace("image", l2_normalize_backward(image_raw.matrix(), *info.grad("image")));
    out.grads.emplace("text", l2_normalize_backward(text_raw.matrix(), *info.grad("text")));
    out.grads.emplace("log_tau", *info.grad("log_tau"));

    if (lambda > 0.0) {
        LossValue reg = self_distill_reg_loss(image_raw, ema_raw, reduction);
        out.value += lambda * reg.value;
        out.terms["reg"] = reg.value;
        if (const Matrix* g = reg.grad("student")) detail::accumulate(out.grads, "image", *g, lambda);
        out.warning = reg.warning;
    } else {
        out.terms["reg"] = 0.0;
    }
    return out;
}

}  // namespace proclip
