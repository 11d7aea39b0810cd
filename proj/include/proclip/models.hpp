#pragma once

#include "proclip/core.hpp"
#include "proclip/embedding.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace proclip {

/// Nonlinearity applied between linear layers (never after the last one).
/// Gelu is the sigmoid approximation x * sigmoid(1.702 x).
enum class Activation { Gelu, Identity };

namespace detail {

inline constexpr double kGeluScale = 1.702;

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Matrix activate(const Matrix& z, Activation act) {
    if (act == Activation::Identity) return z;
    return z.unaryExpr([](double x) { return x * sigmoid(kGeluScale * x); });
}

inline Matrix activate_derivative(const Matrix& z, Activation act) {
    if (act == Activation::Identity) return Matrix::Ones(z.rows(), z.cols());
    return z.unaryExpr([](double x) {
        const double s = sigmoid(kGeluScale * x);
        return s + kGeluScale * x * s * (1.0 - s);
    });
}

}  // namespace detail

struct LinearLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    [[nodiscard]] Eigen::Index in_dim() const noexcept { return weight.cols(); }
    [[nodiscard]] Eigen::Index out_dim() const noexcept { return weight.rows(); }
};

struct LayerGrad {
    Matrix weight;
    Vector bias;
};

struct MlpGradients {
    std::vector<LayerGrad> layers;
    Matrix input;  // dL/d(input batch), for chaining into upstream networks
};

/// Mutable view of one parameter tensor, used by the optimizer, EMA and checkpoints.
struct ParamView {
    std::string name;
    std::span<double> values;
    std::vector<std::uint64_t> shape;
    bool decay = true;  // weight decay applies (weights yes, biases and log_tau no)
};

enum class InitScheme { XavierUniform, Zeros };

/// Deterministic parameters for a chain of widths {in, h1, ..., out}. Xavier-uniform weights
/// in +-sqrt(6 / (fan_in + fan_out)), zero biases.
[[nodiscard]] inline std::vector<LinearLayer> init_params(const std::vector<Eigen::Index>& widths,
                                                          std::uint64_t seed,
                                                          InitScheme scheme = InitScheme::XavierUniform) {
    require(widths.size() >= 2, "init_params: need at least input and output widths");
    for (auto w : widths) require(w >= 1, "init_params: widths must be positive");
    Rng rng(seed);
    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const Eigen::Index fan_in = widths[l];
        const Eigen::Index fan_out = widths[l + 1];
        LinearLayer layer{Matrix::Zero(fan_out, fan_in), Vector::Zero(fan_out)};
        if (scheme == InitScheme::XavierUniform) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index r = 0; r < fan_out; ++r)
                for (Eigen::Index c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
        }
        layers.push_back(std::move(layer));
    }
    return layers;
}

/// Stack of linear layers with an activation between consecutive layers.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::vector<LinearLayer> layers, Activation act) : layers_(std::move(layers)), act_(act) {
        require(!layers_.empty(), "Mlp: at least one layer required");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            require(layer.bias.size() == layer.out_dim(), "Mlp: bias size does not match weight rows");
            if (l > 0)
                require(layers_[l - 1].out_dim() == layer.in_dim(), "Mlp: layer widths do not chain");
        }
    }

    [[nodiscard]] Eigen::Index input_dim() const { return layers_.front().in_dim(); }
    [[nodiscard]] Eigen::Index output_dim() const { return layers_.back().out_dim(); }
    [[nodiscard]] std::size_t depth() const noexcept { return layers_.size(); }
    [[nodiscard]] Activation activation() const noexcept { return act_; }
    [[nodiscard]] const std::vector<LinearLayer>& layers() const noexcept { return layers_; }
    [[nodiscard]] std::vector<LinearLayer>& layers() noexcept { return layers_; }

    /// Forward pass that records the activations needed by backward().
    EmbeddingBatch forward(const Matrix& inputs) {
        Cache cache;
        Matrix out = run(inputs, &cache);
        cache_ = std::move(cache);
        return EmbeddingBatch(std::move(out));
    }

    /// Forward pass without touching the cache.
    [[nodiscard]] EmbeddingBatch predict(const Matrix& inputs) const {
        return EmbeddingBatch(run(inputs, nullptr));
    }

    [[nodiscard]] MlpGradients backward(const Matrix& upstream) const {
        if (!cache_) throw UsageError("Mlp::backward called before forward");
        const Cache& cache = *cache_;
        require(upstream.rows() == cache.inputs.front().rows() && upstream.cols() == output_dim(),
                "Mlp::backward: upstream gradient shape does not match the last forward pass");
        MlpGradients grads;
        grads.layers.resize(layers_.size());
        Matrix g = upstream;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            grads.layers[l].weight = g.transpose() * cache.inputs[l];
            grads.layers[l].bias = g.colwise().sum().transpose();
            Matrix g_in = g * layers_[l].weight;
            if (l > 0)
                g = g_in.cwiseProduct(detail::activate_derivative(cache.pre[l - 1], act_));
            else
                grads.input = std::move(g_in);
        }
        return grads;
    }

    void clear_cache() noexcept { cache_.reset(); }

    [[nodiscard]] std::vector<ParamView> parameters(const std::string& prefix) {
        std::vector<ParamView> views;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& layer = layers_[l];
            const std::string base = prefix + "." + std::to_string(l);
            views.push_back({base + ".weight",
                             {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())},
                             {static_cast<std::uint64_t>(layer.weight.rows()),
                              static_cast<std::uint64_t>(layer.weight.cols())},
                             true});
            views.push_back({base + ".bias",
                             {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())},
                             {static_cast<std::uint64_t>(layer.bias.size())},
                             false});
        }
        return views;
    }

    friend bool operator==(const Mlp& a, const Mlp& b) {
        if (a.act_ != b.act_ || a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t l = 0; l < a.layers_.size(); ++l) {
            const auto& x = a.layers_[l];
            const auto& y = b.layers_[l];
            if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols()) return false;
            if (x.weight != y.weight || x.bias != y.bias) return false;
        }
        return true;
    }

private:
    struct Cache {
        std::vector<Matrix> inputs;  // input of each layer
        std::vector<Matrix> pre;     // pre-activation of each hidden layer
    };

    Matrix run(const Matrix& inputs, Cache* cache) const {
        require(!layers_.empty(), "Mlp: empty network");
        require(inputs.cols() == input_dim(), "Mlp::forward: input width " +
                                                  std::to_string(inputs.cols()) + " != " +
                                                  std::to_string(input_dim()));
        Matrix h = inputs;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            Matrix z = h * layer.weight.transpose();
            z.rowwise() += layer.bias.transpose();
            if (cache) cache->inputs.push_back(std::move(h));
            if (l + 1 == layers_.size()) return z;
            h = detail::activate(z, act_);
            if (cache) cache->pre.push_back(std::move(z));
        }
        return h;
    }

    std::vector<LinearLayer> layers_;
    Activation act_ = Activation::Gelu;
    std::optional<Cache> cache_;
};

inline constexpr std::size_t kProjectorDepth = 4;

/// The four-linear-layer head: in -> hidden -> hidden -> hidden -> out.
[[nodiscard]] inline Mlp make_projector(Eigen::Index in_dim, Eigen::Index hidden, Eigen::Index out_dim,
                                        std::uint64_t seed, Activation act = Activation::Gelu) {
    return Mlp(init_params({in_dim, hidden, hidden, hidden, out_dim}, seed), act);
}

/// A named four-layer network standing in for an image encoder, a text encoder or the LLM
/// embedder. Frozen encoders refuse to hand out trainable parameters.
class ToyEncoder {
public:
    ToyEncoder() = default;

    ToyEncoder(std::string name, Mlp net, bool frozen = false)
        : name_(std::move(name)), net_(std::move(net)), frozen_(frozen) {
        require(net_.depth() == kProjectorDepth, "ToyEncoder: expected exactly four linear layers");
    }

    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] bool frozen() const noexcept { return frozen_; }
    void freeze() noexcept { frozen_ = true; }
    [[nodiscard]] Eigen::Index input_dim() const { return net_.input_dim(); }
    [[nodiscard]] Eigen::Index output_dim() const { return net_.output_dim(); }
    [[nodiscard]] const Mlp& net() const noexcept { return net_; }

    EmbeddingBatch forward(const Matrix& inputs) { return net_.forward(inputs); }
    [[nodiscard]] EmbeddingBatch predict(const Matrix& inputs) const { return net_.predict(inputs); }
    [[nodiscard]] MlpGradients backward(const Matrix& upstream) const {
        return net_.backward(upstream);
    }

    /// Parameters the optimizer may update. Throws for a frozen encoder.
    [[nodiscard]] std::vector<ParamView> trainable_parameters() {
        if (frozen_) throw UsageError("ToyEncoder '" + name_ + "' is frozen");
        return net_.parameters(name_);
    }

    /// All parameters for serialization and EMA, regardless of the frozen flag.
    [[nodiscard]] std::vector<ParamView> parameters() { return net_.parameters(name_); }

    friend bool operator==(const ToyEncoder& a, const ToyEncoder& b) {
        return a.name_ == b.name_ && a.frozen_ == b.frozen_ && a.net_ == b.net_;
    }

private:
    std::string name_;
    Mlp net_;
    bool frozen_ = false;
};

/// Flattens per-layer gradients in the same order as Mlp::parameters().
[[nodiscard]] inline std::vector<std::span<const double>> gradient_views(const MlpGradients& g) {
    std::vector<std::span<const double>> out;
    for (const auto& layer : g.layers) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
    return out;
}

/// Slowly-moving shadow copy of a trainable encoder.
class EmaTeacher {
public:
    EmaTeacher(const ToyEncoder& student, double alpha) : shadow_(student), alpha_(alpha) {
        require(alpha >= 0.0 && alpha <= 1.0, "EmaTeacher: alpha must lie in [0, 1]");
        shadow_.freeze();
    }

    [[nodiscard]] double alpha() const noexcept { return alpha_; }
    [[nodiscard]] const ToyEncoder& shadow() const noexcept { return shadow_; }
    [[nodiscard]] EmbeddingBatch predict(const Matrix& inputs) const { return shadow_.predict(inputs); }

    /// shadow <- alpha * shadow + (1 - alpha) * student, elementwise.
    void update(ToyEncoder& student) {
        auto dst = shadow_.parameters();
        auto src = student.parameters();
        require(dst.size() == src.size(), "ema_update: parameter count mismatch");
        const double keep = alpha_;
        const double take = 1.0 - alpha_;
        for (std::size_t k = 0; k < dst.size(); ++k) {
            require(dst[k].shape == src[k].shape, "ema_update: shape mismatch for " + dst[k].name);
            for (std::size_t i = 0; i < dst[k].values.size(); ++i)
                dst[k].values[i] = keep * dst[k].values[i] + take * src[k].values[i];
        }
    }

private:
    ToyEncoder shadow_;
    double alpha_;
};

inline void ema_update(EmaTeacher& teacher, ToyEncoder& student) { teacher.update(student); }

}  // namespace proclip
