#pragma once

// JSON form of ExperimentConfig. Keys mirror the C++ field names; absent keys keep the desk
// profile value, unknown keys are rejected.

#include "proclip/curriculum.hpp"
#include "proclip/data.hpp"

#include <json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>

namespace proclip {

using Json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown(const Json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
    if (!j.is_object()) throw ConfigError("config: '" + std::string(where) + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (auto key : keys) known = known || key == k;
        if (!known) throw ConfigError("config: unknown key '" + k + "' in '" + std::string(where) + "'");
    }
}

template <class T>
void read_key(const Json& j, const char* key, T& out, std::string_view where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: wrong type for '" + std::string(where) + "." + key + "'");
    }
}

inline void read_stage(const Json& j, StageConfig& s, std::string_view where) {
    read_key(j, "batch_size", s.batch_size, where);
    read_key(j, "epochs", s.epochs, where);
    read_key(j, "lr", s.lr, where);
    read_key(j, "weight_decay", s.weight_decay, where);
    read_key(j, "beta1", s.beta1, where);
    read_key(j, "beta2", s.beta2, where);
    read_key(j, "adam_eps", s.adam_eps, where);
}

inline Json stage_json(const StageConfig& s) {
    return {{"batch_size", s.batch_size}, {"epochs", s.epochs},   {"lr", s.lr},
            {"weight_decay", s.weight_decay}, {"beta1", s.beta1}, {"beta2", s.beta2},
            {"adam_eps", s.adam_eps}};
}

}  // namespace detail

[[nodiscard]] inline std::string to_string(Reduction r) { return r == Reduction::Mean ? "mean" : "sum"; }
[[nodiscard]] inline std::string to_string(Mode m) {
    return m == Mode::BaselineContrastive ? "baseline_contrastive" : "proclip";
}

[[nodiscard]] inline Json to_json(const ExperimentConfig& c) {
    const auto& t = c.train;
    Json stage2 = detail::stage_json(t.stage2);
    stage2["lambda"] = t.stage2.lambda;
    stage2["ema_alpha"] = t.stage2.ema_alpha;
    const auto& d = c.world.dims;
    return {
        {"stage1", detail::stage_json(t.stage1)},
        {"stage2", stage2},
        {"seed", t.seed},
        {"schedule", t.schedule},
        {"reduction", to_string(t.reduction)},
        {"mode", to_string(t.mode)},
        {"losses", {{"ins", t.losses.ins}, {"struct", t.losses.structure}, {"info", t.losses.info},
                    {"reg", t.losses.reg}}},
        {"init_tau", t.init_tau},
        {"world", {{"latent", d.latent}, {"image", d.image}, {"caption", d.caption}, {"llm", d.llm},
                   {"clip", d.clip}, {"hidden", d.hidden}, {"n_classes", c.world.n_classes},
                   {"noise_sigma", c.world.noise_sigma}, {"view_noise_ratio", c.world.view_noise_ratio}}},
        {"corpus", {{"n_per_class", c.n_per_class}, {"heldout_classes", c.split.heldout_classes},
                    {"eval_per_class", c.split.eval_per_class},
                    {"heldout_per_class", c.split.heldout_per_class}}},
        {"pretrain", {{"per_class", c.pretrain.per_class}, {"epochs", c.pretrain.epochs},
                      {"batch_size", c.pretrain.batch_size}, {"lr", c.pretrain.lr},
                      {"weight_decay", c.pretrain.weight_decay}, {"eval_per_class", c.pretrain.eval_per_class},
                      {"min_recall", c.pretrain.min_recall}}},
    };
}

/// Parses a config document over the desk profile and validates the result.
[[nodiscard]] inline ExperimentConfig config_from_json(const Json& j) {
    using detail::read_key;
    detail::reject_unknown(j, "config",
                           {"stage1", "stage2", "seed", "schedule", "reduction", "mode", "losses", "init_tau",
                            "world", "corpus", "pretrain"});
    ExperimentConfig c = desk_profile();
    auto& t = c.train;
    if (auto it = j.find("stage1"); it != j.end()) {
        detail::reject_unknown(*it, "stage1",
                               {"batch_size", "epochs", "lr", "weight_decay", "beta1", "beta2", "adam_eps"});
        detail::read_stage(*it, t.stage1, "stage1");
    }
    if (auto it = j.find("stage2"); it != j.end()) {
        detail::reject_unknown(*it, "stage2",
                               {"batch_size", "epochs", "lr", "weight_decay", "beta1", "beta2", "adam_eps",
                                "lambda", "ema_alpha"});
        detail::read_stage(*it, t.stage2, "stage2");
        read_key(*it, "lambda", t.stage2.lambda, "stage2");
        read_key(*it, "ema_alpha", t.stage2.ema_alpha, "stage2");
    }
    read_key(j, "seed", t.seed, "config");
    read_key(j, "schedule", t.schedule, "config");
    read_key(j, "init_tau", t.init_tau, "config");
    if (j.contains("reduction")) {
        std::string r;
        read_key(j, "reduction", r, "config");
        require(r == "sum" || r == "mean", "config: reduction must be 'sum' or 'mean'");
        t.reduction = r == "mean" ? Reduction::Mean : Reduction::Sum;
    }
    if (j.contains("mode")) {
        std::string m;
        read_key(j, "mode", m, "config");
        require(m == "proclip" || m == "baseline_contrastive",
                "config: mode must be 'proclip' or 'baseline_contrastive'");
        t.mode = m == "proclip" ? Mode::ProClip : Mode::BaselineContrastive;
    }
    if (auto it = j.find("losses"); it != j.end()) {
        detail::reject_unknown(*it, "losses", {"ins", "struct", "info", "reg"});
        read_key(*it, "ins", t.losses.ins, "losses");
        read_key(*it, "struct", t.losses.structure, "losses");
        read_key(*it, "info", t.losses.info, "losses");
        read_key(*it, "reg", t.losses.reg, "losses");
    }
    if (auto it = j.find("world"); it != j.end()) {
        detail::reject_unknown(*it, "world",
                               {"latent", "image", "caption", "llm", "clip", "hidden", "n_classes", "noise_sigma",
                                "view_noise_ratio"});
        auto& d = c.world.dims;
        read_key(*it, "latent", d.latent, "world");
        read_key(*it, "image", d.image, "world");
        read_key(*it, "caption", d.caption, "world");
        read_key(*it, "llm", d.llm, "world");
        read_key(*it, "clip", d.clip, "world");
        read_key(*it, "hidden", d.hidden, "world");
        read_key(*it, "n_classes", c.world.n_classes, "world");
        read_key(*it, "noise_sigma", c.world.noise_sigma, "world");
        read_key(*it, "view_noise_ratio", c.world.view_noise_ratio, "world");
    }
    if (auto it = j.find("corpus"); it != j.end()) {
        detail::reject_unknown(*it, "corpus",
                               {"n_per_class", "heldout_classes", "eval_per_class", "heldout_per_class"});
        read_key(*it, "n_per_class", c.n_per_class, "corpus");
        read_key(*it, "heldout_classes", c.split.heldout_classes, "corpus");
        read_key(*it, "eval_per_class", c.split.eval_per_class, "corpus");
        read_key(*it, "heldout_per_class", c.split.heldout_per_class, "corpus");
    }
    if (auto it = j.find("pretrain"); it != j.end()) {
        detail::reject_unknown(*it, "pretrain",
                               {"per_class", "epochs", "batch_size", "lr", "weight_decay", "eval_per_class",
                                "min_recall"});
        auto& p = c.pretrain;
        read_key(*it, "per_class", p.per_class, "pretrain");
        read_key(*it, "epochs", p.epochs, "pretrain");
        read_key(*it, "batch_size", p.batch_size, "pretrain");
        read_key(*it, "lr", p.lr, "pretrain");
        read_key(*it, "weight_decay", p.weight_decay, "pretrain");
        read_key(*it, "eval_per_class", p.eval_per_class, "pretrain");
        read_key(*it, "min_recall", p.min_recall, "pretrain");
    }
    t.validate();
    require(c.n_per_class >= 1, "config: corpus.n_per_class must be at least 1");
    return c;
}

[[nodiscard]] inline ExperimentConfig parse_config(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const std::exception& e) {
        throw ConfigError("config: cannot read " + path.string() + ": " + e.what());
    }
    return parse_config(text);
}

}  // namespace proclip
