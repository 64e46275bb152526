#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/dataset.hpp"
#include "bitraj/distill.hpp"
#include "bitraj/expert.hpp"
#include "bitraj/model.hpp"

namespace bitraj {

// Strict config parsing: unknown keys are rejected, and the fields the
// results are sensitive to (distilled size, span lengths, learning rates)
// have no silent defaults.
namespace cfgjson {

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("config section '" + section + "': unknown key '" + key + "'");
    }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& section, const char* key) {
    if (!j.contains(key))
        throw ConfigError("config section '" + section + "': missing required key '" +
                          std::string(key) + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config section '" + section + "': bad value for '" +
                          std::string(key) + "': " + e.what());
    }
}

template <typename T>
T optional(const nlohmann::json& j, const std::string& section, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config section '" + section + "': bad value for '" +
                          std::string(key) + "': " + e.what());
    }
}

inline std::uint64_t derived_seed(std::uint64_t global, const char* section) {
    Fnv1a h;
    h.update(&global, sizeof(global));
    h.update(section);
    return h.value();
}

} // namespace cfgjson

struct EvalSettings {
    TrainConfig train;
    std::size_t n_seeds = 5;
    std::vector<int> ks{1, 5, 10};
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"momentum", train.momentum},
                {"tau", train.tau},
                {"n_seeds", n_seeds},
                {"ks", ks},
                {"seed", seed}};
    }
};

struct CoresetSettings {
    std::size_t m = 20;
    bool encoded_features = false;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"m", m}, {"encoded_features", encoded_features}, {"seed", seed}};
    }
};

struct RunConfig {
    std::uint64_t seed = 0;
    GenConfig datagen;
    ModelConfig model;
    TrainConfig expert;
    CoresetSettings coreset;
    DistillConfig distill;
    EvalSettings eval;

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    std::string digest() const { return digest_hex(to_json().dump()); }
};

inline GenConfig parse_datagen(const nlohmann::json& j, std::uint64_t global_seed) {
    using namespace cfgjson;
    const std::string sec = "datagen";
    reject_unknown(j, sec,
                   {"n_train", "n_val", "n_test", "captions_per_item", "latent_dim", "d_img",
                    "e_txt", "sigma_img", "sigma_txt", "mode", "num_classes", "multi_caption",
                    "seed"});
    GenConfig g;
    g.n_train = require<std::size_t>(j, sec, "n_train");
    g.n_val = require<std::size_t>(j, sec, "n_val");
    g.n_test = require<std::size_t>(j, sec, "n_test");
    g.captions_per_item = require<std::size_t>(j, sec, "captions_per_item");
    g.latent_dim = require<std::size_t>(j, sec, "latent_dim");
    g.d_img = require<std::size_t>(j, sec, "d_img");
    g.e_txt = require<std::size_t>(j, sec, "e_txt");
    g.sigma_img = require<double>(j, sec, "sigma_img");
    g.sigma_txt = require<double>(j, sec, "sigma_txt");
    const std::string mode = optional<std::string>(j, sec, "mode", "continuous");
    if (mode == "continuous") {
        g.mode = GenMode::continuous_concepts;
    } else if (mode == "class_captions") {
        g.mode = GenMode::class_captions;
        g.num_classes = require<std::size_t>(j, sec, "num_classes");
        g.multi_caption = optional<bool>(j, sec, "multi_caption", false);
    } else {
        throw ConfigError("datagen: unknown mode '" + mode + "'");
    }
    g.seed = optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, "datagen"));
    g.validate();
    return g;
}

inline ModelConfig parse_backbone(const nlohmann::json& j, std::uint64_t global_seed) {
    using namespace cfgjson;
    const std::string sec = "backbone";
    reject_unknown(j, sec,
                   {"kind", "in_dim", "hidden_dim", "out_dim", "seed", "lora", "scope",
                    "embed_dim"});
    ModelConfig m;
    m.backbone.kind = BackboneSpec::kind_from_name(require<std::string>(j, sec, "kind"));
    m.backbone.in_dim = require<std::size_t>(j, sec, "in_dim");
    m.backbone.hidden_dim = optional<std::size_t>(j, sec, "hidden_dim", 0);
    m.backbone.out_dim = optional<std::size_t>(j, sec, "out_dim", 0);
    m.backbone.seed =
        optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, "backbone"));
    if (j.contains("lora")) {
        reject_unknown(j.at("lora"), "backbone.lora", {"rank", "targets"});
        LoraSpec l;
        l.rank = require<std::size_t>(j.at("lora"), "backbone.lora", "rank");
        l.targets = require<std::vector<std::size_t>>(j.at("lora"), "backbone.lora", "targets");
        m.backbone.lora = l;
    }
    m.scope = scope_from_name(optional<std::string>(j, sec, "scope", "full"));
    m.embed_dim = require<std::size_t>(j, sec, "embed_dim");
    m.validate();
    return m;
}

inline TrainConfig parse_train(const nlohmann::json& j, const std::string& sec,
                               std::uint64_t global_seed) {
    using namespace cfgjson;
    reject_unknown(j, sec,
                   {"epochs", "batch_size", "lr", "momentum", "tau", "seed",
                    "num_trajectories"});
    TrainConfig t;
    t.epochs = require<std::size_t>(j, sec, "epochs");
    t.batch_size = require<std::size_t>(j, sec, "batch_size");
    t.lr = require<double>(j, sec, "lr");
    t.momentum = optional<double>(j, sec, "momentum", 0.5);
    t.tau = optional<double>(j, sec, "tau", 1.0);
    t.num_trajectories = optional<std::size_t>(j, sec, "num_trajectories", 20);
    t.seed = optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, sec.c_str()));
    return t;
}

inline CoresetSettings parse_coreset(const nlohmann::json& j, std::uint64_t global_seed) {
    using namespace cfgjson;
    const std::string sec = "coreset";
    reject_unknown(j, sec, {"m", "encoded_features", "seed"});
    CoresetSettings c;
    c.m = require<std::size_t>(j, sec, "m");
    c.encoded_features = optional<bool>(j, sec, "encoded_features", false);
    c.seed = optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, "coreset"));
    return c;
}

inline DistillConfig parse_distill(const nlohmann::json& j, std::uint64_t global_seed) {
    using namespace cfgjson;
    const std::string sec = "distill";
    reject_unknown(j, sec,
                   {"pairs", "max_start_epoch", "expert_span", "student_steps", "outer_steps",
                    "lr_img", "lr_txt", "lr_alpha", "momentum", "inner_batch", "alpha0",
                    "init_img", "init_txt", "freeze_img", "freeze_txt", "tau", "seed"});
    DistillConfig d;
    d.pairs = require<std::size_t>(j, sec, "pairs");
    d.max_start_epoch = require<std::size_t>(j, sec, "max_start_epoch");
    d.expert_span = require<std::size_t>(j, sec, "expert_span");
    d.student_steps = require<std::size_t>(j, sec, "student_steps");
    d.outer_steps = require<std::size_t>(j, sec, "outer_steps");
    d.lr_img = require<double>(j, sec, "lr_img");
    d.lr_txt = require<double>(j, sec, "lr_txt");
    d.lr_alpha = require<double>(j, sec, "lr_alpha");
    d.momentum = optional<double>(j, sec, "momentum", 0.5);
    d.inner_batch = optional<std::size_t>(j, sec, "inner_batch", d.pairs);
    d.alpha0 = optional<double>(j, sec, "alpha0", 0.1);
    d.init_img = init_mode_from_name(optional<std::string>(j, sec, "init_img", "real"));
    d.init_txt = init_mode_from_name(optional<std::string>(j, sec, "init_txt", "real"));
    d.freeze_img = optional<bool>(j, sec, "freeze_img", false);
    d.freeze_txt = optional<bool>(j, sec, "freeze_txt", false);
    d.tau = optional<double>(j, sec, "tau", 1.0);
    d.seed = optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, "distill"));
    return d;
}

inline EvalSettings parse_eval(const nlohmann::json& j, std::uint64_t global_seed) {
    using namespace cfgjson;
    const std::string sec = "eval";
    reject_unknown(j, sec,
                   {"epochs", "batch_size", "lr", "momentum", "tau", "n_seeds", "ks", "seed"});
    EvalSettings e;
    e.train.epochs = require<std::size_t>(j, sec, "epochs");
    e.train.batch_size = optional<std::size_t>(j, sec, "batch_size", 256);
    e.train.lr = require<double>(j, sec, "lr");
    e.train.momentum = optional<double>(j, sec, "momentum", 0.0);
    e.train.tau = optional<double>(j, sec, "tau", 1.0);
    e.n_seeds = optional<std::size_t>(j, sec, "n_seeds", 5);
    e.ks = optional<std::vector<int>>(j, sec, "ks", {1, 5, 10});
    e.seed = optional<std::uint64_t>(j, sec, "seed", derived_seed(global_seed, "eval"));
    return e;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    using namespace cfgjson;
    reject_unknown(j, "(root)",
                   {"seed", "datagen", "backbone", "expert", "coreset", "distill", "eval"});
    RunConfig r;
    r.seed = require<std::uint64_t>(j, "(root)", "seed");
    r.datagen = parse_datagen(
        j.contains("datagen") ? j.at("datagen") : nlohmann::json::object(), r.seed);
    r.model = parse_backbone(
        j.contains("backbone") ? j.at("backbone") : nlohmann::json::object(), r.seed);
    r.expert = parse_train(j.contains("expert") ? j.at("expert") : nlohmann::json::object(),
                           "expert", r.seed);
    r.coreset = parse_coreset(
        j.contains("coreset") ? j.at("coreset") : nlohmann::json::object(), r.seed);
    r.distill = parse_distill(
        j.contains("distill") ? j.at("distill") : nlohmann::json::object(), r.seed);
    r.eval =
        parse_eval(j.contains("eval") ? j.at("eval") : nlohmann::json::object(), r.seed);
    return r;
}

inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json backbone = model.backbone.to_json();
    backbone["scope"] = scope_name(model.scope);
    backbone["embed_dim"] = model.embed_dim;
    return {{"seed", seed},
            {"datagen", datagen.to_json()},
            {"backbone", backbone},
            {"expert", expert.to_json()},
            {"coreset", coreset.to_json()},
            {"distill",
             {{"pairs", distill.pairs},
              {"max_start_epoch", distill.max_start_epoch},
              {"expert_span", distill.expert_span},
              {"student_steps", distill.student_steps},
              {"outer_steps", distill.outer_steps},
              {"lr_img", distill.lr_img},
              {"lr_txt", distill.lr_txt},
              {"lr_alpha", distill.lr_alpha},
              {"momentum", distill.momentum},
              {"inner_batch", distill.inner_batch},
              {"alpha0", distill.alpha0},
              {"init_img", init_mode_name(distill.init_img)},
              {"init_txt", init_mode_name(distill.init_txt)},
              {"freeze_img", distill.freeze_img},
              {"freeze_txt", distill.freeze_txt},
              {"tau", distill.tau},
              {"seed", distill.seed}}},
            {"eval", eval.to_json()}};
}

} // namespace bitraj
