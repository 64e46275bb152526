#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/container.hpp"
#include "bitraj/digest.hpp"
#include "bitraj/rng.hpp"
#include "bitraj/tensor.hpp"

namespace bitraj {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataFormatError("unknown split '" + s + "'");
}

enum class GenMode { continuous_concepts, class_captions };

// Seeded generator config. Images live in an input space the backbone
// consumes; captions live directly in text-embedding space.
struct GenConfig {
    std::size_t n_train = 2000;
    std::size_t n_val = 200;
    std::size_t n_test = 500;
    std::size_t captions_per_item = 5; // K
    std::size_t latent_dim = 16;
    std::size_t d_img = 64;
    std::size_t e_txt = 32;
    double sigma_img = 0.1;
    double sigma_txt = 0.1;
    GenMode mode = GenMode::continuous_concepts;
    std::size_t num_classes = 10;   // class_captions only
    bool multi_caption = false;     // class_captions only
    std::uint64_t seed = 0;

    void validate() const {
        if (n_train < 1 || n_val < 1 || n_test < 1)
            throw ConfigError("datagen: split sizes must be >= 1");
        if (captions_per_item < 1) throw ConfigError("datagen: captions_per_item must be >= 1");
        if (latent_dim < 1) throw ConfigError("datagen: latent_dim must be >= 1");
        if (latent_dim > d_img || latent_dim > e_txt)
            throw ConfigError("datagen: latent_dim must be <= min(d_img, e_txt), got k=" +
                              std::to_string(latent_dim) + ", d_img=" + std::to_string(d_img) +
                              ", e_txt=" + std::to_string(e_txt));
        if (sigma_img < 0 || sigma_txt < 0) throw ConfigError("datagen: sigma must be >= 0");
        if (mode == GenMode::class_captions && num_classes < 1)
            throw ConfigError("datagen: num_classes must be >= 1");
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"n_train", n_train},
                         {"n_val", n_val},
                         {"n_test", n_test},
                         {"captions_per_item", captions_per_item},
                         {"latent_dim", latent_dim},
                         {"d_img", d_img},
                         {"e_txt", e_txt},
                         {"sigma_img", sigma_img},
                         {"sigma_txt", sigma_txt},
                         {"mode", mode == GenMode::continuous_concepts ? "continuous" : "class_captions"},
                         {"seed", seed}};
        if (mode == GenMode::class_captions) {
            j["num_classes"] = num_classes;
            j["multi_caption"] = multi_caption;
        }
        return j;
    }

    std::string digest() const { return digest_hex(to_json().dump()); }
};

// One split of paired data: n image-input rows, n*K caption rows
// (captions of item i occupy rows i*K .. i*K+K-1).
struct PairedDataset {
    Split split = Split::train;
    std::size_t K = 1;
    Tensor images;   // n x d_img
    Tensor captions; // (n*K) x e_txt
    std::string gen_config_hash;

    std::size_t size() const { return images.rows(); }
    std::size_t d_img() const { return images.cols(); }
    std::size_t e_txt() const { return captions.cols(); }
    std::size_t caption_row(std::size_t item, std::size_t j) const { return item * K + j; }
};

struct GeneratedData {
    PairedDataset train, val, test;
};

namespace detail {

// y += W z  (W: rows x k)
inline void matvec_into(const Tensor& w, std::span<const double> z, std::span<double> y) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j) * z[j];
        y[i] += s;
    }
}

inline Tensor column_normalized_basis(Rng& rng, std::size_t rows, std::size_t k) {
    Tensor w(rows, k);
    for (auto& x : w.data()) x = rng.normal();
    for (std::size_t j = 0; j < k; ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) n2 += w(i, j) * w(i, j);
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t i = 0; i < rows; ++i) w(i, j) *= inv;
    }
    return w;
}

} // namespace detail

inline GeneratedData generate(const GenConfig& cfg) {
    cfg.validate();

    Rng rng_wx = Rng::fork(cfg.seed, "img_basis");
    Rng rng_wy = Rng::fork(cfg.seed, "txt_basis");
    const Tensor w_img = detail::column_normalized_basis(rng_wx, cfg.d_img, cfg.latent_dim);
    const Tensor w_txt = detail::column_normalized_basis(rng_wy, cfg.e_txt, cfg.latent_dim);

    // class_captions: C fixed latents and, when multi_caption, K fixed
    // prompt-style variants per class shared by all items of the class.
    std::vector<std::vector<double>> class_latents;
    Tensor class_templates; // C*K x e_txt
    if (cfg.mode == GenMode::class_captions) {
        Rng rng_cls = Rng::fork(cfg.seed, "class_latents");
        class_latents.resize(cfg.num_classes, std::vector<double>(cfg.latent_dim));
        for (auto& z : class_latents)
            for (auto& x : z) x = rng_cls.normal();
        Rng rng_prompt = Rng::fork(cfg.seed, "prompt_variants");
        class_templates = Tensor(cfg.num_classes * cfg.captions_per_item, cfg.e_txt);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            std::vector<double> base(cfg.e_txt, 0.0);
            detail::matvec_into(w_txt, class_latents[c], base);
            for (std::size_t v = 0; v < cfg.captions_per_item; ++v) {
                const std::size_t row = c * cfg.captions_per_item + v;
                for (std::size_t d = 0; d < cfg.e_txt; ++d) {
                    double x = base[d];
                    if (cfg.multi_caption) x += cfg.sigma_txt * rng_prompt.normal();
                    class_templates(row, d) = x;
                }
            }
        }
    }

    auto make_split = [&](Split which, std::size_t n, std::uint64_t split_idx) {
        PairedDataset ds;
        ds.split = which;
        ds.K = cfg.captions_per_item;
        ds.images = Tensor(n, cfg.d_img);
        ds.captions = Tensor(n * cfg.captions_per_item, cfg.e_txt);
        ds.gen_config_hash = cfg.digest();

        Rng rng = Rng::fork(cfg.seed, "split", split_idx);
        std::vector<double> z(cfg.latent_dim);
        for (std::size_t i = 0; i < n; ++i) {
            if (cfg.mode == GenMode::continuous_concepts) {
                for (auto& x : z) x = rng.normal();
            } else {
                z = class_latents[i % cfg.num_classes];
            }
            auto img_row = ds.images.data().subspan(i * cfg.d_img, cfg.d_img);
            detail::matvec_into(w_img, z, img_row);
            for (auto& x : img_row) x += cfg.sigma_img * rng.normal();

            for (std::size_t c = 0; c < cfg.captions_per_item; ++c) {
                auto cap_row =
                    ds.captions.data().subspan(ds.caption_row(i, c) * cfg.e_txt, cfg.e_txt);
                if (cfg.mode == GenMode::continuous_concepts) {
                    detail::matvec_into(w_txt, z, cap_row);
                    for (auto& x : cap_row) x += cfg.sigma_txt * rng.normal();
                } else {
                    const std::size_t tmpl = (i % cfg.num_classes) * cfg.captions_per_item + c;
                    for (std::size_t d = 0; d < cfg.e_txt; ++d)
                        cap_row[d] = class_templates(tmpl, d);
                }
            }
        }
        return ds;
    };

    GeneratedData out;
    out.train = make_split(Split::train, cfg.n_train, 0);
    out.val = make_split(Split::val, cfg.n_val, 1);
    out.test = make_split(Split::test, cfg.n_test, 2);
    return out;
}

inline constexpr std::string_view kDatasetMagic = "BVLD";

inline void save_dataset(const PairedDataset& ds, const std::filesystem::path& path,
                         const nlohmann::json& gen_config = nlohmann::json::object()) {
    nlohmann::json meta{{"kind", "dataset"},
                        {"split", split_name(ds.split)},
                        {"captions_per_item", ds.K},
                        {"config", gen_config},
                        {"config_hash", ds.gen_config_hash}};
    write_container(path, kDatasetMagic, std::move(meta),
                    {{"images", ds.images}, {"captions", ds.captions}});
}

inline PairedDataset load_dataset(const std::filesystem::path& path) {
    Container c = read_container(path, kDatasetMagic);
    PairedDataset ds;
    ds.split = split_from_name(c.meta.at("split").get<std::string>());
    ds.K = c.meta.at("captions_per_item").get<std::size_t>();
    ds.gen_config_hash = c.meta.value("config_hash", "");
    ds.images = c.block("images").data;
    ds.captions = c.block("captions").data;
    if (ds.captions.rows() != ds.images.rows() * ds.K)
        throw DataFormatError("dataset " + path.string() + ": caption rows " +
                              std::to_string(ds.captions.rows()) + " != n*K");
    return ds;
}

} // namespace bitraj
