#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/container.hpp"
#include "bitraj/dataset.hpp"
#include "bitraj/expert.hpp"
#include "bitraj/model.hpp"
#include "bitraj/rng.hpp"

namespace bitraj {

inline constexpr double kAlphaFloor = 1e-6;
inline constexpr double kDenomFloor = 1e-12;
inline constexpr std::size_t kMaxResamples = 16;

// A zero-motion expert segment carries no matching signal; callers resample.
struct DegenerateSegmentError : NumericError {
    explicit DegenerateSegmentError(std::string msg) : NumericError(std::move(msg)) {}
};

enum class InitMode { real, gaussian };

inline const char* init_mode_name(InitMode m) {
    return m == InitMode::real ? "real" : "gaussian";
}
inline InitMode init_mode_from_name(const std::string& s) {
    if (s == "real") return InitMode::real;
    if (s == "gaussian") return InitMode::gaussian;
    throw ConfigError("unknown init mode '" + s + "'");
}

// M synthetic (image input, text embedding) pairs plus the trainable student
// learning rate.
struct DistilledSet {
    Tensor images; // M x d_img
    Tensor texts;  // M x e_txt
    double alpha = 0.1;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t pairs() const { return images.rows(); }
};

struct DistillConfig {
    std::size_t pairs = 20;          // M
    std::size_t max_start_epoch = 4; // T+
    std::size_t expert_span = 2;     // R
    std::size_t student_steps = 8;   // R^
    std::size_t outer_steps = 500;
    double lr_img = 10.0;
    double lr_txt = 10.0;
    double lr_alpha = 1e-2;
    double momentum = 0.5;
    std::size_t inner_batch = 20;
    double alpha0 = 0.1;
    InitMode init_img = InitMode::real;
    InitMode init_txt = InitMode::real;
    bool freeze_img = false;
    bool freeze_txt = false;
    double tau = 1.0;
    std::uint64_t seed = 0;

    void validate(std::size_t expert_epochs) const {
        if (pairs < 1) throw ConfigError("distill: pairs must be >= 1");
        if (student_steps < 1) throw ConfigError("distill: student_steps must be >= 1");
        if (max_start_epoch + expert_span > expert_epochs)
            throw ConfigError("distill: max_start_epoch + expert_span = " +
                              std::to_string(max_start_epoch + expert_span) +
                              " exceeds expert epochs " + std::to_string(expert_epochs));
        if (expert_span < 1) throw ConfigError("distill: expert_span must be >= 1");
        if (inner_batch < 1 || inner_batch > pairs)
            throw ConfigError("distill: inner_batch must be in [1, pairs]");
        if (!(alpha0 > 0.0)) throw ConfigError("distill: alpha0 must be > 0");
        if (lr_img < 0.0 || lr_txt < 0.0 || lr_alpha < 0.0)
            throw ConfigError("distill: learning rates must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("distill: momentum must be in [0,1)");
        if (!(tau > 0.0)) throw ConfigError("distill: tau must be > 0");
    }
};

inline DistilledSet init_distilled(const PairedDataset& train, const DistillConfig& cfg) {
    const std::size_t m = cfg.pairs;
    const bool any_real = cfg.init_img == InitMode::real || cfg.init_txt == InitMode::real;
    if (any_real && m > train.size())
        throw ConfigError("init_distilled: pairs " + std::to_string(m) + " > n_train " +
                          std::to_string(train.size()));

    Rng rng = Rng::fork(cfg.seed, "init");
    DistilledSet d;
    d.alpha = cfg.alpha0;
    d.images = Tensor(m, train.d_img());
    d.texts = Tensor(m, train.e_txt());

    std::vector<std::size_t> sources;
    if (any_real) {
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        sources.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t src = sources[i];
            const std::size_t cap =
                train.caption_row(src, train.K > 1 ? rng.below(train.K) : 0);
            if (cfg.init_img == InitMode::real)
                for (std::size_t j = 0; j < train.d_img(); ++j)
                    d.images(i, j) = train.images(src, j);
            if (cfg.init_txt == InitMode::real)
                for (std::size_t j = 0; j < train.e_txt(); ++j)
                    d.texts(i, j) = train.captions(cap, j);
        }
    }
    if (cfg.init_img == InitMode::gaussian)
        for (auto& x : d.images.data()) x = rng.normal();
    if (cfg.init_txt == InitMode::gaussian)
        for (auto& x : d.texts.data()) x = rng.normal();

    d.provenance = {{"init_img", init_mode_name(cfg.init_img)},
                    {"init_txt", init_mode_name(cfg.init_txt)},
                    {"seed", cfg.seed},
                    {"alpha0", cfg.alpha0}};
    if (any_real) d.provenance["source_indices"] = sources;
    return d;
}

namespace detail {

// img side: everything backbone-related plus the image projection;
// txt side: the text projection.
inline bool is_txt_entry(const ParamEntry& e) { return e.name == "proj.txt"; }

inline std::vector<Value> snapshot_nodes(Graph& g, const ParamLayout& layout,
                                         std::span<const double> values) {
    std::vector<Value> nodes;
    nodes.reserve(layout.entries.size());
    for (const auto& e : layout.entries) {
        std::vector<double> part(values.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                 values.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size()));
        nodes.push_back(g.constant(Tensor(e.rows, e.cols, std::move(part))));
    }
    return nodes;
}

inline double side_norm_sq(const ParamLayout& layout, std::span<const double> a,
                           std::span<const double> b, bool txt_side) {
    double s = 0.0;
    for (const auto& e : layout.entries) {
        if (is_txt_entry(e) != txt_side) continue;
        for (std::size_t i = e.offset; i < e.offset + e.size(); ++i) {
            const double diff = a[i] - b[i];
            s += diff * diff;
        }
    }
    return s;
}

} // namespace detail

// R^ plain-SGD steps on the distilled pairs at learning rate alpha, every
// update emitted as graph nodes so the endpoint parameters are differentiable
// w.r.t. images, texts and alpha.
inline std::vector<Value> student_unroll(Graph& g, const VLModel& proto,
                                         const ParamVector& theta_s, Value images, Value texts,
                                         Value alpha, std::size_t steps, std::size_t inner_batch,
                                         double tau, Rng& rng) {
    const ParamLayout layout = proto.layout();
    if (!(layout == theta_s.layout))
        throw NumericError("student_unroll: snapshot layout does not match the model scope");
    const std::size_t m = g.value(images).rows();
    if (g.value(texts).rows() != m)
        throw NumericError("student_unroll: image/text row mismatch");

    std::vector<Value> params = detail::snapshot_nodes(g, layout, theta_s.values);

    std::vector<std::size_t> order(m);
    std::vector<std::int32_t> batch_idx;
    for (std::size_t step = 0; step < steps; ++step) {
        Value xb = images;
        Value yb = texts;
        if (inner_batch < m) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            rng.shuffle(order);
            batch_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(inner_batch));
            xb = g.take_rows(images, batch_idx);
            yb = g.take_rows(texts, batch_idx);
        }
        GraphModel gm = GraphModel::with_params(g, proto, params);
        Value loss = pair_batch_loss(g, gm, xb, yb, tau);
        std::vector<Value> wrt(params.begin(), params.end());
        std::vector<Value> grads = g.backward_nodes(loss, wrt);
        for (std::size_t p = 0; p < params.size(); ++p) {
            const Tensor& shape = g.value(params[p]);
            Value step_p = g.hadamard(g.broadcast_scalar(alpha, shape.rows(), shape.cols()),
                                      grads[p]);
            params[p] = g.sub(params[p], step_p);
        }
    }
    return params;
}

// Eq-style matching loss as graph nodes; denominators are constants of the
// expert segment. Throws DegenerateSegmentError when either side's expert
// motion is below the floor.
inline Value trajectory_loss_node(Graph& g, const ParamLayout& layout,
                                  std::span<const Value> theta_hat,
                                  const std::vector<double>& star_s,
                                  const std::vector<double>& star_sR) {
    const double img_den = detail::side_norm_sq(layout, star_s, star_sR, false);
    const double txt_den = detail::side_norm_sq(layout, star_s, star_sR, true);
    if (img_den < kDenomFloor || txt_den < kDenomFloor)
        throw DegenerateSegmentError("expert segment motion below floor (img " +
                                     std::to_string(img_den) + ", txt " +
                                     std::to_string(txt_den) + ")");

    Value img_num = g.constant_scalar(0.0);
    Value txt_num = g.constant_scalar(0.0);
    for (std::size_t p = 0; p < layout.entries.size(); ++p) {
        const auto& e = layout.entries[p];
        std::vector<double> part(star_sR.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                 star_sR.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size()));
        Value target = g.constant(Tensor(e.rows, e.cols, std::move(part)));
        Value sq = g.frobenius_sq(g.sub(theta_hat[p], target));
        if (detail::is_txt_entry(e))
            txt_num = g.add(txt_num, sq);
        else
            img_num = g.add(img_num, sq);
    }
    return g.add(g.scale(img_num, 1.0 / img_den), g.scale(txt_num, 1.0 / txt_den));
}

// Value-level form of the matching loss for three parameter vectors.
inline double trajectory_loss(const ParamVector& theta_hat, const ParamVector& star_s,
                              const ParamVector& star_sR) {
    if (!(theta_hat.layout == star_s.layout) || !(star_s.layout == star_sR.layout))
        throw NumericError("trajectory_loss: parameter layouts do not match");
    Graph g;
    std::vector<Value> hat = detail::snapshot_nodes(g, theta_hat.layout, theta_hat.values);
    return g.scalar(
        trajectory_loss_node(g, theta_hat.layout, hat, star_s.values, star_sR.values));
}

struct DistillResult {
    DistilledSet set;
    std::vector<double> loss_history;
};

namespace detail {

struct OuterState {
    Tensor v_img, v_txt;
    double v_alpha = 0.0;

    OuterState(std::size_t m, std::size_t d_img, std::size_t e_txt)
        : v_img(m, d_img), v_txt(m, e_txt) {}

    void apply(DistilledSet& d, const DistillConfig& cfg, const Tensor& g_img,
               const Tensor& g_txt, double g_alpha) {
        if (!cfg.freeze_img) {
            auto v = v_img.data();
            auto gd = g_img.data();
            auto x = d.images.data();
            for (std::size_t i = 0; i < x.size(); ++i) {
                v[i] = cfg.momentum * v[i] + gd[i];
                x[i] -= cfg.lr_img * v[i];
            }
        }
        if (!cfg.freeze_txt) {
            auto v = v_txt.data();
            auto gd = g_txt.data();
            auto x = d.texts.data();
            for (std::size_t i = 0; i < x.size(); ++i) {
                v[i] = cfg.momentum * v[i] + gd[i];
                x[i] -= cfg.lr_txt * v[i];
            }
        }
        v_alpha = cfg.momentum * v_alpha + g_alpha;
        d.alpha = std::max(kAlphaFloor, d.alpha - cfg.lr_alpha * v_alpha);
    }
};

} // namespace detail

// Algorithm: sample an expert segment, clone its start into the student,
// unroll R^ differentiable SGD steps on the distilled data, and descend the
// bi-trajectory matching loss w.r.t. images, texts and alpha.
inline DistillResult distill(std::span<const Trajectory> trajectories, const PairedDataset& train,
                             const ModelConfig& mc, const DistillConfig& cfg) {
    mc.validate();
    if (trajectories.empty()) throw ConfigError("distill: no trajectories given");
    const std::size_t T = trajectories.front().epochs;
    cfg.validate(T);

    VLModel proto = VLModel::init(mc, train.e_txt(), cfg.seed);
    const ParamLayout layout = proto.layout();
    const std::string digest = proto.arch_digest();
    for (const auto& t : trajectories) {
        if (t.arch_digest != digest)
            throw DigestMismatchError("distill: trajectory arch digest " + t.arch_digest +
                                      " does not match model " + digest);
        if (!(t.layout == layout)) throw DataFormatError("distill: trajectory layout mismatch");
        if (t.epochs != T) throw DataFormatError("distill: trajectories disagree on epochs");
    }

    DistillResult out{init_distilled(train, cfg), {}};
    out.set.provenance["method"] = "trajectory";
    out.loss_history.reserve(cfg.outer_steps);

    Rng rng = Rng::fork(cfg.seed, "outer");
    detail::OuterState state(cfg.pairs, train.d_img(), train.e_txt());

    for (std::size_t step = 0; step < cfg.outer_steps; ++step) {
        // segment choice; zero-motion segments are resampled
        std::size_t tr = 0, s = 0;
        bool accepted = false;
        for (std::size_t attempt = 0; attempt < kMaxResamples; ++attempt) {
            tr = static_cast<std::size_t>(rng.below(trajectories.size()));
            s = static_cast<std::size_t>(rng.below(cfg.max_start_epoch + 1));
            const auto& a = trajectories[tr].snapshots[s];
            const auto& b = trajectories[tr].snapshots[s + cfg.expert_span];
            if (detail::side_norm_sq(layout, a, b, false) >= kDenomFloor &&
                detail::side_norm_sq(layout, a, b, true) >= kDenomFloor) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw NumericError("distill: degenerate expert segment after " +
                               std::to_string(kMaxResamples) + " resamples at outer step " +
                               std::to_string(step));

        Graph g;
        Value images = g.var(out.set.images);
        Value texts = g.var(out.set.texts);
        Value alpha = g.var(Tensor::full(1, 1, out.set.alpha));

        std::vector<Value> theta_hat =
            student_unroll(g, proto, trajectories[tr].snapshot(s), images, texts, alpha,
                           cfg.student_steps, cfg.inner_batch, cfg.tau, rng);
        Value loss = trajectory_loss_node(g, layout, theta_hat, trajectories[tr].snapshots[s],
                                          trajectories[tr].snapshots[s + cfg.expert_span]);

        std::vector<Value> wrt{images, texts, alpha};
        auto grads = g.backward(loss, wrt);
        out.loss_history.push_back(g.scalar(loss));
        state.apply(out.set, cfg, grads[0], grads[1], grads[2](0, 0));
    }
    return out;
}

// Appendix-style distribution-matching baseline: per outer step a freshly
// seeded random-init model embeds a real minibatch and the full distilled
// set; the loss is the squared gap between mean embeddings, per modality.
inline DistillResult mmd_distill(const PairedDataset& train, const ModelConfig& mc,
                                 const DistillConfig& cfg) {
    mc.validate();
    cfg.validate(cfg.max_start_epoch + cfg.expert_span); // trajectory fields are unused
    DistillResult out{init_distilled(train, cfg), {}};
    out.set.provenance["method"] = "mmd";
    out.loss_history.reserve(cfg.outer_steps);

    Rng rng = Rng::fork(cfg.seed, "mmd_outer");
    detail::OuterState state(cfg.pairs, train.d_img(), train.e_txt());

    const std::size_t n = train.size();
    const std::size_t real_batch = std::min(cfg.inner_batch, n);
    std::vector<std::size_t> order(n);

    for (std::size_t step = 0; step < cfg.outer_steps; ++step) {
        const std::uint64_t model_seed = Rng::fork(cfg.seed, "mmd_model", step).next_u64();
        VLModel model = VLModel::init(mc, train.e_txt(), model_seed);

        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        std::vector<std::int32_t> img_rows, cap_rows;
        for (std::size_t i = 0; i < real_batch; ++i) {
            img_rows.push_back(static_cast<std::int32_t>(order[i]));
            const std::size_t cap = train.K > 1 ? rng.below(train.K) : 0;
            cap_rows.push_back(static_cast<std::int32_t>(train.caption_row(order[i], cap)));
        }

        Graph g;
        Value images = g.var(out.set.images);
        Value texts = g.var(out.set.texts);
        GraphModel gm = GraphModel::with_consts(g, model);

        auto mean_rows = [&](Value z) {
            const std::size_t rows = g.value(z).rows();
            Value ones = g.constant(Tensor::full(1, rows, 1.0));
            return g.scale(g.matmul(ones, z), 1.0 / static_cast<double>(rows));
        };

        Value syn_img = mean_rows(gm.encode_image(images));
        Value syn_txt = mean_rows(gm.encode_text(texts));
        Value real_img =
            mean_rows(gm.encode_image(g.constant(kern::take_rows(train.images, img_rows))));
        Value real_txt =
            mean_rows(gm.encode_text(g.constant(kern::take_rows(train.captions, cap_rows))));

        Value loss = g.add(g.frobenius_sq(g.sub(real_img, syn_img)),
                           g.frobenius_sq(g.sub(real_txt, syn_txt)));

        std::vector<Value> wrt{images, texts};
        auto grads = g.backward(loss, wrt);
        out.loss_history.push_back(g.scalar(loss));
        state.apply(out.set, cfg, grads[0], grads[1], 0.0);
    }
    return out;
}

inline constexpr std::string_view kDistilledMagic = "BDST";

inline void save_distilled(const DistilledSet& d, const std::filesystem::path& path) {
    nlohmann::json meta{{"kind", "distilled"}, {"provenance", d.provenance}};
    write_container(path, kDistilledMagic, std::move(meta),
                    {{"images", d.images},
                     {"texts", d.texts},
                     {"alpha", Tensor::full(1, 1, d.alpha)}});
}

inline DistilledSet load_distilled(const std::filesystem::path& path) {
    Container c = read_container(path, kDistilledMagic);
    DistilledSet d;
    d.images = c.block("images").data;
    d.texts = c.block("texts").data;
    d.alpha = c.block("alpha").data(0, 0);
    d.provenance = c.meta.value("provenance", nlohmann::json::object());
    if (d.texts.rows() != d.images.rows())
        throw DataFormatError("distilled set " + path.string() + ": image/text row mismatch");
    return d;
}

} // namespace bitraj
