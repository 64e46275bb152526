#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/digest.hpp"
#include "bitraj/graph.hpp"
#include "bitraj/rng.hpp"
#include "bitraj/tensor.hpp"

namespace bitraj {

// Which parameters are trained and matched between expert and student:
//   full  -> backbone weights + both projections
//   lora  -> low-rank adapters + both projections (backbone stays frozen)
enum class Scope { full, lora };

inline const char* scope_name(Scope s) { return s == Scope::full ? "full" : "lora"; }
inline Scope scope_from_name(const std::string& s) {
    if (s == "full") return Scope::full;
    if (s == "lora") return Scope::lora;
    throw ConfigError("unknown scope '" + s + "'");
}

struct LoraSpec {
    std::size_t rank = 4;
    std::vector<std::size_t> targets; // backbone layer indices
};

struct BackboneSpec {
    enum class Kind { identity, random_linear, one_hidden_tanh };

    Kind kind = Kind::one_hidden_tanh;
    std::size_t in_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t out_dim = 48;
    std::uint64_t seed = 0; // the "pretrained" weight draw, shared by all experts
    std::optional<LoraSpec> lora;

    static const char* kind_name(Kind k) {
        switch (k) {
        case Kind::identity: return "identity";
        case Kind::random_linear: return "random_linear";
        case Kind::one_hidden_tanh: return "one_hidden_tanh";
        }
        return "?";
    }
    static Kind kind_from_name(const std::string& s) {
        if (s == "identity") return Kind::identity;
        if (s == "random_linear") return Kind::random_linear;
        if (s == "one_hidden_tanh") return Kind::one_hidden_tanh;
        throw ConfigError("unknown backbone kind '" + s + "'");
    }

    std::size_t num_layers() const {
        switch (kind) {
        case Kind::identity: return 0;
        case Kind::random_linear: return 1;
        case Kind::one_hidden_tanh: return 2;
        }
        return 0;
    }
    // (d_in, d_out) of backbone layer l
    std::pair<std::size_t, std::size_t> layer_dims(std::size_t l) const {
        if (kind == Kind::random_linear && l == 0) return {in_dim, out_dim};
        if (kind == Kind::one_hidden_tanh && l == 0) return {in_dim, hidden_dim};
        if (kind == Kind::one_hidden_tanh && l == 1) return {hidden_dim, out_dim};
        throw ConfigError("backbone has no layer " + std::to_string(l));
    }
    std::size_t feature_dim() const { return kind == Kind::identity ? in_dim : out_dim; }

    void validate() const {
        if (in_dim < 1) throw ConfigError("backbone: in_dim must be >= 1");
        if (kind == Kind::one_hidden_tanh && hidden_dim < 1)
            throw ConfigError("backbone: hidden_dim must be >= 1");
        if (kind != Kind::identity && out_dim < 1)
            throw ConfigError("backbone: out_dim must be >= 1");
        if (lora) {
            if (kind == Kind::identity)
                throw ConfigError("backbone: identity has no layers to adapt");
            if (lora->rank < 1) throw ConfigError("backbone: lora rank must be >= 1");
            if (lora->targets.empty()) throw ConfigError("backbone: lora targets empty");
            for (std::size_t t : lora->targets) {
                auto [din, dout] = layer_dims(t);
                if (lora->rank >= std::min(din, dout))
                    throw ConfigError("backbone: lora rank " + std::to_string(lora->rank) +
                                      " must be < min layer dim " +
                                      std::to_string(std::min(din, dout)));
            }
            for (std::size_t i = 1; i < lora->targets.size(); ++i)
                if (lora->targets[i] <= lora->targets[i - 1])
                    throw ConfigError("backbone: lora targets must be strictly increasing");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", kind_name(kind)},
                         {"in_dim", in_dim},
                         {"hidden_dim", hidden_dim},
                         {"out_dim", out_dim},
                         {"seed", seed}};
        if (lora) j["lora"] = {{"rank", lora->rank}, {"targets", lora->targets}};
        return j;
    }
    static BackboneSpec from_json(const nlohmann::json& j) {
        BackboneSpec s;
        s.kind = kind_from_name(j.at("kind").get<std::string>());
        s.in_dim = j.at("in_dim").get<std::size_t>();
        s.hidden_dim = j.value("hidden_dim", std::size_t{0});
        s.out_dim = j.value("out_dim", std::size_t{0});
        s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("lora")) {
            LoraSpec l;
            l.rank = j["lora"].at("rank").get<std::size_t>();
            l.targets = j["lora"].at("targets").get<std::vector<std::size_t>>();
            s.lora = l;
        }
        return s;
    }
};

// Delta applied to a frozen layer: dW = A * B with A: d_out x r and
// B: r x d_in. B starts at zero so a fresh adapter changes nothing.
struct LoraAdapter {
    std::size_t target = 0;
    Tensor a; // d_out x r
    Tensor b; // r x d_in
};

struct LoraReduction {
    std::size_t full = 0;
    std::size_t adapted = 0;
    double fraction = 0.0; // 1 - adapted/full, reported unclamped
};

inline LoraReduction lora_param_reduction(const BackboneSpec& spec) {
    if (!spec.lora) throw ConfigError("lora_param_reduction: no LoRA configured");
    LoraReduction r;
    for (std::size_t t : spec.lora->targets) {
        auto [din, dout] = spec.layer_dims(t);
        r.full += dout * din;
        r.adapted += spec.lora->rank * (dout + din);
    }
    r.fraction = 1.0 - static_cast<double>(r.adapted) / static_cast<double>(r.full);
    return r;
}

struct ModelConfig {
    BackboneSpec backbone;
    Scope scope = Scope::full;
    std::size_t embed_dim = 32; // h, the shared embedding dim

    void validate() const {
        backbone.validate();
        if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
        if (scope == Scope::lora && !backbone.lora)
            throw ConfigError("model: scope=lora requires a lora spec");
        if (scope == Scope::full && backbone.lora)
            throw ConfigError("model: scope=full must not configure lora");
    }
    nlohmann::json to_json() const {
        return {{"backbone", backbone.to_json()},
                {"scope", scope_name(scope)},
                {"embed_dim", embed_dim}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.backbone = BackboneSpec::from_json(j.at("backbone"));
        c.scope = scope_from_name(j.at("scope").get<std::string>());
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        return c;
    }
};

struct ParamEntry {
    std::string name;
    std::size_t rows = 0, cols = 0, offset = 0;
    std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
    Scope scope = Scope::full;
    std::vector<ParamEntry> entries;
    std::size_t total = 0;

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : entries)
            arr.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"offset", e.offset}});
        return {{"scope", scope_name(scope)}, {"entries", arr}, {"total", total}};
    }
    static ParamLayout from_json(const nlohmann::json& j) {
        ParamLayout l;
        l.scope = scope_from_name(j.at("scope").get<std::string>());
        for (const auto& e : j.at("entries"))
            l.entries.push_back({e.at("name").get<std::string>(), e.at("rows").get<std::size_t>(),
                                 e.at("cols").get<std::size_t>(), e.at("offset").get<std::size_t>()});
        l.total = j.at("total").get<std::size_t>();
        return l;
    }
    bool operator==(const ParamLayout& o) const {
        if (scope != o.scope || total != o.total || entries.size() != o.entries.size())
            return false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& a = entries[i];
            const auto& b = o.entries[i];
            if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset)
                return false;
        }
        return true;
    }
};

// Flat view of the matched parameter scope; offsets tile values exactly.
struct ParamVector {
    ParamLayout layout;
    std::vector<double> values;
};

// Frozen-or-trainable split of the vision-language model. All weight
// matrices use the x-row convention: layer(x) = x * W with W: d_in x d_out;
// LoRA deltas are applied as x * B^T * A^T which equals x * (A*B)^T.
class VLModel {
public:
    ModelConfig cfg;
    std::size_t e_txt = 0;
    std::vector<Tensor> backbone_w;     // per layer, d_in x d_out
    std::vector<LoraAdapter> adapters;  // scope=lora only, one per target
    Tensor img_proj;                    // feature_dim x h
    Tensor txt_proj;                    // e_txt x h

    static VLModel init(const ModelConfig& cfg, std::size_t e_txt, std::uint64_t trainable_seed) {
        cfg.validate();
        if (e_txt < 1) throw ConfigError("model: e_txt must be >= 1");
        VLModel m;
        m.cfg = cfg;
        m.e_txt = e_txt;

        const auto& bb = cfg.backbone;
        for (std::size_t l = 0; l < bb.num_layers(); ++l) {
            auto [din, dout] = bb.layer_dims(l);
            Rng rng = Rng::fork(bb.seed, "backbone", l);
            m.backbone_w.push_back(gaussian_matrix(rng, din, dout, 1.0 / std::sqrt((double)din)));
        }
        if (cfg.scope == Scope::lora) {
            for (std::size_t i = 0; i < bb.lora->targets.size(); ++i) {
                const std::size_t t = bb.lora->targets[i];
                auto [din, dout] = bb.layer_dims(t);
                Rng rng = Rng::fork(trainable_seed, "lora_a", t);
                LoraAdapter ad;
                ad.target = t;
                ad.a = gaussian_matrix(rng, dout, bb.lora->rank, 0.02);
                ad.b = Tensor(bb.lora->rank, din);
                m.adapters.push_back(std::move(ad));
            }
        }
        {
            Rng rng = Rng::fork(trainable_seed, "proj_img");
            const std::size_t f = bb.feature_dim();
            m.img_proj = gaussian_matrix(rng, f, cfg.embed_dim, 1.0 / std::sqrt((double)f));
        }
        {
            Rng rng = Rng::fork(trainable_seed, "proj_txt");
            m.txt_proj =
                gaussian_matrix(rng, e_txt, cfg.embed_dim, 1.0 / std::sqrt((double)e_txt));
        }
        return m;
    }

    // Fixed, documented flattening order: backbone layers (scope=full) or
    // per-target adapter pairs (scope=lora), then proj.img, then proj.txt.
    ParamLayout layout() const {
        ParamLayout l;
        l.scope = cfg.scope;
        std::size_t off = 0;
        auto push = [&](std::string name, std::size_t r, std::size_t c) {
            l.entries.push_back({std::move(name), r, c, off});
            off += r * c;
        };
        if (cfg.scope == Scope::full) {
            for (std::size_t i = 0; i < backbone_w.size(); ++i)
                push("backbone.w" + std::to_string(i), backbone_w[i].rows(), backbone_w[i].cols());
        } else {
            for (const auto& ad : adapters) {
                push("lora." + std::to_string(ad.target) + ".a", ad.a.rows(), ad.a.cols());
                push("lora." + std::to_string(ad.target) + ".b", ad.b.rows(), ad.b.cols());
            }
        }
        push("proj.img", img_proj.rows(), img_proj.cols());
        push("proj.txt", txt_proj.rows(), txt_proj.cols());
        l.total = off;
        return l;
    }

    // Trainable tensors in layout order.
    std::vector<const Tensor*> trainable_tensors() const {
        std::vector<const Tensor*> out;
        if (cfg.scope == Scope::full) {
            for (const auto& w : backbone_w) out.push_back(&w);
        } else {
            for (const auto& ad : adapters) {
                out.push_back(&ad.a);
                out.push_back(&ad.b);
            }
        }
        out.push_back(&img_proj);
        out.push_back(&txt_proj);
        return out;
    }
    std::vector<Tensor*> trainable_tensors() {
        std::vector<Tensor*> out;
        if (cfg.scope == Scope::full) {
            for (auto& w : backbone_w) out.push_back(&w);
        } else {
            for (auto& ad : adapters) {
                out.push_back(&ad.a);
                out.push_back(&ad.b);
            }
        }
        out.push_back(&img_proj);
        out.push_back(&txt_proj);
        return out;
    }

    ParamVector trainable_params() const {
        ParamVector pv;
        pv.layout = layout();
        pv.values.reserve(pv.layout.total);
        for (const Tensor* t : trainable_tensors())
            pv.values.insert(pv.values.end(), t->data().begin(), t->data().end());
        return pv;
    }

    void set_trainable_params(std::span<const double> values) {
        const ParamLayout l = layout();
        if (values.size() != l.total)
            throw NumericError("set_trainable_params: got " + std::to_string(values.size()) +
                               " values for layout of " + std::to_string(l.total));
        std::size_t off = 0;
        for (Tensor* t : trainable_tensors()) {
            std::copy(values.begin() + off, values.begin() + off + t->size(), t->data().begin());
            off += t->size();
        }
    }

    std::string arch_digest() const {
        nlohmann::json j{{"model", cfg.to_json()}, {"e_txt", e_txt}};
        return digest_hex(j.dump());
    }

    // Digest over weights that must not move during training (scope=lora).
    std::string frozen_digest() const {
        Fnv1a h;
        if (cfg.scope == Scope::lora)
            for (const auto& w : backbone_w)
                h.update(w.data().data(), w.size() * sizeof(double));
        return h.hex();
    }

private:
    static Tensor gaussian_matrix(Rng& rng, std::size_t r, std::size_t c, double scale) {
        Tensor t(r, c);
        for (auto& x : t.data()) x = scale * rng.normal();
        return t;
    }
};

// Model wired into a Graph: encode_image / encode_text build differentiable
// nodes. Trainable entries are either fresh var nodes (training) or caller-
// supplied nodes (student unrolls, where params are computed values).
class GraphModel {
public:
    static GraphModel with_vars(Graph& g, const VLModel& m) {
        GraphModel gm(g, m);
        for (const Tensor* t : m.trainable_tensors()) gm.params_.push_back(g.var(*t));
        gm.finish();
        return gm;
    }
    static GraphModel with_consts(Graph& g, const VLModel& m) {
        GraphModel gm(g, m);
        for (const Tensor* t : m.trainable_tensors()) gm.params_.push_back(g.constant(*t));
        gm.finish();
        return gm;
    }
    static GraphModel with_params(Graph& g, const VLModel& m, std::vector<Value> params) {
        GraphModel gm(g, m);
        const ParamLayout l = m.layout();
        if (params.size() != l.entries.size())
            throw NumericError("GraphModel: expected " + std::to_string(l.entries.size()) +
                               " param nodes, got " + std::to_string(params.size()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& v = g.value(params[i]);
            if (v.rows() != l.entries[i].rows || v.cols() != l.entries[i].cols)
                throw NumericError("GraphModel: param '" + l.entries[i].name + "' is " +
                                   v.shape_str() + ", layout expects " +
                                   std::to_string(l.entries[i].rows) + "x" +
                                   std::to_string(l.entries[i].cols));
        }
        gm.params_ = std::move(params);
        gm.finish();
        return gm;
    }

    std::span<const Value> params() const { return params_; }

    Value encode_image(Value x) const {
        const auto& bb = m_->cfg.backbone;
        if (g_->value(x).cols() != bb.in_dim)
            throw NumericError("encode_image: input is " + g_->value(x).shape_str() +
                               ", backbone expects cols=" + std::to_string(bb.in_dim));
        Value u = x;
        for (std::size_t l = 0; l < bb.num_layers(); ++l) {
            Value w = m_->cfg.scope == Scope::full ? params_[l] : frozen_[l];
            Value out = g_->matmul(u, w);
            if (m_->cfg.scope == Scope::lora) {
                if (auto idx = adapter_index(l)) {
                    Value a = params_[2 * *idx];
                    Value b = params_[2 * *idx + 1];
                    Value delta = g_->matmul(g_->matmul(u, g_->transpose(b)), g_->transpose(a));
                    out = g_->add(out, delta);
                }
            }
            u = (bb.kind == BackboneSpec::Kind::one_hidden_tanh && l == 0) ? g_->tanh(out) : out;
        }
        return g_->l2_normalize_rows(g_->matmul(u, img_proj_node()));
    }

    Value encode_text(Value y) const {
        if (g_->value(y).cols() != m_->e_txt)
            throw NumericError("encode_text: input is " + g_->value(y).shape_str() +
                               ", expected cols=" + std::to_string(m_->e_txt));
        return g_->l2_normalize_rows(g_->matmul(y, txt_proj_node()));
    }

private:
    GraphModel(Graph& g, const VLModel& m) : g_(&g), m_(&m) {}

    void finish() {
        if (m_->cfg.scope == Scope::lora)
            for (const auto& w : m_->backbone_w) frozen_.push_back(g_->constant(w));
    }

    std::optional<std::size_t> adapter_index(std::size_t layer) const {
        for (std::size_t i = 0; i < m_->adapters.size(); ++i)
            if (m_->adapters[i].target == layer) return i;
        return std::nullopt;
    }

    Value img_proj_node() const { return params_[params_.size() - 2]; }
    Value txt_proj_node() const { return params_[params_.size() - 1]; }

    Graph* g_;
    const VLModel* m_;
    std::vector<Value> params_;
    std::vector<Value> frozen_;
};

// Plain-value encodes for inference paths; same graph code, throwaway graph.
inline Tensor encode_image_values(const VLModel& m, const Tensor& x) {
    Graph g;
    GraphModel gm = GraphModel::with_consts(g, m);
    return g.value(gm.encode_image(g.constant(x)));
}
inline Tensor encode_text_values(const VLModel& m, const Tensor& y) {
    Graph g;
    GraphModel gm = GraphModel::with_consts(g, m);
    return g.value(gm.encode_text(g.constant(y)));
}

// Cosine-similarity matrix of n aligned pairs; entry (i,j) = <zi_i, zt_j>.
inline Value similarity_matrix(Graph& g, Value zi, Value zt) {
    const Tensor& a = g.value(zi);
    const Tensor& b = g.value(zt);
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw NumericError("similarity_matrix: shape mismatch " + a.shape_str() + " vs " +
                           b.shape_str());
    return g.matmul(zi, g.transpose(zt));
}

// Bidirectional InfoNCE over a square similarity matrix; the positive pair
// stays in the denominator. tau scales logits (1 = the plain formulation).
inline Value contrastive_loss(Graph& g, Value sim, double tau = 1.0) {
    const Tensor& s = g.value(sim);
    if (s.rows() != s.cols())
        throw NumericError("contrastive_loss: sim must be square, got " + s.shape_str());
    if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be > 0");
    const double n = static_cast<double>(s.rows());
    Value scaled = g.scale(sim, 1.0 / tau);
    Value diag = g.take_diag(scaled);
    Value row_terms = g.sub(diag, g.row_logsumexp(scaled));
    Value col_terms = g.sub(diag, g.row_logsumexp(g.transpose(scaled)));
    return g.scale(g.add(g.sum_all(row_terms), g.sum_all(col_terms)), -1.0 / (2.0 * n));
}

// Contrastive loss of an (image batch, text batch) pair through the model.
inline Value pair_batch_loss(Graph& g, const GraphModel& gm, Value xb, Value yb, double tau) {
    Value zi = gm.encode_image(xb);
    Value zt = gm.encode_text(yb);
    return contrastive_loss(g, similarity_matrix(g, zi, zt), tau);
}

} // namespace bitraj
