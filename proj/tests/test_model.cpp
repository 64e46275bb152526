#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "bitraj/model.hpp"
#include "oracles.hpp"

using bitraj::BackboneSpec;
using bitraj::Graph;
using bitraj::GraphModel;
using bitraj::ModelConfig;
using bitraj::Rng;
using bitraj::Scope;
using bitraj::Tensor;
using bitraj::Value;
using bitraj::VLModel;

namespace {

ModelConfig identity_model(std::size_t dim) {
    ModelConfig mc;
    mc.backbone.kind = BackboneSpec::Kind::identity;
    mc.backbone.in_dim = dim;
    mc.backbone.seed = 1;
    mc.scope = Scope::full;
    mc.embed_dim = dim;
    return mc;
}

ModelConfig one_hidden_model(std::size_t in, std::size_t hidden, std::size_t out,
                             std::size_t h) {
    ModelConfig mc;
    mc.backbone.kind = BackboneSpec::Kind::one_hidden_tanh;
    mc.backbone.in_dim = in;
    mc.backbone.hidden_dim = hidden;
    mc.backbone.out_dim = out;
    mc.backbone.seed = 5;
    mc.scope = Scope::full;
    mc.embed_dim = h;
    return mc;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (auto& x : t.data()) x = 2.0 * rng.uniform() - 1.0;
    return t;
}

} // namespace

TEST_CASE("identity backbone with identity projection normalizes the input") {
    VLModel m = VLModel::init(identity_model(2), 2, 7);
    m.img_proj = Tensor::identity(2);
    Tensor out = bitraj::encode_image_values(m, Tensor(1, 2, {3, 4}));
    CHECK(out(0, 0) == Catch::Approx(0.6).margin(1e-15));
    CHECK(out(0, 1) == Catch::Approx(0.8).margin(1e-15));
}

TEST_CASE("fresh LoRA adapters leave the model unchanged") {
    ModelConfig full = one_hidden_model(6, 5, 4, 3);
    ModelConfig lora = full;
    lora.scope = Scope::lora;
    lora.backbone.lora = bitraj::LoraSpec{2, {0, 1}};

    VLModel mf = VLModel::init(full, 4, 99);
    VLModel ml = VLModel::init(lora, 4, 99);

    Rng rng(3);
    Tensor x = random_tensor(rng, 5, 6);
    CHECK(bitraj::bitwise_equal(bitraj::encode_image_values(mf, x),
                                bitraj::encode_image_values(ml, x)));
}

TEST_CASE("encoded rows are unit norm") {
    VLModel m = VLModel::init(one_hidden_model(8, 6, 5, 4), 7, 2);
    Rng rng(13);
    Tensor x = random_tensor(rng, 9, 8);
    Tensor z = bitraj::encode_image_values(m, x);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double n2 = 0;
        for (std::size_t j = 0; j < z.cols(); ++j) n2 += z(i, j) * z(i, j);
        CHECK(std::fabs(std::sqrt(n2) - 1.0) < 1e-9);
    }
}

TEST_CASE("encode_text with identity projection") {
    VLModel m = VLModel::init(identity_model(2), 2, 7);
    m.txt_proj = Tensor::identity(2);
    Tensor out = bitraj::encode_text_values(m, Tensor(1, 2, {0, 5}));
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == 1.0);

    // scale invariance of the normalized output
    VLModel m2 = VLModel::init(identity_model(3), 4, 8);
    Rng rng(17);
    Tensor y = random_tensor(rng, 3, 4);
    Tensor doubled = bitraj::kern::scale(y, 2.0);
    Tensor za = bitraj::encode_text_values(m2, y);
    Tensor zb = bitraj::encode_text_values(m2, doubled);
    CHECK(oracles::rel_err(za, zb) < 1e-12);
}

TEST_CASE("encode_text gradient w.r.t. the text projection") {
    VLModel m = VLModel::init(identity_model(3), 4, 8);
    Rng rng(21);
    Tensor y = random_tensor(rng, 5, 4);
    Tensor w = random_tensor(rng, 5, 3);

    Graph g;
    GraphModel gm = GraphModel::with_vars(g, m);
    Value loss = g.sum_all(g.hadamard(gm.encode_text(g.constant(y)), g.constant(w)));
    std::vector<Value> wrt(gm.params().begin(), gm.params().end());
    auto grads = g.backward(loss, wrt);
    // txt_proj is the last layout entry
    const Tensor& g_txt = grads.back();

    auto f = [&](const std::vector<Tensor>& in) {
        VLModel probe = m;
        probe.txt_proj = in[0];
        Tensor z = bitraj::encode_text_values(probe, y);
        return bitraj::kern::sum(bitraj::kern::hadamard(z, w));
    };
    Tensor fd = oracles::fd_gradient(f, {m.txt_proj}, 0);
    CHECK(oracles::rel_err(g_txt, fd) < 1e-4);
}

TEST_CASE("similarity matrix basics") {
    Graph g;
    Value zi = g.constant(Tensor::identity(3));
    Value zt = g.constant(Tensor::identity(3));
    Value sim = bitraj::similarity_matrix(g, zi, zt);
    CHECK(bitraj::bitwise_equal(g.value(sim), Tensor::identity(3)));

    // orthogonal rows give zero off-diagonals already covered by identity;
    // swapping arguments transposes
    Rng rng(5);
    Tensor a = random_tensor(rng, 4, 3);
    Tensor b = random_tensor(rng, 4, 3);
    Value s1 = bitraj::similarity_matrix(g, g.constant(a), g.constant(b));
    Value s2 = bitraj::similarity_matrix(g, g.constant(b), g.constant(a));
    CHECK(bitraj::bitwise_equal(g.value(s1), bitraj::kern::transpose(g.value(s2))));

    CHECK_THROWS_AS(bitraj::similarity_matrix(g, g.constant(Tensor(2, 3)), g.constant(Tensor(4, 3))),
                    bitraj::NumericError);
}

TEST_CASE("contrastive loss closed forms") {
    Graph g;
    Value uniform = g.constant(Tensor::full(2, 2, 0.37));
    CHECK(g.scalar(bitraj::contrastive_loss(g, uniform)) ==
          Catch::Approx(std::log(2.0)).margin(1e-12));

    Value eye = g.constant(Tensor::identity(2));
    CHECK(g.scalar(bitraj::contrastive_loss(g, eye, 1.0)) ==
          Catch::Approx(std::log(1.0 + std::exp(-1.0))).margin(1e-12));

    Value single = g.constant(Tensor::full(1, 1, 0.9));
    CHECK(g.scalar(bitraj::contrastive_loss(g, single)) == Catch::Approx(0.0).margin(1e-15));

    CHECK_THROWS_AS(bitraj::contrastive_loss(g, g.constant(Tensor(2, 3))), bitraj::NumericError);
    CHECK_THROWS_AS(bitraj::contrastive_loss(g, eye, 0.0), bitraj::ConfigError);
}

TEST_CASE("contrastive loss invariances") {
    Rng rng(31);
    Tensor s = random_tensor(rng, 5, 5);

    Graph g;
    const double base = g.scalar(bitraj::contrastive_loss(g, g.constant(s)));

    SECTION("shift invariance") {
        Tensor shifted = bitraj::kern::map(s, [](double x) { return x + 3.7; });
        CHECK(std::fabs(g.scalar(bitraj::contrastive_loss(g, g.constant(shifted))) - base) <
              1e-9);
    }
    SECTION("joint permutation invariance") {
        std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        Tensor p(5, 5);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) p(i, j) = s(perm[i], perm[j]);
        CHECK(std::fabs(g.scalar(bitraj::contrastive_loss(g, g.constant(p))) - base) < 1e-9);
    }
    SECTION("nonnegative, approaching zero when the diagonal dominates") {
        CHECK(base >= 0.0);
        Tensor dominant = s;
        for (std::size_t i = 0; i < 5; ++i) dominant(i, i) = 40.0;
        CHECK(g.scalar(bitraj::contrastive_loss(g, g.constant(dominant))) < 1e-9);
    }
}

TEST_CASE("loss gradients through both encoders match finite differences") {
    ModelConfig mc = one_hidden_model(6, 5, 4, 3);
    VLModel m = VLModel::init(mc, 4, 77);
    Rng rng(41);
    Tensor x = random_tensor(rng, 4, 6);
    Tensor y = random_tensor(rng, 4, 4);

    Graph g;
    GraphModel gm = GraphModel::with_vars(g, m);
    Value loss = bitraj::pair_batch_loss(g, gm, g.constant(x), g.constant(y), 1.0);
    std::vector<Value> wrt(gm.params().begin(), gm.params().end());
    auto grads = g.backward(loss, wrt);

    auto tensors = m.trainable_tensors();
    const auto layout = m.layout();
    for (std::size_t p = 0; p < tensors.size(); ++p) {
        INFO(layout.entries[p].name);
        auto f = [&](const std::vector<Tensor>& in) {
            VLModel probe = m;
            *probe.trainable_tensors()[p] = in[0];
            Graph h;
            GraphModel hm = GraphModel::with_consts(h, probe);
            return h.scalar(bitraj::pair_batch_loss(h, hm, h.constant(x), h.constant(y), 1.0));
        };
        Tensor fd = oracles::fd_gradient(f, {*tensors[p]}, 0);
        CHECK(oracles::rel_err(grads[p], fd) < 1e-4);
    }
}

TEST_CASE("lora gradients flow into both factors after a step") {
    ModelConfig mc = one_hidden_model(6, 5, 4, 3);
    mc.scope = Scope::lora;
    mc.backbone.lora = bitraj::LoraSpec{2, {0}};
    VLModel m = VLModel::init(mc, 4, 31);
    // nudge B off zero so the A-gradient is nonzero too
    for (auto& v : m.adapters[0].b.data()) v = 0.01;

    Rng rng(43);
    Tensor x = random_tensor(rng, 4, 6);
    Tensor y = random_tensor(rng, 4, 4);

    Graph g;
    GraphModel gm = GraphModel::with_vars(g, m);
    Value loss = bitraj::pair_batch_loss(g, gm, g.constant(x), g.constant(y), 1.0);
    std::vector<Value> wrt(gm.params().begin(), gm.params().end());
    auto grads = g.backward(loss, wrt);

    auto tensors = m.trainable_tensors();
    const auto layout = m.layout();
    REQUIRE(layout.entries[0].name == "lora.0.a");
    REQUIRE(layout.entries[1].name == "lora.0.b");
    for (std::size_t p = 0; p < tensors.size(); ++p) {
        INFO(layout.entries[p].name);
        auto f = [&](const std::vector<Tensor>& in) {
            VLModel probe = m;
            *probe.trainable_tensors()[p] = in[0];
            Graph h;
            GraphModel hm = GraphModel::with_consts(h, probe);
            return h.scalar(bitraj::pair_batch_loss(h, hm, h.constant(x), h.constant(y), 1.0));
        };
        Tensor fd = oracles::fd_gradient(f, {*tensors[p]}, 0);
        CHECK(oracles::rel_err(grads[p], fd) < 1e-4);
    }
}

TEST_CASE("lora parameter reduction arithmetic") {
    BackboneSpec s;
    s.kind = BackboneSpec::Kind::random_linear;
    s.in_dim = 64;
    s.out_dim = 64;
    s.lora = bitraj::LoraSpec{4, {0}};
    auto r = bitraj::lora_param_reduction(s);
    CHECK(r.full == 4096);
    CHECK(r.adapted == 512);
    CHECK(r.fraction == Catch::Approx(0.875).margin(1e-15));

    SECTION("degenerate rank reported unclamped") {
        // r = d/2 on an 8x8 layer: adapted = 4*16 = 64 = full, fraction 0
        BackboneSpec sq;
        sq.kind = BackboneSpec::Kind::random_linear;
        sq.in_dim = 8;
        sq.out_dim = 8;
        sq.lora = bitraj::LoraSpec{4, {0}};
        auto rr = bitraj::lora_param_reduction(sq);
        CHECK(rr.full == 64);
        CHECK(rr.adapted == 64);
        CHECK(rr.fraction == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("two 32x32 layers at rank 2") {
        BackboneSpec two;
        two.kind = BackboneSpec::Kind::one_hidden_tanh;
        two.in_dim = 32;
        two.hidden_dim = 32;
        two.out_dim = 32;
        two.lora = bitraj::LoraSpec{2, {0, 1}};
        auto rr = bitraj::lora_param_reduction(two);
        CHECK(rr.full == 2048);
        CHECK(rr.adapted == 256);
        CHECK(rr.fraction == Catch::Approx(0.875).margin(1e-15));
    }
    SECTION("no lora configured") {
        BackboneSpec plain;
        plain.kind = BackboneSpec::Kind::random_linear;
        CHECK_THROWS_AS(bitraj::lora_param_reduction(plain), bitraj::ConfigError);
    }
}

TEST_CASE("layout offsets tile the flat vector exactly") {
    ModelConfig mc = one_hidden_model(6, 5, 4, 3);
    VLModel m = VLModel::init(mc, 4, 123);
    auto l = m.layout();
    std::size_t expect = 0;
    for (const auto& e : l.entries) {
        CHECK(e.offset == expect);
        expect += e.size();
    }
    CHECK(l.total == expect);

    // same spec => same layout
    VLModel m2 = VLModel::init(mc, 4, 999);
    CHECK(m.layout() == m2.layout());

    // flatten/unflatten round trip
    auto pv = m.trainable_params();
    VLModel m3 = VLModel::init(mc, 4, 999);
    m3.set_trainable_params(pv.values);
    CHECK(m3.trainable_params().values == pv.values);
}
