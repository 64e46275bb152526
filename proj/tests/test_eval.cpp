#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bitraj/coresets.hpp"
#include "bitraj/eval.hpp"
#include "oracles.hpp"

using bitraj::Direction;
using bitraj::GenConfig;
using bitraj::ModelConfig;
using bitraj::PairedDataset;
using bitraj::RetrievalPair;
using bitraj::Tensor;
using bitraj::TrainConfig;
using bitraj::VLModel;

namespace {

const std::vector<int> kKs{1, 5, 10};

ModelConfig identity_eval_model(std::size_t dim) {
    ModelConfig mc;
    mc.backbone.kind = bitraj::BackboneSpec::Kind::identity;
    mc.backbone.in_dim = dim;
    mc.backbone.seed = 1;
    mc.embed_dim = dim;
    return mc;
}

PairedDataset tiny_test_split(Tensor images, Tensor captions, std::size_t K) {
    PairedDataset ds;
    ds.split = bitraj::Split::test;
    ds.K = K;
    ds.images = std::move(images);
    ds.captions = std::move(captions);
    return ds;
}

GenConfig eval_data_config() {
    GenConfig cfg;
    cfg.n_train = 150;
    cfg.n_val = 10;
    cfg.n_test = 50;
    cfg.captions_per_item = 2;
    cfg.latent_dim = 5;
    cfg.d_img = 12;
    cfg.e_txt = 8;
    cfg.sigma_img = 0.05;
    cfg.sigma_txt = 0.05;
    cfg.seed = 31;
    return cfg;
}

ModelConfig eval_model_config() {
    ModelConfig mc;
    mc.backbone.kind = bitraj::BackboneSpec::Kind::one_hidden_tanh;
    mc.backbone.in_dim = 12;
    mc.backbone.hidden_dim = 10;
    mc.backbone.out_dim = 8;
    mc.backbone.seed = 4;
    mc.embed_dim = 6;
    return mc;
}

} // namespace

TEST_CASE("perfectly aligned pairs score R@1 = 1 both ways") {
    VLModel m = VLModel::init(identity_eval_model(2), 2, 3);
    m.img_proj = Tensor::identity(2);
    m.txt_proj = Tensor::identity(2);
    auto ds = tiny_test_split(Tensor(2, 2, {1, 0, 0, 1}), Tensor(2, 2, {1, 0, 0, 1}), 1);

    RetrievalPair r = bitraj::recall_at_k(m, ds, kKs);
    CHECK(r.ir.recall.at(1) == 1.0);
    CHECK(r.tr.recall.at(1) == 1.0);
    CHECK(r.tr.n_queries == 2);
    CHECK(r.ir.n_queries == 2);
}

TEST_CASE("recall is monotone in k and split-tag enforced") {
    auto data = bitraj::generate(eval_data_config());
    VLModel m = VLModel::init(eval_model_config(), data.test.e_txt(), 17);

    RetrievalPair r = bitraj::recall_at_k(m, data.test, kKs);
    CHECK(r.tr.recall.at(1) <= r.tr.recall.at(5));
    CHECK(r.tr.recall.at(5) <= r.tr.recall.at(10));
    CHECK(r.ir.recall.at(1) <= r.ir.recall.at(5));
    CHECK(r.ir.recall.at(5) <= r.ir.recall.at(10));
    CHECK(r.tr.recall.at(10) <= 1.0);

    CHECK_THROWS_AS(bitraj::recall_at_k(m, data.train, kKs), bitraj::ConfigError);
}

TEST_CASE("constant embeddings degenerate to the lowest-index tie rule") {
    VLModel m = VLModel::init(identity_eval_model(3), 3, 5);
    m.txt_proj = Tensor(3, 3); // zero rows normalize to zero: every score ties
    GenConfig gc = eval_data_config();
    gc.d_img = 3;
    gc.e_txt = 3;
    gc.latent_dim = 2;
    gc.n_test = 25;
    gc.captions_per_item = 2;
    auto data = bitraj::generate(gc);

    RetrievalPair r = bitraj::recall_at_k(m, data.test, kKs);
    // every query's candidate list ties, so candidate 0 alone takes rank 1:
    // TR succeeds only for image 0 (it owns caption 0), IR succeeds only for
    // the K captions owned by image 0
    CHECK(r.tr.recall.at(1) == 1.0 / 25.0);
    CHECK(r.ir.recall.at(1) == 1.0 / 25.0);
}

TEST_CASE("analytic random baseline matches the paper's lower-bound table") {
    using bitraj::random_baseline_expectation;
    CHECK(random_baseline_expectation(1000, 5, 1, Direction::image_to_text) ==
          Catch::Approx(0.001).margin(1e-15));
    CHECK(random_baseline_expectation(1000, 5, 1, Direction::text_to_image) ==
          Catch::Approx(0.001).margin(1e-15));
    CHECK(random_baseline_expectation(1000, 5, 10, Direction::text_to_image) ==
          Catch::Approx(0.01).margin(1e-15));
    CHECK(random_baseline_expectation(2, 3, 6, Direction::image_to_text) == 1.0);
    CHECK_THROWS_AS(random_baseline_expectation(10, 1, 11, Direction::text_to_image),
                    bitraj::ConfigError);
}

TEST_CASE("analytic random baseline agrees with Monte-Carlo") {
    struct Case {
        std::size_t n, K, k;
    };
    for (const Case c : {Case{50, 5, 1}, Case{100, 5, 5}, Case{1000, 5, 10}}) {
        for (bool tr : {true, false}) {
            const double analytic = bitraj::random_baseline_expectation(
                c.n, c.K, c.k, tr ? Direction::image_to_text : Direction::text_to_image);
            auto mc = oracles::mc_random_recall(c.n, c.K, c.k, tr, 10000, 1234);
            CHECK(std::fabs(mc.mean - analytic) <= 3.0 * std::max(mc.stderr_, 1e-9));
        }
    }
}

TEST_CASE("evaluate_set aggregates seeds and honors alpha") {
    auto data = bitraj::generate(eval_data_config());
    ModelConfig mc = eval_model_config();

    auto idx = bitraj::random_select(data.train.size(), 12, 3);
    bitraj::TrainSet ts = bitraj::train_set_from(data.train, idx);

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 12;
    cfg.lr = 0.3;
    cfg.momentum = 0.0;

    SECTION("one seed omits std") {
        auto r = bitraj::evaluate_set(ts, mc, cfg, data.test, 1, kKs, 5);
        CHECK(r.tr.recall_std.empty());
        CHECK(r.ir.recall_std.empty());
        CHECK(r.tr.seeds.size() == 1);
    }
    SECTION("three seeds carry std and beat random chance on easy data") {
        auto r = bitraj::evaluate_set(ts, mc, cfg, data.test, 3, kKs, 5);
        CHECK(r.tr.recall_std.size() == kKs.size());
        CHECK(r.tr.seeds.size() == 3);
        const double chance =
            bitraj::random_baseline_expectation(50, 2, 1, Direction::image_to_text);
        CHECK(r.tr.recall.at(1) > chance);
    }
    SECTION("a distilled set's alpha becomes the student lr") {
        bitraj::DistilledSet d;
        d.images = ts.images;
        d.texts = Tensor(12, 8);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 8; ++j)
                d.texts(i, j) = ts.texts(i * data.train.K, j);
        d.alpha = 0.25;
        bitraj::TrainSet dts = bitraj::train_set_from(d);
        CHECK(dts.alpha.value() == 0.25);
        CHECK(dts.K == 1);
        auto r = bitraj::evaluate_set(dts, mc, cfg, data.test, 2, kKs, 9);
        CHECK(r.tr.recall.at(10) >= r.tr.recall.at(1));
    }
}

TEST_CASE("report rows serialize to the fixed schema") {
    bitraj::ReportRow row;
    row.method = "R";
    row.pairs = 20;
    row.direction = "TR";
    row.recall = {{1, 0.125}, {5, 0.5}, {10, 0.75}};
    row.recall_std = {{1, 0.01}, {5, 0.02}, {10, 0.03}};

    SECTION("single entry gives header plus one row") {
        std::vector<bitraj::ReportRow> rows{row};
        const std::string csv = bitraj::report_csv(rows);
        CHECK(csv == "method,pairs,direction,r1,r1_std,r5,r5_std,r10,r10_std\n"
                     "R,20,TR,0.125,0.01,0.5,0.02,0.75,0.03\n");
    }
    SECTION("missing std leaves cells empty") {
        bitraj::ReportRow bare = row;
        bare.recall_std.clear();
        std::vector<bitraj::ReportRow> rows{bare};
        const std::string csv = bitraj::report_csv(rows);
        CHECK(csv == "method,pairs,direction,r1,r1_std,r5,r5_std,r10,r10_std\n"
                     "R,20,TR,0.125,,0.5,,0.75,\n");
    }
    SECTION("json round trip") {
        bitraj::ReportRow other = row;
        other.method = "Dist";
        other.direction = "IR";
        std::vector<bitraj::ReportRow> rows{row, other};
        auto parsed = bitraj::report_from_json(bitraj::report_json(rows));
        REQUIRE(parsed.size() == 2);
        CHECK(parsed[0].method == "R");
        CHECK(parsed[1].method == "Dist");
        CHECK(parsed[0].recall == row.recall);
        CHECK(parsed[0].recall_std == row.recall_std);
        CHECK(parsed[1].direction == "IR");
    }
}
