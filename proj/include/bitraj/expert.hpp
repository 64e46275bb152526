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
#include "bitraj/model.hpp"
#include "bitraj/rng.hpp"

namespace bitraj {

struct TrainConfig {
    std::size_t epochs = 10; // T
    std::size_t batch_size = 128;
    double lr = 0.5;
    double momentum = 0.5;
    double tau = 1.0;
    std::uint64_t seed = 0;
    std::size_t num_trajectories = 20;

    void validate(std::size_t n_train) const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (batch_size > n_train)
            throw ConfigError("train: batch_size " + std::to_string(batch_size) +
                              " exceeds n_train " + std::to_string(n_train));
        if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("train: momentum must be in [0,1)");
        if (!(tau > 0.0)) throw ConfigError("train: tau must be > 0");
        if (num_trajectories < 1) throw ConfigError("train: num_trajectories must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},   {"batch_size", batch_size},
                {"lr", lr},           {"momentum", momentum},
                {"tau", tau},         {"seed", seed},
                {"num_trajectories", num_trajectories}};
    }
};

// Per-epoch parameter snapshots of one expert run; snapshot 0 is the
// initialization and all snapshots share one layout.
struct Trajectory {
    Scope scope = Scope::full;
    ParamLayout layout;
    std::string arch_digest;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;                     // T
    std::vector<std::vector<double>> snapshots; // T+1 flat vectors
    std::vector<double> loss_log;               // mean train loss per epoch

    ParamVector snapshot(std::size_t t) const {
        if (t >= snapshots.size())
            throw NumericError("trajectory: snapshot " + std::to_string(t) + " out of " +
                               std::to_string(snapshots.size()));
        return ParamVector{layout, snapshots[t]};
    }
};

// Runs epochs [first_epoch+1 .. first_epoch+count] of SGD-with-momentum on
// the bidirectional contrastive loss, one uniformly sampled caption per image
// per step. Batch order and caption draws come from per-epoch forked streams
// and momentum restarts at each epoch boundary, so training from snapshot s
// for t-s epochs reproduces snapshot t bit-exactly.
inline std::vector<double> advance_epochs(VLModel& model, const Tensor& images,
                                          const Tensor& captions, std::size_t captions_per_item,
                                          const TrainConfig& cfg, std::size_t first_epoch,
                                          std::size_t count) {
    const std::size_t n = images.rows();
    const std::size_t batch = std::min(cfg.batch_size, n);
    auto trainables = model.trainable_tensors();

    std::vector<double> epoch_losses;
    std::vector<std::int32_t> order(n);
    std::vector<std::int32_t> img_rows, cap_rows;

    for (std::size_t e = first_epoch + 1; e <= first_epoch + count; ++e) {
        Rng rng = Rng::fork(cfg.seed, "epoch", e);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);

        std::vector<Tensor> velocity;
        for (Tensor* t : trainables) velocity.emplace_back(t->rows(), t->cols());

        double loss_acc = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t b = std::min(batch, n - start);
            img_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(start + b));
            cap_rows.clear();
            for (std::int32_t item : img_rows) {
                const auto c = captions_per_item > 1 ? rng.below(captions_per_item) : 0;
                cap_rows.push_back(static_cast<std::int32_t>(
                    static_cast<std::size_t>(item) * captions_per_item + c));
            }

            try {
                Graph g;
                GraphModel gm = GraphModel::with_vars(g, model);
                Value xb = g.constant(kern::take_rows(images, img_rows));
                Value yb = g.constant(kern::take_rows(captions, cap_rows));
                Value loss = pair_batch_loss(g, gm, xb, yb, cfg.tau);
                std::vector<Value> wrt(gm.params().begin(), gm.params().end());
                auto grads = g.backward(loss, wrt);

                for (std::size_t p = 0; p < trainables.size(); ++p) {
                    auto v = velocity[p].data();
                    auto gd = grads[p].data();
                    auto w = trainables[p]->data();
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        v[i] = cfg.momentum * v[i] + gd[i];
                        w[i] -= cfg.lr * v[i];
                    }
                }
                loss_acc += g.scalar(loss);
                ++steps;
            } catch (const NumericError& err) {
                throw NumericError("training aborted at epoch " + std::to_string(e) + ", step " +
                                   std::to_string(steps) + ": " + err.what());
            }
        }
        epoch_losses.push_back(loss_acc / static_cast<double>(steps));
    }
    return epoch_losses;
}

inline Trajectory train_expert(const PairedDataset& train, const ModelConfig& mc,
                               const TrainConfig& cfg) {
    mc.validate();
    cfg.validate(train.size());
    if (train.d_img() != mc.backbone.in_dim)
        throw ConfigError("train_expert: dataset d_img " + std::to_string(train.d_img()) +
                          " != backbone in_dim " + std::to_string(mc.backbone.in_dim));

    VLModel model = VLModel::init(mc, train.e_txt(), cfg.seed);

    Trajectory traj;
    traj.scope = mc.scope;
    traj.layout = model.layout();
    traj.arch_digest = model.arch_digest();
    traj.seed = cfg.seed;
    traj.epochs = cfg.epochs;
    traj.snapshots.push_back(model.trainable_params().values);

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        auto losses = advance_epochs(model, train.images, train.captions, train.K, cfg, e, 1);
        traj.loss_log.push_back(losses.front());
        traj.snapshots.push_back(model.trainable_params().values);
    }
    return traj;
}

// Independent experts with seeds cfg.seed + i.
inline std::vector<Trajectory> train_experts(const PairedDataset& train, const ModelConfig& mc,
                                             const TrainConfig& cfg) {
    std::vector<Trajectory> out;
    out.reserve(cfg.num_trajectories);
    for (std::size_t i = 0; i < cfg.num_trajectories; ++i) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + i;
        out.push_back(train_expert(train, mc, c));
    }
    return out;
}

inline constexpr std::string_view kTrajectoryMagic = "BTRJ";

inline void save_trajectory(const Trajectory& t, const std::filesystem::path& path) {
    nlohmann::json meta{{"kind", "trajectory"},
                        {"scope", scope_name(t.scope)},
                        {"layout", t.layout.to_json()},
                        {"epochs", t.epochs},
                        {"seed", t.seed},
                        {"arch_digest", t.arch_digest},
                        {"loss_log", t.loss_log}};
    std::vector<NamedBlock> blocks;
    blocks.reserve(t.snapshots.size());
    for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "theta_%04zu", i);
        blocks.push_back({name, Tensor(1, t.snapshots[i].size(), t.snapshots[i])});
    }
    write_container(path, kTrajectoryMagic, std::move(meta), std::move(blocks));
}

// expect_arch_digest guards load-for-use: pass the current model digest to
// reject trajectories recorded under a different architecture.
inline Trajectory load_trajectory(const std::filesystem::path& path,
                                  const std::string* expect_arch_digest = nullptr) {
    Container c = read_container(path, kTrajectoryMagic);
    Trajectory t;
    t.scope = scope_from_name(c.meta.at("scope").get<std::string>());
    t.layout = ParamLayout::from_json(c.meta.at("layout"));
    t.epochs = c.meta.at("epochs").get<std::size_t>();
    t.seed = c.meta.at("seed").get<std::uint64_t>();
    t.arch_digest = c.meta.at("arch_digest").get<std::string>();
    t.loss_log = c.meta.at("loss_log").get<std::vector<double>>();

    if (c.blocks.size() != t.epochs + 1)
        throw DataFormatError("trajectory " + path.string() + ": " +
                              std::to_string(c.blocks.size()) + " snapshots for T=" +
                              std::to_string(t.epochs));
    for (const auto& b : c.blocks) {
        if (b.data.rows() != 1 || b.data.cols() != t.layout.total)
            throw DataFormatError("trajectory " + path.string() + ": snapshot block '" + b.name +
                                  "' is " + b.data.shape_str() + ", layout total is " +
                                  std::to_string(t.layout.total));
        t.snapshots.emplace_back(b.data.data().begin(), b.data.data().end());
    }
    if (expect_arch_digest && *expect_arch_digest != t.arch_digest)
        throw DigestMismatchError("trajectory " + path.string() + ": arch digest " +
                                  t.arch_digest + " does not match current model " +
                                  *expect_arch_digest);
    return t;
}

} // namespace bitraj
