#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "bitraj/common.hpp"
#include "bitraj/dataset.hpp"
#include "bitraj/expert.hpp"
#include "bitraj/model.hpp"
#include "bitraj/rng.hpp"

namespace bitraj {

// One row per training pair: concat(image feature, mean of caption features).
struct FeatureTable {
    Tensor features; // n x d
    std::size_t size() const { return features.rows(); }
};

// Raw dataset-space features (identity "encoder").
inline FeatureTable concat_features(const PairedDataset& ds) {
    const std::size_t n = ds.size();
    const std::size_t d = ds.d_img() + ds.e_txt();
    FeatureTable t;
    t.features = Tensor(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ds.d_img(); ++j) t.features(i, j) = ds.images(i, j);
        for (std::size_t j = 0; j < ds.e_txt(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < ds.K; ++c) s += ds.captions(ds.caption_row(i, c), j);
            t.features(i, ds.d_img() + j) = s / static_cast<double>(ds.K);
        }
    }
    return t;
}

// Same structure but through the frozen model's encoders.
inline FeatureTable encoded_features(const PairedDataset& ds, const VLModel& model) {
    const std::size_t n = ds.size();
    Tensor zi = encode_image_values(model, ds.images);
    Tensor zt = encode_text_values(model, ds.captions);
    const std::size_t h = zi.cols();
    FeatureTable t;
    t.features = Tensor(n, 2 * h);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < h; ++j) t.features(i, j) = zi(i, j);
        for (std::size_t j = 0; j < h; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < ds.K; ++c) s += zt(ds.caption_row(i, c), j);
            t.features(i, h + j) = s / static_cast<double>(ds.K);
        }
    }
    return t;
}

inline std::vector<std::size_t> random_select(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (m > n)
        throw ConfigError("random_select: m " + std::to_string(m) + " > n " + std::to_string(n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(m);
    return idx;
}

// Greedy herding: each step adds the point whose inclusion brings the coreset
// mean closest to the dataset mean; ties go to the lowest index.
inline std::vector<std::size_t> herding_select(const FeatureTable& table, std::size_t m) {
    const std::size_t n = table.size();
    if (n == 0) throw ConfigError("herding_select: empty feature table");
    if (m > n)
        throw ConfigError("herding_select: m " + std::to_string(m) + " > n " + std::to_string(n));
    const std::size_t d = table.features.cols();

    std::vector<double> center(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) center[j] += table.features(i, j);
    for (auto& c : center) c /= static_cast<double>(n);

    std::vector<std::size_t> picked;
    std::vector<bool> used(n, false);
    std::vector<double> sum(d, 0.0);
    for (std::size_t step = 0; step < m; ++step) {
        const double inv = 1.0 / static_cast<double>(step + 1);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            double d2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double mean_j = (sum[j] + table.features(i, j)) * inv;
                const double diff = mean_j - center[j];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                best_i = i;
            }
        }
        used[best_i] = true;
        picked.push_back(best_i);
        for (std::size_t j = 0; j < d; ++j) sum[j] += table.features(best_i, j);
    }
    return picked;
}

// Greedy farthest-point: seed the first center uniformly, then repeatedly add
// the point with maximum distance to its nearest selected center.
inline std::vector<std::size_t> kcenter_select(const FeatureTable& table, std::size_t m,
                                               std::uint64_t seed) {
    const std::size_t n = table.size();
    if (n == 0) throw ConfigError("kcenter_select: empty feature table");
    if (m > n)
        throw ConfigError("kcenter_select: m " + std::to_string(m) + " > n " + std::to_string(n));
    if (m == 0) return {};
    const std::size_t d = table.features.cols();

    auto dist2 = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = table.features(a, j) - table.features(b, j);
            s += diff * diff;
        }
        return s;
    };

    std::vector<std::size_t> picked;
    Rng rng(seed);
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    picked.push_back(first);

    std::vector<double> nearest(n);
    std::vector<bool> used(n, false);
    used[first] = true;
    for (std::size_t i = 0; i < n; ++i) nearest[i] = dist2(i, first);

    while (picked.size() < m) {
        double best = -1.0;
        std::size_t best_i = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            if (nearest[i] > best) {
                best = nearest[i];
                best_i = i;
            }
        }
        picked.push_back(best_i);
        used[best_i] = true;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(i, best_i));
    }
    return picked;
}

// Forgetting bookkeeping. A pair counts as learned after an epoch iff its
// image puts one of its own captions at rank 1 over the full training caption
// pool AND its first caption puts its own image at rank 1 over the training
// image pool. An event is a learned -> unlearned transition between
// consecutive epochs; with fewer than two epochs there is nothing to compare
// and every pair ties at zero.
struct ForgettingStats {
    std::vector<std::size_t> events;
    std::vector<bool> ever_learned;
};

inline std::vector<bool> learned_flags(const VLModel& model, const PairedDataset& train) {
    const std::size_t n = train.size();
    Tensor zi = encode_image_values(model, train.images);
    Tensor zt = encode_text_values(model, train.captions);
    const std::size_t h = zi.cols();
    const std::size_t ncap = zt.rows();

    auto dot = [&](const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) s += a(ra, j) * b(rb, j);
        return s;
    };

    std::vector<bool> learned(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        // image -> captions, top-1 with lowest-index tie rule
        std::size_t arg_tr = 0;
        double best_tr = dot(zi, i, zt, 0);
        for (std::size_t j = 1; j < ncap; ++j) {
            const double s = dot(zi, i, zt, j);
            if (s > best_tr) {
                best_tr = s;
                arg_tr = j;
            }
        }
        const bool tr_hit = arg_tr / train.K == i;
        if (!tr_hit) continue;

        // first caption -> images
        const std::size_t cap = train.caption_row(i, 0);
        std::size_t arg_ir = 0;
        double best_ir = dot(zt, cap, zi, 0);
        for (std::size_t j = 1; j < n; ++j) {
            const double s = dot(zt, cap, zi, j);
            if (s > best_ir) {
                best_ir = s;
                arg_ir = j;
            }
        }
        learned[i] = arg_ir == i;
    }
    return learned;
}

inline ForgettingStats forgetting_stats(const PairedDataset& train, const ModelConfig& mc,
                                        const TrainConfig& cfg) {
    const std::size_t n = train.size();
    ForgettingStats stats;
    stats.events.assign(n, 0);
    stats.ever_learned.assign(n, false);
    if (cfg.epochs < 2) return stats;

    VLModel model = VLModel::init(mc, train.e_txt(), cfg.seed);
    std::vector<bool> prev;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        advance_epochs(model, train.images, train.captions, train.K, cfg, e, 1);
        std::vector<bool> cur = learned_flags(model, train);
        for (std::size_t i = 0; i < n; ++i) {
            if (cur[i]) stats.ever_learned[i] = true;
            if (!prev.empty() && prev[i] && !cur[i]) ++stats.events[i];
        }
        prev = std::move(cur);
    }
    return stats;
}

// Fewest events first; never-learned pairs go last; index breaks ties.
inline std::vector<std::size_t> rank_by_forgetting(const ForgettingStats& stats, std::size_t m) {
    const std::size_t n = stats.events.size();
    if (m > n)
        throw ConfigError("forgetting_select: m " + std::to_string(m) + " > n " +
                          std::to_string(n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const int na = stats.ever_learned[a] ? 0 : 1;
        const int nb = stats.ever_learned[b] ? 0 : 1;
        if (na != nb) return na < nb;
        if (stats.events[a] != stats.events[b]) return stats.events[a] < stats.events[b];
        return a < b;
    });
    idx.resize(m);
    return idx;
}

inline std::vector<std::size_t> forgetting_select(const PairedDataset& train,
                                                  const ModelConfig& mc, const TrainConfig& cfg,
                                                  std::size_t m) {
    return rank_by_forgetting(forgetting_stats(train, mc, cfg), m);
}

} // namespace bitraj
