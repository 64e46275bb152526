#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/dataset.hpp"
#include "bitraj/distill.hpp"
#include "bitraj/expert.hpp"
#include "bitraj/model.hpp"

namespace bitraj {

enum class Direction { image_to_text, text_to_image };

inline const char* direction_name(Direction d) {
    return d == Direction::image_to_text ? "TR" : "IR";
}

// Karpathy-style recall: TR ranks all N*K captions per image query and counts
// a hit if any of the image's own K captions lands in the top k; IR ranks all
// N images per caption query. Score ties resolve to the lower candidate index.
struct RetrievalReport {
    Direction direction = Direction::image_to_text;
    std::map<int, double> recall;     // k -> mean fraction over seeds
    std::map<int, double> recall_std; // empty unless >= 2 seeds
    std::size_t n_queries = 0;
    std::vector<std::uint64_t> seeds;

    nlohmann::json to_json() const {
        nlohmann::json r = nlohmann::json::object(), s = nlohmann::json::object();
        for (auto [k, v] : recall) r[std::to_string(k)] = v;
        for (auto [k, v] : recall_std) s[std::to_string(k)] = v;
        return {{"direction", direction_name(direction)},
                {"recall", r},
                {"recall_std", s},
                {"n_queries", n_queries},
                {"seeds", seeds}};
    }
};

struct RetrievalPair {
    RetrievalReport tr, ir;
};

inline RetrievalPair recall_at_k(const VLModel& model, const PairedDataset& test,
                                 std::span<const int> ks) {
    if (test.split != Split::test)
        throw ConfigError("recall_at_k: refusing to evaluate on the '" +
                          std::string(split_name(test.split)) + "' split");
    if (test.size() == 0) throw ConfigError("recall_at_k: empty test split");

    const Tensor zi = encode_image_values(model, test.images);
    const Tensor zt = encode_text_values(model, test.captions);
    const std::size_t n = zi.rows();
    const std::size_t ncap = zt.rows();
    const std::size_t h = zi.cols();

    auto dot = [&](const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) s += a(ra, j) * b(rb, j);
        return s;
    };

    RetrievalPair out;
    out.tr.direction = Direction::image_to_text;
    out.tr.n_queries = n;
    out.ir.direction = Direction::text_to_image;
    out.ir.n_queries = ncap;

    std::map<int, std::size_t> tr_hits, ir_hits;
    for (int k : ks) {
        tr_hits[k] = 0;
        ir_hits[k] = 0;
    }

    std::vector<double> scores(std::max(n, ncap));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ncap; ++j) scores[j] = dot(zi, i, zt, j);
        std::size_t best_rank = ncap + 1;
        for (std::size_t c = i * test.K; c < (i + 1) * test.K; ++c) {
            std::size_t rank = 1;
            for (std::size_t j = 0; j < ncap; ++j) {
                if (j == c) continue;
                if (scores[j] > scores[c] || (scores[j] == scores[c] && j < c)) ++rank;
            }
            best_rank = std::min(best_rank, rank);
        }
        for (int k : ks)
            if (best_rank <= static_cast<std::size_t>(k)) ++tr_hits[k];
    }

    for (std::size_t c = 0; c < ncap; ++c) {
        const std::size_t own = c / test.K;
        for (std::size_t j = 0; j < n; ++j) scores[j] = dot(zt, c, zi, j);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == own) continue;
            if (scores[j] > scores[own] || (scores[j] == scores[own] && j < own)) ++rank;
        }
        for (int k : ks)
            if (rank <= static_cast<std::size_t>(k)) ++ir_hits[k];
    }

    for (int k : ks) {
        out.tr.recall[k] = static_cast<double>(tr_hits[k]) / static_cast<double>(n);
        out.ir.recall[k] = static_cast<double>(ir_hits[k]) / static_cast<double>(ncap);
    }
    return out;
}

// Closed-form random-ranking recall. TR: 1 - C(NK-K, k)/C(NK, k); IR: k/N.
inline double random_baseline_expectation(std::size_t n, std::size_t captions_per_item,
                                          std::size_t k, Direction dir) {
    if (n < 1 || captions_per_item < 1 || k < 1)
        throw ConfigError("random_baseline_expectation: counts must be >= 1");
    if (dir == Direction::text_to_image) {
        if (k > n) throw ConfigError("random_baseline_expectation: k exceeds image pool");
        return static_cast<double>(k) / static_cast<double>(n);
    }
    const std::size_t pool = n * captions_per_item;
    if (k > pool) throw ConfigError("random_baseline_expectation: k exceeds caption pool");
    double miss = 1.0;
    for (std::size_t j = 0; j < k; ++j)
        miss *= static_cast<double>(pool - captions_per_item - j) / static_cast<double>(pool - j);
    return 1.0 - miss;
}

// A set a student can be trained on: M images with K texts per image, plus
// the learned rate when the set came out of distillation.
struct TrainSet {
    Tensor images;
    Tensor texts; // (M*K) rows
    std::size_t K = 1;
    std::optional<double> alpha;
};

inline TrainSet train_set_from(const DistilledSet& d) {
    return TrainSet{d.images, d.texts, 1, d.alpha};
}

inline TrainSet train_set_from(const PairedDataset& train,
                               std::span<const std::size_t> indices) {
    TrainSet ts;
    ts.K = train.K;
    ts.images = Tensor(indices.size(), train.d_img());
    ts.texts = Tensor(indices.size() * train.K, train.e_txt());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < train.d_img(); ++j)
            ts.images(i, j) = train.images(indices[i], j);
        for (std::size_t c = 0; c < train.K; ++c)
            for (std::size_t j = 0; j < train.e_txt(); ++j)
                ts.texts(i * train.K + c, j) = train.captions(train.caption_row(indices[i], c), j);
    }
    return ts;
}

// Trains n_seeds students from independent inits on the given set and
// aggregates recall on the untouched test split. The distilled alpha, when
// present, doubles as the student's learning rate.
inline RetrievalPair evaluate_set(const TrainSet& ts, const ModelConfig& eval_arch,
                                  const TrainConfig& cfg, const PairedDataset& test,
                                  std::size_t n_seeds, std::span<const int> ks,
                                  std::uint64_t eval_seed) {
    if (n_seeds < 1) throw ConfigError("evaluate_set: n_seeds must be >= 1");

    std::vector<RetrievalPair> runs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n_seeds; ++i) {
        const std::uint64_t seed = Rng::fork(eval_seed, "eval_student", i).next_u64();
        seeds.push_back(seed);
        VLModel model = VLModel::init(eval_arch, test.e_txt(), seed);
        TrainConfig local = cfg;
        local.seed = seed;
        local.lr = ts.alpha.value_or(cfg.lr);
        local.batch_size = std::min(cfg.batch_size, ts.images.rows());
        local.validate(ts.images.rows());
        advance_epochs(model, ts.images, ts.texts, ts.K, local, 0, local.epochs);
        runs.push_back(recall_at_k(model, test, ks));
    }

    auto aggregate = [&](auto pick) {
        RetrievalReport agg = pick(runs.front());
        agg.seeds = seeds;
        for (int k : std::vector<int>(ks.begin(), ks.end())) {
            double mean = 0.0;
            for (const auto& r : runs) mean += pick(r).recall.at(k);
            mean /= static_cast<double>(runs.size());
            agg.recall[k] = mean;
            if (runs.size() >= 2) {
                double ss = 0.0;
                for (const auto& r : runs) {
                    const double d = pick(r).recall.at(k) - mean;
                    ss += d * d;
                }
                agg.recall_std[k] = std::sqrt(ss / static_cast<double>(runs.size() - 1));
            }
        }
        return agg;
    };

    RetrievalPair out;
    out.tr = aggregate([](const RetrievalPair& r) { return r.tr; });
    out.ir = aggregate([](const RetrievalPair& r) { return r.ir; });
    return out;
}

// One row of the comparison table: a method at a budget in one direction.
struct ReportRow {
    std::string method; // R | H | K | F | DM | Dist | ...
    std::size_t pairs = 0;
    std::string direction; // TR | IR
    std::map<int, double> recall;
    std::map<int, double> recall_std;

    nlohmann::json to_json() const {
        nlohmann::json r = nlohmann::json::object(), s = nlohmann::json::object();
        for (auto [k, v] : recall) r[std::to_string(k)] = v;
        for (auto [k, v] : recall_std) s[std::to_string(k)] = v;
        return {{"method", method},
                {"pairs", pairs},
                {"direction", direction},
                {"recall", r},
                {"recall_std", s}};
    }
    static ReportRow from_json(const nlohmann::json& j) {
        ReportRow row;
        row.method = j.at("method").get<std::string>();
        row.pairs = j.at("pairs").get<std::size_t>();
        row.direction = j.at("direction").get<std::string>();
        for (auto& [k, v] : j.at("recall").items()) row.recall[std::stoi(k)] = v.get<double>();
        for (auto& [k, v] : j.at("recall_std").items())
            row.recall_std[std::stoi(k)] = v.get<double>();
        return row;
    }
};

inline std::vector<ReportRow> report_rows(const std::string& method, std::size_t pairs,
                                          const RetrievalPair& result) {
    ReportRow tr{method, pairs, "TR", result.tr.recall, result.tr.recall_std};
    ReportRow ir{method, pairs, "IR", result.ir.recall, result.ir.recall_std};
    return {tr, ir};
}

namespace detail {
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}
} // namespace detail

// Fixed schema: method,pairs,direction,r1,r1_std,r5,r5_std,r10,r10_std.
// Missing std values (single-seed runs) leave the cell empty.
inline std::string report_csv(std::span<const ReportRow> rows) {
    std::string out = "method,pairs,direction,r1,r1_std,r5,r5_std,r10,r10_std\n";
    for (const auto& row : rows) {
        out += row.method + "," + std::to_string(row.pairs) + "," + row.direction;
        for (int k : {1, 5, 10}) {
            out += ",";
            if (auto it = row.recall.find(k); it != row.recall.end())
                out += detail::fmt_double(it->second);
            out += ",";
            if (auto it = row.recall_std.find(k); it != row.recall_std.end())
                out += detail::fmt_double(it->second);
        }
        out += "\n";
    }
    return out;
}

inline nlohmann::json report_json(std::span<const ReportRow> rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(r.to_json());
    return {{"schema", "method,pairs,direction,r1,r1_std,r5,r5_std,r10,r10_std"},
            {"rows", arr}};
}

inline std::vector<ReportRow> report_from_json(const nlohmann::json& j) {
    std::vector<ReportRow> rows;
    for (const auto& r : j.at("rows")) rows.push_back(ReportRow::from_json(r));
    return rows;
}

} // namespace bitraj
