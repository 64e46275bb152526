// bitraj: seeded pipeline driver for paired-modality dataset co-distillation.
//
// Subcommands: gen-data, train-experts, select, distill, eval, report.
// Every command resolves its config, writes artifacts under --out, and
// finishes with a manifest.json naming each file and its digest. Outputs are
// byte-identical across reruns of the same config in single-threaded mode.
//
// Exit codes: 0 success, 2 config error, 3 data/format error, 4 numeric
// failure, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "bitraj/config.hpp"
#include "bitraj/coresets.hpp"
#include "bitraj/distill.hpp"
#include "bitraj/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw bitraj::DataFormatError("cannot open: " + p.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw bitraj::DataFormatError("cannot open for writing: " + p.string());
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json load_json(const fs::path& p) {
    try {
        return json::parse(slurp(p));
    } catch (const json::exception& e) {
        throw bitraj::ConfigError("bad JSON in " + p.string() + ": " + e.what());
    }
}

bitraj::RunConfig load_config(const fs::path& p) {
    return bitraj::RunConfig::from_json(load_json(p));
}

void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw bitraj::ConfigError("output directory " + dir.string() +
                                  " is not empty (use --force to overwrite)");
    fs::create_directories(dir);
}

// manifest.json is written last and lists every other artifact with its
// digest, so a byte-compare of manifests certifies a byte-identical run.
void write_manifest(const fs::path& dir, const std::string& command,
                    const std::string& config_digest) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    json listing = json::array();
    for (const auto& f : files) {
        const std::string bytes = slurp(f);
        listing.push_back({{"path", f.filename().string()},
                           {"bytes", bytes.size()},
                           {"digest", bitraj::digest_hex(bytes)}});
    }
    json manifest{{"command", command}, {"config_digest", config_digest}, {"files", listing}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_resolved_config(const fs::path& dir, const bitraj::RunConfig& cfg) {
    write_text(dir / "resolved_config.json", cfg.to_json().dump(2) + "\n");
}

bitraj::GeneratedData load_data_dir(const fs::path& dir) {
    bitraj::GeneratedData d;
    d.train = bitraj::load_dataset(dir / "train.bvld");
    d.val = bitraj::load_dataset(dir / "val.bvld");
    d.test = bitraj::load_dataset(dir / "test.bvld");
    return d;
}

std::size_t thread_budget(std::size_t jobs) {
    if (const char* env = std::getenv("BITRAJ_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) jobs = std::min<std::size_t>(jobs, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(jobs, 1);
}

// ---- subcommand bodies -----------------------------------------------------

int cmd_gen_data(const fs::path& config, const fs::path& out, bool force) {
    bitraj::RunConfig cfg = load_config(config);
    prepare_out_dir(out, force);
    auto data = bitraj::generate(cfg.datagen);
    bitraj::save_dataset(data.train, out / "train.bvld", cfg.datagen.to_json());
    bitraj::save_dataset(data.val, out / "val.bvld", cfg.datagen.to_json());
    bitraj::save_dataset(data.test, out / "test.bvld", cfg.datagen.to_json());
    write_resolved_config(out, cfg);
    write_manifest(out, "gen-data", cfg.digest());
    std::cout << "wrote 3 splits to " << out.string() << "\n";
    return 0;
}

int cmd_train_experts(const fs::path& config, const fs::path& data_dir, const fs::path& out,
                      bool force, std::size_t jobs) {
    bitraj::RunConfig cfg = load_config(config);
    prepare_out_dir(out, force);
    auto data = load_data_dir(data_dir);

    const std::size_t count = cfg.expert.num_trajectories;
    std::vector<std::string> names(count);
    for (std::size_t i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "expert_%03zu.btrj", i);
        names[i] = buf;
    }

    // each expert run is an isolated task: own graph, own RNG, atomic write
    jobs = thread_budget(jobs);
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                bitraj::TrainConfig tc = cfg.expert;
                tc.seed = cfg.expert.seed + i;
                bitraj::Trajectory t = bitraj::train_expert(data.train, cfg.model, tc);
                bitraj::save_trajectory(t, out / names[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(jobs, count); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    json losses = json::object();
    for (std::size_t i = 0; i < count; ++i) {
        bitraj::Trajectory t = bitraj::load_trajectory(out / names[i]);
        losses[names[i]] = t.loss_log;
    }
    write_text(out / "losses.json", losses.dump(2) + "\n");
    write_resolved_config(out, cfg);
    write_manifest(out, "train-experts", cfg.digest());
    std::cout << "wrote " << count << " trajectories to " << out.string() << "\n";
    return 0;
}

int cmd_select(const fs::path& config, const std::string& method, std::size_t m_override,
               const fs::path& data_dir, const fs::path& out, bool force) {
    bitraj::RunConfig cfg = load_config(config);
    prepare_out_dir(out, force);
    auto data = load_data_dir(data_dir);
    const std::size_t m = m_override > 0 ? m_override : cfg.coreset.m;

    std::vector<std::size_t> indices;
    if (method == "random") {
        indices = bitraj::random_select(data.train.size(), m, cfg.coreset.seed);
    } else if (method == "herding" || method == "kcenter") {
        bitraj::FeatureTable table =
            cfg.coreset.encoded_features
                ? bitraj::encoded_features(
                      data.train,
                      bitraj::VLModel::init(cfg.model, data.train.e_txt(), cfg.coreset.seed))
                : bitraj::concat_features(data.train);
        indices = method == "herding" ? bitraj::herding_select(table, m)
                                      : bitraj::kcenter_select(table, m, cfg.coreset.seed);
    } else if (method == "forgetting") {
        indices = bitraj::forgetting_select(data.train, cfg.model, cfg.expert, m);
    } else {
        throw bitraj::ConfigError("select: unknown method '" + method + "'");
    }

    json sel{{"method", method},
             {"m", m},
             {"seed", cfg.coreset.seed},
             {"config_digest", cfg.digest()},
             {"indices", indices}};
    write_text(out / "selection.json", sel.dump(2) + "\n");
    write_resolved_config(out, cfg);
    write_manifest(out, "select", cfg.digest());
    std::cout << method << " selected " << m << " pairs\n";
    return 0;
}

int cmd_distill(const fs::path& config, const std::string& method, const fs::path& data_dir,
                const fs::path& trajs_dir, const fs::path& out, bool force) {
    bitraj::RunConfig cfg = load_config(config);
    prepare_out_dir(out, force);
    auto data = load_data_dir(data_dir);

    bitraj::DistillResult result;
    if (method == "trajectory") {
        if (trajs_dir.empty())
            throw bitraj::ConfigError("distill: --trajs is required for the trajectory method");
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(trajs_dir))
            if (entry.path().extension() == ".btrj") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw bitraj::DataFormatError("distill: no .btrj files in " + trajs_dir.string());

        const std::string digest =
            bitraj::VLModel::init(cfg.model, data.train.e_txt(), 0).arch_digest();
        std::vector<bitraj::Trajectory> trajs;
        for (const auto& f : files) trajs.push_back(bitraj::load_trajectory(f, &digest));
        result = bitraj::distill(trajs, data.train, cfg.model, cfg.distill);
    } else if (method == "mmd") {
        result = bitraj::mmd_distill(data.train, cfg.model, cfg.distill);
    } else {
        throw bitraj::ConfigError("distill: unknown method '" + method + "'");
    }

    bitraj::save_distilled(result.set, out / "distilled.bdst");
    write_text(out / "loss_history.json", json(result.loss_history).dump() + "\n");
    write_resolved_config(out, cfg);
    write_manifest(out, "distill", cfg.digest());
    std::cout << method << " distilled " << result.set.pairs() << " pairs (alpha "
              << result.set.alpha << ")\n";
    return 0;
}

int cmd_eval(const fs::path& config, const std::string& set_spec, const fs::path& data_dir,
             const fs::path& arch_file, std::size_t seeds_override, const std::string& label_flag,
             const fs::path& out, bool force) {
    bitraj::RunConfig cfg = load_config(config);
    prepare_out_dir(out, force);
    auto data = load_data_dir(data_dir);

    bitraj::TrainSet ts;
    std::string label;
    if (set_spec == "train") {
        std::vector<std::size_t> all(data.train.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        ts = bitraj::train_set_from(data.train, all);
        label = "Full";
    } else if (fs::path(set_spec).extension() == ".bdst") {
        bitraj::DistilledSet d = bitraj::load_distilled(set_spec);
        ts = bitraj::train_set_from(d);
        const std::string method = d.provenance.value("method", "trajectory");
        label = method == "mmd" ? "DM" : "Dist";
    } else if (fs::path(set_spec).extension() == ".json") {
        json sel = load_json(set_spec);
        auto indices = sel.at("indices").get<std::vector<std::size_t>>();
        ts = bitraj::train_set_from(data.train, indices);
        const std::map<std::string, std::string> letters{
            {"random", "R"}, {"herding", "H"}, {"kcenter", "K"}, {"forgetting", "F"}};
        const std::string method = sel.value("method", "?");
        label = letters.count(method) ? letters.at(method) : method;
    } else {
        throw bitraj::ConfigError("eval: --set must be 'train', a .bdst file or a selection "
                                  ".json, got '" +
                                  set_spec + "'");
    }
    if (!label_flag.empty()) label = label_flag;

    bitraj::ModelConfig arch = cfg.model;
    if (!arch_file.empty()) arch = bitraj::parse_backbone(load_json(arch_file), cfg.seed);

    bitraj::EvalSettings ev = cfg.eval;
    if (seeds_override > 0) ev.n_seeds = seeds_override;

    bitraj::RetrievalPair result =
        bitraj::evaluate_set(ts, arch, ev.train, data.test, ev.n_seeds, ev.ks, ev.seed);

    auto rows = bitraj::report_rows(label, ts.images.rows(), result);
    // only the file name: embedded absolute paths would break byte-identical
    // reruns from different working trees
    json report{{"rows", json::array()},
                {"set", fs::path(set_spec).filename().string()},
                {"arch_digest",
                 bitraj::VLModel::init(arch, data.test.e_txt(), 0).arch_digest()},
                {"config_digest", cfg.digest()},
                {"n_seeds", ev.n_seeds},
                {"tr", result.tr.to_json()},
                {"ir", result.ir.to_json()}};
    for (const auto& r : rows) report["rows"].push_back(r.to_json());
    write_text(out / "eval_report.json", report.dump(2) + "\n");
    write_resolved_config(out, cfg);
    write_manifest(out, "eval", cfg.digest());
    std::cout << label << " TR R@1 " << result.tr.recall.at(1) << ", IR R@1 "
              << result.ir.recall.at(1) << " over " << ev.n_seeds << " seeds\n";
    return 0;
}

int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out, bool force) {
    if (inputs.empty()) throw bitraj::ConfigError("report: at least one --inputs file required");
    prepare_out_dir(out, force);
    std::vector<bitraj::ReportRow> rows;
    for (const auto& p : inputs) {
        const json doc = load_json(p);
        for (const auto& r : doc.at("rows")) rows.push_back(bitraj::ReportRow::from_json(r));
    }
    write_text(out / "report.csv", bitraj::report_csv(rows));
    write_text(out / "report.json", bitraj::report_json(rows).dump(2) + "\n");
    write_manifest(out, "report", bitraj::digest_hex(bitraj::report_csv(rows)));
    std::cout << "merged " << rows.size() << " rows from " << inputs.size() << " reports\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-trajectory vision-language dataset distillation pipeline"};
    app.require_subcommand(1);

    std::string config, method, set_spec, label;
    std::string out, data_dir, trajs_dir, arch_file;
    std::vector<std::string> inputs;
    std::size_t jobs = 1, m_override = 0, seeds_override = 0;
    bool force = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
        if (needs_config)
            cmd->add_option("--config", config, "run config JSON")->required();
        cmd->add_option("--out", out, "output directory")->required();
        cmd->add_flag("--force", force, "overwrite a non-empty output directory");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the paired synthetic dataset");
    add_common(gen);

    CLI::App* experts = app.add_subcommand("train-experts", "train and store expert trajectories");
    add_common(experts);
    experts->add_option("--data", data_dir, "directory with train/val/test .bvld")->required();
    experts->add_option("--jobs", jobs, "concurrent expert tasks (capped by BITRAJ_THREADS)");

    CLI::App* select = app.add_subcommand("select", "coreset baseline selection");
    add_common(select);
    select->add_option("--data", data_dir, "dataset directory")->required();
    select->add_option("--method", method, "random | herding | kcenter | forgetting")->required();
    select->add_option("--m", m_override, "override the configured budget");

    CLI::App* dist = app.add_subcommand("distill", "distill synthetic pairs");
    add_common(dist);
    dist->add_option("--data", data_dir, "dataset directory")->required();
    dist->add_option("--method", method, "trajectory | mmd")->required();
    dist->add_option("--trajs", trajs_dir, "directory of .btrj expert trajectories");

    CLI::App* ev = app.add_subcommand("eval", "train students on a set and report recall");
    add_common(ev);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--set", set_spec, "'train', a .bdst file, or a selection .json")->required();
    ev->add_option("--arch", arch_file, "backbone JSON for cross-architecture evaluation");
    ev->add_option("--seeds", seeds_override, "override eval n_seeds");
    ev->add_option("--label", label, "override the method label in the report");

    CLI::App* rep = app.add_subcommand("report", "merge eval reports into one table");
    add_common(rep, false);
    rep->add_option("--inputs", inputs, "eval_report.json files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config, out, force);
        if (experts->parsed()) return cmd_train_experts(config, data_dir, out, force, jobs);
        if (select->parsed()) return cmd_select(config, method, m_override, data_dir, out, force);
        if (dist->parsed()) return cmd_distill(config, method, data_dir, trajs_dir, out, force);
        if (ev->parsed())
            return cmd_eval(config, set_spec, data_dir, arch_file, seeds_override, label, out,
                            force);
        if (rep->parsed()) {
            std::vector<fs::path> paths(inputs.begin(), inputs.end());
            return cmd_report(paths, out, force);
        }
    } catch (const bitraj::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
        case bitraj::Errc::config: return 2;
        case bitraj::Errc::data_format: return 3;
        case bitraj::Errc::numeric: return 4;
        case bitraj::Errc::logic: return 1;
        }
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
