#pragma once

// Subcommands: gen, train, eval, sample-negatives, inspect-midzone.
// Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dqe/config.hpp"
#include "dqe/corpus.hpp"
#include "dqe/eval.hpp"
#include "dqe/synth.hpp"
#include "dqe/train.hpp"
#include "dqe/trns.hpp"

namespace dqe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<std::string> attribute_labels(const std::string& prefix, std::size_t n,
                                                 const std::vector<std::string>& defaults) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(i < defaults.size() ? defaults[i] : prefix + std::to_string(i));
    return out;
}

/// labels.csv -> per-row (color, shape) label strings, aligned to the corpus.
inline std::vector<std::pair<std::string, std::string>> read_labels(const std::string& path,
                                                                     const EmbeddingMatrix& corpus) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open labels file", path);
    std::vector<std::pair<std::string, std::string>> out(corpus.count());
    std::vector<bool> seen(corpus.count(), false);
    std::string line;
    std::getline(in, line);
    if (line != "item_id,color,shape") throw Error(Errc::BadFormat, "labels header must be item_id,color,shape", path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, color, shape;
        if (!std::getline(ss, id, ',') || !std::getline(ss, color, ',') || !std::getline(ss, shape))
            throw Error(Errc::BadFormat, "malformed labels row", line);
        const auto row = corpus.lookup(id);
        out[row] = {color, shape};
        seen[row] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw Error(Errc::BadFormat, "labels file misses an item", corpus.id(i));
    return out;
}

struct Cli {
    CLI::App app{"Composed-query retrieval training engine"};

    // gen
    CLI::App* gen = nullptr;
    std::string gen_out;
    std::size_t gen_dim = 0;
    std::size_t gen_items = 2000;
    std::size_t gen_train = 500;
    std::size_t gen_eval = 200;
    double gen_noise = 0.1;
    std::uint64_t gen_seed = 0;
    std::size_t gen_colors = 5;
    std::size_t gen_shapes = 5;
    std::size_t gen_nuisance = 16;
    std::string gen_flip = "mixed";
    std::size_t gen_subset = 6;
    double gen_identity_scale = 0.5;

    // train
    CLI::App* train = nullptr;
    std::string train_config;
    std::map<std::string, std::string> train_overrides;
    bool train_no_normalize = false;

    // eval
    CLI::App* eval = nullptr;
    std::string eval_manifest;
    std::string eval_checkpoint;
    std::string eval_out = ".";
    std::string eval_labels;
    bool eval_subset = false;
    bool eval_keep_ref = false;
    bool eval_no_normalize = false;

    // sample-negatives and inspect-midzone share these
    CLI::App* sample = nullptr;
    CLI::App* inspect = nullptr;
    std::string mz_manifest;
    std::string mz_checkpoint;
    std::string mz_out;
    std::string mz_mode = "quantile";
    double mz_alpha = 0.20;
    double mz_beta = 0.80;
    std::uint64_t mz_seed = 0;
    double mz_init_scale = 0.05;
    bool mz_no_normalize = false;

    Cli() {
        app.require_subcommand(1);

        gen = app.add_subcommand("gen", "Generate a synthetic attribute world");
        gen->add_option("--out", gen_out, "Output directory")->required();
        gen->add_option("--dim", gen_dim, "Embedding dimension")->required();
        gen->add_option("--items", gen_items, "Corpus size");
        gen->add_option("--train-queries", gen_train, "Training triplets");
        gen->add_option("--eval-queries", gen_eval, "Evaluation triplets");
        gen->add_option("--noise", gen_noise, "Per-coordinate noise sigma");
        gen->add_option("--seed", gen_seed, "Root seed");
        gen->add_option("--colors", gen_colors, "Number of color values");
        gen->add_option("--shapes", gen_shapes, "Number of shape values");
        gen->add_option("--nuisance", gen_nuisance, "Identity subspace size");
        gen->add_option("--flip", gen_flip, "color, shape, both or mixed");
        gen->add_option("--subset-size", gen_subset, "Items per evaluation subset (0 = none)");
        gen->add_option("--identity-scale", gen_identity_scale, "Norm of identity vectors");

        train = app.add_subcommand("train", "Train a composition head");
        train->add_option("--config", train_config, "JSON config file");
        train->add_flag("--no-normalize", train_no_normalize, "Keep corpus rows unnormalized");
        for (const auto& key : config_keys()) {
            std::string flag = key.name;
            std::replace(flag.begin(), flag.end(), '_', '-');
            std::string names = "--" + flag;
            if (std::string(key.name) == "total_epochs") names += ",--epochs";
            if (std::string(key.name) == "out_dir") names += ",--out";
            train->add_option(names, train_overrides[key.name], std::string("Override ") + key.name);
        }

        eval = app.add_subcommand("eval", "Evaluate a checkpoint");
        eval->add_option("--manifest", eval_manifest, "Evaluation manifest")->required();
        eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
        eval->add_option("--out", eval_out, "Output directory");
        eval->add_option("--labels", eval_labels, "labels.csv for mAP relevance");
        eval->add_flag("--subset", eval_subset, "Compute Recall_subset@K");
        eval->add_flag("--keep-reference", eval_keep_ref, "Do not exclude the reference item");
        eval->add_flag("--no-normalize", eval_no_normalize, "Keep corpus rows unnormalized");

        sample = app.add_subcommand("sample-negatives", "Draw one mid-zone negative per query");
        inspect = app.add_subcommand("inspect-midzone", "Per-query mid-zone statistics");
        for (CLI::App* sub : {sample, inspect}) {
            sub->add_option("--manifest", mz_manifest, "Dataset manifest")->required();
            sub->add_option("--checkpoint", mz_checkpoint, "Checkpoint (default: freshly initialized head)");
            sub->add_option("--out", mz_out, "Output path")->required();
            sub->add_option("--mode", mz_mode, "quantile or absolute");
            sub->add_option("--alpha", mz_alpha, "Band lower bound");
            sub->add_option("--beta", mz_beta, "Band upper bound");
            sub->add_option("--seed", mz_seed, "Seed for sampling and the fallback head");
            sub->add_option("--init-scale", mz_init_scale, "Init scale of the fallback head");
            sub->add_flag("--no-normalize", mz_no_normalize, "Keep corpus rows unnormalized");
        }
    }
};

inline int cmd_gen(const Cli& c, std::ostream& out) {
    AttributeSchema schema;
    schema.color_values = attribute_labels("color", c.gen_colors, schema.color_values);
    schema.shape_values = attribute_labels("shape", c.gen_shapes, schema.shape_values);
    schema.nuisance_dim = c.gen_nuisance;
    const auto flip = parse_flip(c.gen_flip);
    WorldOptions opt;
    opt.identity_scale = c.gen_identity_scale;
    if (c.gen_items < 2) throw Error(Errc::InvalidConfig, "--items must be >= 2");
    const auto world = generate_world(schema, c.gen_items, c.gen_dim, c.gen_noise, derive_seed(c.gen_seed, "world"), opt);
    const auto train = generate_triplets(world, c.gen_train, flip, derive_seed(c.gen_seed, "train"), c.gen_subset);
    const auto eval = generate_triplets(world, c.gen_eval, flip, derive_seed(c.gen_seed, "eval"), c.gen_subset);

    const fs::path dir(c.gen_out);
    fs::create_directories(dir);
    write_corpus((dir / "corpus.emb").string(), world.corpus);
    write_triplets((dir / "train.jsonl").string(), train);
    write_triplets((dir / "eval.jsonl").string(), eval);
    write_text(dir / "labels.csv", labels_csv(world));
    write_manifest((dir / "train.manifest.json").string(), "corpus.emb", "train.jsonl", c.gen_dim, Split::train);
    write_manifest((dir / "eval.manifest.json").string(), "corpus.emb", "eval.jsonl", c.gen_dim, Split::test);
    out << "wrote " << world.corpus.count() << " items, " << train.size() << " train / " << eval.size()
        << " eval triplets to " << dir.string() << "\n";
    return kExitOk;
}

inline RunConfig resolve_run_config(const Cli& c) {
    nlohmann::json j = nlohmann::json::object();
    if (!c.train_config.empty()) j = read_config_file(c.train_config);
    if (!j.is_object()) throw Error(Errc::InvalidConfig, "config must be a JSON object");
    for (const auto& key : config_keys()) {
        const auto* opt = c.train->get_option_no_throw("--" + [&] {
            std::string f = key.name;
            std::replace(f.begin(), f.end(), '_', '-');
            return f;
        }());
        if (opt && opt->count() > 0) j[key.name] = coerce_value(key, c.train_overrides.at(key.name));
    }
    if (c.train_no_normalize) j["normalize"] = false;
    // schedule total follows total_epochs
    auto rc = run_config_from_json(j);
    if (rc.manifest.empty()) throw Error(Errc::InvalidConfig, "manifest is required (--manifest or config key)");
    return rc;
}

inline int cmd_train(const Cli& c, std::ostream& out) {
    const auto rc = resolve_run_config(c);
    const auto ds = load_dataset(rc.manifest, rc.normalize);
    std::optional<TrainState> resume;
    if (!rc.resume.empty()) resume = load_checkpoint(rc.resume);
    const auto res = dqe::train(rc.train, ds.triplets, ds.corpus, std::move(resume));

    const fs::path dir(rc.out_dir);
    fs::create_directories(dir);
    save_checkpoint((dir / "checkpoint.dqe").string(), res.state);
    write_text(dir / "train_log.csv", training_log_csv(res.steps));
    write_text(dir / "refresh_log.csv", refresh_log_csv(res.refreshes));
    write_text(dir / "size_trend.csv", size_trend_csv(res.refreshes));
    out << "trained to epoch " << res.state.epoch << " (" << res.state.step << " steps, " << res.state.refresh_count
        << " rebuilds); final l_total " << (res.steps.empty() ? 0.0 : res.steps.back().loss.l_total) << "\n";
    return kExitOk;
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
    auto block = [](const std::map<std::size_t, double>& m, bool percent) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : m) j[std::to_string(k)] = percent ? to_percent(v) : v;
        return j;
    };
    nlohmann::json j;
    j["recall_at"] = block(r.recall_at, false);
    j["recall_subset_at"] = block(r.recall_subset_at, false);
    j["map_at"] = block(r.map_at, false);
    j["average"] = r.average ? nlohmann::json(*r.average) : nlohmann::json(nullptr);
    j["percent"] = {{"recall_at", block(r.recall_at, true)},
                    {"recall_subset_at", block(r.recall_subset_at, true)},
                    {"map_at", block(r.map_at, true)},
                    {"average", r.average ? nlohmann::json(to_percent(*r.average)) : nlohmann::json(nullptr)}};
    return j;
}

inline int cmd_eval(const Cli& c, std::ostream& out) {
    const auto ds = load_dataset(c.eval_manifest, !c.eval_no_normalize);
    if (c.eval_subset) {
        for (std::size_t i = 0; i < ds.triplets.size(); ++i)
            if (!ds.triplets[i].subset_ids)
                throw Error(Errc::MissingSubset, "--subset given but a triplet has no subset_ids",
                            "query=" + std::to_string(i));
    }
    const auto state = load_checkpoint(c.eval_checkpoint);
    state.head.check(ds.corpus.dim());

    EvalOptions opt;
    opt.use_subsets = c.eval_subset;
    opt.exclude_reference = !c.eval_keep_ref;
    opt.threads = default_threads();
    std::vector<std::set<std::size_t>> relevant;
    if (!c.eval_labels.empty()) {
        const auto labels = read_labels(c.eval_labels, ds.corpus);
        for (const auto& t : ds.triplets) {
            std::set<std::size_t> rel;
            for (std::size_t j = 0; j < labels.size(); ++j)
                if (labels[j] == labels[t.target_row]) rel.insert(j);
            relevant.push_back(std::move(rel));
        }
    }
    const auto res = evaluate_model(state.head, state.weights, ds.triplets, ds.corpus, opt,
                                    relevant.empty() ? nullptr : &relevant);

    const fs::path dir(c.eval_out);
    fs::create_directories(dir);
    write_text(dir / "metrics.json", metrics_json(res.report).dump(2) + "\n");
    std::string csv = "query_index,target_id,target_rank,subset_rank\n";
    for (const auto& r : res.ranks)
        csv += std::to_string(r.query_index) + "," + ds.triplets[r.query_index].target_id + "," +
               std::to_string(r.target_rank) + "," + (r.subset_rank ? std::to_string(*r.subset_rank) : "") + "\n";
    write_text(dir / "ranks.csv", csv);
    out << "R@1 " << to_percent(res.report.recall_at.at(1)) << "  R@5 " << to_percent(res.report.recall_at.at(5))
        << "\n";
    return kExitOk;
}

struct MidzoneInputs {
    Dataset ds;
    CompositionHead head;
    AttributeWeights weights;
    MidZoneConfig cfg;
    int epoch = 0;
};

inline MidzoneInputs load_midzone_inputs(const Cli& c) {
    MidzoneInputs in;
    in.cfg = {parse_band_mode(c.mz_mode), c.mz_alpha, c.mz_beta};
    in.cfg.validate();
    in.ds = load_dataset(c.mz_manifest, !c.mz_no_normalize);
    if (!c.mz_checkpoint.empty()) {
        auto st = load_checkpoint(c.mz_checkpoint);
        st.head.check(in.ds.corpus.dim());
        in.head = std::move(st.head);
        in.weights = st.weights;
        in.epoch = st.epoch;
    } else {
        in.head = init_head(in.ds.corpus.dim(), derive_seed(c.mz_seed, "init"), c.mz_init_scale);
    }
    return in;
}

inline int cmd_sample_negatives(const Cli& c, std::ostream& out) {
    const auto in = load_midzone_inputs(c);
    const auto tables = score_queries(in.head, in.weights, in.ds.triplets, in.ds.corpus, default_threads());
    Rng rng(derive_seed(c.mz_seed, "negatives"));
    std::string csv = "query_index,negative_id,set_size\n";
    for (std::size_t i = 0; i < tables.size(); ++i) {
        const auto set = mid_zone(tables[i], in.cfg, in.epoch);
        const auto neg = sample_negative(set, tables[i], in.cfg, rng);
        csv += std::to_string(i) + "," + in.ds.corpus.id(neg) + "," + std::to_string(set.size()) + "\n";
    }
    const fs::path path(c.mz_out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, csv);
    out << "sampled " << tables.size() << " negatives\n";
    return kExitOk;
}

inline int cmd_inspect_midzone(const Cli& c, std::ostream& out) {
    const auto in = load_midzone_inputs(c);
    const auto tables = score_queries(in.head, in.weights, in.ds.triplets, in.ds.corpus, default_threads());
    std::vector<NegativeSet> sets;
    std::string csv = "query_index,s_tar,set_size,min_delta,max_delta\n";
    for (std::size_t i = 0; i < tables.size(); ++i) {
        sets.push_back(mid_zone(tables[i], in.cfg, in.epoch));
        const auto w = gap_window(sets.back(), tables[i]);
        csv += std::to_string(i) + "," + format_real(tables[i].s_tar) + "," + std::to_string(sets.back().size()) +
               "," + (w.empty() ? "" : format_real(w.lo)) + "," + (w.empty() ? "" : format_real(w.hi)) + "\n";
    }
    const fs::path dir(c.mz_out);
    fs::create_directories(dir);
    write_text(dir / "midzone.csv", csv);
    const double mean = sets.empty() ? 0.0 : log_set_size(sets);
    write_text(dir / "set_size_log.csv", "epoch,mean_set_size\n" + std::to_string(in.epoch) + "," + format_real(mean) + "\n");
    out << "mean set size " << mean << " over " << sets.size() << " queries\n";
    return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Cli c;
    try {
        c.app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << c.app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << c.app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const CLI::App* sub = c.app.get_subcommands().empty() ? &c.app : c.app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }
    try {
        if (c.gen->parsed()) return cmd_gen(c, out);
        if (c.train->parsed()) return cmd_train(c, out);
        if (c.eval->parsed()) return cmd_eval(c, out);
        if (c.sample->parsed()) return cmd_sample_negatives(c, out);
        if (c.inspect->parsed()) return cmd_inspect_midzone(c, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        switch (e.code()) {
            case Errc::InvalidConfig:
            case Errc::MissingSubset:
            case Errc::DimTooSmall: return kExitUsage;
            default: return kExitRuntime;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<const char*> argv{"dqe"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dqe::cli
