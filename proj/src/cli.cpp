#include "lbp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lbp/checkin.hpp"
#include "lbp/context.hpp"
#include "lbp/evaluator.hpp"
#include "lbp/geo.hpp"
#include "lbp/model.hpp"
#include "lbp/synth.hpp"
#include "lbp/trainer.hpp"

namespace lbp::cli {

namespace {

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << content;
}

// Reproducibility manifest next to an output file: the resolved flag set
// that produced it.
void write_manifest(const std::string& output_path, const std::string& subcommand,
                    const nlohmann::json& flags) {
    nlohmann::json m;
    m["subcommand"] = subcommand;
    m["flags"] = flags;
    m["output"] = output_path;
    write_text_file(output_path + ".manifest.json", m.dump(2) + "\n");
}

void require_input(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw CLI::ValidationError("input", "file not found: " + path);
}

struct CorpusFlags {
    std::string input;
    std::size_t min_checkins = 10;

    void attach(CLI::App* cmd) {
        cmd->add_option("--input", input, "check-in corpus file")->required();
        cmd->add_option("--min-checkins", min_checkins,
                        "drop users with fewer check-ins");
    }
    Dataset load() const {
        require_input(input);
        return ingest_file(input, min_checkins);
    }
    nlohmann::json json() const {
        return {{"input", input}, {"min_checkins", min_checkins}};
    }
};

std::string format_g6(double v) {
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s.precision(6);
    s << v;
    return s.str();
}

int run_impl(const std::vector<std::string>& args) {
    CLI::App app{"next point-of-interest recommender"};
    app.require_subcommand(1);

    // ---- ingest ----
    auto* ingest_cmd = app.add_subcommand("ingest", "filter and normalize a corpus");
    CorpusFlags ingest_flags;
    ingest_flags.attach(ingest_cmd);
    std::string ingest_out;
    ingest_cmd->add_option("--output", ingest_out, "normalized corpus")->required();

    // ---- stats ----
    auto* stats_cmd = app.add_subcommand("stats", "descriptive corpus statistics");
    CorpusFlags stats_flags;
    stats_flags.attach(stats_cmd);
    double stats_utc_offset = 0.0;
    std::string stats_out;
    stats_cmd->add_option("--utc-offset", stats_utc_offset, "hours added to UTC");
    stats_cmd->add_option("--output", stats_out, "report basename (writes .txt/.json)")
        ->required();

    // ---- split ----
    auto* split_cmd = app.add_subcommand("split", "chronological train/test split");
    CorpusFlags split_flags;
    split_flags.attach(split_cmd);
    double split_fraction = 0.8;
    std::string split_train_out, split_test_out;
    split_cmd->add_option("--fraction", split_fraction, "train fraction in (0,1)");
    split_cmd->add_option("--output-train", split_train_out)->required();
    split_cmd->add_option("--output-test", split_test_out)->required();

    // ---- fit-spatial ----
    auto* fit_cmd = app.add_subcommand("fit-spatial",
                                       "power-law fit of displacement vs frequency");
    CorpusFlags fit_flags;
    fit_flags.attach(fit_cmd);
    double fit_cutoff = 50.0;
    std::size_t fit_bins = 32;
    double fit_min_km = 0.01;
    std::string fit_out;
    fit_cmd->add_option("--max-distance", fit_cutoff, "fit cutoff in km");
    fit_cmd->add_option("--bins", fit_bins, "log-spaced distance bins");
    fit_cmd->add_option("--output", fit_out, "fit report (json)")->required();

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    SynthConfig synth_cfg;
    std::string synth_out, synth_truth_out;
    synth_cmd->add_option("--seed", synth_cfg.seed);
    synth_cmd->add_option("--users", synth_cfg.n_users);
    synth_cmd->add_option("--pois", synth_cfg.n_pois);
    synth_cmd->add_option("--categories", synth_cfg.n_categories);
    synth_cmd->add_option("--events", synth_cfg.events_per_user);
    synth_cmd->add_option("--k-true", synth_cfg.K_true);
    synth_cmd->add_option("--d-true", synth_cfg.D_true);
    synth_cmd->add_option("--sharpness", synth_cfg.gate_sharpness);
    synth_cmd->add_option("--extent-km", synth_cfg.geo_extent_km);
    synth_cmd->add_option("--factor-scale", synth_cfg.factor_scale);
    synth_cmd->add_option("--rho", synth_cfg.rho_true);
    synth_cmd->add_option("--light-events", synth_cfg.light_events_per_user);
    synth_cmd->add_option("--light-fraction", synth_cfg.light_user_fraction);
    synth_cmd->add_flag("--opposing-cohorts", synth_cfg.opposing_gate_cohorts);
    synth_cmd->add_flag("--spatial-kernel", synth_cfg.spatial_kernel_only);
    synth_cmd->add_option("--pool", synth_cfg.candidate_pool);
    synth_cmd->add_option("--output", synth_out, "corpus file")->required();
    synth_cmd->add_option("--truth-model", synth_truth_out,
                          "also write the planted model");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a GPDM or PPDM model");
    CorpusFlags train_flags;
    train_flags.attach(train_cmd);
    TrainConfig train_cfg;
    std::string train_mode = "gpdm";
    double train_fraction = 0.8;
    double train_max_gap = 0.0;
    std::string train_out;
    train_cmd->add_option("--model", train_mode, "gpdm or ppdm")
        ->check(CLI::IsMember({"gpdm", "ppdm"}));
    train_cmd->add_option("--fraction", train_fraction,
                          "train on the earliest fraction of each user");
    train_cmd->add_option("--patterns", train_cfg.K);
    train_cmd->add_option("--dims", train_cfg.D);
    train_cmd->add_option("--lambda", train_cfg.lambda_theta);
    train_cmd->add_option("--learning-rate", train_cfg.learning_rate);
    train_cmd->add_option("--epochs", train_cfg.epochs);
    train_cmd->add_option("--negatives", train_cfg.negatives_per_positive);
    train_cmd->add_option("--seed", train_cfg.seed);
    train_cmd->add_option("--tol", train_cfg.convergence_tol);
    train_cmd->add_option("--time-bins", train_cfg.time_bins);
    train_cmd->add_option("--utc-offset", train_cfg.utc_offset_hours);
    train_cmd->add_option("--max-gap-hours", train_max_gap,
                          "drop transitions with a larger gap (0 = keep all)");
    train_cmd->add_flag("--full-batch", train_cfg.full_batch);
    train_cmd->add_option("--output", train_out, "model file")->required();

    // ---- evaluate ----
    auto* eval_cmd = app.add_subcommand("evaluate", "precision metrics on a split");
    CorpusFlags eval_flags;
    eval_flags.attach(eval_cmd);
    double eval_fraction = 0.8;
    std::vector<std::string> eval_models;
    std::vector<int> eval_cutoffs = {1, 5, 10, 20};
    bool eval_with_mf = false;
    int eval_mf_dims = 60;
    int eval_mf_epochs = 30;
    std::uint64_t eval_seed = 1;
    std::string eval_out;
    eval_cmd->add_option("--fraction", eval_fraction);
    eval_cmd->add_option("--model", eval_models, "model file (repeatable)")
        ->required();
    eval_cmd->add_option("--cutoffs", eval_cutoffs, "top-N cutoffs");
    eval_cmd->add_flag("--with-mf-baseline", eval_with_mf,
                       "also train and score an MF-BPR baseline");
    eval_cmd->add_option("--mf-dims", eval_mf_dims);
    eval_cmd->add_option("--mf-epochs", eval_mf_epochs);
    eval_cmd->add_option("--seed", eval_seed, "seed for the baseline");
    eval_cmd->add_option("--output", eval_out,
                         "report basename (writes .txt/.json/.users.tsv)")
        ->required();

    // ---- recommend ----
    auto* rec_cmd = app.add_subcommand("recommend", "top-N next POIs for one query");
    CorpusFlags rec_flags;
    rec_flags.attach(rec_cmd);
    std::string rec_model, rec_user, rec_prev, rec_category, rec_out;
    std::int64_t rec_time = 0;
    int rec_topn = 10;
    double rec_fraction = 0.8;
    rec_cmd->add_option("--fraction", rec_fraction,
                        "train fraction the model was fitted on");
    rec_cmd->add_option("--model", rec_model, "model file")->required();
    rec_cmd->add_option("--user", rec_user, "user id")->required();
    rec_cmd->add_option("--prev-poi", rec_prev, "current POI id")->required();
    rec_cmd->add_option("--time", rec_time, "epoch seconds of the current check-in")
        ->required();
    rec_cmd->add_option("--category", rec_category, "current POI category");
    rec_cmd->add_option("--topn", rec_topn);
    rec_cmd->add_option("--output", rec_out, "also write the list to a file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (*ingest_cmd) {
        const auto ds = ingest_flags.load();
        write_text_file(ingest_out, to_checkin_text(ds));
        auto flags = ingest_flags.json();
        write_manifest(ingest_out, "ingest", flags);
        std::cout << "ingested " << ds.num_users() << " users, " << ds.num_pois()
                  << " POIs, " << ds.num_events() << " check-ins\n";
        return kOk;
    }

    if (*stats_cmd) {
        const auto ds = stats_flags.load();
        const auto report = compute_stats(ds, stats_utc_offset);
        write_text_file(stats_out + ".txt", stats_to_text(report));
        write_text_file(stats_out + ".json", stats_to_json(report));
        auto flags = stats_flags.json();
        flags["utc_offset"] = stats_utc_offset;
        write_manifest(stats_out + ".txt", "stats", flags);
        std::cout << "tensor_sparsity " << format_g6(report.tensor_sparsity) << "\n";
        return kOk;
    }

    if (*split_cmd) {
        const auto ds = split_flags.load();
        const auto split = chronological_split(ds, split_fraction);
        write_text_file(split_train_out, to_checkin_text(split.train));
        write_text_file(split_test_out, to_checkin_text(split.test));
        auto flags = split_flags.json();
        flags["fraction"] = split_fraction;
        write_manifest(split_train_out, "split", flags);
        std::cout << "train events " << split.train.num_events() << ", test events "
                  << split.test.num_events() << "\n";
        return kOk;
    }

    if (*fit_cmd) {
        const auto ds = fit_flags.load();
        const auto transitions = build_transitions(ds);
        std::vector<double> distances;
        distances.reserve(transitions.size());
        for (const auto& t : transitions) distances.push_back(t.distance_km);
        const auto binned = bin_distances_log(distances, fit_bins, fit_min_km, fit_cutoff);
        const auto fit = fit_power_law(binned, fit_cutoff);
        nlohmann::json j;
        j["a"] = fit.a;
        j["k"] = fit.k;
        j["r_squared"] = fit.r_squared;
        j["max_distance_km"] = fit.max_distance_km;
        j["bins"] = binned;
        write_text_file(fit_out, j.dump(2) + "\n");
        auto flags = fit_flags.json();
        flags["max_distance"] = fit_cutoff;
        flags["bins"] = fit_bins;
        write_manifest(fit_out, "fit-spatial", flags);
        std::cout << "a " << format_g6(fit.a) << ", k " << format_g6(fit.k)
                  << ", r2 " << format_g6(fit.r_squared) << "\n";
        return kOk;
    }

    if (*synth_cmd) {
        const auto result = generate(synth_cfg);
        write_text_file(synth_out, to_checkin_text(result.dataset));
        if (!synth_truth_out.empty()) save_model(result.truth, synth_truth_out);
        nlohmann::json flags;
        flags["seed"] = synth_cfg.seed;
        flags["users"] = synth_cfg.n_users;
        flags["pois"] = synth_cfg.n_pois;
        flags["categories"] = synth_cfg.n_categories;
        flags["events"] = synth_cfg.events_per_user;
        flags["k_true"] = synth_cfg.K_true;
        flags["d_true"] = synth_cfg.D_true;
        flags["sharpness"] = synth_cfg.gate_sharpness;
        flags["extent_km"] = synth_cfg.geo_extent_km;
        flags["factor_scale"] = synth_cfg.factor_scale;
        flags["rho"] = synth_cfg.rho_true;
        flags["light_events"] = synth_cfg.light_events_per_user;
        flags["light_fraction"] = synth_cfg.light_user_fraction;
        flags["opposing_cohorts"] = synth_cfg.opposing_gate_cohorts;
        flags["spatial_kernel"] = synth_cfg.spatial_kernel_only;
        flags["pool"] = synth_cfg.candidate_pool;
        write_manifest(synth_out, "synth", flags);
        std::cout << "generated " << result.dataset.num_events() << " check-ins\n";
        return kOk;
    }

    if (*train_cmd) {
        const auto ds = train_flags.load();
        const auto split = chronological_split(ds, train_fraction);
        train_cfg.mode = train_mode == "ppdm" ? TrainMode::ppdm : TrainMode::gpdm;
        std::optional<double> gap;
        if (train_max_gap > 0.0) gap = train_max_gap;
        const auto result = train(split.train, train_cfg, gap);
        save_model(result.model, train_out);
        write_text_file(train_out + ".trace.tsv", trace_to_text(result.trace));
        auto flags = train_flags.json();
        flags["model"] = train_mode;
        flags["fraction"] = train_fraction;
        flags["patterns"] = train_cfg.K;
        flags["dims"] = train_cfg.D;
        flags["lambda"] = train_cfg.lambda_theta;
        flags["learning_rate"] = train_cfg.learning_rate;
        flags["epochs"] = train_cfg.epochs;
        flags["negatives"] = train_cfg.negatives_per_positive;
        flags["seed"] = train_cfg.seed;
        flags["tol"] = train_cfg.convergence_tol;
        flags["time_bins"] = train_cfg.time_bins;
        flags["utc_offset"] = train_cfg.utc_offset_hours;
        flags["max_gap_hours"] = train_max_gap;
        flags["full_batch"] = train_cfg.full_batch;
        write_manifest(train_out, "train", flags);
        if (result.diverged) {
            std::cout << "training diverged; wrote last good checkpoint\n";
        } else {
            std::cout << "trained " << train_mode << " for " << result.trace.size()
                      << " epochs, final objective "
                      << format_g6(result.trace.empty()
                                       ? 0.0
                                       : result.trace.back().audit_objective)
                      << "\n";
        }
        return kOk;
    }

    if (*eval_cmd) {
        const auto ds = eval_flags.load();
        const auto split = chronological_split(ds, eval_fraction);
        const auto split_fp = split.train.fingerprint();

        std::vector<LbpRankingModel> lbp_models;
        for (const auto& path : eval_models) {
            require_input(path);
            auto params = load_model(path);
            if (params.dataset_fingerprint != split_fp)
                throw std::runtime_error(
                    "fingerprint mismatch: model " + path +
                    " was not trained on this corpus/split combination");
            lbp_models.emplace_back(std::move(params),
                                    std::filesystem::path(path).stem().string());
        }
        const FeatureSchema schema = lbp_models.front().params().schema;

        std::optional<MfBprModel> mf;
        if (eval_with_mf) {
            TrainConfig mf_cfg;
            mf_cfg.D = eval_mf_dims;
            mf_cfg.epochs = eval_mf_epochs;
            mf_cfg.seed = eval_seed;
            mf_cfg.lambda_theta = 0.01;
            mf = train_mf_bpr_baseline(split.train, mf_cfg);
        }

        std::vector<const RankingModel*> models;
        for (const auto& m : lbp_models) models.push_back(&m);
        if (mf) models.push_back(&*mf);

        auto reports = evaluate_run(models, split, schema, eval_cutoffs);
        write_text_file(eval_out + ".txt", eval_reports_to_text(reports));
        write_text_file(eval_out + ".json", eval_reports_to_json(reports));
        write_text_file(eval_out + ".users.tsv",
                        per_user_breakdown_to_text(reports.front()));
        auto flags = eval_flags.json();
        flags["fraction"] = eval_fraction;
        flags["models"] = eval_models;
        flags["cutoffs"] = eval_cutoffs;
        flags["with_mf_baseline"] = eval_with_mf;
        flags["seed"] = eval_seed;
        write_manifest(eval_out + ".txt", "evaluate", flags);
        std::cout << eval_reports_to_text(reports);
        return kOk;
    }

    if (*rec_cmd) {
        const auto ds = rec_flags.load();
        require_input(rec_model);
        const auto params = load_model(rec_model);
        const auto train_fp = chronological_split(ds, rec_fraction).train.fingerprint();
        if (params.dataset_fingerprint != train_fp &&
            params.dataset_fingerprint != ds.fingerprint())
            throw std::runtime_error(
                "fingerprint mismatch: model was not trained on this corpus");

        const auto uit = ds.user_index.find(rec_user);
        if (uit == ds.user_index.end())
            throw std::runtime_error("unknown user id: " + rec_user);
        const auto pit = ds.poi_index.find(rec_prev);
        if (pit == ds.poi_index.end())
            throw std::runtime_error("unknown POI id: " + rec_prev);
        int category = -1;
        if (!rec_category.empty()) {
            const auto cit = ds.category_index.find(rec_category);
            if (cit == ds.category_index.end())
                throw std::runtime_error("unknown category: " + rec_category);
            category = cit->second;
        }

        const auto ctx = featurize_at(rec_time, category, params.schema);
        LbpRankingModel model(params);
        const auto top = recommend_top_n(model, uit->second, pit->second, ctx,
                                         rec_topn, params.poi_lat, params.poi_lon);
        std::ostringstream lines;
        for (int poi : top) {
            const double d = params.poi_distance_km(pit->second, poi);
            const double s =
                fused_score(params, uit->second, pit->second, poi, ctx, d);
            lines << ds.poi_ids[poi] << '\t' << format_g6(s) << '\n';
        }
        std::cout << lines.str();
        if (!rec_out.empty()) {
            write_text_file(rec_out, lines.str());
            nlohmann::json flags = rec_flags.json();
            flags["model"] = rec_model;
            flags["user"] = rec_user;
            flags["prev_poi"] = rec_prev;
            flags["time"] = rec_time;
            flags["category"] = rec_category;
            flags["topn"] = rec_topn;
            write_manifest(rec_out, "recommend", flags);
        }
        return kOk;
    }

    return kUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        return run_impl(args);
    } catch (const CLI::CallForHelp& e) {
        std::cout << e.what() << "\n";
        return kOk;
    } catch (const CLI::ValidationError& e) {
        const std::string what = e.what();
        if (what.find("file not found") != std::string::npos) {
            std::cerr << "error: missing-input: " << what << "\n";
            return kMissingInput;
        }
        std::cerr << "error: usage: " << what << "\n";
        return kUsage;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return kUsage;
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        if (what.find("fingerprint mismatch") != std::string::npos) {
            std::cerr << "error: mismatch: " << what << "\n";
            return kMismatch;
        }
        if (what.find("parse error") != std::string::npos ||
            what.find("deserialize") != std::string::npos ||
            what.find("cannot open") != std::string::npos) {
            std::cerr << "error: format: " << what << "\n";
            return kFormat;
        }
        std::cerr << "error: runtime: " << what << "\n";
        return kError;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return kError;
    }
}

}  // namespace lbp::cli
