// cmtf command-line tool: synthesize or ingest cohort bundles, train the
// coupled factorization (all-at-once or block-alternating), sweep the
// hyperparameter grid, evaluate checkpoints, emit phenotype reports, and
// compare methods across seeds.
//
// Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cmtf/pipeline.hpp"

namespace {

struct CommonFlags {
    std::uint64_t seed = 0;
    std::string method = "all_at_once";
    std::size_t workers = 1;
    std::string out;
    bool seed_set = false, method_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--seed", f.seed, "Seed for every stochastic choice in this command")
        ->each([&](const std::string&) { f.seed_set = true; });
    cmd->add_option("--method", f.method, "Model variant: all_at_once, als, als_bias")
        ->each([&](const std::string&) { f.method_set = true; });
    cmd->add_option("--workers", f.workers, "Concurrent worker threads for sweeps");
    cmd->add_option("--out", f.out, "Output directory")->required();
}

cmtf::json load_config_or_empty(const std::string& path) {
    if (path.empty()) return cmtf::json::object();
    return cmtf::detail::read_json_file(path);
}

void print_metrics_summary(const cmtf::json& manifest) {
    std::cout << "wrote " << manifest.value("command", "?") << " outputs";
    if (manifest.contains("metrics")) {
        const auto& m = manifest["metrics"];
        if (m.contains("final_total"))
            std::cout << "; final total loss " << m["final_total"].get<double>();
        if (m.contains("best"))
            std::cout << "; best cell rank=" << m["best"]["rank"]
                      << " lambda=" << m["best"]["lambda"];
        if (m.contains("imputation") && m["imputation"].contains("mae"))
            std::cout << "; imputation MAE " << m["imputation"]["mae"].get<double>();
    }
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled matrix-tensor factorization toolkit"};
    app.require_subcommand(1);

    // --- synth ---
    CommonFlags synth_flags;
    std::string synth_config;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort bundle");
    add_common(synth, synth_flags);
    synth->add_option("--config", synth_config, "SynthConfig JSON file");

    // --- ingest ---
    CommonFlags ingest_flags;
    cmtf::IngestOptions ingest_opt;
    auto* ingest_cmd = app.add_subcommand("ingest", "Build a bundle from long-format CSVs");
    add_common(ingest_cmd, ingest_flags);
    ingest_cmd->add_option("--temporal", ingest_opt.temporal_csv, "patient_id,feature,window,value CSV")
        ->required();
    ingest_cmd->add_option("--statics", ingest_opt.statics_csv, "patient_id,feature,value CSV")
        ->required();
    ingest_cmd->add_option("--labels", ingest_opt.labels_csv, "patient_id,outcome,value CSV")
        ->required();
    ingest_cmd->add_option("--schema", ingest_opt.schema_json, "Schema JSON (features, outcomes, windows)")
        ->required();
    bool no_preprocess = false;
    ingest_cmd->add_flag("--no-preprocess", no_preprocess, "Skip the preprocessing chain");
    bool pool_features = false;
    ingest_cmd->add_flag("--pool-timepoint", pool_features,
                         "Standardize each timepoint across all features instead of per feature");

    // --- train ---
    CommonFlags train_flags;
    std::string train_config, train_dataset;
    cmtf::TrainOptions train_opt;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a bundle");
    add_common(train_cmd, train_flags);
    train_cmd->add_option("--dataset", train_dataset, "Bundle directory")->required();
    train_cmd->add_option("--config", train_config, "TrainConfig/AlsConfig JSON file");
    double opt_rank = -1, opt_lambda = -1, opt_lr = -1, opt_l1 = -1;
    long long opt_steps = -1;
    train_cmd->add_option("--rank", opt_rank, "Decomposition rank (default 28)");
    train_cmd->add_option("--lambda", opt_lambda, "Classifier/reconstruction balance (default 0.7)");
    train_cmd->add_option("--lr", opt_lr, "Learning rate (default 0.01)");
    train_cmd->add_option("--l1", opt_l1, "Sparsity penalty (default 0.001)");
    train_cmd->add_option("--steps", opt_steps, "Maximum steps (default 5000)");

    // --- grid ---
    CommonFlags grid_flags;
    std::string grid_dataset, grid_spec_path, grid_base_path;
    double grid_holdout = 0.05;
    auto* grid_cmd = app.add_subcommand("grid", "Hyperparameter grid search");
    add_common(grid_cmd, grid_flags);
    grid_cmd->add_option("--dataset", grid_dataset, "Bundle directory")->required();
    grid_cmd->add_option("--grid", grid_spec_path, "GridSpec JSON (defaults to the full grid)");
    grid_cmd->add_option("--config", grid_base_path, "Base TrainConfig JSON");
    grid_cmd->add_option("--holdout", grid_holdout, "Fraction of observed cells to hide");

    // --- evaluate ---
    CommonFlags eval_flags;
    cmtf::EvaluateOptions eval_opt;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a bundle");
    add_common(eval_cmd, eval_flags);
    eval_cmd->add_option("--checkpoint", eval_opt.checkpoint_path, "Checkpoint JSON")->required();
    eval_cmd->add_option("--dataset", eval_opt.dataset_dir, "Bundle directory")->required();
    eval_cmd->add_option("--holdout", eval_opt.holdout_fraction,
                         "Fraction of observed cells to hide for imputation");
    bool no_retrain = false;
    eval_cmd->add_flag("--no-retrain", no_retrain,
                       "Score imputation with the loaded checkpoint instead of retraining");
    eval_cmd->add_option("--rf-threshold", eval_opt.rf_importance_threshold,
                         "Importance cutoff for the top-phenotype forests");
    eval_cmd->add_option("--rf-trees", eval_opt.forest.n_trees, "Trees per forest");

    // --- phenotypes ---
    CommonFlags phen_flags;
    cmtf::PhenotypesOptions phen_opt;
    auto* phen_cmd = app.add_subcommand("phenotypes", "Emit the phenotype report bundle");
    add_common(phen_cmd, phen_flags);
    phen_cmd->add_option("--checkpoint", phen_opt.checkpoint_path, "Checkpoint JSON")->required();
    phen_cmd->add_option("--dataset", phen_opt.dataset_dir, "Bundle directory")->required();
    phen_cmd->add_option("--threshold", phen_opt.display_threshold,
                         "Contribution display threshold");
    double phen_quantile = 0.75;
    phen_cmd->add_option("--member-quantile", phen_quantile,
                         "Membership rule: A[i,s] above this column quantile");
    bool phen_all = false;
    phen_cmd->add_flag("--members-all", phen_all, "Treat every patient as a member");

    // --- compare ---
    CommonFlags cmp_flags;
    std::string cmp_dataset, cmp_base_path, cmp_als_path;
    std::vector<std::uint64_t> cmp_seeds;
    std::vector<std::string> cmp_methods;
    double cmp_holdout = 0.05;
    auto* cmp_cmd = app.add_subcommand("compare", "Train each method across seeds and tabulate");
    add_common(cmp_cmd, cmp_flags);
    cmp_cmd->add_option("--dataset", cmp_dataset, "Bundle directory")->required();
    cmp_cmd->add_option("--seeds", cmp_seeds, "Training/holdout seeds (one run per seed)");
    cmp_cmd->add_option("--methods", cmp_methods, "Subset of all_at_once als als_bias");
    cmp_cmd->add_option("--config", cmp_base_path, "Base TrainConfig JSON");
    cmp_cmd->add_option("--als-config", cmp_als_path, "Base AlsConfig JSON");
    cmp_cmd->add_option("--holdout", cmp_holdout, "Fraction of observed cells to hide");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            cmtf::SynthOptions opt;
            opt.cfg = cmtf::synth_config_from_json(load_config_or_empty(synth_config));
            if (synth_flags.seed_set) opt.cfg.seed = synth_flags.seed;
            opt.out_dir = synth_flags.out;
            print_metrics_summary(cmtf::run_synth(opt));
        } else if (ingest_cmd->parsed()) {
            ingest_opt.out_dir = ingest_flags.out;
            ingest_opt.seed = ingest_flags.seed;
            ingest_opt.run_preprocess = !no_preprocess;
            ingest_opt.per_feature_timepoint = !pool_features;
            const auto manifest = cmtf::run_ingest(ingest_opt);
            for (const auto& w : manifest.value("warnings", std::vector<std::string>{}))
                std::cerr << "warning: " << w << '\n';
            print_metrics_summary(manifest);
        } else if (train_cmd->parsed()) {
            const auto cfg_json = load_config_or_empty(train_config);
            train_opt.train = cmtf::train_config_from_json(cfg_json);
            train_opt.als = cmtf::als_config_from_json(cfg_json);
            train_opt.method = train_flags.method;
            if (train_flags.seed_set) {
                train_opt.train.seed = train_flags.seed;
                train_opt.als.seed = train_flags.seed;
            }
            if (opt_rank >= 0) {
                train_opt.train.rank = static_cast<std::size_t>(opt_rank);
                train_opt.als.rank = static_cast<std::size_t>(opt_rank);
            }
            if (opt_lambda >= 0) {
                train_opt.train.lambda = opt_lambda;
                train_opt.als.lambda = opt_lambda;
            }
            if (opt_lr >= 0) {
                train_opt.train.learning_rate = opt_lr;
                train_opt.als.learning_rate = opt_lr;
            }
            if (opt_l1 >= 0) {
                train_opt.train.l1_weight = opt_l1;
                train_opt.als.l1_weight = opt_l1;
            }
            if (opt_steps >= 0)
                train_opt.train.max_steps = static_cast<std::size_t>(opt_steps);
            train_opt.dataset_dir = train_dataset;
            train_opt.out_dir = train_flags.out;
            print_metrics_summary(cmtf::run_train(train_opt));
        } else if (grid_cmd->parsed()) {
            cmtf::GridOptions opt;
            opt.dataset_dir = grid_dataset;
            opt.out_dir = grid_flags.out;
            opt.grid = grid_spec_path.empty()
                           ? cmtf::GridSpec::default_grid()
                           : cmtf::grid_spec_from_json(cmtf::detail::read_json_file(grid_spec_path));
            opt.base = cmtf::train_config_from_json(load_config_or_empty(grid_base_path));
            if (grid_flags.seed_set) {
                opt.base.seed = grid_flags.seed;
                opt.holdout_seed = grid_flags.seed;
            }
            opt.holdout_fraction = grid_holdout;
            opt.workers = grid_flags.workers;
            print_metrics_summary(cmtf::run_grid(opt));
        } else if (eval_cmd->parsed()) {
            eval_opt.out_dir = eval_flags.out;
            eval_opt.holdout_seed = eval_flags.seed;
            eval_opt.forest.seed = eval_flags.seed;
            eval_opt.retrain_for_imputation = !no_retrain;
            const auto manifest = cmtf::run_evaluate(eval_opt);
            for (const auto& n : manifest.value("notices", std::vector<std::string>{}))
                std::cerr << "notice: " << n << '\n';
            print_metrics_summary(manifest);
        } else if (phen_cmd->parsed()) {
            phen_opt.out_dir = phen_flags.out;
            phen_opt.rule.quantile = phen_quantile;
            if (phen_all) phen_opt.rule.kind = cmtf::MembershipRule::Kind::All;
            print_metrics_summary(cmtf::run_phenotypes(phen_opt));
        } else if (cmp_cmd->parsed()) {
            cmtf::CompareOptions opt;
            opt.dataset_dir = cmp_dataset;
            opt.out_dir = cmp_flags.out;
            if (!cmp_seeds.empty()) opt.seeds = cmp_seeds;
            else if (cmp_flags.seed_set) opt.seeds = {cmp_flags.seed};
            if (!cmp_methods.empty()) opt.methods = cmp_methods;
            opt.base = cmtf::train_config_from_json(load_config_or_empty(cmp_base_path));
            opt.als_base = cmtf::als_config_from_json(load_config_or_empty(cmp_als_path));
            opt.holdout_fraction = cmp_holdout;
            opt.workers = cmp_flags.workers;
            print_metrics_summary(cmtf::run_compare(opt));
        }
    } catch (const cmtf::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const cmtf::SchemaError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const cmtf::ParameterError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
