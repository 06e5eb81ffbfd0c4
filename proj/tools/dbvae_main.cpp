#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "dbvae/errors.hpp"
#include "dbvae/io.hpp"
#include "dbvae/pipeline.hpp"

namespace {

dbvae::ExperimentConfig load_config(const std::string& config_path, std::uint64_t seed_flag,
                                    bool seed_set, const std::string& out_dir_flag,
                                    bool paper_scale) {
    dbvae::ExperimentConfig config = dbvae::ExperimentConfig::desk_scale();
    if (!config_path.empty()) {
        config = dbvae::ExperimentConfig::from_json(
            nlohmann::json::parse(dbvae::read_file(config_path)));
    }
    if (paper_scale) config.apply_paper_scale();
    if (seed_set) config.seed = seed_flag;
    if (!out_dir_flag.empty()) config.out_dir = out_dir_flag;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic beta-VAE pipeline for clustering insect wing-beat spectra"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string out_dir;
    bool paper_scale = false;
    app.add_option("--config", config_path, "experiment config JSON")->expected(1);
    app.add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out-dir", out_dir, "override the output directory");
    app.add_flag("--paper-scale", paper_scale,
                 "full-scale run (40000 records, 500 labelled/species, 5000 epochs)");

    auto* generate = app.add_subcommand("generate", "synthesize the spectra dataset");

    auto* train = app.add_subcommand("train", "train the model on generated CSVs");
    bool semi_supervised = false;
    train->add_flag("--semi-supervised", semi_supervised,
                    "enable the semi-supervised phase");

    auto* embed = app.add_subcommand("embed", "embed spectra with a trained model");
    std::string model_file, spectra_csv, out_file;
    embed->add_option("--model", model_file, "model file (DBV1)")->required();
    embed->add_option("--spectra", spectra_csv, "spectra CSV")->required();
    embed->add_option("--out", out_file, "output embedding CSV")->required();

    auto* evaluate = app.add_subcommand("evaluate", "cluster an embedding and score it");
    std::string embedding_csv, truth_csv, metrics_json, method = "embedding";
    std::size_t k_min = 5, k_max = 50;
    evaluate->add_option("--embedding", embedding_csv, "embedding CSV")->required();
    evaluate->add_option("--truth", truth_csv, "truth labels CSV")->required();
    evaluate->add_option("--out", metrics_json, "output metrics JSON")->required();
    evaluate->add_option("--k-min", k_min, "smallest K");
    evaluate->add_option("--k-max", k_max, "largest K");
    evaluate->add_option("--method", method, "method name recorded in the metrics");

    auto* grid = app.add_subcommand("latent-grid", "decode a latent-space grid");
    double z_min = -3.0, z_max = 3.0;
    std::size_t steps = 15;
    std::vector<std::string> lines;
    grid->add_option("--model", model_file, "model file (DBV1)")->required();
    grid->add_option("--out", out_file, "output CSV")->required();
    grid->add_option("--z-min", z_min, "grid minimum");
    grid->add_option("--z-max", z_max, "grid maximum");
    grid->add_option("--steps", steps, "grid steps per axis");
    grid->add_option("--line", lines,
                     "line traversal x0,y0,x1,y1,steps (repeatable; replaces the grid)");

    auto* cluster_spectra =
        app.add_subcommand("cluster-spectra", "per-cluster mean spectra and IQR");
    std::string assignments_csv;
    cluster_spectra->add_option("--spectra", spectra_csv, "spectra CSV")->required();
    cluster_spectra->add_option("--assignments", assignments_csv, "assignment CSV")
        ->required();
    cluster_spectra->add_option("--out", out_file, "output CSV")->required();

    auto* compare = app.add_subcommand("compare", "run the six-method comparison");
    int jobs = 0;
    compare->add_option("--jobs", jobs, "parallel seeds (default from config)");

    CLI11_PARSE(app, argc, argv);

    try {
        dbvae::ExperimentConfig config =
            load_config(config_path, seed, seed_set, out_dir, paper_scale);

        if (generate->parsed()) {
            const auto paths = dbvae::cmd_generate(config);
            std::cout << "wrote " << paths.unlabelled_csv << ", " << paths.labelled_csv
                      << ", " << paths.truth_csv << "\n";
        } else if (train->parsed()) {
            if (semi_supervised) config.semi_supervised = true;
            const auto paths = dbvae::cmd_train(config);
            std::cout << "wrote " << paths.model_file << ", " << paths.trace_csv << ", "
                      << paths.test_ids_csv << "\n";
        } else if (embed->parsed()) {
            dbvae::cmd_embed(model_file, spectra_csv, out_file);
            std::cout << "wrote " << out_file << "\n";
        } else if (evaluate->parsed()) {
            dbvae::EvaluateOptions options;
            options.k_min = k_min;
            options.k_max = k_max;
            options.seed = config.seed;
            options.method = method;
            options.config_hash = config.config_hash();
            options.select_k = config.select_k_options();
            const auto metrics =
                dbvae::cmd_evaluate(embedding_csv, truth_csv, metrics_json, options);
            std::cout << metrics.dump(2) << "\n";
        } else if (grid->parsed()) {
            dbvae::LatentGridSpec spec;
            spec.z_min = z_min;
            spec.z_max = z_max;
            spec.steps = steps;
            for (const std::string& line : lines) {
                dbvae::LatentGridSpec::Line l{};
                if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%zu", &l.x0, &l.y0, &l.x1,
                                &l.y1, &l.steps) != 5) {
                    throw dbvae::InputError("bad --line spec: " + line);
                }
                spec.lines.push_back(l);
            }
            dbvae::cmd_latent_grid(model_file, spec, out_file);
            std::cout << "wrote " << out_file << "\n";
        } else if (cluster_spectra->parsed()) {
            dbvae::cmd_cluster_spectra(spectra_csv, assignments_csv, out_file);
            std::cout << "wrote " << out_file << "\n";
        } else if (compare->parsed()) {
            if (jobs > 0) config.jobs = jobs;
            const auto result = dbvae::cmd_compare(config);
            std::cout << result["methods"].dump(2) << "\n";
            std::cout << "wrote " << config.out_dir << "/compare.json\n";
        }
        return 0;
    } catch (const dbvae::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const dbvae::StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return 2;
    } catch (const dbvae::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
