#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbvae/clustering.hpp"
#include "dbvae/controller.hpp"
#include "dbvae/synth.hpp"
#include "dbvae/vae.hpp"

namespace dbvae {

struct ExperimentConfig {
    std::uint64_t seed = 1;

    // Dataset.
    std::string dataset_source = "generate";  // "generate" | "load"
    std::size_t unlabelled_count = 8000;
    std::size_t labelled_per_species = 100;
    std::vector<SpeciesProfile> profiles = default_species_profiles();
    std::string profiles_path;  // optional JSON array of species profiles
    GeneratorConfig generator;

    // Split. Train and test species must be disjoint; the test rows are a
    // seeded subset of the unlabelled pool held out from training.
    std::size_t test_count = 1500;
    std::vector<std::string> train_species;
    std::vector<std::string> test_species;

    // Training.
    long epochs = 1500;
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    std::string recon_loss = "bce";       // "bce" | "mse"
    std::string recon_aggregate = "sum";  // "sum" | "mean" over the 193 features
    bool semi_supervised = false;
    long semi_sup_start_epoch = 500;
    bool controller_enabled = true;
    double fixed_beta = 1.0;  // used when the controller is disabled
    ControllerHyper controller;
    GammaSchedule gamma;
    double cls_epsilon = 1e-8;

    // Clustering / evaluation.
    std::size_t k_min = 5;
    std::size_t k_max = 50;
    std::size_t silhouette_full_limit = 5000;
    std::size_t silhouette_subsample = 2000;
    int kmeans_restarts = 5;

    // Output / execution.
    std::string out_dir = "out";
    int compare_repetitions = 5;
    int jobs = 2;

    static ExperimentConfig desk_scale();
    void apply_paper_scale();

    // Replaces `profiles` with the JSON array at profiles_path, when set.
    void resolve_profiles();

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::string config_hash() const;

    SelectKOptions select_k_options() const;
};

// ---- generate ----

struct GeneratePaths {
    std::string unlabelled_csv;
    std::string labelled_csv;
    std::string truth_csv;
};

GeneratePaths cmd_generate(const ExperimentConfig& config);

// ---- train ----

struct EpochTraceRow {
    long epoch = 0;
    double beta = 0.0;
    double gamma = 0.0;
    double l_rec = 0.0;
    double l_reg = 0.0;
    double l_cls = 0.0;
    double delta_rec = 0.0;
    double delta_reg = 0.0;
    int d_l_rec = 0;
    Phase phase = Phase::Warmup;
};

std::string trace_to_csv(const std::vector<EpochTraceRow>& trace);

struct TrainedModel {
    ModelParams params;
    std::vector<EpochTraceRow> trace;
    double final_beta = 0.0;
    bool diverged = false;            // params then hold the last finite checkpoint
    std::string divergence_info;
};

// Core training loop over an in-memory pool; labelled may be null (or ignored
// when the config is unsupervised).
TrainedModel train_model(const ExperimentConfig& config, const Matrix& train_x,
                         const LabelledBatch* labelled);

struct SplitData {
    Matrix train_x;                      // rows used for reconstruction training
    Matrix test_x;                       // held-out rows to embed and cluster
    std::vector<std::string> test_ids;
    std::vector<std::string> test_truth;  // hidden truth for test rows (may be empty)
    LabelledBatch labelled_train;         // labelled rows of training species only
    std::vector<std::string> labelled_train_names;  // class id -> species name
};

// Builds the seeded train/test split. Labelled rows of the training species
// join the reconstruction pool in semi-supervised mode and feed the
// clustering loss; test-species labelled rows are never used.
SplitData prepare_split(const ExperimentConfig& config, const SpectrumBatch& unlabelled,
                        const std::vector<std::string>& hidden_truth,
                        const SpectrumBatch& labelled);

struct TrainPaths {
    std::string model_file;
    std::string trace_csv;
    std::string test_ids_csv;
};

// Reads the dataset CSVs from out_dir, holds out the seeded test split,
// trains per the three-phase schedule and persists model + trace.
TrainPaths cmd_train(const ExperimentConfig& config);

// ---- embed / evaluate / figures ----

void cmd_embed(const std::string& model_file, const std::string& spectra_csv,
               const std::string& out_csv);

struct EvaluateOptions {
    std::size_t k_min = 5;
    std::size_t k_max = 50;
    std::uint64_t seed = 1;
    std::string method = "embedding";
    std::string config_hash = "none";
    SelectKOptions select_k;
};

// Clusters the embedding (silhouette-selected K), scores against the truth
// labels (restricted to ids present in the truth file), and writes metrics
// JSON plus assignments and the per-K silhouette table next to it.
nlohmann::json cmd_evaluate(const std::string& embedding_csv, const std::string& truth_csv,
                            const std::string& out_json, const EvaluateOptions& options);

struct LatentGridSpec {
    double z_min = -3.0;
    double z_max = 3.0;
    std::size_t steps = 15;
    // Optional explicit line traversals (x0,y0) -> (x1,y1) with point counts;
    // when non-empty they replace the grid.
    struct Line {
        double x0, y0, x1, y1;
        std::size_t steps;
    };
    std::vector<Line> lines;
};

void cmd_latent_grid(const std::string& model_file, const LatentGridSpec& spec,
                     const std::string& out_csv);

void cmd_cluster_spectra(const std::string& spectra_csv, const std::string& assignments_csv,
                         const std::string& out_csv);

// ---- compare ----

// Runs {semi-supervised dynamic beta-VAE, unsupervised dynamic beta-VAE,
// fixed-beta VAE, PCA, kernel PCA, HCA} over compare_repetitions seeds with
// shared datasets/splits and writes the aggregate comparison JSON.
nlohmann::json cmd_compare(const ExperimentConfig& config);

// Seeded held-out subset of [0, n): sorted indices of the test rows.
std::vector<std::size_t> test_split_indices(std::size_t n, std::size_t test_count,
                                            std::uint64_t seed);

}  // namespace dbvae
