#include "dbvae/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "dbvae/baselines.hpp"
#include "dbvae/io.hpp"
#include "dbvae/metrics.hpp"
#include "dbvae/model_io.hpp"

namespace dbvae {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config --

namespace {
SpeciesProfile profile_from_json(const nlohmann::json& j);
}  // namespace

ExperimentConfig ExperimentConfig::desk_scale() { return ExperimentConfig{}; }

void ExperimentConfig::resolve_profiles() {
    if (profiles_path.empty()) return;
    const nlohmann::json j = nlohmann::json::parse(read_file(profiles_path));
    if (!j.is_array() || j.empty()) {
        throw ConfigError("profiles file must be a non-empty JSON array: " + profiles_path);
    }
    profiles.clear();
    for (const auto& pj : j) profiles.push_back(profile_from_json(pj));
}

void ExperimentConfig::apply_paper_scale() {
    unlabelled_count = 40000;
    labelled_per_species = 500;
    test_count = 3000;
    epochs = 5000;
}

namespace {

std::vector<std::string> default_test_species(const std::vector<SpeciesProfile>& profiles) {
    // Every third profile, spanning the frequency range; includes the
    // deliberately hard wide-spread species.
    std::vector<std::string> out;
    for (std::size_t i = 2; i < profiles.size(); i += 3) out.push_back(profiles[i].name);
    return out;
}

std::vector<std::string> complement_species(const std::vector<SpeciesProfile>& profiles,
                                            const std::vector<std::string>& excluded) {
    std::vector<std::string> out;
    for (const auto& p : profiles) {
        if (std::find(excluded.begin(), excluded.end(), p.name) == excluded.end()) {
            out.push_back(p.name);
        }
    }
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (profiles.empty()) throw ConfigError("config: no species profiles");
    for (const auto& p : profiles) p.validate();
    if (unlabelled_count == 0) throw ConfigError("config: unlabelled_count must be > 0");
    if (test_count >= unlabelled_count) {
        throw ConfigError("config: test_count must be smaller than unlabelled_count");
    }
    if (batch_size == 0 || batch_size > unlabelled_count - test_count) {
        throw ConfigError("config: batch size must be in [1, training pool size]");
    }
    if (epochs <= 0) throw ConfigError("config: epochs must be > 0");
    if (recon_loss != "bce" && recon_loss != "mse") {
        throw ConfigError("config: recon_loss must be 'bce' or 'mse'");
    }
    if (recon_aggregate != "sum" && recon_aggregate != "mean") {
        throw ConfigError("config: recon_aggregate must be 'sum' or 'mean'");
    }
    if (k_min < 1 || k_min > k_max) throw ConfigError("config: invalid K range");
    controller.validate();

    const auto train = train_species.empty() && test_species.empty()
                           ? complement_species(profiles, default_test_species(profiles))
                           : train_species;
    const auto test = test_species.empty() && train_species.empty()
                          ? default_test_species(profiles)
                          : test_species;
    for (const auto& t : test) {
        if (std::find(train.begin(), train.end(), t) != train.end()) {
            throw ConfigError("config: train and test species overlap on '" + t + "'");
        }
    }
    std::set<std::string> names;
    for (const auto& p : profiles) names.insert(p.name);
    for (const auto& s : train) {
        if (!names.count(s)) throw ConfigError("config: unknown train species '" + s + "'");
    }
    for (const auto& s : test) {
        if (!names.count(s)) throw ConfigError("config: unknown test species '" + s + "'");
    }
}

namespace {

nlohmann::json profile_to_json(const SpeciesProfile& p) {
    return {{"name", p.name},
            {"wbf_mean_hz", p.wbf_mean_hz},
            {"wbf_rel_std", p.wbf_rel_std},
            {"harmonic_decay", p.harmonic_decay},
            {"harmonic_count", p.harmonic_count},
            {"body_floor", p.body_floor},
            {"noise_level", p.noise_level}};
}

SpeciesProfile profile_from_json(const nlohmann::json& j) {
    SpeciesProfile p;
    p.name = j.at("name").get<std::string>();
    p.wbf_mean_hz = j.at("wbf_mean_hz").get<double>();
    p.wbf_rel_std = j.at("wbf_rel_std").get<double>();
    p.harmonic_decay = j.at("harmonic_decay").get<double>();
    p.harmonic_count = j.at("harmonic_count").get<int>();
    p.body_floor = j.at("body_floor").get<double>();
    p.noise_level = j.at("noise_level").get<double>();
    return p;
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["dataset_source"] = dataset_source;
    j["unlabelled_count"] = unlabelled_count;
    j["labelled_per_species"] = labelled_per_species;
    j["profiles"] = nlohmann::json::array();
    for (const auto& p : profiles) j["profiles"].push_back(profile_to_json(p));
    j["generator"] = {{"duration_s", generator.duration_s},
                      {"amplitude", generator.amplitude},
                      {"sample_rate_hz", generator.sample_rate_hz},
                      {"direct_spectra", generator.direct_spectra},
                      {"segment_length", generator.welch.segment_length},
                      {"overlap_fraction", generator.welch.overlap_fraction},
                      {"window", generator.welch.window == WelchWindow::Hann ? "hann"
                                                                             : "rectangular"},
                      {"max_frequency_hz", generator.welch.max_frequency_hz}};
    j["test_count"] = test_count;
    j["train_species"] = train_species;
    j["test_species"] = test_species;
    j["profiles_path"] = profiles_path;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["recon_loss"] = recon_loss;
    j["recon_aggregate"] = recon_aggregate;
    j["semi_supervised"] = semi_supervised;
    j["semi_sup_start_epoch"] = semi_sup_start_epoch;
    j["controller_enabled"] = controller_enabled;
    j["fixed_beta"] = fixed_beta;
    j["controller"] = {{"a", controller.a},
                       {"b", controller.b},
                       {"w1", controller.w1},
                       {"w2", controller.w2},
                       {"w3", controller.w3},
                       {"w4", controller.w4},
                       {"update_period", controller.update_period},
                       {"warmup_epochs", controller.warmup_epochs},
                       {"stall_limit", controller.stall_limit},
                       {"beta_floor", controller.beta_floor}};
    j["gamma"] = {{"low", gamma.low},
                  {"high", gamma.high},
                  {"period", gamma.period},
                  {"shape", gamma.shape == GammaShape::Sawtooth ? "sawtooth" : "triangle"}};
    j["cls_epsilon"] = cls_epsilon;
    j["k_min"] = k_min;
    j["k_max"] = k_max;
    j["silhouette_full_limit"] = silhouette_full_limit;
    j["silhouette_subsample"] = silhouette_subsample;
    j["kmeans_restarts"] = kmeans_restarts;
    j["out_dir"] = out_dir;
    j["compare_repetitions"] = compare_repetitions;
    j["jobs"] = jobs;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    maybe_get(j, "seed", c.seed);
    maybe_get(j, "dataset_source", c.dataset_source);
    maybe_get(j, "unlabelled_count", c.unlabelled_count);
    maybe_get(j, "labelled_per_species", c.labelled_per_species);
    if (j.contains("profiles")) {
        c.profiles.clear();
        for (const auto& pj : j.at("profiles")) c.profiles.push_back(profile_from_json(pj));
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        maybe_get(g, "duration_s", c.generator.duration_s);
        maybe_get(g, "amplitude", c.generator.amplitude);
        maybe_get(g, "sample_rate_hz", c.generator.sample_rate_hz);
        maybe_get(g, "direct_spectra", c.generator.direct_spectra);
        maybe_get(g, "segment_length", c.generator.welch.segment_length);
        maybe_get(g, "overlap_fraction", c.generator.welch.overlap_fraction);
        maybe_get(g, "max_frequency_hz", c.generator.welch.max_frequency_hz);
        if (g.contains("window")) {
            c.generator.welch.window = g.at("window").get<std::string>() == "rectangular"
                                           ? WelchWindow::Rectangular
                                           : WelchWindow::Hann;
        }
    }
    maybe_get(j, "test_count", c.test_count);
    maybe_get(j, "train_species", c.train_species);
    maybe_get(j, "test_species", c.test_species);
    maybe_get(j, "profiles_path", c.profiles_path);
    maybe_get(j, "epochs", c.epochs);
    maybe_get(j, "batch_size", c.batch_size);
    maybe_get(j, "learning_rate", c.learning_rate);
    maybe_get(j, "recon_loss", c.recon_loss);
    maybe_get(j, "recon_aggregate", c.recon_aggregate);
    maybe_get(j, "semi_supervised", c.semi_supervised);
    maybe_get(j, "semi_sup_start_epoch", c.semi_sup_start_epoch);
    maybe_get(j, "controller_enabled", c.controller_enabled);
    maybe_get(j, "fixed_beta", c.fixed_beta);
    if (j.contains("controller")) {
        const auto& ctl = j.at("controller");
        maybe_get(ctl, "a", c.controller.a);
        maybe_get(ctl, "b", c.controller.b);
        maybe_get(ctl, "w1", c.controller.w1);
        maybe_get(ctl, "w2", c.controller.w2);
        maybe_get(ctl, "w3", c.controller.w3);
        maybe_get(ctl, "w4", c.controller.w4);
        maybe_get(ctl, "update_period", c.controller.update_period);
        maybe_get(ctl, "warmup_epochs", c.controller.warmup_epochs);
        maybe_get(ctl, "stall_limit", c.controller.stall_limit);
        maybe_get(ctl, "beta_floor", c.controller.beta_floor);
    }
    if (j.contains("gamma")) {
        const auto& g = j.at("gamma");
        maybe_get(g, "low", c.gamma.low);
        maybe_get(g, "high", c.gamma.high);
        maybe_get(g, "period", c.gamma.period);
        if (g.contains("shape")) {
            c.gamma.shape = g.at("shape").get<std::string>() == "triangle"
                                ? GammaShape::Triangle
                                : GammaShape::Sawtooth;
        }
    }
    maybe_get(j, "cls_epsilon", c.cls_epsilon);
    maybe_get(j, "k_min", c.k_min);
    maybe_get(j, "k_max", c.k_max);
    maybe_get(j, "silhouette_full_limit", c.silhouette_full_limit);
    maybe_get(j, "silhouette_subsample", c.silhouette_subsample);
    maybe_get(j, "kmeans_restarts", c.kmeans_restarts);
    maybe_get(j, "out_dir", c.out_dir);
    maybe_get(j, "compare_repetitions", c.compare_repetitions);
    maybe_get(j, "jobs", c.jobs);
    return c;
}

std::string ExperimentConfig::config_hash() const {
    // Execution details (where outputs land, worker count) do not change the
    // experiment identity.
    nlohmann::json j = to_json();
    j.erase("out_dir");
    j.erase("jobs");
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SelectKOptions ExperimentConfig::select_k_options() const {
    SelectKOptions opts;
    opts.restarts = kmeans_restarts;
    opts.silhouette_full_limit = silhouette_full_limit;
    opts.silhouette_subsample = silhouette_subsample;
    return opts;
}

// -------------------------------------------------------------- generate --

GeneratePaths cmd_generate(const ExperimentConfig& base_config) {
    ExperimentConfig config = base_config;
    config.resolve_profiles();
    config.validate();
    fs::create_directories(config.out_dir);
    const DatasetBundle data =
        generate_dataset(config.profiles, config.unlabelled_count,
                         config.labelled_per_species, config.seed, config.generator);
    GeneratePaths paths;
    paths.unlabelled_csv = config.out_dir + "/unlabelled.csv";
    paths.labelled_csv = config.out_dir + "/labelled.csv";
    paths.truth_csv = config.out_dir + "/truth.csv";
    write_spectra_csv(paths.unlabelled_csv, data.unlabelled);
    write_spectra_csv(paths.labelled_csv, data.labelled);
    write_labels_csv(paths.truth_csv, data.unlabelled.ids, data.hidden_truth);
    return paths;
}

// ----------------------------------------------------------------- train --

std::vector<std::size_t> test_split_indices(std::size_t n, std::size_t test_count,
                                            std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng::derive(seed, 0xA11CEULL);
    rng.shuffle(idx);
    idx.resize(std::min(test_count, n));
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

Matrix gather_rows(const Matrix& source, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), source.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = source.data() + rows[i] * source.cols();
        double* dst = out.data() + i * out.cols();
        std::copy(src, src + source.cols(), dst);
    }
    return out;
}

// Stratified labelled sub-batch: an even share per class, sampled without
// replacement, so every training species is represented each step.
LabelledBatch sample_labelled_batch(const Matrix& x, const std::vector<int>& labels,
                                    const std::vector<std::vector<std::size_t>>& by_class,
                                    std::size_t want_total, Rng& rng) {
    const std::size_t per_class =
        std::max<std::size_t>(2, want_total / std::max<std::size_t>(by_class.size(), 1));
    std::vector<std::size_t> chosen;
    for (const auto& members : by_class) {
        std::vector<std::size_t> pool = members;
        const std::size_t take = std::min(per_class, pool.size());
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    }
    LabelledBatch batch;
    batch.x = gather_rows(x, chosen);
    batch.labels.reserve(chosen.size());
    for (std::size_t idx : chosen) batch.labels.push_back(labels[idx]);
    return batch;
}

}  // namespace

TrainedModel train_model(const ExperimentConfig& config, const Matrix& train_x,
                         const LabelledBatch* labelled) {
    if (train_x.cols() != kSpectrumBins) {
        throw ShapeError("train_model: expected 193-bin spectra");
    }
    if (train_x.rows() < config.batch_size) {
        throw ConfigError("train_model: batch size exceeds training pool");
    }
    const bool use_labelled = config.semi_supervised && labelled != nullptr &&
                              labelled->x.rows() >= 2;

    VaeArchitecture arch = VaeArchitecture::table1();
    ModelParams params = ModelParams::init(arch, config.seed);
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = config.learning_rate;
    AdamState adam = AdamState::init(adam_cfg, param_block_sizes(params));

    ControllerHyper hyper = config.controller;
    hyper.validate();
    ControllerState state;
    state.beta = hyper.beta_floor;

    PhaseConfig phase_cfg;
    phase_cfg.warmup_epochs = config.controller_enabled ? hyper.warmup_epochs : 0;
    phase_cfg.semi_supervised_start = config.semi_sup_start_epoch;
    phase_cfg.has_labelled_data = use_labelled;

    TrainOptions opts;
    opts.recon = config.recon_loss == "mse" ? ReconLossKind::MeanSquaredError
                                            : ReconLossKind::BernoulliCrossEntropy;
    opts.recon_scale = config.recon_aggregate == "mean"
                           ? 1.0 / static_cast<double>(kSpectrumBins)
                           : 1.0;
    opts.cls_epsilon = config.cls_epsilon;

    // Per-class index lists for stratified labelled batches.
    std::vector<std::vector<std::size_t>> by_class;
    if (use_labelled) {
        int max_label = 0;
        for (int l : labelled->labels) max_label = std::max(max_label, l);
        by_class.assign(static_cast<std::size_t>(max_label) + 1, {});
        for (std::size_t i = 0; i < labelled->labels.size(); ++i) {
            by_class[static_cast<std::size_t>(labelled->labels[i])].push_back(i);
        }
        std::erase_if(by_class, [](const auto& v) { return v.empty(); });
    }

    TrainedModel out;
    std::vector<std::size_t> order(train_x.rows());
    std::iota(order.begin(), order.end(), 0);

    for (long epoch = 0; epoch < config.epochs; ++epoch) {
        const Phase phase = phase_of(epoch, phase_cfg);
        const double beta = config.controller_enabled ? state.beta : config.fixed_beta;
        const double gamma = phase == Phase::SemiSupervised
                                 ? gamma_schedule(epoch, config.semi_sup_start_epoch,
                                                  config.gamma)
                                 : 0.0;

        Rng shuffle_rng = Rng::derive(config.seed, 0x10000ULL + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        Rng noise_rng = Rng::derive(config.seed, 0x30000ULL + static_cast<std::uint64_t>(epoch));
        Rng label_rng = Rng::derive(config.seed, 0x20000ULL + static_cast<std::uint64_t>(epoch));

        CompositeLosses sums;
        long steps = 0;
        opts.epoch = epoch;
        try {
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const std::size_t stop = std::min(order.size(), start + config.batch_size);
                const std::vector<std::size_t> batch_rows(order.begin() + start,
                                                          order.begin() + stop);
                const Matrix xb = gather_rows(train_x, batch_rows);
                LabelledBatch lb;
                const LabelledBatch* lbp = nullptr;
                if (gamma > 0.0 && use_labelled) {
                    lb = sample_labelled_batch(labelled->x, labelled->labels, by_class,
                                               config.batch_size, label_rng);
                    lbp = &lb;
                }
                opts.step = steps;
                const CompositeLosses losses =
                    train_step(params, adam, xb, beta, gamma, lbp, noise_rng, opts);
                sums.rec += losses.rec;
                sums.reg += losses.reg;
                sums.cls += losses.cls;
                steps += 1;
            }
        } catch (const TrainingDiverged& e) {
            out.params = std::move(params);
            out.final_beta = beta;
            out.diverged = true;
            out.divergence_info = e.what();
            return out;
        }

        // Controller sees batch-mean losses averaged over the epoch.
        const double inv_steps = 1.0 / static_cast<double>(steps);
        const CompositeLosses epoch_mean{sums.rec * inv_steps, sums.reg * inv_steps,
                                         sums.cls * inv_steps};
        Deltas deltas;
        if (config.controller_enabled) {
            state = controller_observe_epoch(state, epoch_mean.rec, epoch_mean.reg, hyper,
                                             &deltas);
        }

        EpochTraceRow row;
        row.epoch = epoch;
        row.beta = beta;
        row.gamma = gamma;
        row.l_rec = epoch_mean.rec;
        row.l_reg = epoch_mean.reg;
        row.l_cls = epoch_mean.cls;
        row.delta_rec = deltas.delta_rec;
        row.delta_reg = deltas.delta_reg;
        row.d_l_rec = deltas.delta_l_rec;
        row.phase = phase;
        out.trace.push_back(row);
    }

    for (const DenseLayer& l : params.encoder) {
        if (!l.weight.all_finite()) {
            out.diverged = true;
            out.divergence_info = "non-finite encoder weights after the final step";
        }
    }
    for (const DenseLayer& l : params.decoder) {
        if (!l.weight.all_finite()) {
            out.diverged = true;
            out.divergence_info = "non-finite decoder weights after the final step";
        }
    }
    out.params = std::move(params);
    out.final_beta = config.controller_enabled ? state.beta : config.fixed_beta;
    return out;
}

std::string trace_to_csv(const std::vector<EpochTraceRow>& trace) {
    std::string out = "epoch,beta,gamma,L_rec,L_reg,L_cls,delta_rec,delta_reg,dL_rec,phase\n";
    for (const EpochTraceRow& r : trace) {
        out += std::to_string(r.epoch);
        out += ',';
        out += format_double(r.beta);
        out += ',';
        out += format_double(r.gamma);
        out += ',';
        out += format_double(r.l_rec);
        out += ',';
        out += format_double(r.l_reg);
        out += ',';
        out += format_double(r.l_cls);
        out += ',';
        out += format_double(r.delta_rec);
        out += ',';
        out += format_double(r.delta_reg);
        out += ',';
        out += std::to_string(r.d_l_rec);
        out += ',';
        out += phase_name(r.phase);
        out += '\n';
    }
    return out;
}

namespace {

SplitData make_split(const ExperimentConfig& config, const SpectrumBatch& unlabelled,
                     const std::vector<std::string>& hidden_truth,
                     const SpectrumBatch& labelled) {
    const std::vector<std::string> test_species =
        config.test_species.empty() && config.train_species.empty()
            ? default_test_species(config.profiles)
            : config.test_species;
    const std::vector<std::string> train_species =
        config.train_species.empty() && config.test_species.empty()
            ? complement_species(config.profiles, test_species)
            : config.train_species;

    const std::vector<std::size_t> test_idx =
        test_split_indices(unlabelled.size(), config.test_count, config.seed);
    std::vector<bool> is_test(unlabelled.size(), false);
    for (std::size_t i : test_idx) is_test[i] = true;

    SplitData split;
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < unlabelled.size(); ++i) {
        if (!is_test[i]) train_rows.push_back(i);
    }
    split.test_x = gather_rows(unlabelled.bins, test_idx);
    for (std::size_t i : test_idx) {
        split.test_ids.push_back(unlabelled.ids[i]);
        split.test_truth.push_back(i < hidden_truth.size() ? hidden_truth[i] : "");
    }

    // Labelled rows restricted to training species, classes in sorted order.
    std::vector<std::size_t> lab_rows;
    std::map<std::string, int> class_ids;
    for (const std::string& s : train_species) class_ids.emplace(s, 0);
    int next_id = 0;
    for (auto& [name, id] : class_ids) id = next_id++;
    for (std::size_t i = 0; i < labelled.size(); ++i) {
        if (class_ids.count(labelled.labels[i])) lab_rows.push_back(i);
    }
    split.labelled_train.x = gather_rows(labelled.bins, lab_rows);
    for (std::size_t i : lab_rows) {
        split.labelled_train.labels.push_back(class_ids.at(labelled.labels[i]));
    }
    split.labelled_train_names.resize(class_ids.size());
    for (const auto& [name, id] : class_ids) {
        split.labelled_train_names[static_cast<std::size_t>(id)] = name;
    }

    if (config.semi_supervised && !lab_rows.empty()) {
        // Reconstruction pool = unlabelled train rows + labelled train rows.
        Matrix pool(train_rows.size() + lab_rows.size(), unlabelled.bins.cols());
        std::size_t r = 0;
        for (std::size_t i : train_rows) {
            std::copy(unlabelled.bins.data() + i * pool.cols(),
                      unlabelled.bins.data() + (i + 1) * pool.cols(),
                      pool.data() + r++ * pool.cols());
        }
        for (std::size_t i : lab_rows) {
            std::copy(labelled.bins.data() + i * pool.cols(),
                      labelled.bins.data() + (i + 1) * pool.cols(),
                      pool.data() + r++ * pool.cols());
        }
        split.train_x = std::move(pool);
    } else {
        split.train_x = gather_rows(unlabelled.bins, train_rows);
    }
    return split;
}

std::string ids_to_csv(const std::vector<std::string>& ids) {
    std::string out = "id\n";
    for (const std::string& id : ids) {
        out += id;
        out += '\n';
    }
    return out;
}

}  // namespace

SplitData prepare_split(const ExperimentConfig& config, const SpectrumBatch& unlabelled,
                        const std::vector<std::string>& hidden_truth,
                        const SpectrumBatch& labelled) {
    return make_split(config, unlabelled, hidden_truth, labelled);
}

TrainPaths cmd_train(const ExperimentConfig& base_config) {
    ExperimentConfig config = base_config;
    config.resolve_profiles();
    config.validate();
    const std::string unl_path = config.out_dir + "/unlabelled.csv";
    const std::string lab_path = config.out_dir + "/labelled.csv";
    const std::string truth_path = config.out_dir + "/truth.csv";
    if (!fs::exists(unl_path)) {
        throw InputError("cmd_train: dataset file missing: " + unl_path +
                         " (run `generate` first)");
    }
    const SpectrumBatch unlabelled = read_spectra_csv(unl_path);
    SpectrumBatch labelled;
    if (fs::exists(lab_path)) labelled = read_spectra_csv(lab_path);
    std::vector<std::string> truth(unlabelled.size());
    if (fs::exists(truth_path)) {
        const auto pairs = read_labels_csv(truth_path);
        std::map<std::string, std::string> by_id(pairs.begin(), pairs.end());
        for (std::size_t i = 0; i < unlabelled.size(); ++i) {
            auto it = by_id.find(unlabelled.ids[i]);
            if (it != by_id.end()) truth[i] = it->second;
        }
    }
    if (config.semi_supervised && labelled.size() == 0) {
        throw InputError("cmd_train: semi-supervised run needs " + lab_path);
    }

    const SplitData split = make_split(config, unlabelled, truth, labelled);
    const TrainedModel trained =
        train_model(config, split.train_x,
                    split.labelled_train.x.rows() > 0 ? &split.labelled_train : nullptr);

    TrainPaths paths;
    paths.model_file = config.out_dir + "/model.dbv";
    paths.trace_csv = config.out_dir + "/trace.csv";
    paths.test_ids_csv = config.out_dir + "/test_ids.csv";

    nlohmann::json meta;
    meta["seed"] = config.seed;
    meta["config_hash"] = config.config_hash();
    meta["training"] = {{"epochs", static_cast<long>(trained.trace.size())},
                        {"final_beta", trained.final_beta},
                        {"recon_loss", config.recon_loss},
                        {"semi_supervised", config.semi_supervised},
                        {"diverged", trained.diverged}};

    if (trained.diverged) {
        // Abort path: persist the last finite checkpoint and partial trace.
        save_model(config.out_dir + "/model.diverged.dbv", trained.params, meta);
        atomic_write_file(paths.trace_csv, trace_to_csv(trained.trace));
        throw NumericalError("cmd_train: " + trained.divergence_info +
                             " (checkpoint written to model.diverged.dbv)");
    }

    save_model(paths.model_file, trained.params, meta);
    atomic_write_file(paths.trace_csv, trace_to_csv(trained.trace));
    atomic_write_file(paths.test_ids_csv, ids_to_csv(split.test_ids));
    return paths;
}

// ------------------------------------------------- embed / evaluate / viz --

void cmd_embed(const std::string& model_file, const std::string& spectra_csv,
               const std::string& out_csv) {
    const LoadedModel loaded = load_model(model_file);
    const SpectrumBatch batch = read_spectra_csv(spectra_csv);
    const EncodeResult enc = encode(loaded.params, batch.bins);
    write_embedding_csv(out_csv, batch.ids, enc.mu);
}

namespace {

std::vector<int> labels_to_ints(const std::vector<std::string>& labels) {
    std::map<std::string, int> ids;
    for (const std::string& l : labels) ids.emplace(l, 0);
    int next = 0;
    for (auto& [k, v] : ids) v = next++;
    std::vector<int> out;
    out.reserve(labels.size());
    for (const std::string& l : labels) out.push_back(ids.at(l));
    return out;
}

}  // namespace

nlohmann::json cmd_evaluate(const std::string& embedding_csv, const std::string& truth_csv,
                            const std::string& out_json, const EvaluateOptions& options) {
    auto [ids, points] = read_embedding_csv(embedding_csv);
    const auto truth_pairs = read_labels_csv(truth_csv);
    std::map<std::string, std::string> truth_by_id;
    for (const auto& [id, label] : truth_pairs) {
        if (!label.empty()) truth_by_id[id] = label;
    }

    const KSelection sel =
        select_k(points, options.k_min, options.k_max, options.seed, options.select_k);

    // Score only rows that have a truth label.
    std::vector<std::string> truth_labels;
    std::vector<int> pred;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = truth_by_id.find(ids[i]);
        if (it != truth_by_id.end()) {
            truth_labels.push_back(it->second);
            pred.push_back(sel.best_model.assignments[i]);
        }
    }
    if (truth_labels.empty()) {
        throw InputError("cmd_evaluate: no overlapping ids between embedding and truth");
    }

    const std::vector<int> truth_ints = labels_to_ints(truth_labels);
    nlohmann::json metrics;
    metrics["method"] = options.method;
    metrics["seed"] = options.seed;
    metrics["k"] = sel.best_k;
    metrics["silhouette"] = sel.best_silhouette;
    metrics["ari"] = ari(truth_ints, pred);
    metrics["ami"] = ami(truth_ints, pred);
    metrics["config_hash"] = options.config_hash;
    metrics["n_scored"] = truth_labels.size();
    metrics["ami_normalizer"] = "mean";
    if (sel.range_clipped) metrics["k_range_clipped"] = true;

    const fs::path out_path(out_json);
    const fs::path dir = out_path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    atomic_write_file(out_json, metrics.dump(2) + "\n");
    write_assignments_csv((dir / "assignments.csv").string(), ids,
                          sel.best_model.assignments);
    write_silhouette_csv((dir / "silhouette_by_k.csv").string(), sel.silhouette_by_k);
    return metrics;
}

void cmd_latent_grid(const std::string& model_file, const LatentGridSpec& spec,
                     const std::string& out_csv) {
    const LoadedModel loaded = load_model(model_file);
    std::vector<std::pair<double, double>> zs;
    if (spec.lines.empty()) {
        for (std::size_t i = 0; i < spec.steps; ++i) {
            for (std::size_t j = 0; j < spec.steps; ++j) {
                const double frac_i =
                    spec.steps > 1 ? static_cast<double>(i) / static_cast<double>(spec.steps - 1)
                                   : 0.0;
                const double frac_j =
                    spec.steps > 1 ? static_cast<double>(j) / static_cast<double>(spec.steps - 1)
                                   : 0.0;
                zs.emplace_back(spec.z_min + (spec.z_max - spec.z_min) * frac_i,
                                spec.z_min + (spec.z_max - spec.z_min) * frac_j);
            }
        }
    } else {
        for (const auto& line : spec.lines) {
            for (std::size_t s = 0; s < line.steps; ++s) {
                const double frac =
                    line.steps > 1 ? static_cast<double>(s) / static_cast<double>(line.steps - 1)
                                   : 0.0;
                zs.emplace_back(line.x0 + (line.x1 - line.x0) * frac,
                                line.y0 + (line.y1 - line.y0) * frac);
            }
        }
    }

    Matrix z(zs.size(), 2);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        z(i, 0) = zs[i].first;
        z(i, 1) = zs[i].second;
    }
    const Matrix decoded = decode(loaded.params, z);

    std::string out = "z1,z2";
    for (std::size_t j = 0; j < decoded.cols(); ++j) {
        char buf[8];
        std::snprintf(buf, sizeof buf, ",f%03zu", j);
        out += buf;
    }
    out += '\n';
    for (std::size_t i = 0; i < decoded.rows(); ++i) {
        out += format_double(z(i, 0));
        out += ',';
        out += format_double(z(i, 1));
        for (std::size_t j = 0; j < decoded.cols(); ++j) {
            out += ',';
            out += format_double(decoded(i, j));
        }
        out += '\n';
    }
    atomic_write_file(out_csv, out);
}

void cmd_cluster_spectra(const std::string& spectra_csv, const std::string& assignments_csv,
                         const std::string& out_csv) {
    const SpectrumBatch batch = read_spectra_csv(spectra_csv);
    const auto pairs = read_labels_csv(assignments_csv);
    std::map<std::string, int> cluster_by_id;
    int max_cluster = -1;
    for (const auto& [id, cluster_str] : pairs) {
        try {
            const int c = std::stoi(cluster_str);
            cluster_by_id[id] = c;
            max_cluster = std::max(max_cluster, c);
        } catch (const std::exception&) {
            throw IoError("cmd_cluster_spectra: bad cluster id '" + cluster_str + "'");
        }
    }
    std::vector<std::size_t> rows;
    std::vector<int> assignments;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto it = cluster_by_id.find(batch.ids[i]);
        if (it != cluster_by_id.end()) {
            rows.push_back(i);
            assignments.push_back(it->second);
        }
    }
    if (rows.empty()) {
        throw InputError("cmd_cluster_spectra: no overlapping ids");
    }
    const Matrix spectra = gather_rows(batch.bins, rows);
    const ClusterSpectraSummary summary = cluster_spectra_summary(
        spectra, assignments, static_cast<std::size_t>(max_cluster) + 1);

    std::string out = "cluster,count,stat";
    for (std::size_t j = 0; j < kSpectrumBins; ++j) {
        char buf[8];
        std::snprintf(buf, sizeof buf, ",f%03zu", j);
        out += buf;
    }
    out += '\n';
    auto emit = [&](const ClusterSpectraSummary::Entry& e, const char* stat,
                    const std::vector<double>& vals) {
        out += std::to_string(e.cluster);
        out += ',';
        out += std::to_string(e.count);
        out += ',';
        out += stat;
        for (double v : vals) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    };
    for (const auto& e : summary.entries) {
        emit(e, "mean", e.mean);
        emit(e, "q25", e.q25);
        emit(e, "q75", e.q75);
    }
    atomic_write_file(out_csv, out);
}

// --------------------------------------------------------------- compare --

namespace {

struct MethodRun {
    nlohmann::json record;
    double ari_value = std::nan("");
};

// Embedding -> silhouette-selected kmeans -> ARI/AMI against the test-species
// truth rows.
MethodRun score_embedding(const ExperimentConfig& cfg, const std::string& method,
                          const Matrix& embedding, const std::vector<std::string>& test_ids,
                          const std::vector<std::string>& truth,
                          const std::set<std::string>& test_species, double runtime_s,
                          const std::string& run_dir) {
    if (!embedding.all_finite()) {
        throw NumericalError(method + ": embedding contains non-finite values");
    }
    const KSelection sel =
        select_k(embedding, cfg.k_min, cfg.k_max, cfg.seed, cfg.select_k_options());
    std::vector<int> pred;
    std::vector<std::string> truth_labels;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (test_species.count(truth[i])) {
            pred.push_back(sel.best_model.assignments[i]);
            truth_labels.push_back(truth[i]);
        }
    }
    const std::vector<int> truth_ints = labels_to_ints(truth_labels);

    MethodRun run;
    run.ari_value = ari(truth_ints, pred);
    run.record = {{"method", method},
                  {"seed", cfg.seed},
                  {"k", sel.best_k},
                  {"silhouette", sel.best_silhouette},
                  {"ari", run.ari_value},
                  {"ami", ami(truth_ints, pred)},
                  {"runtime_s", runtime_s},
                  {"config_hash", cfg.config_hash()},
                  {"n_scored", truth_labels.size()},
                  {"ami_normalizer", "mean"}};
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        write_embedding_csv(run_dir + "/embedding.csv", test_ids, embedding);
        write_assignments_csv(run_dir + "/assignments.csv", test_ids,
                              sel.best_model.assignments);
        write_silhouette_csv(run_dir + "/silhouette_by_k.csv", sel.silhouette_by_k);
        atomic_write_file(run_dir + "/metrics.json", run.record.dump(2) + "\n");
    }
    return run;
}

// HCA clusters the raw 193-dim spectra directly; the cut K is picked by
// silhouette over the same K range.
MethodRun score_hca(const ExperimentConfig& cfg, const Matrix& test_x,
                    const std::vector<std::string>& test_ids,
                    const std::vector<std::string>& truth,
                    const std::set<std::string>& test_species, const std::string& run_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const Dendrogram dendro = hca_fit(test_x);

    Matrix dists(test_x.rows(), test_x.rows());
    for (std::size_t i = 0; i < test_x.rows(); ++i) {
        for (std::size_t j = i + 1; j < test_x.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < test_x.cols(); ++c) {
                const double d = test_x(i, c) - test_x(j, c);
                s += d * d;
            }
            const double v = std::sqrt(s);
            dists(i, j) = v;
            dists(j, i) = v;
        }
    }

    double best_s = -2.0;
    std::size_t best_k = cfg.k_min;
    std::vector<int> best_asg;
    std::vector<std::pair<std::size_t, double>> sil_by_k;
    for (std::size_t k = cfg.k_min; k <= cfg.k_max && k < test_x.rows(); ++k) {
        const std::vector<int> asg = hca_cut(dendro, k);
        const double s = silhouette_from_distances(dists, asg);
        sil_by_k.emplace_back(k, s);
        if (s > best_s) {
            best_s = s;
            best_k = k;
            best_asg = asg;
        }
    }
    const double runtime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<int> pred;
    std::vector<std::string> truth_labels;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (test_species.count(truth[i])) {
            pred.push_back(best_asg[i]);
            truth_labels.push_back(truth[i]);
        }
    }
    const std::vector<int> truth_ints = labels_to_ints(truth_labels);

    MethodRun run;
    run.ari_value = ari(truth_ints, pred);
    run.record = {{"method", "hca"},
                  {"seed", cfg.seed},
                  {"k", best_k},
                  {"silhouette", best_s},
                  {"ari", run.ari_value},
                  {"ami", ami(truth_ints, pred)},
                  {"runtime_s", runtime},
                  {"config_hash", cfg.config_hash()},
                  {"n_scored", truth_labels.size()}};
    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        write_assignments_csv(run_dir + "/assignments.csv", test_ids, best_asg);
        write_silhouette_csv(run_dir + "/silhouette_by_k.csv", sil_by_k);
        atomic_write_file(run_dir + "/metrics.json", run.record.dump(2) + "\n");
    }
    return run;
}

double median_of(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

nlohmann::json cmd_compare(const ExperimentConfig& base_config) {
    ExperimentConfig config = base_config;
    config.resolve_profiles();
    config.validate();
    fs::create_directories(config.out_dir);
    const std::vector<std::string> method_names = {
        "pca", "kernel_pca", "hca", "vae_fixed_beta", "dynamic_beta_vae",
        "dynamic_beta_vae_semisup"};

    const int reps = config.compare_repetitions;
    std::vector<std::map<std::string, nlohmann::json>> rep_results(
        static_cast<std::size_t>(reps));

    auto run_rep = [&](int rep) {
        ExperimentConfig cfg = config;
        cfg.seed = config.seed + static_cast<std::uint64_t>(rep);
        const std::string rep_dir = config.out_dir + "/seed" + std::to_string(cfg.seed);

        const DatasetBundle data =
            generate_dataset(cfg.profiles, cfg.unlabelled_count, cfg.labelled_per_species,
                             cfg.seed, cfg.generator);
        const std::vector<std::string> test_species_list =
            cfg.test_species.empty() && cfg.train_species.empty()
                ? default_test_species(cfg.profiles)
                : cfg.test_species;
        const std::set<std::string> test_species(test_species_list.begin(),
                                                 test_species_list.end());

        // Shared split across every method for this seed.
        ExperimentConfig unsup_cfg = cfg;
        unsup_cfg.semi_supervised = false;
        const SplitData split = make_split(unsup_cfg, data.unlabelled, data.hidden_truth,
                                           data.labelled);
        ExperimentConfig semi_cfg = cfg;
        semi_cfg.semi_supervised = true;
        const SplitData semi_split = make_split(semi_cfg, data.unlabelled, data.hidden_truth,
                                                data.labelled);

        auto& results = rep_results[static_cast<std::size_t>(rep)];
        auto guard = [&](const std::string& method, auto&& fn) {
            try {
                results[method] = fn().record;
            } catch (const std::exception& e) {
                results[method] = {{"method", method}, {"seed", cfg.seed},
                                   {"error", e.what()}};
            }
        };

        guard("pca", [&] {
            const auto t0 = std::chrono::steady_clock::now();
            const PcaModel pca = pca_fit(split.train_x, 2);
            const Matrix emb = pca_transform(pca, split.test_x);
            const double rt =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return score_embedding(cfg, "pca", emb, split.test_ids, split.test_truth,
                                   test_species, rt, rep_dir + "/pca");
        });
        guard("kernel_pca", [&] {
            const auto t0 = std::chrono::steady_clock::now();
            const Matrix emb = kernel_pca_fit_transform(
                split.test_x, 1.0 / static_cast<double>(kSpectrumBins), 1.0, 2);
            const double rt =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            MethodRun run =
                score_embedding(cfg, "kernel_pca", emb, split.test_ids, split.test_truth,
                                test_species, rt, rep_dir + "/kernel_pca");
            run.record["kernel_gain"] = 1.0 / static_cast<double>(kSpectrumBins);
            run.record["kernel_offset"] = 1.0;
            return run;
        });
        guard("hca", [&] {
            return score_hca(cfg, split.test_x, split.test_ids, split.test_truth,
                             test_species, rep_dir + "/hca");
        });

        auto train_and_score = [&](const ExperimentConfig& run_cfg, const SplitData& s,
                                   const std::string& method) {
            const auto t0 = std::chrono::steady_clock::now();
            const TrainedModel trained = train_model(
                run_cfg, s.train_x,
                s.labelled_train.x.rows() > 0 ? &s.labelled_train : nullptr);
            if (trained.diverged) {
                throw NumericalError(method + ": " + trained.divergence_info);
            }
            const Matrix emb = encode(trained.params, s.test_x).mu;
            const double rt =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const std::string run_dir = rep_dir + "/" + method;
            fs::create_directories(run_dir);
            atomic_write_file(run_dir + "/trace.csv", trace_to_csv(trained.trace));
            nlohmann::json meta;
            meta["seed"] = run_cfg.seed;
            meta["config_hash"] = run_cfg.config_hash();
            meta["training"] = {{"final_beta", trained.final_beta},
                                {"epochs", static_cast<long>(trained.trace.size())}};
            save_model(run_dir + "/model.dbv", trained.params, meta);
            return score_embedding(run_cfg, method, emb, s.test_ids, s.test_truth,
                                   test_species, rt, run_dir);
        };

        guard("vae_fixed_beta", [&] {
            ExperimentConfig run_cfg = cfg;
            run_cfg.semi_supervised = false;
            run_cfg.controller_enabled = false;
            run_cfg.fixed_beta = 1.0;
            return train_and_score(run_cfg, split, "vae_fixed_beta");
        });
        guard("dynamic_beta_vae", [&] {
            ExperimentConfig run_cfg = cfg;
            run_cfg.semi_supervised = false;
            run_cfg.controller_enabled = true;
            return train_and_score(run_cfg, split, "dynamic_beta_vae");
        });
        guard("dynamic_beta_vae_semisup", [&] {
            ExperimentConfig run_cfg = cfg;
            run_cfg.semi_supervised = true;
            run_cfg.controller_enabled = true;
            return train_and_score(run_cfg, semi_split, "dynamic_beta_vae_semisup");
        });
    };

    // Seeds are independent; worker count only affects wall-clock.
    const int jobs = std::max(1, std::min(config.jobs, reps));
    if (jobs == 1) {
        for (int rep = 0; rep < reps; ++rep) run_rep(rep);
    } else {
        std::vector<std::thread> pool;
        std::mutex next_mutex;
        int next = 0;
        for (int w = 0; w < jobs; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    int rep;
                    {
                        std::lock_guard<std::mutex> lock(next_mutex);
                        if (next >= reps) return;
                        rep = next++;
                    }
                    run_rep(rep);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    nlohmann::json out;
    out["config"] = config.to_json();
    out["config_hash"] = config.config_hash();
    nlohmann::json methods = nlohmann::json::object();
    for (const std::string& method : method_names) {
        nlohmann::json runs = nlohmann::json::array();
        std::vector<double> aris, amis, ks, sils;
        for (int rep = 0; rep < reps; ++rep) {
            const auto& res = rep_results[static_cast<std::size_t>(rep)];
            auto it = res.find(method);
            if (it == res.end()) continue;
            runs.push_back(it->second);
            if (!it->second.contains("error")) {
                aris.push_back(it->second.at("ari").get<double>());
                amis.push_back(it->second.at("ami").get<double>());
                ks.push_back(it->second.at("k").get<double>());
                sils.push_back(it->second.at("silhouette").get<double>());
            }
        }
        auto mean_std = [](const std::vector<double>& v) {
            if (v.empty()) return std::pair<double, double>{std::nan(""), std::nan("")};
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
            return std::pair<double, double>{mean, std::sqrt(var)};
        };
        const auto [ari_mean, ari_std] = mean_std(aris);
        const auto [ami_mean, ami_std] = mean_std(amis);
        nlohmann::json agg;
        agg["runs_ok"] = aris.size();
        agg["k_median"] = median_of(ks);
        agg["silhouette_mean"] = mean_std(sils).first;
        agg["ari_mean"] = ari_mean;
        agg["ari_std"] = ari_std;
        agg["ari_median"] = median_of(aris);
        agg["ami_mean"] = ami_mean;
        agg["ami_std"] = ami_std;
        agg["ami_median"] = median_of(amis);
        methods[method] = {{"runs", runs}, {"aggregate", agg}};
    }
    out["methods"] = methods;
    atomic_write_file(config.out_dir + "/compare.json", out.dump(2) + "\n");
    return out;
}

}  // namespace dbvae
