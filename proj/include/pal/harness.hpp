#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/attribution.hpp"
#include "pal/dataset.hpp"
#include "pal/model.hpp"
#include "pal/pal_loss.hpp"

namespace pal::harness {

/// One point of the experiment grid.
struct TrainConfig {
  std::string config_id = "default";
  nn::ModelSpec model = nn::ModelSpec::toy();
  std::string tap;                          // empty: the model's last tap
  std::optional<attr::Method> method = attr::Method::GradInput;  // nullopt: plain cross-entropy
  attr::ChannelStrategy strategy = attr::ChannelStrategy::mean_of_half();
  double lambda = 1.0;
  double sigma = 3.0;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 8;
  std::size_t total_steps = 0;              // 0: epochs * steps per epoch
  std::uint64_t seed = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  bool augment = true;
  bool balanced_sampler = false;
  double val_fraction = 0.1;

  std::string tap_layer() const { return tap.empty() ? model.last_tap() : tap; }
  /// Throws ConfigError on an undeclared tap or an invalid strategy for it.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Fields absent from `j` keep their defaults; "model" is a preset name or an object.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_config(const std::filesystem::path& path);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  loss::LossBreakdown loss;
  double lr = 0.0;
  /// Cross-entropy on the same batch after the update (only with track_step_ce).
  std::optional<double> ce_after;
};

struct RunRecord {
  std::string config_id;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<double> val_acc;  // one per epoch
  std::size_t best_epoch = 0;
  std::optional<double> test_acc;
  std::optional<double> attr_prior_corr;
  double wall_s = 0.0;
  nn::Parameters best_params;
};

struct Dataset {
  std::vector<data::Sample> samples;
  std::size_t n_classes = 7;
};

Dataset load_dataset(const std::filesystem::path& manifest);

struct TrainOptions {
  std::ostream* log = nullptr;                  // progress lines
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> metrics_csv;
  bool track_step_ce = false;
  std::size_t max_steps = 0;                    // stop early after this many steps (0: no limit)
};

/// Deterministic per-class split of `train` into (train, validation) indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const Dataset& train,
                                                                               double val_fraction,
                                                                               std::uint64_t seed);

/// Full training loop; keeps the parameters with the best validation accuracy.
/// When `test` is given the best parameters are evaluated on it.
RunRecord train(const TrainConfig& config, const Dataset& train_set, const Dataset* test_set,
                const TrainOptions& options = {});

struct EvalOptions {
  std::string tap;  // empty: last tap
  attr::Method method = attr::Method::GradInput;
  attr::ChannelStrategy strategy = attr::ChannelStrategy::mean_of_half();
  double sigma = 3.0;
  std::size_t batch_size = 50;
  bool attribution = true;  // compute correlations
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double attr_prior_corr = 0.0;                     // reduced map vs prior, per-sample mean
  std::optional<double> free_half_corr;             // MeanOfHalf: unconstrained channels vs prior
};

EvalResult evaluate(const nn::ModelSpec& spec, const nn::Parameters& params, const Dataset& dataset,
                    const EvalOptions& options = {});

/// Accuracy only, without attribution.
double accuracy(const nn::ModelSpec& spec, const nn::Parameters& params, const std::vector<data::Sample>& samples,
                std::size_t batch_size = 100);

/// NCHW batch and labels from samples.
Tensor to_batch(const std::vector<const data::Sample*>& samples);

struct AttributeRequest {
  std::vector<std::size_t> samples;
  std::string layer;  // empty: last tap
  attr::Method method = attr::Method::GradInput;
  attr::ChannelStrategy strategy = attr::ChannelStrategy::mean_of_half();
  double sigma = 3.0;
  std::filesystem::path out_dir;
};

/// Writes {sample}_{layer}_{method}_{strategy}.pgm per map plus {sample}_{layer}_prior.pgm.
/// Returns the written paths.
std::vector<std::filesystem::path> export_attributions(const nn::ModelSpec& spec, const nn::Parameters& params,
                                                       const Dataset& dataset, const AttributeRequest& request);

struct GradcheckGroup {
  std::string config;  // e.g. "ce", "grad+mean"
  std::string parameter;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double threshold = 1e-4;
  double seconds = 0.0;
  bool passed() const;
  double max_error(const std::string& config) const;
};

struct GradcheckOptions {
  nn::ModelSpec model = nn::ModelSpec::tiny();
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  double eps = 1e-5;
  double threshold = 1e-4;
  double min_grad = 1e-8;  // entries below this magnitude in both routes are skipped
  double lambda = 1.0;
  std::string tap;         // empty: last tap
};

/// Analytic d(total loss)/d(theta) against central differences for every
/// parameter group under CE-only and every (method, strategy) pair.
GradcheckReport gradcheck(const GradcheckOptions& options = {});

struct AblationOptions {
  std::vector<TrainConfig> grid;
  std::vector<std::uint64_t> seeds;
  EvalOptions eval;
  std::ostream* log = nullptr;
};

struct AblationRow {
  std::string config_id;
  std::string seed;  // seed number, or "aggregate"
  std::string method;
  std::string strategy;
  std::string tap;
  double lambda = 0.0;
  std::optional<double> val_acc;
  std::optional<double> test_acc;
  std::optional<double> test_acc_ci95;
  std::optional<double> attr_prior_corr;
  std::optional<double> attr_prior_corr_ci95;
  double wall_s = 0.0;
  std::string status = "ok";
};

/// Runs every (config, seed), then one aggregate row per config with the mean
/// and the half-width 1.96 sd / sqrt(n) of the 95% interval. Failed runs are
/// recorded with their error and excluded from the aggregate.
std::vector<AblationRow> run_ablation(const AblationOptions& options, const Dataset& train_set,
                                      const Dataset& test_set);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

/// Mean and 95% half-width (1.96 * sample sd / sqrt(n)); half-width 0 for n < 2.
std::pair<double, double> mean_ci95(const std::vector<double>& values);

}  // namespace pal::harness
