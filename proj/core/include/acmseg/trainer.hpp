#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acmseg/acm.hpp"
#include "acmseg/backbone.hpp"
#include "acmseg/data.hpp"
#include "acmseg/ssvm.hpp"

namespace acmseg {

enum class Optimizer { sgd, adam };

struct TrainConfig {
    ArchConfig arch;
    int epochs = 15;
    double step_size = 1e-4;
    double C = 1.0;
    int batch = 8;
    std::uint64_t seed = 1;
    AcmOptions acm;
    SsvmConfig ssvm;
    double radius_frac = kDefaultRadiusFrac;
    int checkpoint_every = 0;      // epochs; 0 disables intermediate checkpoints
    std::string checkpoint_path;   // required when checkpoint_every > 0
    Optimizer optimizer = Optimizer::sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Update once per initialization of every sample (one forward pass per
    // sample, stale maps across its five updates) instead of once per batch.
    bool update_per_init = false;

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);

struct TrainReport {
    std::vector<double> epoch_hinge;      // mean hinge loss per epoch
    std::vector<double> epoch_train_iou;  // mean IoU of the loss-augmented prediction per epoch
    std::vector<double> epoch_violated;   // share of samples with a violated margin
    std::vector<double> epoch_seconds;
    std::optional<double> test_iou;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::string config_json = "null";

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

std::string report_to_json(const TrainReport& r);
TrainReport report_from_json(const std::string& text);

struct EpochStats {
    int epoch;  // 1-based
    double mean_hinge;
    double mean_train_iou;
    double violated;
    double seconds;
};
using EpochCallback = std::function<void(const EpochStats&)>;

// First and second moments for Adam; empty for SGD.
struct OptimizerState {
    BackboneParams m, v;
    long step = 0;
};

struct StepStats {
    double hinge_sum = 0.0;
    double iou_sum = 0.0;
    int violated = 0;
    int samples = 0;
};

// One update on a batch: for every sample, forward, loss-augmented inference,
// subgradient, backward; then omega <- omega - eta * (omega + C/N * sum of
// backbone gradients) (or the Adam step on that same gradient). Samples are
// processed in id order. zero_subgradients skips the data term entirely,
// leaving the pure regularizer step.
StepStats train_step(BackboneParams& params, std::span<const Sample* const> batch, const TrainConfig& cfg,
                     OptimizerState& state, bool zero_subgradients = false);

struct TrainResult {
    BackboneParams params;
    TrainReport report;
};

// Initializes params from cfg.seed.
TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch = {});
TrainResult train(BackboneParams init, const std::vector<Sample>& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct SampleEval {
    std::string id;
    double iou;               // best of five by ground truth
    std::size_t winner;
    double energy;            // final energy of the winner
    double center_iou;        // the centre initialization alone
    double unsupervised_iou;  // lowest-energy candidate
};

struct EvalResult {
    double mean_iou = 0.0;
    double mean_center_iou = 0.0;
    double mean_unsupervised_iou = 0.0;
    std::vector<SampleEval> per_sample;
};

// forward -> infer_multi -> select_best against ground truth. Throws on an
// empty dataset.
EvalResult evaluate(const BackboneParams& params, const std::vector<Sample>& dataset, const AcmOptions& opts,
                    double radius_frac = kDefaultRadiusFrac);

void save_checkpoint(const std::string& path, const BackboneParams& params, const TrainReport& report);

struct LoadedModel {
    BackboneParams params;
    std::optional<TrainReport> report;
};
LoadedModel load_checkpoint(const std::string& path, const std::optional<ArchConfig>& expected = std::nullopt);

}  // namespace acmseg
