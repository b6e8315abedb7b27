#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bnnvc/inference.hpp"
#include "bnnvc/model.hpp"
#include "bnnvc/pileup.hpp"
#include "bnnvc/variational.hpp"

namespace bnnvc {

struct TrainConfig
{
    int epochs = 30;
    int batch_size = 128;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    ElboConfig elbo;
    int eval_mc_samples = 100;
    // Holds every rho fixed at its initial value (no variance learning).
    bool freeze_variance = false;

    void validate() const;
};

struct EpochRecord
{
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct TrainHistory
{
    std::vector<EpochRecord> epochs;
};

struct TrainResult
{
    Model model;
    TrainHistory history;
};

/// Dense head: minibatch mean cross-entropy. Flipout layers: per-example
/// minibatch ELBO (elbo_loss). Deterministic given the configs, data and seed.
TrainResult train_model(const ModelConfig& mc, const TrainConfig& tc, const Dataset& train, const Dataset& test);

struct InferenceConfig
{
    int n_mc = 100;
    std::uint64_t seed = 0;
};

struct Metrics
{
    double accuracy = 0.0;
    double mean_nll = 0.0;
};

/// Accuracy and mean NLL from precomputed predictive distributions.
Metrics score_predictions(const std::vector<PredictiveDistribution>& preds, const Dataset& ds);

/// Dense models score their point prediction, variational models the MC mean.
Metrics evaluate_accuracy(const Model& model, const Dataset& ds, const InferenceConfig& cfg);

/// JSON lines: one {epoch, loss, train_acc, test_acc} object per epoch.
std::string history_to_jsonl(const TrainHistory& history);
void write_history(const TrainHistory& history, const std::filesystem::path& path);

} // namespace bnnvc
