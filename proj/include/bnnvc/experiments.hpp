#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "bnnvc/calibration.hpp"
#include "bnnvc/inference.hpp"
#include "bnnvc/model.hpp"

namespace bnnvc {

/// Shape statistics of a set of predictive distributions.
struct OutputSummary
{
    double accuracy = 0.0;
    double fraction_mid = 0.0;           // MC means in [0.4, 0.6]
    double mean_abs_deviation = 0.0;     // mean |mean - 0.5|
    double mean_std = 0.0;               // mean per-input std
    double pooled_sample_variance = 0.0; // variance of all MC samples pooled
};

OutputSummary summarize_outputs(const std::vector<PredictiveDistribution>& preds, const Dataset& ds);

struct OodSpec
{
    enum class Kind { noise, depth };

    Kind kind = Kind::noise;
    std::vector<double> levels; // sigma values, or reduced depths
};

struct OodLevel
{
    double level = 0.0;
    OutputSummary summary;
    std::vector<PredictiveDistribution> predictions;
};

struct OodReport
{
    HeadKind head = HeadKind::dense;
    OodSpec spec;
    int n_mc = 0;
    std::uint64_t seed = 0;
    std::vector<OodLevel> levels;
};

/// Evaluates `model` on `ds` under each perturbation level. Noise levels add
/// N(0, sigma^2) to every encoded feature; depth levels keep the first d reads
/// and pad with GAP rows.
OodReport run_ood_experiment(const Model& model, const Dataset& ds, const OodSpec& spec, int n_mc,
                             std::uint64_t seed);

nlohmann::json ood_report_json(const OodReport& report);

/// Equal-width histogram over [0, 1]; 1.0 lands in the last bin.
std::vector<long> histogram_counts(const std::vector<double>& values, int bins);

/// Max-class confidences and correctness flags of MC-mean predictions.
void confidence_and_correctness(const std::vector<PredictiveDistribution>& preds, const Dataset& ds,
                                std::vector<double>& confidence, std::vector<int>& correct);

/// REPORT.json: {accuracy, mean_nll, ece, histogram{bin_edges, counts_mean, counts_pooled_samples}}.
nlohmann::json evaluation_report(const std::vector<PredictiveDistribution>& preds, const Dataset& ds, int ece_bins = 10,
                                 int histogram_bins = 20);

} // namespace bnnvc
