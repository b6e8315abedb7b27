#include "bnnvc/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "bnnvc/errors.hpp"
#include "bnnvc/training.hpp"

namespace bnnvc {

OutputSummary summarize_outputs(const std::vector<PredictiveDistribution>& preds, const Dataset& ds)
{
    if (preds.empty())
        throw DegenerateDatasetError("summarize_outputs: no predictions");
    OutputSummary s;
    s.accuracy = score_predictions(preds, ds).accuracy;
    double pooled_sum = 0.0;
    double pooled_count = 0.0;
    for (const auto& p : preds) {
        s.fraction_mid += (p.mean >= 0.4 && p.mean <= 0.6) ? 1.0 : 0.0;
        s.mean_abs_deviation += std::abs(p.mean - 0.5);
        s.mean_std += p.std;
        for (const double x : p.samples)
            pooled_sum += x;
        pooled_count += static_cast<double>(p.samples.size());
    }
    const double n = static_cast<double>(preds.size());
    s.fraction_mid /= n;
    s.mean_abs_deviation /= n;
    s.mean_std /= n;
    const double pooled_mean = pooled_sum / pooled_count;
    double ss = 0.0;
    for (const auto& p : preds) {
        for (const double x : p.samples)
            ss += (x - pooled_mean) * (x - pooled_mean);
    }
    s.pooled_sample_variance = ss / pooled_count;
    return s;
}

OodReport run_ood_experiment(const Model& model, const Dataset& ds, const OodSpec& spec, int n_mc,
                             std::uint64_t seed)
{
    if (ds.empty())
        throw DegenerateDatasetError("ood: empty dataset");
    if (spec.levels.empty())
        throw ConfigError("ood: no perturbation levels given");
    for (const double level : spec.levels) {
        if (spec.kind == OodSpec::Kind::noise && !(level >= 0.0 && std::isfinite(level)))
            throw ConfigError("ood: noise sigma must be finite and nonnegative, got " + std::to_string(level));
        if (spec.kind == OodSpec::Kind::depth
            && !(level >= 1.0 && level <= ds.depth() && level == std::floor(level)))
            throw ConfigError("ood: depth level " + std::to_string(level) + " must be an integer in [1, "
                              + std::to_string(ds.depth()) + "]");
    }

    OodReport report;
    report.head = model.is_stochastic() ? HeadKind::flipout : HeadKind::dense;
    report.spec = spec;
    report.n_mc = n_mc;
    report.seed = seed;
    for (const double level : spec.levels) {
        const InputTransform transform = spec.kind == OodSpec::Kind::noise
            ? InputTransform::gaussian_noise(level, seed)
            : InputTransform::reduced_depth(static_cast<int>(level));
        OodLevel out;
        out.level = level;
        out.predictions = predict_batch(model, ds, n_mc, seed, transform);
        out.summary = summarize_outputs(out.predictions, ds);
        report.levels.push_back(std::move(out));
    }
    return report;
}

nlohmann::json ood_report_json(const OodReport& report)
{
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& l : report.levels) {
        levels.push_back({
            {"level", l.level},
            {"accuracy", l.summary.accuracy},
            {"fraction_mid", l.summary.fraction_mid},
            {"mean_abs_deviation", l.summary.mean_abs_deviation},
            {"mean_std", l.summary.mean_std},
            {"pooled_sample_variance", l.summary.pooled_sample_variance},
        });
    }
    return {
        {"head", head_kind_name(report.head)},
        {"perturb", report.spec.kind == OodSpec::Kind::noise ? "noise" : "depth"},
        {"mc_samples", report.n_mc},
        {"seed", report.seed},
        {"levels", levels},
    };
}

std::vector<long> histogram_counts(const std::vector<double>& values, int bins)
{
    if (bins < 1)
        throw ConfigError("histogram: need at least one bin");
    std::vector<long> counts(static_cast<std::size_t>(bins), 0);
    for (const double v : values) {
        const int idx = std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
        ++counts[static_cast<std::size_t>(idx)];
    }
    return counts;
}

void confidence_and_correctness(const std::vector<PredictiveDistribution>& preds, const Dataset& ds,
                                std::vector<double>& confidence, std::vector<int>& correct)
{
    if (preds.size() != ds.size())
        throw ShapeError("confidence_and_correctness: prediction/example count mismatch");
    confidence.clear();
    correct.clear();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        confidence.push_back(std::max(preds[i].mean, 1.0 - preds[i].mean));
        correct.push_back(preds[i].predicted_label() == ds.examples[i].label ? 1 : 0);
    }
}

nlohmann::json evaluation_report(const std::vector<PredictiveDistribution>& preds, const Dataset& ds, int ece_bins,
                                 int histogram_bins)
{
    const Metrics metrics = score_predictions(preds, ds);
    std::vector<double> confidence;
    std::vector<int> correct;
    confidence_and_correctness(preds, ds, confidence, correct);

    std::vector<double> means;
    std::vector<double> pooled;
    for (const auto& p : preds) {
        means.push_back(p.mean);
        pooled.insert(pooled.end(), p.samples.begin(), p.samples.end());
    }
    std::vector<double> edges;
    for (int i = 0; i <= histogram_bins; ++i)
        edges.push_back(static_cast<double>(i) / histogram_bins);
    return {
        {"accuracy", metrics.accuracy},
        {"mean_nll", metrics.mean_nll},
        {"ece", compute_ece(confidence, correct, ece_bins)},
        {"histogram",
         {
             {"bin_edges", edges},
             {"counts_mean", histogram_counts(means, histogram_bins)},
             {"counts_pooled_samples", histogram_counts(pooled, histogram_bins)},
         }},
    };
}

} // namespace bnnvc
