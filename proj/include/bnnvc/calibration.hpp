#pragma once

#include <span>
#include <string>
#include <vector>

#include "bnnvc/linalg.hpp"

namespace bnnvc {

struct TemperatureParam
{
    double value = 1.0;
};

/// Row-wise softmax(logits / T) in log-sum-exp form.
RealMatrix apply_temperature(const RealMatrix& logits, double temperature);

/// Mean NLL of apply_temperature(logits, T) against labels.
double temperature_nll(const RealMatrix& logits, std::span<const int> labels, double temperature);

/// Golden-section search on ln T over [ln 0.05, ln 20] until the bracket is
/// narrower than 1e-4. The result never has a higher NLL than T = 1.
TemperatureParam fit_temperature(const RealMatrix& logits, std::span<const int> labels);

struct ReliabilityBin
{
    double low = 0.0;
    double high = 0.0;
    long count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;

    double gap() const noexcept { return count ? accuracy - mean_confidence : 0.0; }
};

struct ReliabilityBins
{
    std::vector<ReliabilityBin> bins;
    long total = 0;

    /// sum_i |B_i|/n * |acc(B_i) - conf(B_i)|.
    double ece() const noexcept;
};

/// Equal-width bins over [0, 1]; a confidence on an interior edge goes to the
/// upper bin and 1.0 goes to the last bin.
ReliabilityBins reliability_table(std::span<const double> confidences, std::span<const int> correct, int bins = 10);
double compute_ece(std::span<const double> confidences, std::span<const int> correct, int bins = 10);

/// CSV with header bin_low,bin_high,count,mean_confidence,accuracy,gap and a
/// trailing "ece,<value>" line.
std::string reliability_csv(const ReliabilityBins& table);

} // namespace bnnvc
