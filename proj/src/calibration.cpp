#include "bnnvc/calibration.hpp"

#include <cmath>
#include <sstream>

#include "bnnvc/dense.hpp"
#include "bnnvc/errors.hpp"

namespace bnnvc {

RealMatrix apply_temperature(const RealMatrix& logits, double temperature)
{
    if (!(temperature > 0.0))
        throw ConfigError("apply_temperature: T must be positive");
    return softmax_rows<double>(logits / temperature);
}

double temperature_nll(const RealMatrix& logits, std::span<const int> labels, double temperature)
{
    if (!(temperature > 0.0))
        throw ConfigError("temperature_nll: T must be positive");
    return softmax_cross_entropy<double>(logits / temperature, labels).loss;
}

TemperatureParam fit_temperature(const RealMatrix& logits, std::span<const int> labels)
{
    if (logits.rows() == 0 || labels.empty())
        throw DegenerateDatasetError("fit_temperature: empty validation set");
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw ShapeError("fit_temperature: " + std::to_string(logits.rows()) + " logit rows for "
                         + std::to_string(labels.size()) + " labels");
    if (!logits.allFinite())
        throw NumericError("fit_temperature: non-finite logits");

    auto nll_at = [&](double log_t) { return temperature_nll(logits, labels, std::exp(log_t)); };
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = std::log(0.05);
    double hi = std::log(20.0);
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = nll_at(x1);
    double f2 = nll_at(x2);
    while (hi - lo >= 1e-4) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = nll_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = nll_at(x2);
        }
    }
    const double log_t = 0.5 * (lo + hi);
    if (nll_at(0.0) < nll_at(log_t))
        return {1.0};
    return {std::exp(log_t)};
}

double ReliabilityBins::ece() const noexcept
{
    if (total == 0)
        return 0.0;
    double acc = 0.0;
    for (const auto& b : bins) {
        if (b.count == 0)
            continue;
        acc += static_cast<double>(b.count) / static_cast<double>(total) * std::abs(b.accuracy - b.mean_confidence);
    }
    return acc;
}

ReliabilityBins reliability_table(std::span<const double> confidences, std::span<const int> correct, int bins)
{
    if (confidences.empty())
        throw DegenerateDatasetError("reliability_table: no predictions");
    if (confidences.size() != correct.size())
        throw ShapeError("reliability_table: " + std::to_string(confidences.size()) + " confidences for "
                         + std::to_string(correct.size()) + " correctness flags");
    if (bins < 1)
        throw ConfigError("reliability_table: need at least one bin");

    ReliabilityBins table;
    table.total = static_cast<long>(confidences.size());
    table.bins.resize(static_cast<std::size_t>(bins));
    const double k = static_cast<double>(bins);
    for (int i = 0; i < bins; ++i) {
        table.bins[static_cast<std::size_t>(i)].low = i / k;
        table.bins[static_cast<std::size_t>(i)].high = (i + 1) / k;
    }
    std::vector<double> conf_sum(table.bins.size(), 0.0);
    std::vector<long> hits(table.bins.size(), 0);
    for (std::size_t n = 0; n < confidences.size(); ++n) {
        const double c = confidences[n];
        if (!(c >= 0.0 && c <= 1.0))
            throw RangeError("reliability_table: confidence " + std::to_string(c) + " outside [0, 1]");
        int idx = std::min(bins - 1, static_cast<int>(std::floor(c * k)));
        while (idx + 1 < bins && c >= (idx + 1) / k)
            ++idx;
        while (idx > 0 && c < idx / k)
            --idx;
        auto& b = table.bins[static_cast<std::size_t>(idx)];
        ++b.count;
        conf_sum[static_cast<std::size_t>(idx)] += c;
        hits[static_cast<std::size_t>(idx)] += correct[n] != 0 ? 1 : 0;
    }
    for (std::size_t i = 0; i < table.bins.size(); ++i) {
        auto& b = table.bins[i];
        if (b.count == 0)
            continue;
        b.mean_confidence = conf_sum[i] / static_cast<double>(b.count);
        b.accuracy = static_cast<double>(hits[i]) / static_cast<double>(b.count);
    }
    return table;
}

double compute_ece(std::span<const double> confidences, std::span<const int> correct, int bins)
{
    return reliability_table(confidences, correct, bins).ece();
}

std::string reliability_csv(const ReliabilityBins& table)
{
    std::ostringstream out;
    out.precision(17);
    out << "bin_low,bin_high,count,mean_confidence,accuracy,gap\n";
    for (const auto& b : table.bins)
        out << b.low << ',' << b.high << ',' << b.count << ',' << b.mean_confidence << ',' << b.accuracy << ','
            << b.gap() << '\n';
    out << "ece," << table.ece() << '\n';
    return out.str();
}

} // namespace bnnvc
