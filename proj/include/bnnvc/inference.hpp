#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bnnvc/model.hpp"
#include "bnnvc/pileup.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc {

/// MC predictive for the "somatic" class: one probability per weight draw.
struct PredictiveDistribution
{
    std::vector<double> samples;
    double mean = 0.0;
    double std = 0.0; // population standard deviation of the samples

    int n_mc() const noexcept { return static_cast<int>(samples.size()); }
    int predicted_label() const noexcept { return mean > 0.5 ? 1 : 0; }
};

/// Input-side distribution shift applied while encoding each example.
struct InputTransform
{
    enum class Kind { none, noise, depth };

    Kind kind = Kind::none;
    double sigma = 0.0;  // noise
    int depth = 0;       // reduced depth, padded with GAP rows
    std::uint64_t seed = 0;

    static InputTransform gaussian_noise(double sigma, std::uint64_t seed)
    {
        return {Kind::noise, sigma, 0, seed};
    }
    static InputTransform reduced_depth(int depth) { return {Kind::depth, 0.0, depth, 0}; }
};

/// Encodes example `index` of a dataset under `transform` into `out`.
void encode_example(const LabeledExample& ex, std::size_t index, const InputTransform& transform,
                    std::span<double> out);

/// n_mc draws from the approximate posterior for one encoded input
/// (1 x input_size). Deterministic models return n_mc copies of the point
/// prediction.
PredictiveDistribution mc_predict(const Model& model, const RealMatrix& x, int n_mc, Rng& rng);

/// Per-example predictive distributions; example i draws from
/// Rng::stream(seed, StreamDomain::predict, i).
std::vector<PredictiveDistribution> predict_batch(const Model& model, const Dataset& ds, int n_mc,
                                                  std::uint64_t seed, const InputTransform& transform = {});

/// Encodes rows [begin, end) of a dataset into a matrix.
RealMatrix encode_rows(const Dataset& ds, std::size_t begin, std::size_t end, const InputTransform& transform = {});

/// JSON lines {example_index, label, mean, std, samples[]}.
void write_prediction_dump(const std::vector<PredictiveDistribution>& preds, const Dataset& ds,
                           const std::filesystem::path& path);

} // namespace bnnvc
