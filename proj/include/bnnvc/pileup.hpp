#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bnnvc/linalg.hpp"

namespace bnnvc {

enum class Base : std::uint8_t { A = 0, C = 1, G = 2, T = 3, GAP = 4 };

inline constexpr int kBaseCount = 5;
inline constexpr int kChannels = 3;

/// Fixed 3-channel palette: A, C, G one-hot; T = (1,1,0); GAP = zeros.
inline constexpr std::array<std::array<double, kChannels>, kBaseCount> kBasePalette{{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {0.0, 0.0, 0.0},
}};

char base_symbol(Base b) noexcept;

/// Tumor/normal pileup at one candidate locus: `depth` reads by `width` loci
/// per tissue. Bases are stored row-major, normal columns 0..w-1 followed by
/// tumor columns w..2w-1 in each row, which is also the on-disk order.
class PairMatrix
{
public:
    PairMatrix() = default;
    PairMatrix(int depth, int width, Base fill = Base::GAP);

    int depth() const noexcept { return depth_; }
    int width() const noexcept { return width_; }
    int center() const noexcept { return width_ / 2; }

    Base normal(int row, int col) const { return cells_[index(row, col)]; }
    Base tumor(int row, int col) const { return cells_[index(row, width_ + col)]; }
    Base& normal(int row, int col) { return cells_[index(row, col)]; }
    Base& tumor(int row, int col) { return cells_[index(row, width_ + col)]; }

    std::span<const Base> cells() const noexcept { return cells_; }
    std::span<Base> cells() noexcept { return cells_; }

    friend bool operator==(const PairMatrix&, const PairMatrix&) = default;

private:
    std::size_t index(int row, int col) const
    {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(2 * width_)
             + static_cast<std::size_t>(col);
    }

    int depth_ = 0;
    int width_ = 0;
    std::vector<Base> cells_;
};

struct LabeledExample
{
    PairMatrix pair;
    int label = 0; // 0 = artifact/negative, 1 = somatic/positive

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct EncodedExample
{
    RealMatrix features; // depth x 6*width
    int label = 0;
};

/// Synthetic pileup generator parameters.
struct GeneratorConfig
{
    int depth = 100;
    int width = 10;
    double error_rate = 0.01;
    double artifact_error_rate = 0.05;
    double vaf = 0.2;
    double germline_fraction = 0.5;
    double class_balance = 0.5;

    void validate() const;

    friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct Dataset
{
    std::vector<LabeledExample> examples;
    std::optional<GeneratorConfig> generator_config;

    std::size_t size() const noexcept { return examples.size(); }
    bool empty() const noexcept { return examples.empty(); }
    int depth() const { return examples.empty() ? 0 : examples.front().pair.depth(); }
    int width() const { return examples.empty() ? 0 : examples.front().pair.width(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t count, std::uint64_t seed);

/// Writes the encoding of `pair` row-major into `out` (depth * 6 * width values).
void encode_pair_into(const PairMatrix& pair, std::span<double> out);
EncodedExample encode_pair(const PairMatrix& pair, int label = 0);

Dataset balance_undersample(const Dataset& ds, std::uint64_t seed);
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed);

EncodedExample perturb_gaussian(const EncodedExample& ex, double sigma, std::uint64_t seed);
void perturb_gaussian_in_place(std::span<double> features, double sigma, std::uint64_t seed);

PairMatrix reduce_depth(const PairMatrix& pair, int new_depth, bool pad = true);

/// Posterior over the three generative hypotheses given one pileup.
struct HypothesisPosterior
{
    double somatic = 0.0;
    double germline = 0.0;
    double artifact = 0.0;
};

/// Exact Bayes posterior of the generator's hypotheses given the center column.
/// GAP cells are treated as missing reads.
HypothesisPosterior oracle_hypotheses(const PairMatrix& pair, const GeneratorConfig& cfg);
double oracle_posterior(const PairMatrix& pair, const GeneratorConfig& cfg);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);

} // namespace bnnvc
