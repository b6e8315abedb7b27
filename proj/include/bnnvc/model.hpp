#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bnnvc/dense.hpp"
#include "bnnvc/pileup.hpp"
#include "bnnvc/variational.hpp"

namespace bnnvc {

enum class HeadKind { dense, flipout };

std::string_view head_kind_name(HeadKind h) noexcept;
HeadKind parse_head_kind(std::string_view name);

/// Flattened-pileup classifier: depth*6*width inputs, relu hidden layers, and a
/// two-logit head that is either a plain dense layer or a Flipout layer.
struct ModelConfig
{
    int depth = 100;
    int width = 10;
    std::vector<int> hidden{64, 32};
    HeadKind head = HeadKind::dense;
    bool variational_everywhere = false;
    double prior_sigma = 1.0;
    // 0.05 noticeably delays escape from the initial loss plateau.
    double initial_sigma = 0.01;

    int input_size() const noexcept { return depth * 2 * width * kChannels; }
    void validate() const;
};

using Layer = std::variant<DenseLayer<double>, FlipoutDense<double>>;

struct Model
{
    ModelConfig config;
    std::vector<Layer> layers;

    bool is_stochastic() const noexcept { return first_stochastic_layer() < layers.size(); }
    /// Index of the first Flipout layer, or layers.size() for a deterministic model.
    std::size_t first_stochastic_layer() const noexcept;
    /// Strips the posterior variance: rho -> -inf gives the mean network.
    void clamp_posterior_to_mean();
};

/// Glorot-uniform means, zero biases, rho = softplus^-1(initial_sigma).
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Logits with every variational layer at its posterior mean.
RealMatrix mean_logits(const Model& model, const RealMatrix& batch);

/// Partial forward through layers [begin, end) at posterior means.
RealMatrix mean_forward(const Model& model, const RealMatrix& batch, std::size_t begin, std::size_t end);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& doc);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

} // namespace bnnvc
