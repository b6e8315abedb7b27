#include "bnnvc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

#include <json.hpp>

#include "bnnvc/errors.hpp"
#include "bnnvc/fileio.hpp"

namespace bnnvc {

namespace {

constexpr std::size_t kChunkRows = 256;

double somatic_probability(double logit_artifact, double logit_somatic)
{
    const double z = logit_somatic - logit_artifact;
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void summarize(PredictiveDistribution& pd)
{
    // Moments of the samples shifted by the first one, so that identical
    // samples give a spread of exactly zero.
    const double n = static_cast<double>(pd.samples.size());
    const double shift = pd.samples.front();
    double sum = 0.0;
    double ss = 0.0;
    for (const double p : pd.samples) {
        sum += p;
        ss += (p - shift) * (p - shift);
    }
    pd.mean = sum / n;
    const double d = pd.mean - shift;
    pd.std = std::sqrt(std::max(0.0, ss / n - d * d));
}

RealRowVector sample_row(const FlipoutDense<double>& layer, const RealRowVector& mean, const RealRowVector& variance,
                         Rng& rng)
{
    RealRowVector pre(mean.size());
    for (Eigen::Index j = 0; j < mean.size(); ++j)
        pre(j) = mean(j) + std::sqrt(variance(j)) * rng.normal();
    if (layer.activation == Activation::relu)
        pre = pre.cwiseMax(0.0);
    return pre;
}

// Each Flipout layer's pre-activations are, for one input row and one weight
// draw, independent Gaussians with the moments of preactivation_moments; a
// draw therefore samples those directly instead of materialising full weight
// matrices. The deterministic prefix before the first Flipout layer is shared
// by every draw.
std::vector<PredictiveDistribution> predict_rows(const Model& model, const RealMatrix& x, int n_mc,
                                                 std::span<Rng> rngs)
{
    if (n_mc < 1)
        throw ConfigError("mc_predict: n_mc must be >= 1");
    if (x.cols() != model.config.input_size())
        throw ShapeError("predict: input " + shape_string(x) + " but model expects "
                         + std::to_string(model.config.input_size()) + " features");
    const auto rows = static_cast<std::size_t>(x.rows());
    std::vector<PredictiveDistribution> out(rows);
    const std::size_t k = model.first_stochastic_layer();

    if (k == model.layers.size()) {
        const RealMatrix logits = mean_logits(model, x);
        for (std::size_t r = 0; r < rows; ++r) {
            const double p = somatic_probability(logits(static_cast<Eigen::Index>(r), 0),
                                                 logits(static_cast<Eigen::Index>(r), 1));
            out[r].samples.assign(static_cast<std::size_t>(n_mc), p);
            out[r].mean = p;
            out[r].std = 0.0;
        }
        return out;
    }

    const RealMatrix prefix = mean_forward(model, x, 0, k);
    const auto& first = std::get<FlipoutDense<double>>(model.layers[k]);
    const auto moments = preactivation_moments(first, prefix);
    for (std::size_t r = 0; r < rows; ++r) {
        auto& rng = rngs[r];
        auto& pd = out[r];
        pd.samples.reserve(static_cast<std::size_t>(n_mc));
        const auto row = static_cast<Eigen::Index>(r);
        const RealRowVector mean0 = moments.mean.row(row);
        const RealRowVector var0 = moments.variance.row(row);
        for (int draw = 0; draw < n_mc; ++draw) {
            RealRowVector h = sample_row(first, mean0, var0, rng);
            for (std::size_t i = k + 1; i < model.layers.size(); ++i) {
                if (const auto* d = std::get_if<DenseLayer<double>>(&model.layers[i])) {
                    RealRowVector pre = h * d->weights + d->bias;
                    h = d->activation == Activation::relu ? RealRowVector(pre.cwiseMax(0.0)) : pre;
                } else {
                    const auto& f = std::get<FlipoutDense<double>>(model.layers[i]);
                    const auto m = preactivation_moments(f, RealMatrix(h));
                    h = sample_row(f, m.mean.row(0), m.variance.row(0), rng);
                }
            }
            pd.samples.push_back(somatic_probability(h(0), h(1)));
        }
        summarize(pd);
    }
    return out;
}

} // namespace

void encode_example(const LabeledExample& ex, std::size_t index, const InputTransform& transform,
                    std::span<double> out)
{
    switch (transform.kind) {
    case InputTransform::Kind::none:
        encode_pair_into(ex.pair, out);
        break;
    case InputTransform::Kind::noise:
        encode_pair_into(ex.pair, out);
        perturb_gaussian_in_place(out, transform.sigma,
                                  Rng::stream(transform.seed, StreamDomain::perturb, index).next());
        break;
    case InputTransform::Kind::depth:
        encode_pair_into(reduce_depth(ex.pair, transform.depth, true), out);
        break;
    }
}

RealMatrix encode_rows(const Dataset& ds, std::size_t begin, std::size_t end, const InputTransform& transform)
{
    const auto cols = static_cast<Eigen::Index>(ds.depth()) * 2 * ds.width() * kChannels;
    RealMatrix x(static_cast<Eigen::Index>(end - begin), cols);
    for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = ds.examples[i];
        if (ex.pair.depth() != ds.depth() || ex.pair.width() != ds.width())
            throw ShapeError("dataset examples do not share one (depth, width)");
        encode_example(ex, i, transform,
                       {x.row(static_cast<Eigen::Index>(i - begin)).data(), static_cast<std::size_t>(cols)});
    }
    return x;
}

PredictiveDistribution mc_predict(const Model& model, const RealMatrix& x, int n_mc, Rng& rng)
{
    if (x.rows() != 1)
        throw ShapeError("mc_predict: expects a single input row, got " + shape_string(x));
    return std::move(predict_rows(model, x, n_mc, std::span<Rng>(&rng, 1)).front());
}

std::vector<PredictiveDistribution> predict_batch(const Model& model, const Dataset& ds, int n_mc,
                                                  std::uint64_t seed, const InputTransform& transform)
{
    if (n_mc < 1)
        throw ConfigError("predict_batch: n_mc must be >= 1");
    if (ds.empty())
        throw DegenerateDatasetError("predict_batch: empty dataset");
    if ( (ds.depth() != model.config.depth || ds.width() != model.config.width))
        throw ShapeError("predict_batch: dataset is " + std::to_string(ds.depth()) + "x" + std::to_string(ds.width())
                         + " but model expects " + std::to_string(model.config.depth) + "x"
                         + std::to_string(model.config.width));
    std::vector<PredictiveDistribution> out;
    out.reserve(ds.size());
    for (std::size_t begin = 0; begin < ds.size(); begin += kChunkRows) {
        const std::size_t end = std::min(ds.size(), begin + kChunkRows);
        const RealMatrix x = encode_rows(ds, begin, end, transform);
        std::vector<Rng> rngs;
        rngs.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i)
            rngs.push_back(Rng::stream(seed, StreamDomain::predict, i));
        auto chunk = predict_rows(model, x, n_mc, rngs);
        std::move(chunk.begin(), chunk.end(), std::back_inserter(out));
    }
    return out;
}

void write_prediction_dump(const std::vector<PredictiveDistribution>& preds, const Dataset& ds,
                           const std::filesystem::path& path)
{
    if (preds.size() != ds.size())
        throw ShapeError("prediction dump: " + std::to_string(preds.size()) + " predictions for "
                         + std::to_string(ds.size()) + " examples");
    std::string text;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const nlohmann::json line{
            {"example_index", i},
            {"label", ds.examples[i].label},
            {"mean", preds[i].mean},
            {"std", preds[i].std},
            {"samples", preds[i].samples},
        };
        text += line.dump();
        text += '\n';
    }
    write_file_atomic(path, text);
}

} // namespace bnnvc
