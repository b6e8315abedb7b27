#include "bnnvc/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <variant>

#include <json.hpp>

#include "bnnvc/errors.hpp"
#include "bnnvc/fileio.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc {

void TrainConfig::validate() const
{
    if (epochs < 0)
        throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1)
        throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0))
        throw ConfigError("learning rate must be positive");
    if (eval_mc_samples < 1)
        throw ConfigError("eval_mc_samples must be positive");
    elbo.validate();
}

namespace {

// Parameter blocks in a fixed order: dense (weights, bias), flipout (mu, rho,
// bias_mu, bias_rho).
std::vector<std::span<double>> parameter_blocks(Model& model)
{
    std::vector<std::span<double>> blocks;
    for (auto& layer : model.layers) {
        if (auto* d = std::get_if<DenseLayer<double>>(&layer)) {
            blocks.push_back(as_span(d->weights));
            blocks.push_back(as_span(d->bias));
        } else {
            auto& q = std::get<FlipoutDense<double>>(layer).posterior;
            blocks.push_back(as_span(q.mu));
            blocks.push_back(as_span(q.rho));
            blocks.push_back(as_span(q.bias_mu));
            blocks.push_back(as_span(q.bias_rho));
        }
    }
    return blocks;
}

template <typename Derived>
void accumulate(std::vector<double>& dst, const Eigen::MatrixBase<Derived>& src, double scale)
{
    const auto& plain = src.derived();
    for (Eigen::Index i = 0; i < plain.size(); ++i)
        dst[static_cast<std::size_t>(i)] += scale * plain.data()[i];
}

struct StepResult
{
    double nll = 0.0;
    double kl = 0.0;
    int correct = 0;
};

using LayerCache = std::variant<DenseCache<double>, FlipoutCache<double>>;

class Trainer
{
public:
    Trainer(Model& model, const TrainConfig& tc, std::size_t dataset_size)
        : model_(model), tc_(tc), dataset_size_(static_cast<long>(dataset_size)),
          noise_rng_(tc.seed, StreamDomain::train_noise)
    {
        state_.hyper.learning_rate = tc.learning_rate;
        for (const auto block : parameter_blocks(model_))
            grads_.emplace_back(block.size(), 0.0);
    }

    StepResult step(const RealMatrix& x, std::span<const int> labels)
    {
        for (auto& g : grads_)
            std::fill(g.begin(), g.end(), 0.0);
        const int reps = model_.is_stochastic() ? tc_.elbo.n_mc_elbo : 1;
        const double inv_reps = 1.0 / reps;
        const double kl_weight = model_.is_stochastic()
            ? effective_kl_weight(tc_.elbo, dataset_size_, static_cast<long>(labels.size()))
            : 0.0;

        StepResult result;
        for (int rep = 0; rep < reps; ++rep) {
            std::vector<LayerCache> caches;
            caches.reserve(model_.layers.size());
            RealMatrix h = x;
            for (const auto& layer : model_.layers) {
                if (const auto* d = std::get_if<DenseLayer<double>>(&layer)) {
                    auto f = dense_forward(*d, h);
                    h = std::move(f.output);
                    caches.emplace_back(std::move(f.cache));
                } else {
                    auto f = flipout_forward(std::get<FlipoutDense<double>>(layer), h, noise_rng_);
                    h = std::move(f.output);
                    caches.emplace_back(std::move(f.cache));
                }
            }
            const auto ce = softmax_cross_entropy(h, labels);
            result.nll += inv_reps * ce.loss;
            if (rep + 1 == reps) {
                for (Eigen::Index r = 0; r < h.rows(); ++r)
                    result.correct += (h(r, 1) > h(r, 0) ? 1 : 0) == labels[static_cast<std::size_t>(r)];
            }

            RealMatrix grad = ce.grad_logits;
            std::size_t block = grads_.size();
            for (std::size_t i = model_.layers.size(); i-- > 0;) {
                const bool need_input = i > 0;
                if (const auto* d = std::get_if<DenseLayer<double>>(&model_.layers[i])) {
                    auto g = dense_backward(*d, std::get<DenseCache<double>>(caches[i]), grad, need_input);
                    block -= 2;
                    accumulate(grads_[block], g.weights, inv_reps);
                    accumulate(grads_[block + 1], g.bias, inv_reps);
                    grad = std::move(g.input);
                } else {
                    const auto& f = std::get<FlipoutDense<double>>(model_.layers[i]);
                    auto g = flipout_backward(f, std::get<FlipoutCache<double>>(caches[i]), grad, need_input);
                    block -= 4;
                    accumulate(grads_[block], g.mu, inv_reps);
                    accumulate(grads_[block + 1], g.rho, inv_reps);
                    accumulate(grads_[block + 2], g.bias_mu, inv_reps);
                    accumulate(grads_[block + 3], g.bias_rho, inv_reps);
                    add_kl(f, block, kl_weight * inv_reps, inv_reps, result);
                    grad = std::move(g.input);
                }
            }
        }

        if (tc_.freeze_variance)
            zero_rho_grads();
        auto blocks = parameter_blocks(model_);
        std::vector<ParamRef<double>> refs;
        refs.reserve(blocks.size());
        for (std::size_t k = 0; k < blocks.size(); ++k)
            refs.push_back({blocks[k], grads_[k]});
        adam_step<double>(refs, state_);
        return result;
    }

    double loss_of(const StepResult& r, std::size_t batch) const
    {
        if (!model_.is_stochastic())
            return r.nll;
        return elbo_loss(r.nll, r.kl, tc_.elbo, dataset_size_, static_cast<long>(batch));
    }

private:
    void add_kl(const FlipoutDense<double>& f, std::size_t block, double grad_scale, double value_scale,
                StepResult& result)
    {
        if (tc_.elbo.kl_mode == KlMode::analytic) {
            result.kl += value_scale * kl_analytic(f.posterior, f.prior);
            const auto g = kl_analytic_gradient(f.posterior, f.prior);
            accumulate(grads_[block], g.mu, grad_scale);
            accumulate(grads_[block + 1], g.rho, grad_scale);
            accumulate(grads_[block + 2], g.bias_mu, grad_scale);
            accumulate(grads_[block + 3], g.bias_rho, grad_scale);
        } else {
            const auto est = kl_mc_estimate(f.posterior, f.prior, 1, noise_rng_, true);
            result.kl += value_scale * est.value;
            accumulate(grads_[block], est.grad.mu, grad_scale);
            accumulate(grads_[block + 1], est.grad.rho, grad_scale);
            accumulate(grads_[block + 2], est.grad.bias_mu, grad_scale);
            accumulate(grads_[block + 3], est.grad.bias_rho, grad_scale);
        }
    }

    void zero_rho_grads()
    {
        std::size_t block = 0;
        for (const auto& layer : model_.layers) {
            if (std::holds_alternative<DenseLayer<double>>(layer)) {
                block += 2;
                continue;
            }
            std::fill(grads_[block + 1].begin(), grads_[block + 1].end(), 0.0);
            std::fill(grads_[block + 3].begin(), grads_[block + 3].end(), 0.0);
            block += 4;
        }
    }

    Model& model_;
    const TrainConfig& tc_;
    long dataset_size_;
    Rng noise_rng_;
    AdamState<double> state_;
    std::vector<std::vector<double>> grads_;
};

void check_compatible(const ModelConfig& mc, const Dataset& ds, const char* which)
{
    if (ds.empty())
        throw ConfigError(std::string("train_model: ") + which + " dataset is empty");
    if (ds.depth() != mc.depth || ds.width() != mc.width)
        throw ConfigError(std::string("train_model: ") + which + " dataset is " + std::to_string(ds.depth()) + "x"
                          + std::to_string(ds.width()) + " but the model expects " + std::to_string(mc.depth) + "x"
                          + std::to_string(mc.width));
}

} // namespace

TrainResult train_model(const ModelConfig& mc, const TrainConfig& tc, const Dataset& train, const Dataset& test)
{
    mc.validate();
    tc.validate();
    check_compatible(mc, train, "training");
    check_compatible(mc, test, "test");

    TrainResult result{init_model(mc, tc.seed), {}};
    Trainer trainer(result.model, tc, train.size());
    const InferenceConfig eval_cfg{tc.eval_mc_samples, tc.seed};

    std::vector<std::size_t> order(train.size());
    const auto cols = static_cast<Eigen::Index>(mc.input_size());
    RealMatrix x;
    std::vector<int> labels;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = Rng::stream(tc.seed, StreamDomain::shuffle, static_cast<std::uint64_t>(epoch));
        shuffle(order.begin(), order.end(), shuffle_rng);

        double weighted_loss = 0.0;
        long correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(tc.batch_size));
            x.resize(static_cast<Eigen::Index>(end - begin), cols);
            labels.resize(end - begin);
            for (std::size_t k = begin; k < end; ++k) {
                const auto& ex = train.examples[order[k]];
                encode_pair_into(ex.pair, {x.row(static_cast<Eigen::Index>(k - begin)).data(),
                                           static_cast<std::size_t>(cols)});
                labels[k - begin] = ex.label;
            }
            const auto step = trainer.step(x, labels);
            weighted_loss += trainer.loss_of(step, end - begin) * static_cast<double>(end - begin);
            correct += step.correct;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss = weighted_loss / static_cast<double>(train.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        rec.test_accuracy = evaluate_accuracy(result.model, test, eval_cfg).accuracy;
        result.history.epochs.push_back(rec);
    }
    return result;
}

Metrics score_predictions(const std::vector<PredictiveDistribution>& preds, const Dataset& ds)
{
    if (ds.empty())
        throw DegenerateDatasetError("evaluate_accuracy: empty dataset");
    if (preds.size() != ds.size())
        throw ShapeError("score_predictions: " + std::to_string(preds.size()) + " predictions for "
                         + std::to_string(ds.size()) + " examples");
    Metrics m;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int y = ds.examples[i].label;
        const double p_true = y == 1 ? preds[i].mean : 1.0 - preds[i].mean;
        m.accuracy += preds[i].predicted_label() == y ? 1.0 : 0.0;
        m.mean_nll -= std::log(std::max(p_true, std::numeric_limits<double>::min()));
    }
    m.accuracy /= static_cast<double>(ds.size());
    m.mean_nll /= static_cast<double>(ds.size());
    return m;
}

Metrics evaluate_accuracy(const Model& model, const Dataset& ds, const InferenceConfig& cfg)
{
    if (ds.empty())
        throw DegenerateDatasetError("evaluate_accuracy: empty dataset");
    return score_predictions(predict_batch(model, ds, cfg.n_mc, cfg.seed), ds);
}

std::string history_to_jsonl(const TrainHistory& history)
{
    std::string text;
    for (const auto& rec : history.epochs) {
        const nlohmann::json line{
            {"epoch", rec.epoch},
            {"loss", rec.loss},
            {"train_acc", rec.train_accuracy},
            {"test_acc", rec.test_accuracy},
        };
        text += line.dump();
        text += '\n';
    }
    return text;
}

void write_history(const TrainHistory& history, const std::filesystem::path& path)
{
    write_file_atomic(path, history_to_jsonl(history));
}

} // namespace bnnvc
