#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnnvc/errors.hpp"
#include "bnnvc/linalg.hpp"

namespace bnnvc {

enum class Activation { identity, relu };

std::string_view activation_name(Activation a) noexcept;
Activation parse_activation(std::string_view name);

template <typename Scalar>
Matrix<Scalar> apply_activation(Activation act, const Matrix<Scalar>& pre)
{
    if (act == Activation::relu)
        return pre.cwiseMax(Scalar(0));
    return pre;
}

/// grad wrt pre-activation given grad wrt activation output.
template <typename Scalar>
Matrix<Scalar> activation_backward(Activation act, const Matrix<Scalar>& pre, const Matrix<Scalar>& grad_out)
{
    if (act == Activation::relu)
        return (pre.array() > Scalar(0)).select(grad_out, Scalar(0));
    return grad_out;
}

template <typename Scalar>
struct DenseLayer
{
    Matrix<Scalar> weights; // in x out
    RowVector<Scalar> bias; // out
    Activation activation = Activation::identity;

    Eigen::Index in() const noexcept { return weights.rows(); }
    Eigen::Index out() const noexcept { return weights.cols(); }
};

template <typename Scalar>
struct DenseCache
{
    Matrix<Scalar> input;
    Matrix<Scalar> pre_activation;
};

template <typename Scalar>
struct DenseForward
{
    Matrix<Scalar> output;
    DenseCache<Scalar> cache;
};

template <typename Scalar>
struct DenseGrads
{
    Matrix<Scalar> weights;
    RowVector<Scalar> bias;
    Matrix<Scalar> input; // empty when not requested
};

template <typename Scalar>
DenseForward<Scalar> dense_forward(const DenseLayer<Scalar>& layer, const Matrix<Scalar>& batch)
{
    if (batch.cols() != layer.in() || layer.bias.size() != layer.out())
        throw ShapeError("dense_forward: batch " + shape_string(batch) + " vs weights "
                         + shape_string(layer.weights) + " / bias " + shape_string(layer.bias));
    DenseForward<Scalar> f;
    f.cache.input = batch;
    f.cache.pre_activation.noalias() = batch * layer.weights;
    f.cache.pre_activation.rowwise() += layer.bias;
    f.output = apply_activation(layer.activation, f.cache.pre_activation);
    return f;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const DenseLayer<Scalar>& layer, const DenseCache<Scalar>& cache,
                                  const Matrix<Scalar>& grad_output, bool need_input_grad = true)
{
    if (grad_output.rows() != cache.pre_activation.rows() || grad_output.cols() != layer.out()
        || cache.input.cols() != layer.in())
        throw ShapeError("dense_backward: grad_output " + shape_string(grad_output) + " vs cached output "
                         + shape_string(cache.pre_activation));
    const Matrix<Scalar> grad_pre = activation_backward(layer.activation, cache.pre_activation, grad_output);
    DenseGrads<Scalar> g;
    g.weights.noalias() = cache.input.transpose() * grad_pre;
    g.bias = grad_pre.colwise().sum();
    if (need_input_grad)
        g.input.noalias() = grad_pre * layer.weights.transpose();
    return g;
}

/// Row-wise log-softmax in the log-sum-exp form.
template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& logits)
{
    Matrix<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
        out.row(i) = logits.row(i).array() - lse;
    }
    return out;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits)
{
    return log_softmax_rows(logits).array().exp().matrix();
}

template <typename Scalar>
struct CrossEntropy
{
    Scalar loss;               // mean over rows
    Matrix<Scalar> grad_logits; // (softmax - onehot) / n
};

template <typename Scalar>
CrossEntropy<Scalar> softmax_cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels)
{
    if (static_cast<std::size_t>(logits.rows()) != labels.size() || logits.rows() == 0)
        throw ShapeError("softmax_cross_entropy: logits " + shape_string(logits) + " vs "
                         + std::to_string(labels.size()) + " labels");
    if (!logits.allFinite())
        throw NumericError("softmax_cross_entropy: non-finite logits");
    const auto n = static_cast<Scalar>(logits.rows());
    const Matrix<Scalar> log_p = log_softmax_rows(logits);
    CrossEntropy<Scalar> ce{Scalar(0), log_p.array().exp().matrix()};
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols())
            throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
        ce.loss -= log_p(i, y);
        ce.grad_logits(i, y) -= Scalar(1);
    }
    ce.loss /= n;
    ce.grad_logits /= n;
    return ce;
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct ParamRef
{
    std::span<Scalar> value;
    std::span<const Scalar> grad;
};

struct AdamHyper
{
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState
{
    AdamHyper hyper;
    long step = 0;
    std::vector<std::vector<Scalar>> first_moment;
    std::vector<std::vector<Scalar>> second_moment;
};

/// Bias-corrected Adam update. Moment buffers are allocated on the first call
/// and must mirror `params` on every later call.
template <typename Scalar>
void adam_step(std::span<const ParamRef<Scalar>> params, AdamState<Scalar>& state)
{
    for (const auto& p : params) {
        if (p.value.size() != p.grad.size())
            throw ShapeError("adam_step: parameter of size " + std::to_string(p.value.size())
                             + " paired with gradient of size " + std::to_string(p.grad.size()));
    }
    if (state.first_moment.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.value.size(), Scalar(0));
            state.second_moment.emplace_back(p.value.size(), Scalar(0));
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size())
                         + " parameters, got " + std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (state.first_moment[k].size() != params[k].value.size())
            throw ShapeError("adam_step: moment buffer " + std::to_string(k) + " does not match its parameter");
    }

    ++state.step;
    const auto& h = state.hyper;
    const Scalar b1 = Scalar(h.beta1);
    const Scalar b2 = Scalar(h.beta2);
    const Scalar correction1 = Scalar(1) - std::pow(b1, Scalar(state.step));
    const Scalar correction2 = Scalar(1) - std::pow(b2, Scalar(state.step));
    const Scalar lr = Scalar(h.learning_rate);
    const Scalar eps = Scalar(h.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        const auto& p = params[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const Scalar g = p.grad[i];
            m[i] = b1 * m[i] + (Scalar(1) - b1) * g;
            v[i] = b2 * v[i] + (Scalar(1) - b2) * g * g;
            const Scalar m_hat = m[i] / correction1;
            const Scalar v_hat = v[i] / correction2;
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

template <typename Derived>
auto as_span(Eigen::PlainObjectBase<Derived>& m)
{
    return std::span<typename Derived::Scalar>(m.data(), static_cast<std::size_t>(m.size()));
}

template <typename Derived>
auto as_span(const Eigen::PlainObjectBase<Derived>& m)
{
    return std::span<const typename Derived::Scalar>(m.data(), static_cast<std::size_t>(m.size()));
}

// ---------------------------------------------------------------------------
// Finite differences

/// Loss callback: returns the loss at `x`; fills `grad` with the analytic
/// gradient when it is non-empty.
template <typename Scalar>
using LossFunction = std::function<Scalar(std::span<const Scalar> x, std::span<Scalar> grad)>;

/// Max over coordinates of |a - n| / max(1e-12, |a| + |n|), where n is the
/// central difference with step h.
template <typename Scalar>
Scalar finite_difference_check(const LossFunction<Scalar>& loss_fn, std::span<const Scalar> params, Scalar h)
{
    if (!(h > Scalar(0)))
        throw ConfigError("finite_difference_check: step h must be positive");
    std::vector<Scalar> x(params.begin(), params.end());
    std::vector<Scalar> analytic(x.size());
    const Scalar base = loss_fn(x, analytic);
    if (!std::isfinite(base))
        throw NumericError("finite_difference_check: non-finite loss at the base point");

    Scalar worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Scalar saved = x[i];
        x[i] = saved + h;
        const Scalar plus = loss_fn(x, {});
        x[i] = saved - h;
        const Scalar minus = loss_fn(x, {});
        x[i] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus))
            throw NumericError("finite_difference_check: non-finite loss at coordinate " + std::to_string(i));
        const Scalar numeric = (plus - minus) / (Scalar(2) * h);
        const Scalar denom = std::max(Scalar(1e-12), std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

} // namespace bnnvc
