#pragma once

#include <cmath>
#include <concepts>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "bnnvc/dense.hpp"
#include "bnnvc/errors.hpp"
#include "bnnvc/linalg.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc {

/// softplus(rho) = ln(1 + e^rho), stable for large |rho|.
template <std::floating_point Scalar>
Scalar sigma_of_rho(Scalar rho)
{
    if (rho > Scalar(0))
        return rho + std::log1p(std::exp(-rho));
    return std::log1p(std::exp(rho));
}

/// d softplus / d rho = logistic(rho).
template <std::floating_point Scalar>
Scalar dsigma_drho(Scalar rho)
{
    if (rho >= Scalar(0))
        return Scalar(1) / (Scalar(1) + std::exp(-rho));
    const Scalar e = std::exp(rho);
    return e / (Scalar(1) + e);
}

/// Inverse softplus, for initialising rho from a target sigma > 0.
template <std::floating_point Scalar>
Scalar rho_of_sigma(Scalar sigma)
{
    if (!(sigma > Scalar(0)))
        throw ConfigError("rho_of_sigma: sigma must be positive");
    if (sigma > Scalar(30))
        return sigma + std::log(-std::expm1(-sigma));
    return std::log(std::expm1(sigma));
}

template <typename Derived>
auto sigma_of_rho(const Eigen::MatrixBase<Derived>& rho)
{
    return rho.unaryExpr([](typename Derived::Scalar r) { return sigma_of_rho(r); });
}

template <typename Derived>
auto dsigma_drho(const Eigen::MatrixBase<Derived>& rho)
{
    return rho.unaryExpr([](typename Derived::Scalar r) { return dsigma_drho(r); });
}

/// Mean-field Gaussian over a dense layer's weights and bias; sigma = softplus(rho).
template <typename Scalar>
struct GaussianPosterior
{
    Matrix<Scalar> mu;  // in x out
    Matrix<Scalar> rho; // in x out
    RowVector<Scalar> bias_mu;
    RowVector<Scalar> bias_rho;

    Eigen::Index in() const noexcept { return mu.rows(); }
    Eigen::Index out() const noexcept { return mu.cols(); }

    void check_shapes() const
    {
        if (rho.rows() != mu.rows() || rho.cols() != mu.cols() || bias_mu.size() != mu.cols()
            || bias_rho.size() != mu.cols())
            throw ShapeError("gaussian posterior: mu " + shape_string(mu) + ", rho " + shape_string(rho)
                             + ", bias_mu " + shape_string(bias_mu) + ", bias_rho " + shape_string(bias_rho));
    }
};

/// Zero-mean isotropic Gaussian prior on every weight and bias.
struct PriorSpec
{
    double sigma = 1.0;

    void validate() const
    {
        if (!(sigma > 0.0))
            throw ConfigError("prior sigma must be positive");
    }
};

template <typename Scalar>
struct FlipoutDense
{
    GaussianPosterior<Scalar> posterior;
    PriorSpec prior;
    Activation activation = Activation::identity;

    Eigen::Index in() const noexcept { return posterior.in(); }
    Eigen::Index out() const noexcept { return posterior.out(); }
};

template <typename Scalar>
struct FlipoutCache
{
    Matrix<Scalar> input;
    Matrix<Scalar> pre_activation;
    Matrix<Scalar> weight_noise;   // epsilon, in x out, shared by the batch
    Matrix<Scalar> weight_delta;   // sigma o epsilon
    Matrix<Scalar> input_signs;    // n x in
    Matrix<Scalar> output_signs;   // n x out
    Matrix<Scalar> bias_noise;     // n x out, one bias draw per row
};

template <typename Scalar>
struct FlipoutForward
{
    Matrix<Scalar> output;
    FlipoutCache<Scalar> cache;
};

/// One Flipout pass: a single perturbation dW = sigma o eps per call, decorrelated
/// across batch rows by Rademacher signs s_n (inputs) and r_n (outputs):
///   out_n = x_n mu + ((x_n o s_n) dW) o r_n + (mu_b + sigma_b o eps_b,n).
/// Draw order: eps (row-major), then per row s_n, r_n, eps_b,n.
template <typename Scalar>
FlipoutForward<Scalar> flipout_forward(const FlipoutDense<Scalar>& layer, const Matrix<Scalar>& batch, Rng& rng)
{
    const auto& q = layer.posterior;
    q.check_shapes();
    if (batch.cols() != q.in())
        throw ShapeError("flipout_forward: batch " + shape_string(batch) + " vs weights " + shape_string(q.mu));
    const Eigen::Index n = batch.rows();
    const Eigen::Index in = q.in();
    const Eigen::Index out = q.out();

    FlipoutForward<Scalar> f;
    auto& c = f.cache;
    c.input = batch;
    c.weight_noise.resize(in, out);
    for (Eigen::Index i = 0; i < c.weight_noise.size(); ++i)
        c.weight_noise.data()[i] = Scalar(rng.normal());
    c.weight_delta = sigma_of_rho(q.rho).cwiseProduct(c.weight_noise);

    c.input_signs.resize(n, in);
    c.output_signs.resize(n, out);
    c.bias_noise.resize(n, out);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index j = 0; j < in; ++j)
            c.input_signs(r, j) = Scalar(rng.rademacher());
        for (Eigen::Index j = 0; j < out; ++j)
            c.output_signs(r, j) = Scalar(rng.rademacher());
        for (Eigen::Index j = 0; j < out; ++j)
            c.bias_noise(r, j) = Scalar(rng.normal());
    }

    const RowVector<Scalar> bias_sigma = sigma_of_rho(q.bias_rho);
    const Matrix<Scalar> signed_input = batch.cwiseProduct(c.input_signs);
    Matrix<Scalar> perturbation = signed_input * c.weight_delta;
    c.pre_activation.noalias() = batch * q.mu;
    c.pre_activation += perturbation.cwiseProduct(c.output_signs);
    c.pre_activation.rowwise() += q.bias_mu;
    c.pre_activation += c.bias_noise * bias_sigma.asDiagonal();
    f.output = apply_activation(layer.activation, c.pre_activation);
    return f;
}

template <typename Scalar>
struct FlipoutGrads
{
    Matrix<Scalar> mu;
    Matrix<Scalar> rho;
    RowVector<Scalar> bias_mu;
    RowVector<Scalar> bias_rho;
    Matrix<Scalar> input; // empty when not requested
};

/// Pathwise gradients of the sampled forward map with eps, s, r held fixed.
template <typename Scalar>
FlipoutGrads<Scalar> flipout_backward(const FlipoutDense<Scalar>& layer, const FlipoutCache<Scalar>& cache,
                                      const Matrix<Scalar>& grad_output, bool need_input_grad = true)
{
    const auto& q = layer.posterior;
    if (grad_output.rows() != cache.pre_activation.rows() || grad_output.cols() != q.out()
        || cache.input.cols() != q.in() || cache.weight_noise.rows() != q.in())
        throw ShapeError("flipout_backward: grad_output " + shape_string(grad_output) + " vs cached output "
                         + shape_string(cache.pre_activation));
    const Matrix<Scalar> grad_pre = activation_backward(layer.activation, cache.pre_activation, grad_output);
    const Matrix<Scalar> grad_signed = grad_pre.cwiseProduct(cache.output_signs);
    const Matrix<Scalar> signed_input = cache.input.cwiseProduct(cache.input_signs);

    FlipoutGrads<Scalar> g;
    g.mu.noalias() = cache.input.transpose() * grad_pre;
    const Matrix<Scalar> grad_delta = signed_input.transpose() * grad_signed;
    g.rho = grad_delta.cwiseProduct(cache.weight_noise).cwiseProduct(dsigma_drho(q.rho));
    g.bias_mu = grad_pre.colwise().sum();
    g.bias_rho = grad_pre.cwiseProduct(cache.bias_noise).colwise().sum().cwiseProduct(dsigma_drho(q.bias_rho));
    if (need_input_grad) {
        g.input.noalias() = grad_pre * q.mu.transpose();
        g.input += (grad_signed * cache.weight_delta.transpose()).cwiseProduct(cache.input_signs);
    }
    return g;
}

/// Baseline estimator: one weight sample and one bias sample shared by every
/// row of the batch (no sign flips).
template <typename Scalar>
Matrix<Scalar> shared_perturbation_forward(const FlipoutDense<Scalar>& layer, const Matrix<Scalar>& batch, Rng& rng)
{
    const auto& q = layer.posterior;
    q.check_shapes();
    if (batch.cols() != q.in())
        throw ShapeError("shared_perturbation_forward: batch " + shape_string(batch) + " vs weights "
                         + shape_string(q.mu));
    Matrix<Scalar> w = q.mu;
    const Matrix<Scalar> sigma = sigma_of_rho(q.rho);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] += sigma.data()[i] * Scalar(rng.normal());
    RowVector<Scalar> b = q.bias_mu;
    for (Eigen::Index j = 0; j < b.size(); ++j)
        b(j) += sigma_of_rho(q.bias_rho(j)) * Scalar(rng.normal());
    Matrix<Scalar> pre = batch * w;
    pre.rowwise() += b;
    return apply_activation(layer.activation, pre);
}

/// Mean and variance of each pre-activation under the posterior for fixed
/// inputs. Every pre-activation of one row is an independent Gaussian.
template <typename Scalar>
struct PreActivationMoments
{
    Matrix<Scalar> mean;
    Matrix<Scalar> variance;
};

template <typename Scalar>
PreActivationMoments<Scalar> preactivation_moments(const FlipoutDense<Scalar>& layer, const Matrix<Scalar>& batch)
{
    const auto& q = layer.posterior;
    q.check_shapes();
    if (batch.cols() != q.in())
        throw ShapeError("preactivation_moments: batch " + shape_string(batch) + " vs weights " + shape_string(q.mu));
    PreActivationMoments<Scalar> m;
    m.mean.noalias() = batch * q.mu;
    m.mean.rowwise() += q.bias_mu;
    const Matrix<Scalar> weight_var = sigma_of_rho(q.rho).array().square().matrix();
    const RowVector<Scalar> bias_var = sigma_of_rho(q.bias_rho).array().square().matrix();
    m.variance.noalias() = batch.array().square().matrix() * weight_var;
    m.variance.rowwise() += bias_var;
    return m;
}

/// Deterministic mean forward: weights and bias at their posterior means.
template <typename Scalar>
DenseLayer<Scalar> mean_layer(const FlipoutDense<Scalar>& layer)
{
    return {layer.posterior.mu, layer.posterior.bias_mu, layer.activation};
}

// ---------------------------------------------------------------------------
// KL divergence

/// KL(q || p) summed over weights and biases:
///   ln(sp/sq) + (sq^2 + mu^2) / (2 sp^2) - 1/2.
template <typename Scalar>
Scalar kl_analytic(const GaussianPosterior<Scalar>& q, const PriorSpec& prior)
{
    prior.validate();
    q.check_shapes();
    const Scalar sp = Scalar(prior.sigma);
    auto term = [sp](Scalar mu, Scalar rho) {
        const Scalar sq = sigma_of_rho(rho);
        return std::log(sp / sq) + (sq * sq + mu * mu) / (Scalar(2) * sp * sp) - Scalar(0.5);
    };
    Scalar total = 0;
    for (Eigen::Index i = 0; i < q.mu.size(); ++i)
        total += term(q.mu.data()[i], q.rho.data()[i]);
    for (Eigen::Index j = 0; j < q.bias_mu.size(); ++j)
        total += term(q.bias_mu(j), q.bias_rho(j));
    return total;
}

template <typename Scalar>
struct PosteriorGrads
{
    Matrix<Scalar> mu;
    Matrix<Scalar> rho;
    RowVector<Scalar> bias_mu;
    RowVector<Scalar> bias_rho;
};

template <typename Scalar>
PosteriorGrads<Scalar> kl_analytic_gradient(const GaussianPosterior<Scalar>& q, const PriorSpec& prior)
{
    prior.validate();
    q.check_shapes();
    const Scalar inv_var = Scalar(1) / (Scalar(prior.sigma) * Scalar(prior.sigma));
    // d/dsigma = -1/sigma + sigma/sp^2, chained through softplus.
    auto drho = [inv_var](Scalar rho) {
        const Scalar s = sigma_of_rho(rho);
        return (-Scalar(1) / s + s * inv_var) * dsigma_drho(rho);
    };
    PosteriorGrads<Scalar> g;
    g.mu = q.mu * inv_var;
    g.bias_mu = q.bias_mu * inv_var;
    g.rho = q.rho.unaryExpr(drho);
    g.bias_rho = q.bias_rho.unaryExpr(drho);
    return g;
}

template <typename Scalar>
struct KlEstimate
{
    Scalar value;
    PosteriorGrads<Scalar> grad; // pathwise, only filled on request
};

/// (1/N) sum_i [ln q(w_i | theta) - ln p(w_i)] with w_i = mu + sigma o eps_i.
/// With `want_grad`, also returns the reparameterised gradient for fixed eps_i.
template <typename Scalar>
KlEstimate<Scalar> kl_mc_estimate(const GaussianPosterior<Scalar>& q, const PriorSpec& prior, long n_samples,
                                  Rng& rng, bool want_grad)
{
    prior.validate();
    q.check_shapes();
    if (n_samples < 1)
        throw ConfigError("kl_mc: n_samples must be >= 1");
    const Scalar sp = Scalar(prior.sigma);
    const Scalar inv_var = Scalar(1) / (sp * sp);
    const Scalar log_sp = std::log(sp);

    const Matrix<Scalar> sigma = sigma_of_rho(q.rho);
    const RowVector<Scalar> bias_sigma = sigma_of_rho(q.bias_rho);
    KlEstimate<Scalar> est{Scalar(0), {}};
    if (want_grad) {
        est.grad.mu = Matrix<Scalar>::Zero(q.mu.rows(), q.mu.cols());
        est.grad.rho = Matrix<Scalar>::Zero(q.mu.rows(), q.mu.cols());
        est.grad.bias_mu = RowVector<Scalar>::Zero(q.bias_mu.size());
        est.grad.bias_rho = RowVector<Scalar>::Zero(q.bias_mu.size());
    }
    // The 0.5 ln(2 pi) terms of ln q and ln p cancel.
    auto visit = [&](Scalar mu, Scalar s, Scalar* g_mu, Scalar* g_sigma) {
        const Scalar eps = Scalar(rng.normal());
        const Scalar w = mu + s * eps;
        const Scalar log_q = -std::log(s) - Scalar(0.5) * eps * eps;
        const Scalar log_p = -log_sp - Scalar(0.5) * w * w * inv_var;
        if (g_mu) {
            *g_mu += w * inv_var;
            *g_sigma += -Scalar(1) / s + w * eps * inv_var;
        }
        return log_q - log_p;
    };
    Matrix<Scalar> g_sigma;
    RowVector<Scalar> g_bias_sigma;
    if (want_grad) {
        g_sigma = Matrix<Scalar>::Zero(q.mu.rows(), q.mu.cols());
        g_bias_sigma = RowVector<Scalar>::Zero(q.bias_mu.size());
    }
    for (long k = 0; k < n_samples; ++k) {
        Scalar sample = 0;
        for (Eigen::Index i = 0; i < q.mu.size(); ++i)
            sample += visit(q.mu.data()[i], sigma.data()[i], want_grad ? est.grad.mu.data() + i : nullptr,
                            want_grad ? g_sigma.data() + i : nullptr);
        for (Eigen::Index j = 0; j < q.bias_mu.size(); ++j)
            sample += visit(q.bias_mu(j), bias_sigma(j), want_grad ? est.grad.bias_mu.data() + j : nullptr,
                            want_grad ? g_bias_sigma.data() + j : nullptr);
        est.value += sample;
    }
    const Scalar n = Scalar(n_samples);
    est.value /= n;
    if (want_grad) {
        est.grad.mu /= n;
        est.grad.bias_mu /= n;
        est.grad.rho = (g_sigma / n).cwiseProduct(dsigma_drho(q.rho));
        est.grad.bias_rho = (g_bias_sigma / n).cwiseProduct(dsigma_drho(q.bias_rho));
    }
    return est;
}

template <typename Scalar>
Scalar kl_mc(const GaussianPosterior<Scalar>& q, const PriorSpec& prior, long n_samples, Rng& rng)
{
    return kl_mc_estimate(q, prior, n_samples, rng, false).value;
}

// ---------------------------------------------------------------------------
// ELBO

enum class KlMode { analytic, mc };

std::string_view kl_mode_name(KlMode m) noexcept;
KlMode parse_kl_mode(std::string_view name);

struct ElboConfig
{
    int n_mc_elbo = 1;
    KlMode kl_mode = KlMode::analytic;
    std::optional<double> kl_weight; // unset: 1 / dataset size

    void validate() const
    {
        if (n_mc_elbo < 1)
            throw ConfigError("n_mc_elbo must be >= 1");
        if (kl_weight && !(*kl_weight > 0.0))
            throw ConfigError("kl_weight must be positive");
    }
};

/// Per-example minibatch objective nll + kl_weight * KL. With the default weight
/// 1/n the expectation over batches is (-ELBO) / n.
double effective_kl_weight(const ElboConfig& cfg, long dataset_size, long batch_size);
double elbo_loss(double nll_batch_mean, double kl_total, const ElboConfig& cfg, long dataset_size, long batch_size);

} // namespace bnnvc
