#include "bnnvc/dense.hpp"
#include "bnnvc/variational.hpp"

namespace bnnvc {

std::string_view activation_name(Activation a) noexcept
{
    return a == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(std::string_view name)
{
    if (name == "relu")
        return Activation::relu;
    if (name == "identity")
        return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view kl_mode_name(KlMode m) noexcept
{
    return m == KlMode::mc ? "mc" : "analytic";
}

KlMode parse_kl_mode(std::string_view name)
{
    if (name == "analytic")
        return KlMode::analytic;
    if (name == "mc")
        return KlMode::mc;
    throw ConfigError("unknown kl mode '" + std::string(name) + "'");
}

double effective_kl_weight(const ElboConfig& cfg, long dataset_size, long batch_size)
{
    cfg.validate();
    if (batch_size < 1 || dataset_size < batch_size)
        throw ConfigError("elbo_loss: need dataset size >= batch size >= 1, got n=" + std::to_string(dataset_size)
                          + ", m=" + std::to_string(batch_size));
    return cfg.kl_weight.value_or(1.0 / static_cast<double>(dataset_size));
}

double elbo_loss(double nll_batch_mean, double kl_total, const ElboConfig& cfg, long dataset_size, long batch_size)
{
    return nll_batch_mean + effective_kl_weight(cfg, dataset_size, batch_size) * kl_total;
}

} // namespace bnnvc
