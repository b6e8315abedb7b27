#include "bnnvc/model.hpp"

#include <cmath>

#include "bnnvc/errors.hpp"
#include "bnnvc/fileio.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc {

namespace {

// softplus(-1000) underflows to exactly 0.
constexpr double kClampedRho = -1000.0;

template <class... Ts>
struct overloaded : Ts...
{
    using Ts::operator()...;
};

void fill_glorot(RealMatrix& w, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
}

} // namespace

std::string_view head_kind_name(HeadKind h) noexcept
{
    return h == HeadKind::flipout ? "flipout" : "dense";
}

HeadKind parse_head_kind(std::string_view name)
{
    if (name == "dense")
        return HeadKind::dense;
    if (name == "flipout")
        return HeadKind::flipout;
    throw ConfigError("unknown head kind '" + std::string(name) + "' (expected dense|flipout)");
}

void ModelConfig::validate() const
{
    if (depth < 1 || width < 1)
        throw ConfigError("model input dimensions must be positive");
    for (const int h : hidden) {
        if (h < 1)
            throw ConfigError("hidden sizes must be positive");
    }
    if (!(prior_sigma > 0.0))
        throw ConfigError("prior sigma must be positive");
    if (!(initial_sigma > 0.0))
        throw ConfigError("initial sigma must be positive");
}

std::size_t Model::first_stochastic_layer() const noexcept
{
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (std::holds_alternative<FlipoutDense<double>>(layers[i]))
            return i;
    }
    return layers.size();
}

void Model::clamp_posterior_to_mean()
{
    for (auto& layer : layers) {
        if (auto* f = std::get_if<FlipoutDense<double>>(&layer)) {
            f->posterior.rho.setConstant(kClampedRho);
            f->posterior.bias_rho.setConstant(kClampedRho);
        }
    }
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    Model model;
    model.config = cfg;
    Rng rng(seed, StreamDomain::init);
    const double rho0 = rho_of_sigma(cfg.initial_sigma);

    std::vector<int> sizes{cfg.input_size()};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(2);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool is_head = i + 2 == sizes.size();
        const Activation act = is_head ? Activation::identity : Activation::relu;
        RealMatrix w(sizes[i], sizes[i + 1]);
        fill_glorot(w, rng);
        const RealRowVector b = RealRowVector::Zero(sizes[i + 1]);
        const bool variational = cfg.variational_everywhere || (is_head && cfg.head == HeadKind::flipout);
        if (variational) {
            FlipoutDense<double> f;
            f.posterior.mu = std::move(w);
            f.posterior.rho = RealMatrix::Constant(sizes[i], sizes[i + 1], rho0);
            f.posterior.bias_mu = b;
            f.posterior.bias_rho = RealRowVector::Constant(sizes[i + 1], rho0);
            f.prior.sigma = cfg.prior_sigma;
            f.activation = act;
            model.layers.emplace_back(std::move(f));
        } else {
            model.layers.emplace_back(DenseLayer<double>{std::move(w), b, act});
        }
    }
    return model;
}

RealMatrix mean_forward(const Model& model, const RealMatrix& batch, std::size_t begin, std::size_t end)
{
    RealMatrix h = batch;
    for (std::size_t i = begin; i < end; ++i) {
        h = std::visit(overloaded{
                           [&](const DenseLayer<double>& d) { return dense_forward(d, h).output; },
                           [&](const FlipoutDense<double>& f) { return dense_forward(mean_layer(f), h).output; },
                       },
                       model.layers[i]);
    }
    return h;
}

RealMatrix mean_logits(const Model& model, const RealMatrix& batch)
{
    return mean_forward(model, batch, 0, model.layers.size());
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json to_array(const RealMatrix& m)
{
    return std::vector<double>(m.data(), m.data() + m.size());
}

nlohmann::json to_array(const RealRowVector& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

RealMatrix matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* name)
{
    const auto values = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != rows * cols)
        throw ShapeError(std::string("model file: ") + name + " has " + std::to_string(values.size())
                         + " values, expected " + std::to_string(rows * cols));
    RealMatrix m(rows, cols);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

RealRowVector row_from(const nlohmann::json& j, Eigen::Index cols, const char* name)
{
    RealMatrix m = matrix_from(j, 1, cols, name);
    return m.row(0);
}

} // namespace

nlohmann::json model_to_json(const Model& model)
{
    const auto& c = model.config;
    nlohmann::json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["config"] = {
        {"depth", c.depth},
        {"width", c.width},
        {"hidden", c.hidden},
        {"head", head_kind_name(c.head)},
        {"variational_everywhere", c.variational_everywhere},
        {"prior_sigma", c.prior_sigma},
        {"initial_sigma", c.initial_sigma},
    };
    auto& layers = doc["layers"] = nlohmann::json::array();
    for (const auto& layer : model.layers) {
        std::visit(overloaded{
                       [&](const DenseLayer<double>& d) {
                           layers.push_back({
                               {"kind", "dense"},
                               {"in", d.in()},
                               {"out", d.out()},
                               {"activation", activation_name(d.activation)},
                               {"weights", to_array(d.weights)},
                               {"bias", to_array(d.bias)},
                           });
                       },
                       [&](const FlipoutDense<double>& f) {
                           layers.push_back({
                               {"kind", "flipout"},
                               {"in", f.in()},
                               {"out", f.out()},
                               {"activation", activation_name(f.activation)},
                               {"prior_sigma", f.prior.sigma},
                               {"mu", to_array(f.posterior.mu)},
                               {"rho", to_array(f.posterior.rho)},
                               {"bias_mu", to_array(f.posterior.bias_mu)},
                               {"bias_rho", to_array(f.posterior.bias_rho)},
                           });
                       },
                   },
                   layer);
    }
    return doc;
}

Model model_from_json(const nlohmann::json& doc)
{
    try {
        if (doc.at("format_version").get<int>() != kModelFormatVersion)
            throw ConfigError("unsupported model format_version " + doc.at("format_version").dump());
        Model model;
        const auto& c = doc.at("config");
        model.config.depth = c.at("depth").get<int>();
        model.config.width = c.at("width").get<int>();
        model.config.hidden = c.at("hidden").get<std::vector<int>>();
        model.config.head = parse_head_kind(c.at("head").get<std::string>());
        model.config.variational_everywhere = c.at("variational_everywhere").get<bool>();
        model.config.prior_sigma = c.at("prior_sigma").get<double>();
        model.config.initial_sigma = c.at("initial_sigma").get<double>();
        model.config.validate();

        Eigen::Index expected_in = model.config.input_size();
        for (const auto& l : doc.at("layers")) {
            const auto in = l.at("in").get<Eigen::Index>();
            const auto out = l.at("out").get<Eigen::Index>();
            if (in != expected_in || out < 1)
                throw ShapeError("model file: layer " + std::to_string(model.layers.size()) + " is "
                                 + std::to_string(in) + "x" + std::to_string(out) + ", expected input "
                                 + std::to_string(expected_in));
            expected_in = out;
            const auto act = parse_activation(l.at("activation").get<std::string>());
            const auto kind = l.at("kind").get<std::string>();
            if (kind == "dense") {
                model.layers.emplace_back(DenseLayer<double>{matrix_from(l.at("weights"), in, out, "weights"),
                                                             row_from(l.at("bias"), out, "bias"), act});
            } else if (kind == "flipout") {
                FlipoutDense<double> f;
                f.posterior.mu = matrix_from(l.at("mu"), in, out, "mu");
                f.posterior.rho = matrix_from(l.at("rho"), in, out, "rho");
                f.posterior.bias_mu = row_from(l.at("bias_mu"), out, "bias_mu");
                f.posterior.bias_rho = row_from(l.at("bias_rho"), out, "bias_rho");
                f.prior.sigma = l.at("prior_sigma").get<double>();
                f.prior.validate();
                f.activation = act;
                model.layers.emplace_back(std::move(f));
            } else {
                throw ConfigError("model file: unknown layer kind '" + kind + "'");
            }
        }
        if (model.layers.empty() || expected_in != 2)
            throw ShapeError("model file: network must end in a 2-logit layer");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model file: schema violation: ") + e.what());
    }
}

void save_model(const Model& model, const std::filesystem::path& path)
{
    write_file_atomic(path, model_to_json(model).dump() + "\n");
}

Model load_model(const std::filesystem::path& path)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("model file " + path.string() + " is not valid JSON: " + e.what());
    }
    return model_from_json(doc);
}

} // namespace bnnvc
