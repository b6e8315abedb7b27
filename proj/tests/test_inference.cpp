#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "bnnvc/errors.hpp"
#include "bnnvc/inference.hpp"
#include "bnnvc/model.hpp"
#include "support.hpp"

using namespace bnnvc;

namespace {

ModelConfig config(HeadKind head, bool everywhere = false)
{
    ModelConfig mc;
    mc.depth = 6;
    mc.width = 3;
    mc.hidden = {12, 6};
    mc.head = head;
    mc.variational_everywhere = everywhere;
    mc.initial_sigma = 0.3;
    return mc;
}

Dataset data(std::size_t n)
{
    GeneratorConfig g;
    g.depth = 6;
    g.width = 3;
    return generate_dataset(g, n, 17);
}

double softmax_positive(const RealMatrix& logits)
{
    return softmax_rows(logits)(0, 1);
}

// One draw with explicitly sampled weight matrices, for comparison with the
// moment-matched sampler used by mc_predict.
double full_weight_draw(const Model& m, const RealMatrix& x, Rng& rng)
{
    RealMatrix h = x;
    for (const auto& layer : m.layers) {
        if (const auto* d = std::get_if<DenseLayer<double>>(&layer)) {
            h = dense_forward(*d, h).output;
            continue;
        }
        const auto& f = std::get<FlipoutDense<double>>(layer);
        DenseLayer<double> sampled = mean_layer(f);
        const RealMatrix sigma = sigma_of_rho(f.posterior.rho);
        for (Eigen::Index i = 0; i < sampled.weights.size(); ++i)
            sampled.weights.data()[i] += sigma.data()[i] * rng.normal();
        const RealRowVector bsigma = sigma_of_rho(f.posterior.bias_rho);
        for (Eigen::Index j = 0; j < sampled.bias.size(); ++j)
            sampled.bias(j) += bsigma(j) * rng.normal();
        h = dense_forward(sampled, h).output;
    }
    return softmax_positive(h);
}

} // namespace

TEST_CASE("dense models have a degenerate predictive distribution")
{
    const auto m = init_model(config(HeadKind::dense), 1);
    const auto ds = data(5);
    const RealMatrix x = encode_rows(ds, 0, 1);
    Rng a(1), b(2);
    const auto p = mc_predict(m, x, 5, a);
    CHECK(p.n_mc() == 5);
    CHECK(p.std == 0.0);
    CHECK(p.mean == doctest::Approx(softmax_positive(mean_logits(m, x))).epsilon(1e-15));
    CHECK(mc_predict(m, x, 5, b).samples == p.samples);
}

TEST_CASE("flipout predictions: ranges, determinism, singleton batches")
{
    const auto m = init_model(config(HeadKind::flipout, true), 2);
    const auto ds = data(12);
    const auto preds = predict_batch(m, ds, 30, 99);
    REQUIRE(preds.size() == 12);
    bool any_spread = false;
    for (const auto& p : preds) {
        CHECK(p.n_mc() == 30);
        for (const double s : p.samples)
            REQUIRE((s >= 0.0 && s <= 1.0));
        CHECK(p.mean >= 0.0);
        CHECK(p.mean <= 1.0);
        CHECK(p.std <= 0.5);
        any_spread |= p.std > 0.0;
    }
    CHECK(any_spread);

    const auto again = predict_batch(m, ds, 30, 99);
    for (std::size_t i = 0; i < preds.size(); ++i)
        CHECK(again[i].samples == preds[i].samples);

    // A batch of one draws from the same stream as a direct mc_predict call.
    Dataset one;
    one.examples.push_back(ds.examples[0]);
    auto rng = Rng::stream(99, StreamDomain::predict, 0);
    CHECK(mc_predict(m, encode_rows(one, 0, 1), 30, rng).samples == predict_batch(m, one, 30, 99)[0].samples);
    // Example i's draws do not depend on its batch neighbours (up to GEMM
    // versus GEMV rounding in the deterministic prefix).
    const auto alone = predict_batch(m, one, 30, 99)[0].samples;
    for (std::size_t d = 0; d < alone.size(); ++d)
        CHECK(alone[d] == doctest::Approx(preds[0].samples[d]).epsilon(1e-12));

    CHECK_THROWS_AS(predict_batch(m, ds, 0, 1), ConfigError);
    CHECK_THROWS_AS(predict_batch(m, Dataset{}, 5, 1), DegenerateDatasetError);
}

TEST_CASE("clamped posterior gives zero spread")
{
    auto m = init_model(config(HeadKind::flipout, true), 3);
    m.clamp_posterior_to_mean();
    for (const auto& p : predict_batch(m, data(6), 10, 1))
        CHECK(p.std == 0.0);
}

TEST_CASE("MC mean converges")
{
    const auto m = init_model(config(HeadKind::flipout, true), 4);
    const RealMatrix x = encode_rows(data(1), 0, 1);
    Rng a(5), b(6);
    const double m1 = mc_predict(m, x, 1000, a).mean;
    const double m2 = mc_predict(m, x, 10000, b).mean;
    CHECK(std::abs(m1 - m2) < 0.02);
}

TEST_CASE("the moment sampler matches explicit weight sampling")
{
    // Only the head is variational, so the head's pre-activation is exactly
    // Gaussian and both samplers have the same distribution.
    const auto m = init_model(config(HeadKind::flipout), 5);
    const RealMatrix x = encode_rows(data(3), 2, 3);
    Rng a(7), b(8);
    const auto p = mc_predict(m, x, 20000, a);
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < 20000; ++k) {
        const double v = full_weight_draw(m, x, b);
        s += v;
        s2 += v * v;
    }
    const double mean = s / 20000.0;
    const double sd = std::sqrt(s2 / 20000.0 - mean * mean);
    CHECK(std::abs(p.mean - mean) < 4.0 * sd / std::sqrt(10000.0));
    CHECK(p.std == doctest::Approx(sd).epsilon(0.05));
}

TEST_CASE("input transforms")
{
    const auto ds = data(3);
    const RealMatrix plain = encode_rows(ds, 0, 3);
    CHECK(encode_rows(ds, 0, 3, InputTransform::gaussian_noise(0.0, 1)) == plain);
    CHECK(encode_rows(ds, 0, 3, InputTransform::reduced_depth(6)) == plain);
    const RealMatrix noisy = encode_rows(ds, 0, 3, InputTransform::gaussian_noise(0.5, 1));
    CHECK(noisy != plain);
    CHECK(encode_rows(ds, 1, 3, InputTransform::gaussian_noise(0.5, 1)) == noisy.bottomRows(2));
    const RealMatrix shallow = encode_rows(ds, 0, 1, InputTransform::reduced_depth(2));
    // Rows 2..5 of the pileup become GAP, i.e. zero features.
    CHECK(shallow.rightCols(shallow.cols() - 2 * 6 * 3).isZero());
    CHECK(shallow.leftCols(2 * 6 * 3) == plain.topRows(1).leftCols(2 * 6 * 3));
}

TEST_CASE("prediction dump")
{
    const auto dir = test::scratch_dir("dump");
    const auto m = init_model(config(HeadKind::flipout), 6);
    const auto ds = data(4);
    const auto preds = predict_batch(m, ds, 3, 1);
    write_prediction_dump(preds, ds, dir / "p.jsonl");
    std::ifstream in(dir / "p.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("example_index") == n);
        CHECK(j.at("label") == ds.examples[static_cast<std::size_t>(n)].label);
        CHECK(j.at("samples").size() == 3);
        CHECK(j.at("mean").get<double>() == preds[static_cast<std::size_t>(n)].mean);
        ++n;
    }
    CHECK(n == 4);
}

TEST_CASE("model files round trip exactly")
{
    const auto dir = test::scratch_dir("model");
    const auto m = init_model(config(HeadKind::flipout, true), 7);
    save_model(m, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    CHECK(model_to_json(back) == model_to_json(m));
    const auto ds = data(5);
    const auto a = predict_batch(m, ds, 7, 3);
    const auto b = predict_batch(back, ds, 7, 3);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i].samples == b[i].samples);

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_model(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_model(dir / "none.json"), IoError);
}
