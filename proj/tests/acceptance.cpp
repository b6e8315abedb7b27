// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "bnnvc/calibration.hpp"
#include "bnnvc/cli.hpp"
#include "bnnvc/experiments.hpp"
#include "bnnvc/fileio.hpp"
#include "bnnvc/training.hpp"
#include "support.hpp"

using namespace bnnvc;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

template <typename Fill>
LossFunction<double> with_grad(Fill fill)
{
    return fill;
}

Outcome gradient_correctness()
{
    double worst = 0.0;
    int checks = 0;
    auto track = [&](double e) {
        worst = std::max(worst, e);
        ++checks;
    };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        for (const auto act : {Activation::identity, Activation::relu}) {
            // Dense layer: weights, bias and input.
            DenseLayer<double> d{test::random_matrix(5, 4, rng), test::random_matrix(1, 4, rng), act};
            const RealMatrix x = test::random_matrix(3, 5, rng);
            const RealMatrix up = test::random_matrix(3, 4, rng);
            std::vector<double> p(d.weights.data(), d.weights.data() + d.weights.size());
            p.insert(p.end(), d.bias.data(), d.bias.data() + d.bias.size());
            track(finite_difference_check<double>(
                [&](std::span<const double> v, std::span<double> g) {
                    auto l = d;
                    std::copy(v.begin(), v.begin() + 20, l.weights.data());
                    std::copy(v.begin() + 20, v.end(), l.bias.data());
                    const auto f = dense_forward(l, x);
                    if (!g.empty()) {
                        const auto gr = dense_backward(l, f.cache, up);
                        std::copy(gr.weights.data(), gr.weights.data() + 20, g.begin());
                        std::copy(gr.bias.data(), gr.bias.data() + 4, g.begin() + 20);
                    }
                    return f.output.cwiseProduct(up).sum();
                },
                std::span<const double>(p), 1e-6));
            track(finite_difference_check<double>(
                [&](std::span<const double> v, std::span<double> g) {
                    const RealMatrix xin = Eigen::Map<const RealMatrix>(v.data(), 3, 5);
                    const auto f = dense_forward(d, xin);
                    if (!g.empty()) {
                        const auto gr = dense_backward(d, f.cache, up);
                        std::copy(gr.input.data(), gr.input.data() + gr.input.size(), g.begin());
                    }
                    return f.output.cwiseProduct(up).sum();
                },
                as_span(x), 1e-6));

            // Flipout layer with frozen noise: mu, rho, bias mu/rho and input.
            FlipoutDense<double> fl;
            fl.posterior = {test::random_matrix(5, 4, rng), test::random_matrix(5, 4, rng, 0.5).array() - 1.0,
                            test::random_matrix(1, 4, rng),
                            RealRowVector(test::random_matrix(1, 4, rng, 0.5).array() - 1.0)};
            fl.activation = act;
            const auto& q = fl.posterior;
            std::vector<double> fp;
            for (const RealMatrix* m : {&q.mu, &q.rho})
                fp.insert(fp.end(), m->data(), m->data() + m->size());
            for (const RealRowVector* b : {&q.bias_mu, &q.bias_rho})
                fp.insert(fp.end(), b->data(), b->data() + b->size());
            const std::uint64_t noise_seed = rng.next();
            track(finite_difference_check<double>(
                [&](std::span<const double> v, std::span<double> g) {
                    auto l = fl;
                    std::copy(v.begin(), v.begin() + 20, l.posterior.mu.data());
                    std::copy(v.begin() + 20, v.begin() + 40, l.posterior.rho.data());
                    std::copy(v.begin() + 40, v.begin() + 44, l.posterior.bias_mu.data());
                    std::copy(v.begin() + 44, v.end(), l.posterior.bias_rho.data());
                    Rng frozen(noise_seed);
                    const auto f = flipout_forward(l, x, frozen);
                    if (!g.empty()) {
                        const auto gr = flipout_backward(l, f.cache, up);
                        auto it = std::copy(gr.mu.data(), gr.mu.data() + 20, g.begin());
                        it = std::copy(gr.rho.data(), gr.rho.data() + 20, it);
                        it = std::copy(gr.bias_mu.data(), gr.bias_mu.data() + 4, it);
                        std::copy(gr.bias_rho.data(), gr.bias_rho.data() + 4, it);
                    }
                    return f.output.cwiseProduct(up).sum();
                },
                std::span<const double>(fp), 1e-6));
            track(finite_difference_check<double>(
                [&](std::span<const double> v, std::span<double> g) {
                    const RealMatrix xin = Eigen::Map<const RealMatrix>(v.data(), 3, 5);
                    Rng frozen(noise_seed);
                    const auto f = flipout_forward(fl, xin, frozen);
                    if (!g.empty()) {
                        const auto gr = flipout_backward(fl, f.cache, up);
                        std::copy(gr.input.data(), gr.input.data() + gr.input.size(), g.begin());
                    }
                    return f.output.cwiseProduct(up).sum();
                },
                as_span(x), 1e-6));
        }

        // Softmax cross-entropy.
        const RealMatrix logits = test::random_matrix(6, 2, rng, 2.0);
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i)
            labels.push_back(static_cast<int>(rng.below(2)));
        track(finite_difference_check<double>(
            [&](std::span<const double> v, std::span<double> g) {
                const RealMatrix z = Eigen::Map<const RealMatrix>(v.data(), 6, 2);
                const auto ce = softmax_cross_entropy(z, labels);
                if (!g.empty())
                    std::copy(ce.grad_logits.data(), ce.grad_logits.data() + 12, g.begin());
                return ce.loss;
            },
            as_span(logits), 1e-6));
    }
    return {worst < 1e-4, fmt("%d checks over 5 seeds, max relative error %.2e (< 1e-4)", checks, worst)};
}

// ---------------------------------------------------------------------------
// 2. Flipout unbiasedness

Outcome flipout_unbiased()
{
    Rng rng(21);
    FlipoutDense<double> l;
    l.posterior = {test::random_matrix(6, 4, rng), RealMatrix::Constant(6, 4, rho_of_sigma(0.5)),
                   test::random_matrix(1, 4, rng), RealRowVector::Constant(4, rho_of_sigma(0.5))};
    const RealMatrix x = test::random_matrix(1, 6, rng);
    const RealMatrix expected = dense_forward(mean_layer(l), x).output;
    const int runs = 10000;
    RealMatrix sum = RealMatrix::Zero(1, 4), sum_sq = RealMatrix::Zero(1, 4);
    Rng noise(22);
    for (int k = 0; k < runs; ++k) {
        const RealMatrix y = flipout_forward(l, x, noise).output;
        sum += y;
        sum_sq += y.cwiseProduct(y);
    }
    double worst_z = 0.0;
    for (int j = 0; j < 4; ++j) {
        const double mean = sum(0, j) / runs;
        const double var = sum_sq(0, j) / runs - mean * mean;
        worst_z = std::max(worst_z, std::abs(mean - expected(0, j)) / std::sqrt(var / runs));
    }
    return {worst_z < 4.0, fmt("10^4 forwards, worst |z| over 4 outputs = %.2f (< 4)", worst_z)};
}

// ---------------------------------------------------------------------------
// 3. Variance reduction

Outcome flipout_variance_reduction()
{
    Rng rng(31);
    FlipoutDense<double> l;
    l.posterior = {test::random_matrix(16, 1, rng), RealMatrix::Constant(16, 1, rho_of_sigma(0.5)),
                   test::random_matrix(1, 1, rng), RealRowVector::Constant(1, rho_of_sigma(0.5))};
    const RealMatrix x = test::random_matrix(32, 16, rng);
    const int trials = 200;
    Rng a(32), b(33);
    std::vector<double> flip, shared;
    for (int t = 0; t < trials; ++t) {
        flip.push_back(flipout_forward(l, x, a).output.mean());
        shared.push_back(shared_perturbation_forward(l, x, b).mean());
    }
    auto var = [](const std::vector<double>& v) {
        double m = 0.0;
        for (const double x : v)
            m += x;
        m /= static_cast<double>(v.size());
        double s = 0.0;
        for (const double x : v)
            s += (x - m) * (x - m);
        return s / static_cast<double>(v.size() - 1);
    };
    const double vf = var(flip), vs = var(shared);
    const double f = vs / vf;
    const boost::math::fisher_f dist(trials - 1, trials - 1);
    const double p = boost::math::cdf(boost::math::complement(dist, f));
    return {vf < vs && p < 0.05,
            fmt("batch 32, %d trials: var flipout %.3e vs shared %.3e, F = %.1f, one-sided p = %.1e", trials, vf, vs,
                f, p)};
}

// ---------------------------------------------------------------------------
// 4. KL consistency

Outcome kl_consistency()
{
    Rng rng(41);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const int in = 4 + static_cast<int>(rng.below(29));
        const int out = 2 + static_cast<int>(rng.below(15));
        GaussianPosterior<double> q{test::random_matrix(in, out, rng, 0.5),
                                    RealMatrix(test::random_matrix(in, out, rng, 0.5).array() - 2.0),
                                    test::random_matrix(1, out, rng, 0.5),
                                    RealRowVector(test::random_matrix(1, out, rng, 0.5).array() - 2.0)};
        const PriorSpec prior{0.5 + rng.uniform()};
        const double exact = kl_analytic(q, prior);
        Rng mc(100 + static_cast<std::uint64_t>(k));
        const double est = kl_mc(q, prior, 100000, mc);
        worst = std::max(worst, std::abs(est - exact) / exact);
    }
    return {worst < 0.01, fmt("10 layers, 10^5 samples each, max relative error %.2e (< 1%%)", worst)};
}

// ---------------------------------------------------------------------------
// Shared end-to-end experiment for criteria 5 to 8.

struct Experiment
{
    Dataset train, validation, test;
    Model dense, flipout;
    double dense_acc = 0.0, flipout_acc = 0.0;
    double seconds = 0.0;
};

Experiment run_experiment()
{
    const auto start = std::chrono::steady_clock::now();
    Experiment e;
    const GeneratorConfig g; // depth 100, width 10
    const auto balanced = balance_undersample(generate_dataset(g, 20000, 42), 42);
    auto [train, held] = split_dataset(balanced, 0.8, 42);
    e.train = std::move(train);
    // The held-out 20% is split again: validation for calibration, test for the rest.
    auto [validation, test] = split_dataset(held, 0.5, 43);
    e.validation = std::move(validation);
    e.test = std::move(test);

    TrainConfig tc;
    tc.seed = 42;
    tc.eval_mc_samples = 20;
    ModelConfig mc;
    mc.head = HeadKind::dense;
    e.dense = train_model(mc, tc, e.train, e.test).model;
    mc.head = HeadKind::flipout;
    e.flipout = train_model(mc, tc, e.train, e.test).model;

    const InferenceConfig ic{100, 7};
    e.dense_acc = evaluate_accuracy(e.dense, e.test, ic).accuracy;
    e.flipout_acc = evaluate_accuracy(e.flipout, e.test, ic).accuracy;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return e;
}

Outcome accuracy_parity(const Experiment& e)
{
    const double gap = std::abs(e.dense_acc - e.flipout_acc);
    return {gap <= 0.03 && e.dense_acc > 0.70 && e.flipout_acc > 0.70 && e.seconds < 1800.0,
            fmt("dense %.2f%%, flipout %.2f%%, gap %.2f points (<= 3), train+eval %.0f s", 100 * e.dense_acc,
                100 * e.flipout_acc, 100 * gap, e.seconds)};
}

Outcome calibration(const Experiment& e)
{
    const RealMatrix logits = mean_logits(e.dense, encode_rows(e.validation, 0, e.validation.size()));
    std::vector<int> labels;
    for (const auto& ex : e.validation.examples)
        labels.push_back(ex.label);
    const double t = fit_temperature(logits, labels).value;
    auto ece_at = [&](double temp) {
        const RealMatrix p = apply_temperature(logits, temp);
        std::vector<double> conf;
        std::vector<int> ok;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const int pred = p(i, 1) > 0.5 ? 1 : 0;
            conf.push_back(std::max(p(i, 0), p(i, 1)));
            ok.push_back(pred == labels[static_cast<std::size_t>(i)] ? 1 : 0);
        }
        return compute_ece(conf, ok, 10);
    };
    const double before = ece_at(1.0), after = ece_at(t);

    // Planted temperature on constructed logits.
    Rng rng(61);
    RealMatrix planted(50000, 2);
    std::vector<int> planted_labels;
    for (Eigen::Index i = 0; i < planted.rows(); ++i) {
        const double p = 0.05 + 0.9 * rng.uniform();
        planted(i, 0) = 0.0;
        planted(i, 1) = 3.0 * std::log(p / (1 - p));
        planted_labels.push_back(rng.bernoulli(p) ? 1 : 0);
    }
    const double recovered = fit_temperature(planted, planted_labels).value;
    return {after <= before && std::abs(recovered - 3.0) <= 0.1,
            fmt("dense T = %.3f, ECE %.4f -> %.4f on %zu validation examples; planted T=3 recovered as %.3f", t,
                before, after, e.validation.size(), recovered)};
}

Outcome ood_noise(const Experiment& e)
{
    const OodSpec spec{OodSpec::Kind::noise, {0.0, 0.5, 1.0}};
    const auto bayes = run_ood_experiment(e.flipout, e.test, spec, 100, 71);
    const auto dense = run_ood_experiment(e.dense, e.test, spec, 1, 71);
    bool monotone = true;
    std::string trace;
    for (std::size_t k = 0; k < bayes.levels.size(); ++k) {
        if (k > 0 && bayes.levels[k].summary.fraction_mid < bayes.levels[k - 1].summary.fraction_mid)
            monotone = false;
        trace += fmt("%ssigma %.1f: flipout %.3f / dense %.3f", k ? ", " : "", bayes.levels[k].level,
                     bayes.levels[k].summary.fraction_mid, dense.levels[k].summary.fraction_mid);
    }
    const bool above = bayes.levels.back().summary.fraction_mid > dense.levels.back().summary.fraction_mid;
    return {monotone && above, "fraction of MC means in [0.4, 0.6]: " + trace};
}

Outcome ood_depth(const Experiment& e)
{
    const OodSpec spec{OodSpec::Kind::depth, {100.0, 25.0}};
    const auto r = run_ood_experiment(e.flipout, e.test, spec, 100, 81);
    const auto& full = r.levels[0].summary;
    const auto& low = r.levels[1].summary;
    return {low.mean_abs_deviation < full.mean_abs_deviation
                && low.pooled_sample_variance <= full.pooled_sample_variance,
            fmt("mean |p-0.5| %.4f -> %.4f, pooled sample variance %.5f -> %.5f (depth 100 -> 25)",
                full.mean_abs_deviation, low.mean_abs_deviation, full.pooled_sample_variance,
                low.pooled_sample_variance)};
}

// ---------------------------------------------------------------------------
// 9. Oracle agreement

std::vector<std::vector<int>> sorted_columns(int depth)
{
    // One representative per multiset of bases: nondecreasing sequences.
    std::vector<std::vector<int>> out;
    std::vector<int> col(static_cast<std::size_t>(depth), 0);
    std::function<void(int, int)> rec = [&](int pos, int min_base) {
        if (pos == depth) {
            out.push_back(col);
            return;
        }
        for (int b = min_base; b < 4; ++b) {
            col[static_cast<std::size_t>(pos)] = b;
            rec(pos + 1, b);
        }
    };
    rec(0, 0);
    return out;
}

Outcome oracle_agreement()
{
    std::vector<GeneratorConfig> configs(2);
    configs[1].error_rate = 0.02;
    configs[1].artifact_error_rate = 0.1;
    configs[1].vaf = 0.35;
    configs[1].germline_fraction = 0.3;
    configs[1].class_balance = 0.6;

    double worst = 0.0;
    long compared = 0;
    for (auto cfg : configs) {
        cfg.width = 1;
        // Depth <= 4: every input, joint enumerated as a probability tree.
        for (int d = 1; d <= 4; ++d) {
            cfg.depth = d;
            const auto table = test::enumerate_generative_model(d, cfg);
            if (table.size() != (std::size_t{1} << (4 * d)))
                return {false, fmt("enumeration at depth %d covered %zu inputs", d, table.size())};
            std::vector<int> n, t;
            for (const auto& [code, joint] : table) {
                test::decode_column_code(code, d, n, t);
                const double expected = joint[0] / (joint[0] + joint[1] + joint[2]);
                worst = std::max(worst, std::abs(oracle_posterior(test::column_pair(n, t), cfg) - expected));
                ++compared;
            }
        }
        // Depth 5..8: the model is exchangeable across reads, so every input
        // shares its posterior with the sorted representative of its per-tissue
        // base counts; all such representatives are checked.
        for (int d = 5; d <= 8; ++d) {
            cfg.depth = d;
            const auto cols = sorted_columns(d);
            for (const auto& n : cols) {
                for (const auto& t : cols) {
                    const auto joint = test::brute_force_joint(n, t, cfg);
                    const double expected = joint[0] / (joint[0] + joint[1] + joint[2]);
                    worst = std::max(worst, std::abs(oracle_posterior(test::column_pair(n, t), cfg) - expected));
                    ++compared;
                }
            }
        }
    }
    return {worst <= 1e-12,
            fmt("%ld inputs over 2 configs (all inputs at depth <= 4, all count classes at 5..8), max |diff| %.2e",
                compared, worst)};
}

// ---------------------------------------------------------------------------
// 10. Determinism from manifests

Outcome manifest_replay()
{
    const auto dir = test::scratch_dir("acceptance-replay");
    auto p = [&](const char* name) { return (dir / name).string(); };
    const std::vector<std::vector<std::string>> runs{
        {"gen", "--out", p("d.pmx"), "--count", "800", "--depth", "20", "--width", "5", "--seed", "3"},
        {"train", "--data", p("d.pmx"), "--head", "flipout", "--hidden", "16,8", "--epochs", "3", "--seed", "4",
         "--eval-mc-samples", "10", "--out", p("m.json"), "--history", p("h.jsonl"), "--holdout-out", p("v.pmx")},
        {"eval", "--model", p("m.json"), "--data", p("v.pmx"), "--mc-samples", "30", "--seed", "5", "--out",
         p("pred.jsonl"), "--report", p("report.json")},
        {"calibrate", "--model", p("m.json"), "--data", p("v.pmx"), "--mc-samples", "30", "--seed", "6", "--out",
         p("cal.json"), "--reliability", p("rel.csv")},
        {"ood", "--model", p("m.json"), "--data", p("v.pmx"), "--perturb", "noise", "--sigma", "0,0.5,1", "--seed",
         "7", "--mc-samples", "30", "--out", p("ood.json")},
        {"ood", "--model", p("m.json"), "--data", p("v.pmx"), "--perturb", "depth", "--depth", "20,5", "--seed", "8",
         "--mc-samples", "30", "--out", p("oodd.json")},
    };
    const std::vector<std::string> primaries{"d.pmx", "m.json", "pred.jsonl", "cal.json", "ood.json", "oodd.json"};

    std::ostringstream sink;
    for (const auto& args : runs) {
        if (dispatch(args, sink, sink) != 0)
            return {false, "run failed: " + args.front() + ": " + sink.str()};
    }
    std::map<fs::path, std::vector<std::uint8_t>> first;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().string().ends_with(".manifest.json"))
            continue;
        first[entry.path()] = read_file_bytes(entry.path());
    }
    // Replay every run from its manifest alone into a cleared directory state.
    for (const auto& [path, bytes] : first)
        fs::remove(path);
    for (const auto& primary : primaries) {
        const auto argv = manifest_argv(manifest_path_for(dir / primary));
        if (dispatch(argv, sink, sink) != 0)
            return {false, "replay failed for " + primary + ": " + sink.str()};
    }
    int identical = 0;
    for (const auto& [path, bytes] : first) {
        if (!fs::exists(path) || read_file_bytes(path) != bytes)
            return {false, "replay changed " + path.filename().string()};
        ++identical;
    }
    return {true, fmt("6 runs (gen/train/eval/calibrate/ood x2) replayed from manifests, %d files byte-identical",
                      identical)};
}

} // namespace

int main()
{
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& ex) {
            o = {false, std::string("threw: ") + ex.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail
                  << fmt(" [%.1fs]", s) << std::endl;
    };

    report(1, "gradient correctness", gradient_correctness);
    report(2, "flipout unbiasedness", flipout_unbiased);
    report(3, "flipout variance reduction", flipout_variance_reduction);
    report(4, "KL consistency", kl_consistency);

    Experiment e;
    report(5, "accuracy parity", [&] {
        e = run_experiment();
        return accuracy_parity(e);
    });
    report(6, "calibration", [&] { return calibration(e); });
    report(7, "OOD noise", [&] { return ood_noise(e); });
    report(8, "OOD depth", [&] { return ood_depth(e); });
    report(9, "oracle agreement", oracle_agreement);
    report(10, "manifest determinism", manifest_replay);

    std::cout << (10 - failures) << "/10 criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
