#include "bnnvc/cli.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bnnvc/calibration.hpp"
#include "bnnvc/errors.hpp"
#include "bnnvc/experiments.hpp"
#include "bnnvc/fileio.hpp"
#include "bnnvc/inference.hpp"
#include "bnnvc/model.hpp"
#include "bnnvc/pileup.hpp"
#include "bnnvc/training.hpp"

namespace bnnvc {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path manifest_path_for(const fs::path& primary_output)
{
    auto p = primary_output;
    p += ".manifest.json";
    return p;
}

std::vector<std::string> manifest_argv(const fs::path& manifest)
{
    const auto doc = json::parse(read_file_text(manifest));
    return doc.at("argv").get<std::vector<std::string>>();
}

namespace {

struct RunRecord
{
    json config = json::object();
    json seeds = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

void write_manifest(const std::string& command, const std::vector<std::string>& args, const RunRecord& rec,
                    double seconds)
{
    const json doc{
        {"tool", "bnnvc"},
        {"version", kToolVersion},
        {"command", command},
        {"argv", args},
        {"config", rec.config},
        {"seeds", rec.seeds},
        {"inputs", rec.inputs},
        {"outputs", rec.outputs},
        {"duration_seconds", seconds},
    };
    write_file_atomic(manifest_path_for(rec.outputs.front()), doc.dump(2) + "\n");
}

void write_json(const fs::path& path, const json& doc)
{
    write_file_atomic(path, doc.dump(2) + "\n");
}

fs::path level_dump_path(const fs::path& out, std::size_t level)
{
    auto p = out;
    p.replace_extension();
    p += ".level" + std::to_string(level) + ".jsonl";
    return p;
}

// ---------------------------------------------------------------------------

struct GenArgs
{
    std::string out;
    std::size_t count = 0;
    GeneratorConfig cfg;
    std::uint64_t seed = 0;
};

RunRecord run_gen(const GenArgs& a, std::ostream& os)
{
    const Dataset ds = generate_dataset(a.cfg, a.count, a.seed);
    write_dataset(ds, a.out);
    long positives = 0;
    for (const auto& ex : ds.examples)
        positives += ex.label;
    os << "wrote " << ds.size() << " examples (" << positives << " somatic) to " << a.out << "\n";

    RunRecord rec;
    rec.config = {
        {"count", a.count},
        {"depth", a.cfg.depth},
        {"width", a.cfg.width},
        {"error_rate", a.cfg.error_rate},
        {"artifact_error_rate", a.cfg.artifact_error_rate},
        {"vaf", a.cfg.vaf},
        {"germline_fraction", a.cfg.germline_fraction},
        {"class_balance", a.cfg.class_balance},
    };
    rec.seeds = {{"seed", a.seed}};
    rec.outputs = {a.out};
    return rec;
}

struct TrainArgs
{
    std::string data;
    std::string head = "dense";
    std::vector<int> hidden{64, 32};
    int epochs = 30;
    int batch = 128;
    double lr = 1e-3;
    std::string kl_mode = "analytic";
    int n_mc_elbo = 1;
    double prior_sigma = 1.0;
    double initial_sigma = 0.01;
    bool variational_everywhere = false;
    double train_fraction = 0.8;
    int eval_mc_samples = 100;
    std::uint64_t seed = 0;
    std::string out;
    std::string history;
    std::string holdout_out;
};

RunRecord run_train(const TrainArgs& a, std::ostream& os)
{
    const Dataset raw = read_dataset(a.data);
    if (raw.empty())
        throw DegenerateDatasetError("train: dataset " + a.data + " is empty");
    const Dataset balanced = balance_undersample(raw, a.seed);
    auto [train, test] = split_dataset(balanced, a.train_fraction, a.seed);

    ModelConfig mc;
    mc.depth = raw.depth();
    mc.width = raw.width();
    mc.hidden = a.hidden;
    mc.head = parse_head_kind(a.head);
    mc.variational_everywhere = a.variational_everywhere;
    mc.prior_sigma = a.prior_sigma;
    mc.initial_sigma = a.initial_sigma;

    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.learning_rate = a.lr;
    tc.seed = a.seed;
    tc.elbo.kl_mode = parse_kl_mode(a.kl_mode);
    tc.elbo.n_mc_elbo = a.n_mc_elbo;
    tc.eval_mc_samples = a.eval_mc_samples;

    const auto result = train_model(mc, tc, train, test);
    save_model(result.model, a.out);
    RunRecord rec;
    rec.outputs = {a.out};
    if (!a.history.empty()) {
        write_history(result.history, a.history);
        rec.outputs.push_back(a.history);
    }
    if (!a.holdout_out.empty()) {
        write_dataset(test, a.holdout_out);
        rec.outputs.push_back(a.holdout_out);
    }
    for (const auto& e : result.history.epochs)
        os << "epoch " << e.epoch << " loss " << e.loss << " train_acc " << e.train_accuracy << " test_acc "
           << e.test_accuracy << "\n";

    rec.config = {
        {"head", a.head},
        {"hidden", a.hidden},
        {"epochs", a.epochs},
        {"batch", a.batch},
        {"lr", a.lr},
        {"kl_mode", a.kl_mode},
        {"n_mc_elbo", a.n_mc_elbo},
        {"kl_weight", "1/n"},
        {"prior_sigma", a.prior_sigma},
        {"initial_sigma", mc.initial_sigma},
        {"variational_everywhere", a.variational_everywhere},
        {"train_fraction", a.train_fraction},
        {"eval_mc_samples", a.eval_mc_samples},
        {"train_examples", train.size()},
        {"test_examples", test.size()},
    };
    rec.seeds = {{"seed", a.seed}};
    rec.inputs = {a.data};
    return rec;
}

struct EvalArgs
{
    std::string model;
    std::string data;
    int mc_samples = 100;
    std::uint64_t seed = 0;
    std::string out;
    std::string report;
};

RunRecord run_eval(const EvalArgs& a, std::ostream& os)
{
    const Model model = load_model(a.model);
    const Dataset ds = read_dataset(a.data);
    if (ds.empty())
        throw DegenerateDatasetError("eval: dataset " + a.data + " is empty");
    const auto preds = predict_batch(model, ds, a.mc_samples, a.seed);
    write_prediction_dump(preds, ds, a.out);
    const json report = evaluation_report(preds, ds);
    RunRecord rec;
    rec.outputs = {a.out};
    if (!a.report.empty()) {
        write_json(a.report, report);
        rec.outputs.push_back(a.report);
    }
    os << "accuracy " << report["accuracy"].get<double>() << " mean_nll " << report["mean_nll"].get<double>()
       << " ece " << report["ece"].get<double>() << "\n";
    rec.config = {{"mc_samples", a.mc_samples}, {"head", head_kind_name(model.config.head)}};
    rec.seeds = {{"seed", a.seed}};
    rec.inputs = {a.model, a.data};
    return rec;
}

struct CalibrateArgs
{
    std::string model;
    std::string data;
    int bins = 10;
    int mc_samples = 100;
    std::uint64_t seed = 0;
    std::string out;
    std::string reliability;
};

void probabilities_to_flags(const RealMatrix& probs, const Dataset& ds, std::vector<double>& confidence,
                            std::vector<int>& correct)
{
    confidence.clear();
    correct.clear();
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const int predicted = probs(r, 1) > probs(r, 0) ? 1 : 0;
        confidence.push_back(probs.row(r).maxCoeff());
        correct.push_back(predicted == ds.examples[static_cast<std::size_t>(r)].label ? 1 : 0);
    }
}

RunRecord run_calibrate(const CalibrateArgs& a, std::ostream& os)
{
    const Model model = load_model(a.model);
    const Dataset ds = read_dataset(a.data);
    if (ds.empty())
        throw DegenerateDatasetError("calibrate: validation dataset " + a.data + " is empty");
    if (ds.depth() != model.config.depth || ds.width() != model.config.width)
        throw ShapeError("calibrate: dataset shape does not match the model input");

    json cal;
    ReliabilityBins table;
    std::vector<double> confidence;
    std::vector<int> correct;
    if (!model.is_stochastic()) {
        RealMatrix logits(static_cast<Eigen::Index>(ds.size()), 2);
        for (std::size_t begin = 0; begin < ds.size(); begin += 256) {
            const std::size_t end = std::min(ds.size(), begin + 256);
            logits.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))
                = mean_logits(model, encode_rows(ds, begin, end));
        }
        std::vector<int> labels;
        for (const auto& ex : ds.examples)
            labels.push_back(ex.label);
        const auto t = fit_temperature(logits, labels);
        probabilities_to_flags(apply_temperature(logits, 1.0), ds, confidence, correct);
        const double ece_before = compute_ece(confidence, correct, a.bins);
        probabilities_to_flags(apply_temperature(logits, t.value), ds, confidence, correct);
        table = reliability_table(confidence, correct, a.bins);
        cal = {
            {"head", "dense"},
            {"applied", true},
            {"temperature", t.value},
            {"ece_before", ece_before},
            {"ece_after", table.ece()},
            {"nll_before", temperature_nll(logits, labels, 1.0)},
            {"nll_after", temperature_nll(logits, labels, t.value)},
            {"bins", a.bins},
        };
    } else {
        // Temperature scaling is reserved for the deterministic network; the
        // variational model is reported uncalibrated.
        const auto preds = predict_batch(model, ds, a.mc_samples, a.seed);
        confidence_and_correctness(preds, ds, confidence, correct);
        table = reliability_table(confidence, correct, a.bins);
        cal = {
            {"head", "flipout"},
            {"applied", false},
            {"temperature", nullptr},
            {"ece_before", table.ece()},
            {"ece_after", table.ece()},
            {"bins", a.bins},
        };
    }
    write_json(a.out, cal);
    RunRecord rec;
    rec.outputs = {a.out};
    if (!a.reliability.empty()) {
        write_file_atomic(a.reliability, reliability_csv(table));
        rec.outputs.push_back(a.reliability);
    }
    os << "ece_before " << cal["ece_before"].get<double>() << " ece_after " << cal["ece_after"].get<double>()
       << "\n";
    rec.config = {{"bins", a.bins}, {"mc_samples", a.mc_samples}, {"head", head_kind_name(model.config.head)}};
    rec.seeds = {{"seed", a.seed}};
    rec.inputs = {a.model, a.data};
    return rec;
}

struct OodArgs
{
    std::string model;
    std::string data;
    std::string perturb;
    std::vector<double> sigma;
    std::vector<int> depth;
    int mc_samples = 100;
    std::uint64_t seed = 0;
    std::string out;
};

RunRecord run_ood(const OodArgs& a, std::ostream& os)
{
    const Model model = load_model(a.model);
    const Dataset ds = read_dataset(a.data);
    OodSpec spec;
    if (a.perturb == "noise") {
        if (a.sigma.empty() || !a.depth.empty())
            throw ConfigError("ood: --perturb noise takes --sigma levels only");
        spec.kind = OodSpec::Kind::noise;
        spec.levels = a.sigma;
    } else if (a.perturb == "depth") {
        if (a.depth.empty() || !a.sigma.empty())
            throw ConfigError("ood: --perturb depth takes --depth levels only");
        spec.kind = OodSpec::Kind::depth;
        spec.levels.assign(a.depth.begin(), a.depth.end());
    } else {
        throw ConfigError("ood: unknown perturbation '" + a.perturb + "' (expected noise|depth)");
    }
    const auto report = run_ood_experiment(model, ds, spec, a.mc_samples, a.seed);
    json doc = ood_report_json(report);
    RunRecord rec;
    rec.outputs = {a.out};
    for (std::size_t k = 0; k < report.levels.size(); ++k) {
        const auto dump = level_dump_path(a.out, k);
        write_prediction_dump(report.levels[k].predictions, ds, dump);
        doc["levels"][k]["predictions"] = dump.filename().string();
        rec.outputs.push_back(dump.string());
        const auto& s = report.levels[k].summary;
        os << a.perturb << " " << report.levels[k].level << ": fraction_mid " << s.fraction_mid
           << " mean_abs_deviation " << s.mean_abs_deviation << " mean_std " << s.mean_std << "\n";
    }
    write_json(a.out, doc);
    rec.config = {{"perturb", a.perturb}, {"levels", spec.levels}, {"mc_samples", a.mc_samples}};
    rec.seeds = {{"seed", a.seed}};
    rec.inputs = {a.model, a.data};
    return rec;
}

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Bayesian somatic variant classifier: data generation, training, evaluation, calibration, OOD"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic tumor/normal pileup dataset");
    gen_cmd->add_option("--out", gen.out, "Output dataset path")->required();
    gen_cmd->add_option("--count", gen.count, "Number of examples")->required();
    gen_cmd->add_option("--depth", gen.cfg.depth, "Reads per pileup")->capture_default_str();
    gen_cmd->add_option("--width", gen.cfg.width, "Loci per tissue")->capture_default_str();
    gen_cmd->add_option("--error-rate", gen.cfg.error_rate, "Per-base sequencing error rate")->capture_default_str();
    gen_cmd->add_option("--artifact-error-rate", gen.cfg.artifact_error_rate, "Center error rate of artifacts")
        ->capture_default_str();
    gen_cmd->add_option("--vaf", gen.cfg.vaf, "Somatic variant allele fraction")->capture_default_str();
    gen_cmd->add_option("--germline-fraction", gen.cfg.germline_fraction, "Germline share of negatives")
        ->capture_default_str();
    gen_cmd->add_option("--balance", gen.cfg.class_balance, "Fraction of positives")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a dense or Flipout-head classifier");
    train_cmd->add_option("--data", train.data, "Input dataset")->required();
    train_cmd->add_option("--head", train.head, "dense|flipout")->capture_default_str();
    train_cmd->add_option("--hidden", train.hidden, "Hidden sizes, comma separated")->delimiter(',');
    train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
    train_cmd->add_option("--batch", train.batch)->capture_default_str();
    train_cmd->add_option("--lr", train.lr)->capture_default_str();
    train_cmd->add_option("--kl-mode", train.kl_mode, "analytic|mc")->capture_default_str();
    train_cmd->add_option("--n-mc-elbo", train.n_mc_elbo, "Weight samples per training step")->capture_default_str();
    train_cmd->add_option("--prior-sigma", train.prior_sigma)->capture_default_str();
    train_cmd->add_option("--initial-sigma", train.initial_sigma, "Posterior scale at initialisation")
        ->capture_default_str();
    train_cmd->add_flag("--variational-everywhere", train.variational_everywhere, "Flipout in every layer");
    train_cmd->add_option("--train-fraction", train.train_fraction)->capture_default_str();
    train_cmd->add_option("--eval-mc-samples", train.eval_mc_samples)->capture_default_str();
    train_cmd->add_option("--seed", train.seed)->capture_default_str();
    train_cmd->add_option("--out", train.out, "Model JSON output")->required();
    train_cmd->add_option("--history", train.history, "Per-epoch JSON lines output");
    train_cmd->add_option("--holdout-out", train.holdout_out, "Write the held-out split as a dataset");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Predict with MC sampling and score a dataset");
    eval_cmd->add_option("--model", eval.model)->required();
    eval_cmd->add_option("--data", eval.data)->required();
    eval_cmd->add_option("--mc-samples", eval.mc_samples)->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed)->capture_default_str();
    eval_cmd->add_option("--out", eval.out, "Prediction dump (JSON lines)")->required();
    eval_cmd->add_option("--report", eval.report, "Summary report JSON");

    CalibrateArgs cal;
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit temperature scaling and report ECE");
    cal_cmd->add_option("--model", cal.model)->required();
    cal_cmd->add_option("--data", cal.data, "Validation dataset")->required();
    cal_cmd->add_option("--bins", cal.bins)->capture_default_str();
    cal_cmd->add_option("--mc-samples", cal.mc_samples)->capture_default_str();
    cal_cmd->add_option("--seed", cal.seed)->capture_default_str();
    cal_cmd->add_option("--out", cal.out, "Calibration JSON")->required();
    cal_cmd->add_option("--reliability", cal.reliability, "Reliability table CSV");

    OodArgs ood;
    auto* ood_cmd = app.add_subcommand("ood", "Evaluate under Gaussian input noise or reduced depth");
    ood_cmd->add_option("--model", ood.model)->required();
    ood_cmd->add_option("--data", ood.data)->required();
    ood_cmd->add_option("--perturb", ood.perturb, "noise|depth")->required();
    ood_cmd->add_option("--sigma", ood.sigma, "Noise levels, comma separated")->delimiter(',');
    ood_cmd->add_option("--depth", ood.depth, "Reduced depths, comma separated")->delimiter(',');
    ood_cmd->add_option("--mc-samples", ood.mc_samples)->capture_default_str();
    ood_cmd->add_option("--seed", ood.seed)->capture_default_str();
    ood_cmd->add_option("--out", ood.out, "OOD report JSON")->required();

    std::vector<std::string> argv_storage{"bnnvc"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage)
        argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << "\n";
        return 2;
    }

    const auto started = std::chrono::steady_clock::now();
    try {
        std::string command;
        RunRecord rec;
        if (gen_cmd->parsed()) {
            command = "gen";
            rec = run_gen(gen, out);
        } else if (train_cmd->parsed()) {
            command = "train";
            rec = run_train(train, out);
        } else if (eval_cmd->parsed()) {
            command = "eval";
            rec = run_eval(eval, out);
        } else if (cal_cmd->parsed()) {
            command = "calibrate";
            rec = run_calibrate(cal, out);
        } else {
            command = "ood";
            rec = run_ood(ood, out);
        }
        const double seconds
            = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        write_manifest(command, args, rec, seconds);
        return 0;
    } catch (const Error& e) {
        err << "error[" << e.kind() << "]: " << e.what() << "\n";
    } catch (const json::exception& e) {
        err << "error[format]: " << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << "\n";
    }
    return 1;
}

} // namespace bnnvc
