#include "bnnvc/pileup.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "bnnvc/errors.hpp"
#include "bnnvc/fileio.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc {

char base_symbol(Base b) noexcept
{
    switch (b) {
    case Base::A: return 'A';
    case Base::C: return 'C';
    case Base::G: return 'G';
    case Base::T: return 'T';
    case Base::GAP: return '-';
    }
    return '?';
}

PairMatrix::PairMatrix(int depth, int width, Base fill)
    : depth_(depth), width_(width)
{
    if (depth < 1 || width < 1)
        throw ConfigError("pair matrix needs depth >= 1 and width >= 1, got "
                          + std::to_string(depth) + "x" + std::to_string(width));
    cells_.assign(static_cast<std::size_t>(depth) * static_cast<std::size_t>(2 * width), fill);
}

void GeneratorConfig::validate() const
{
    if (depth < 1 || width < 1)
        throw ConfigError("depth and width must be positive");
    if (!(error_rate >= 0.0 && error_rate <= artifact_error_rate && artifact_error_rate < 1.0))
        throw ConfigError("need 0 <= error_rate <= artifact_error_rate < 1");
    if (!(vaf > 0.0 && vaf <= 1.0))
        throw ConfigError("vaf must lie in (0, 1]");
    if (!(germline_fraction >= 0.0 && germline_fraction <= 1.0))
        throw ConfigError("germline_fraction must lie in [0, 1]");
    if (!(class_balance >= 0.0 && class_balance <= 1.0))
        throw ConfigError("class_balance must lie in [0, 1]");
}

namespace {

enum class Hypothesis { somatic, germline, artifact };

Base other_base(Base ref, Rng& rng)
{
    const auto shift = 1 + rng.below(3);
    return static_cast<Base>((static_cast<std::uint64_t>(ref) + shift) % 4);
}

Base with_error(Base ref, double rate, Rng& rng)
{
    return rng.bernoulli(rate) ? other_base(ref, rng) : ref;
}

LabeledExample generate_one(const GeneratorConfig& cfg, Rng& rng)
{
    LabeledExample ex;
    ex.label = rng.bernoulli(cfg.class_balance) ? 1 : 0;
    Hypothesis kind = Hypothesis::somatic;
    if (ex.label == 0)
        kind = rng.bernoulli(cfg.germline_fraction) ? Hypothesis::germline : Hypothesis::artifact;

    std::vector<Base> reference(static_cast<std::size_t>(cfg.width));
    for (auto& b : reference)
        b = static_cast<Base>(rng.below(4));
    const int center = cfg.width / 2;
    const Base ref = reference[static_cast<std::size_t>(center)];
    const Base alt = other_base(ref, rng);

    ex.pair = PairMatrix(cfg.depth, cfg.width);
    for (int row = 0; row < cfg.depth; ++row) {
        for (int col = 0; col < cfg.width; ++col) {
            const Base r = reference[static_cast<std::size_t>(col)];
            if (col == center && kind == Hypothesis::germline)
                ex.pair.normal(row, col) = rng.bernoulli(0.5) ? alt : ref;
            else
                ex.pair.normal(row, col) = with_error(r, cfg.error_rate, rng);
        }
        for (int col = 0; col < cfg.width; ++col) {
            const Base r = reference[static_cast<std::size_t>(col)];
            Base& cell = ex.pair.tumor(row, col);
            if (col != center) {
                cell = with_error(r, cfg.error_rate, rng);
                continue;
            }
            switch (kind) {
            case Hypothesis::somatic: cell = rng.bernoulli(cfg.vaf) ? alt : ref; break;
            case Hypothesis::germline: cell = rng.bernoulli(0.5) ? alt : ref; break;
            case Hypothesis::artifact: cell = with_error(ref, cfg.artifact_error_rate, rng); break;
            }
        }
    }
    return ex;
}

} // namespace

Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t count, std::uint64_t seed)
{
    cfg.validate();
    if (count == 0)
        throw EmptyInputError("generate_dataset: count must be >= 1");
    Dataset ds;
    ds.generator_config = cfg;
    ds.examples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto rng = Rng::stream(seed, StreamDomain::generate, i);
        ds.examples.push_back(generate_one(cfg, rng));
    }
    return ds;
}

void encode_pair_into(const PairMatrix& pair, std::span<double> out)
{
    const auto cells = pair.cells();
    if (out.size() != cells.size() * kChannels)
        throw ShapeError("encode_pair: output has " + std::to_string(out.size()) + " values, need "
                         + std::to_string(cells.size() * kChannels));
    auto dst = out.begin();
    for (const Base b : cells) {
        const auto& rgb = kBasePalette[static_cast<std::size_t>(b)];
        dst = std::copy(rgb.begin(), rgb.end(), dst);
    }
}

EncodedExample encode_pair(const PairMatrix& pair, int label)
{
    EncodedExample ex;
    ex.features.resize(pair.depth(), 2 * pair.width() * kChannels);
    ex.label = label;
    encode_pair_into(pair, {ex.features.data(), static_cast<std::size_t>(ex.features.size())});
    return ex;
}

Dataset balance_undersample(const Dataset& ds, std::uint64_t seed)
{
    if (ds.empty())
        throw EmptyInputError("balance_undersample: empty dataset");
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (ds.examples[i].label == 1 ? positives : negatives).push_back(i);
    if (positives.empty() || negatives.empty())
        throw DegenerateDatasetError("balance_undersample: one class is absent");

    Rng rng(seed, StreamDomain::balance);
    auto& majority = positives.size() > negatives.size() ? positives : negatives;
    const auto& minority = positives.size() > negatives.size() ? negatives : positives;
    shuffle(majority.begin(), majority.end(), rng);
    majority.resize(minority.size());

    std::vector<std::size_t> keep(minority);
    keep.insert(keep.end(), majority.begin(), majority.end());
    std::sort(keep.begin(), keep.end());
    shuffle(keep.begin(), keep.end(), rng);

    Dataset out;
    out.generator_config = ds.generator_config;
    out.examples.reserve(keep.size());
    for (const auto i : keep)
        out.examples.push_back(ds.examples[i]);
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split_dataset: train_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, StreamDomain::split);
    shuffle(order.begin(), order.end(), rng);

    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(ds.size())));
    Dataset train;
    Dataset test;
    train.generator_config = ds.generator_config;
    test.generator_config = ds.generator_config;
    for (std::size_t k = 0; k < order.size(); ++k)
        (k < n_train ? train : test).examples.push_back(ds.examples[order[k]]);
    return {std::move(train), std::move(test)};
}

void perturb_gaussian_in_place(std::span<double> features, double sigma, std::uint64_t seed)
{
    if (!(sigma >= 0.0))
        throw ConfigError("perturb_gaussian: sigma must be nonnegative");
    if (sigma == 0.0)
        return;
    Rng rng(seed, StreamDomain::perturb);
    for (auto& x : features)
        x += sigma * rng.normal();
}

EncodedExample perturb_gaussian(const EncodedExample& ex, double sigma, std::uint64_t seed)
{
    EncodedExample out = ex;
    perturb_gaussian_in_place({out.features.data(), static_cast<std::size_t>(out.features.size())}, sigma, seed);
    return out;
}

PairMatrix reduce_depth(const PairMatrix& pair, int new_depth, bool pad)
{
    if (new_depth < 1 || new_depth > pair.depth())
        throw RangeError("reduce_depth: new depth " + std::to_string(new_depth) + " outside [1, "
                         + std::to_string(pair.depth()) + "]");
    PairMatrix out(pad ? pair.depth() : new_depth, pair.width(), Base::GAP);
    const auto row_len = static_cast<std::size_t>(2 * pair.width());
    std::copy_n(pair.cells().begin(), static_cast<std::size_t>(new_depth) * row_len, out.cells().begin());
    return out;
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

struct CenterCounts
{
    std::array<int, 4> normal{};
    std::array<int, 4> tumor{};
};

CenterCounts count_center(const PairMatrix& pair)
{
    CenterCounts counts;
    const int c = pair.center();
    for (int row = 0; row < pair.depth(); ++row) {
        if (const Base b = pair.normal(row, c); b != Base::GAP)
            ++counts.normal[static_cast<std::size_t>(b)];
        if (const Base b = pair.tumor(row, c); b != Base::GAP)
            ++counts.tumor[static_cast<std::size_t>(b)];
    }
    return counts;
}

double xlogy(int n, double p)
{
    if (n == 0)
        return 0.0;
    return p > 0.0 ? n * std::log(p) : -std::numeric_limits<double>::infinity();
}

// Center-column model of one tissue: a read carries ALT with probability
// `carry`; otherwise it shows REF, replaced by one of the three other bases
// with probability `error` (uniformly).
struct Emission
{
    double carry;
    double error;
};

double log_tissue_likelihood(const std::array<int, 4>& counts, int ref, int alt, Emission em)
{
    const double p_other = (1.0 - em.carry) * em.error / 3.0;
    const double p_ref = (1.0 - em.carry) * (1.0 - em.error);
    const double p_alt = em.carry + p_other;
    double ll = 0.0;
    for (int b = 0; b < 4; ++b) {
        const double p = b == ref ? p_ref : (b == alt ? p_alt : p_other);
        ll += xlogy(counts[static_cast<std::size_t>(b)], p);
    }
    return ll;
}

double log_sum_exp(std::span<const double> xs)
{
    const double m = *std::max_element(xs.begin(), xs.end());
    if (m == -std::numeric_limits<double>::infinity())
        return m;
    double acc = 0.0;
    for (const double x : xs)
        acc += std::exp(x - m);
    return m + std::log(acc);
}

} // namespace

HypothesisPosterior oracle_hypotheses(const PairMatrix& pair, const GeneratorConfig& cfg)
{
    cfg.validate();
    if (pair.depth() != cfg.depth || pair.width() != cfg.width)
        throw ConfigError("oracle_posterior: pair is " + std::to_string(pair.depth()) + "x"
                          + std::to_string(pair.width()) + " but config is "
                          + std::to_string(cfg.depth) + "x" + std::to_string(cfg.width));
    const auto counts = count_center(pair);

    const std::array<std::pair<Emission, Emission>, 3> model{{
        {{0.0, cfg.error_rate}, {cfg.vaf, 0.0}},                   // somatic: normal, tumor
        {{0.5, 0.0}, {0.5, 0.0}},                                  // germline-het
        {{0.0, cfg.error_rate}, {0.0, cfg.artifact_error_rate}},   // noise artifact
    }};
    const std::array<double, 3> prior{
        cfg.class_balance,
        (1.0 - cfg.class_balance) * cfg.germline_fraction,
        (1.0 - cfg.class_balance) * (1.0 - cfg.germline_fraction),
    };

    std::array<double, 3> log_joint{};
    for (std::size_t h = 0; h < 3; ++h) {
        std::array<double, 12> terms{};
        std::size_t k = 0;
        for (int ref = 0; ref < 4; ++ref) {
            for (int shift = 1; shift <= 3; ++shift) {
                const int alt = (ref + shift) % 4;
                terms[k++] = log_tissue_likelihood(counts.normal, ref, alt, model[h].first)
                           + log_tissue_likelihood(counts.tumor, ref, alt, model[h].second);
            }
        }
        log_joint[h] = std::log(prior[h]) - std::log(12.0) + log_sum_exp(terms);
    }
    const double log_evidence = log_sum_exp(log_joint);
    if (!std::isfinite(log_evidence))
        throw NumericError("oracle_posterior: pileup has zero probability under every hypothesis");
    return {std::exp(log_joint[0] - log_evidence),
            std::exp(log_joint[1] - log_evidence),
            std::exp(log_joint[2] - log_evidence)};
}

double oracle_posterior(const PairMatrix& pair, const GeneratorConfig& cfg)
{
    return oracle_hypotheses(pair, cfg).somatic;
}

// ---------------------------------------------------------------------------
// Binary dataset format

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'P', 'M', 'X', '1'};
constexpr std::size_t kHeaderSize = 20;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader
{
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    std::span<const std::uint8_t> take(std::size_t n, const char* what)
    {
        if (remaining() < n)
            throw FormatError(std::string("truncated ") + what + " (need " + std::to_string(n)
                              + " bytes, have " + std::to_string(remaining()) + ")", pos_);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32(const char* what)
    {
        const auto s = take(4, what);
        return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8)
             | (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

nlohmann::json config_to_json(const GeneratorConfig& cfg)
{
    return {
        {"depth", cfg.depth},
        {"width", cfg.width},
        {"error_rate", cfg.error_rate},
        {"artifact_error_rate", cfg.artifact_error_rate},
        {"vaf", cfg.vaf},
        {"germline_fraction", cfg.germline_fraction},
        {"class_balance", cfg.class_balance},
    };
}

GeneratorConfig config_from_json(const nlohmann::json& j)
{
    GeneratorConfig cfg;
    cfg.depth = j.at("depth").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.error_rate = j.at("error_rate").get<double>();
    cfg.artifact_error_rate = j.at("artifact_error_rate").get<double>();
    cfg.vaf = j.at("vaf").get<double>();
    cfg.germline_fraction = j.at("germline_fraction").get<double>();
    cfg.class_balance = j.at("class_balance").get<double>();
    return cfg;
}

} // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds)
{
    if (ds.size() > std::numeric_limits<std::uint32_t>::max())
        throw ConfigError("dataset too large for the u32 example count");
    int depth = ds.depth();
    int width = ds.width();
    if (ds.empty() && ds.generator_config) {
        depth = ds.generator_config->depth;
        width = ds.generator_config->width;
    }
    for (const auto& ex : ds.examples) {
        if (ex.pair.depth() != depth || ex.pair.width() != width)
            throw ShapeError("dataset examples do not share one (depth, width)");
    }
    if (ds.generator_config && !ds.empty()
        && (ds.generator_config->depth != depth || ds.generator_config->width != width))
        throw ShapeError("generator config dimensions disagree with the examples");

    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    put_u32(out, kDatasetFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(ds.size()));
    put_u32(out, static_cast<std::uint32_t>(depth));
    put_u32(out, static_cast<std::uint32_t>(width));
    const std::size_t cells = static_cast<std::size_t>(depth) * static_cast<std::size_t>(2 * width);
    out.reserve(out.size() + ds.size() * (1 + cells));
    for (const auto& ex : ds.examples) {
        out.push_back(static_cast<std::uint8_t>(ex.label));
        for (const Base b : ex.pair.cells())
            out.push_back(static_cast<std::uint8_t>(b));
    }
    if (ds.generator_config) {
        const std::string blob = config_to_json(*ds.generator_config).dump();
        put_u32(out, static_cast<std::uint32_t>(blob.size()));
        out.insert(out.end(), blob.begin(), blob.end());
    }
    return out;
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes)
{
    Reader in(bytes);
    const auto magic = in.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin()))
        throw FormatError("bad magic (expected \"PMX1\")", 0);
    const auto version_at = in.offset();
    const auto version = in.u32("format version");
    if (version != kDatasetFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version), version_at);
    const auto count = in.u32("example count");
    const auto dims_at = in.offset();
    const auto depth = in.u32("depth");
    const auto width = in.u32("width");
    if (count > 0 && (depth == 0 || width == 0 || depth > 1'000'000 || width > 1'000'000))
        throw FormatError("invalid dimensions " + std::to_string(depth) + "x" + std::to_string(width), dims_at);

    Dataset ds;
    const std::size_t cells = static_cast<std::size_t>(depth) * 2 * width;
    if (count > 0 && in.remaining() / (cells + 1) < count)
        throw FormatError("truncated payload: " + std::to_string(count) + " examples of "
                          + std::to_string(cells + 1) + " bytes do not fit", in.offset());
    ds.examples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto label_at = in.offset();
        const auto label = in.take(1, "label")[0];
        if (label > 1)
            throw FormatError("label byte " + std::to_string(label) + " is not 0 or 1", label_at);
        const auto cells_at = in.offset();
        const auto codes = in.take(cells, "pair matrix");
        LabeledExample ex;
        ex.label = label;
        ex.pair = PairMatrix(static_cast<int>(depth), static_cast<int>(width));
        auto dst = ex.pair.cells();
        for (std::size_t k = 0; k < cells; ++k) {
            if (codes[k] >= kBaseCount)
                throw FormatError("base code " + std::to_string(codes[k]) + " out of range", cells_at + k);
            dst[k] = static_cast<Base>(codes[k]);
        }
        ds.examples.push_back(std::move(ex));
    }

    if (in.remaining() > 0) {
        const auto len = in.u32("provenance length");
        const auto blob_at = in.offset();
        const auto blob = in.take(len, "provenance blob");
        if (in.remaining() > 0)
            throw FormatError("trailing bytes after provenance blob", in.offset());
        if (len > 0) {
            GeneratorConfig cfg;
            try {
                cfg = config_from_json(nlohmann::json::parse(blob.begin(), blob.end()));
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(std::string("malformed provenance JSON: ") + e.what(), blob_at);
            }
            if (cfg.depth != static_cast<int>(depth) || cfg.width != static_cast<int>(width))
                throw FormatError("dimension mismatch between header and provenance", blob_at);
            ds.generator_config = cfg;
        }
    }
    return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path)
{
    write_file_atomic(path, serialize_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path)
{
    return deserialize_dataset(read_file_bytes(path));
}

} // namespace bnnvc
