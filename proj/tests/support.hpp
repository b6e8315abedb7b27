#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bnnvc/linalg.hpp"
#include "bnnvc/pileup.hpp"
#include "bnnvc/random.hpp"

namespace bnnvc::test {

inline RealMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0)
{
    RealMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = scale * rng.normal();
    return m;
}

inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("bnnvc-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------------------
// Brute-force reference for the generator's center-column model. Written from
// the generative description independently of oracle_posterior: each cell's
// outcome distribution is spelled out as a list of (base, probability) pairs
// and likelihoods are multiplied in linear space, cell by cell.

enum class Hyp { somatic = 0, germline = 1, artifact = 2 };

using Outcomes = std::vector<std::pair<int, double>>;

inline Outcomes substitution_outcomes(int ref, double rate)
{
    Outcomes o{{ref, 1.0 - rate}};
    for (int shift = 1; shift <= 3; ++shift)
        o.push_back({(ref + shift) % 4, rate / 3.0});
    return o;
}

inline Outcomes carrier_outcomes(int ref, int alt, double carry)
{
    return {{alt, carry}, {ref, 1.0 - carry}};
}

inline Outcomes normal_cell(Hyp h, int ref, int alt, const GeneratorConfig& cfg)
{
    if (h == Hyp::germline)
        return carrier_outcomes(ref, alt, 0.5);
    return substitution_outcomes(ref, cfg.error_rate);
}

inline Outcomes tumor_cell(Hyp h, int ref, int alt, const GeneratorConfig& cfg)
{
    switch (h) {
    case Hyp::somatic: return carrier_outcomes(ref, alt, cfg.vaf);
    case Hyp::germline: return carrier_outcomes(ref, alt, 0.5);
    case Hyp::artifact: return substitution_outcomes(ref, cfg.artifact_error_rate);
    }
    return {};
}

inline double outcome_probability(const Outcomes& o, int base)
{
    double p = 0.0;
    for (const auto& [b, q] : o) {
        if (b == base)
            p += q;
    }
    return p;
}

inline std::array<double, 3> class_priors(const GeneratorConfig& cfg)
{
    return {cfg.class_balance, (1.0 - cfg.class_balance) * cfg.germline_fraction,
            (1.0 - cfg.class_balance) * (1.0 - cfg.germline_fraction)};
}

/// P(hypothesis, center column) by summing over reference/alternate bases and
/// multiplying per-cell probabilities.
inline std::array<double, 3> brute_force_joint(const std::vector<int>& normal, const std::vector<int>& tumor,
                                               const GeneratorConfig& cfg)
{
    const auto prior = class_priors(cfg);
    std::array<double, 3> joint{};
    for (int h = 0; h < 3; ++h) {
        double total = 0.0;
        for (int ref = 0; ref < 4; ++ref) {
            for (int alt = 0; alt < 4; ++alt) {
                if (alt == ref)
                    continue;
                double p = 1.0 / 12.0;
                for (const int b : normal)
                    p *= outcome_probability(normal_cell(static_cast<Hyp>(h), ref, alt, cfg), b);
                for (const int b : tumor)
                    p *= outcome_probability(tumor_cell(static_cast<Hyp>(h), ref, alt, cfg), b);
                total += p;
            }
        }
        joint[static_cast<std::size_t>(h)] = prior[static_cast<std::size_t>(h)] * total;
    }
    return joint;
}

/// Full joint distribution over every depth x 1 pair (keyed by the base-4 code
/// of normal reads followed by tumor reads), enumerated as a probability tree
/// over the generative process.
inline std::map<std::uint64_t, std::array<double, 3>> enumerate_generative_model(int depth, const GeneratorConfig& cfg)
{
    std::map<std::uint64_t, std::array<double, 3>> table;
    const auto prior = class_priors(cfg);
    for (int h = 0; h < 3; ++h) {
        for (int ref = 0; ref < 4; ++ref) {
            for (int shift = 1; shift <= 3; ++shift) {
                const int alt = (ref + shift) % 4;
                const auto n_out = normal_cell(static_cast<Hyp>(h), ref, alt, cfg);
                const auto t_out = tumor_cell(static_cast<Hyp>(h), ref, alt, cfg);
                // Depth-first walk over 2*depth cells.
                struct Frame
                {
                    int cell;
                    std::uint64_t code;
                    double p;
                };
                std::vector<Frame> stack{{0, 0, prior[static_cast<std::size_t>(h)] / 12.0}};
                while (!stack.empty()) {
                    const Frame f = stack.back();
                    stack.pop_back();
                    if (f.p == 0.0)
                        continue;
                    if (f.cell == 2 * depth) {
                        table[f.code][static_cast<std::size_t>(h)] += f.p;
                        continue;
                    }
                    const auto& outcomes = f.cell < depth ? n_out : t_out;
                    for (const auto& [b, q] : outcomes)
                        stack.push_back({f.cell + 1, f.code * 4 + static_cast<std::uint64_t>(b), f.p * q});
                }
            }
        }
    }
    return table;
}

inline PairMatrix column_pair(const std::vector<int>& normal, const std::vector<int>& tumor)
{
    PairMatrix pair(static_cast<int>(normal.size()), 1);
    for (std::size_t r = 0; r < normal.size(); ++r) {
        pair.normal(static_cast<int>(r), 0) = static_cast<Base>(normal[r]);
        pair.tumor(static_cast<int>(r), 0) = static_cast<Base>(tumor[r]);
    }
    return pair;
}

inline void decode_column_code(std::uint64_t code, int depth, std::vector<int>& normal, std::vector<int>& tumor)
{
    normal.assign(static_cast<std::size_t>(depth), 0);
    tumor.assign(static_cast<std::size_t>(depth), 0);
    for (int cell = 2 * depth - 1; cell >= 0; --cell) {
        const int b = static_cast<int>(code % 4);
        code /= 4;
        if (cell < depth)
            normal[static_cast<std::size_t>(cell)] = b;
        else
            tumor[static_cast<std::size_t>(cell - depth)] = b;
    }
}

} // namespace bnnvc::test
