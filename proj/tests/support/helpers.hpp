#pragma once

#include "oracles.hpp"

#include "rclarc/clarc.hpp"
#include "rclarc/nn.hpp"
#include "rclarc/rng.hpp"

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace testsupport {

inline oracle::Net to_oracle(const rclarc::MlpModel& model) {
    oracle::Net net;
    for (std::size_t k = 0; k < model.num_layers(); ++k) {
        const auto& w = model.weights[k];
        std::vector<oracle::Vec> rows;
        for (std::size_t o = 0; o < w.rows(); ++o) {
            const auto r = w.row(o);
            rows.emplace_back(r.begin(), r.end());
        }
        net.w.push_back(std::move(rows));
        net.b.push_back(model.biases[k]);
    }
    return net;
}

inline rclarc::Vector random_vector(rclarc::SplitMix64& rng, std::size_t n, double scale = 1.0) {
    rclarc::Vector v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

inline rclarc::Vector random_unit(rclarc::SplitMix64& rng, std::size_t n) {
    rclarc::Vector v = random_vector(rng, n);
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (double& x : v) x /= s;
    return v;
}

// A random projection instance: k unit CAVs in dimension m that share the
// same negative samples, so every subset's anchor is their mean.
struct ProjectionCase {
    std::vector<rclarc::Vector> directions;
    rclarc::Vector anchor;  // mean of the negatives, computed here
    rclarc::CavBank bank;
    rclarc::ConceptSet concepts;
};

inline ProjectionCase random_projection_case(rclarc::SplitMix64& rng, std::size_t k, std::size_t m,
                                             std::size_t n_negatives = 4, double offset_scale = 3.0) {
    ProjectionCase c;
    rclarc::ActivationTable table;
    std::vector<std::size_t> ids;
    c.anchor.assign(m, 0.0);
    for (std::size_t i = 0; i < n_negatives; ++i) {
        table[i] = random_vector(rng, m, offset_scale);
        ids.push_back(i);
        for (std::size_t j = 0; j < m; ++j) c.anchor[j] += table[i][j];
    }
    for (double& x : c.anchor) x /= static_cast<double>(n_negatives);
    std::vector<rclarc::Cav> cavs;
    for (std::size_t i = 0; i < k; ++i) {
        rclarc::Cav cav;
        cav.concept_id = "c" + std::to_string(i);
        cav.layer = 1;
        cav.direction = random_unit(rng, m);
        c.directions.push_back(cav.direction);
        cav.z_neg = c.anchor;
        cav.negative_ids = ids;
        c.concepts.insert(cav.concept_id);
        cavs.push_back(std::move(cav));
    }
    c.bank = rclarc::CavBank(std::move(cavs), std::move(table));
    return c;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testsupport
