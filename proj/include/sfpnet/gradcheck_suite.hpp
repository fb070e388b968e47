#pragma once

// Finite-difference check of the whole model (embeddings -> blocks -> head -> loss).

#include "sfpnet/model.hpp"

#include <string>
#include <vector>

namespace sfpnet {

/// d = 4, n = 3 (two context fields + target), N_b = 5, L = 2, tower [8, 4].
ModelConfig tiny_model_config();
FeatureSchema tiny_schema();

/// A fixed mixed batch over `schema`: varied sequence lengths (including empty), distinct
/// items within each sequence, every scenario, both labels.
std::vector<Instance> tiny_batch(const FeatureSchema& schema, std::uint64_t seed);

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    double seconds = 0.0;

    bool pass() const { return max_rel_error < tolerance; }
};

GradCheckReport run_model_gradcheck(const ModelConfig& cfg, const FeatureSchema& schema,
                                    std::uint64_t seed, double h = 1e-6, double tolerance = 1e-4);

/// Columns: param, max_rel_error, analytic, numeric.
std::string gradcheck_csv(const GradCheckReport& r);

} // namespace sfpnet
