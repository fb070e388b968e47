#pragma once

// Synthetic multi-scenario click data with a planted, scenario-conditional relevance
// signal, plus the CSV / schema files that hold a dataset on disk.

#include "sfpnet/config.hpp"
#include "sfpnet/encoding.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfpnet {

struct SynthConfig {
    std::int32_t n_users = 2000;
    std::int32_t n_items = 1000;
    std::int32_t n_topics = 8;
    std::int32_t n_scenarios = 4;
    std::int32_t topics_per_scenario = 2;
    std::int32_t scenario_topic_stride = 0; // 0 -> topics_per_scenario (disjoint sets)
    std::int32_t history_min = 5;
    std::int32_t history_max = 20;
    std::int32_t impressions_per_user_scenario = 20;
    std::int32_t latent_dim = 16;
    std::int32_t n_brands = 50;
    double sigma_noise = 0.2;
    double alpha = 8.0;
    double label_noise = 0.0;
    double preferred_target_prob = 0.5;
    std::vector<double> base_rates{-2.0, -1.5, -2.5, -1.75}; // beta_m, cycled when shorter
    std::vector<double> scenario_scale;                       // fraction of users active per scenario (empty -> all 1)
    double test_fraction = 0.2;
    std::uint64_t seed = 1;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;

    std::vector<std::int32_t> scenario_topics(std::int32_t scenario) const;
    double base_rate(std::int32_t scenario) const;
    double scale(std::int32_t scenario) const;

    static SynthConfig from_config(const KeyValueConfig& cfg);
    std::string to_text() const;
};

/// Generator state needed to score impressions with the true click probability.
struct GroundTruth {
    SynthConfig config;
    std::vector<std::vector<double>> topic_vectors;           // n_topics x latent_dim
    std::vector<std::int32_t> item_topic;                     // by item id (index 0 unused)
    std::vector<std::vector<double>> item_latent;             // by item id
    std::vector<std::vector<std::int32_t>> user_topics;       // by user id
    std::vector<std::vector<std::int32_t>> scenario_topic_set; // R_m

    /// Mean cosine between the target and the history items whose topic is in R_m;
    /// 0 when no history item is scenario-relevant.
    double relevance(const Instance& inst) const;

    /// sigmoid(alpha * relevance + beta_m), the noise-free click probability.
    double click_probability(const Instance& inst) const;
};

struct Dataset {
    FeatureSchema schema;
    std::vector<Instance> train;
    std::vector<Instance> test;
};

struct GeneratedData {
    Dataset data;
    GroundTruth truth;
};

GeneratedData generate(const SynthConfig& config);

/// Schema of every synthetic dataset built from `config`.
FeatureSchema synthetic_schema(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

class DataParseError : public std::runtime_error {
public:
    DataParseError(const std::string& path, int line, int column, const std::string& what);

    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Columns: session_id, scenario_id, label, timestamp, user_id, target_item, target_attrs,
/// then the remaining context fields by name, then behaviors. Attribute lists are
/// '|'-separated; behaviors are "item:attr,attr;item:attr;..." oldest first.
void write_csv(const std::vector<Instance>& instances, const FeatureSchema& schema,
               const std::string& path);
std::string to_csv(const std::vector<Instance>& instances, const FeatureSchema& schema);

/// Rows are validated against `schema`; failures name the line (1-based, header is line 1)
/// and column (1-based).
std::vector<Instance> read_csv(const std::string& path, const FeatureSchema& schema);
std::vector<Instance> parse_csv(const std::string& text, const FeatureSchema& schema,
                                const std::string& source = "<string>");

std::string schema_to_text(const FeatureSchema& schema);
FeatureSchema schema_from_config(const KeyValueConfig& cfg);

/// Writes train.csv, test.csv, schema.txt and (when given) synth_config.txt into `dir`.
void save_dataset(const Dataset& data, const std::string& dir, const SynthConfig* config = nullptr);
Dataset load_dataset(const std::string& dir);

/// Instances of `data` whose scenario is `scenario`.
std::vector<Instance> filter_scenario(const std::vector<Instance>& data, std::int32_t scenario);

} // namespace sfpnet
