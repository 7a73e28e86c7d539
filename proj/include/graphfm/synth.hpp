#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "graphfm/data.hpp"
#include "json.hpp"

namespace graphfm {

/// Synthetic click data with planted pairwise interactions. Every field draws
/// uniformly from its vocabulary; the label is Bernoulli of a logistic score
/// that fires when both fields of a planted pair land in the low half of
/// theirs. Selection quality is then checkable against ground truth.
struct SynthSpec {
    int64_t n_fields = 8;
    int64_t vocab = 10;  // distinct raw values per field
    std::vector<std::pair<int64_t, int64_t>> planted = {{0, 1}};
    int64_t rows = 50000;
    uint64_t seed = 7;
    double base_logit = -1.0;
    double pair_coeff = 3.0;
    double noise_stddev = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
};

struct SynthOutput {
    std::string csv_path, schema_path, truth_path;
};

/// The ingestion spec matching write_synth's CSV (fields c0..c{n-1}, label y,
/// min_count 1).
SchemaSpec synth_schema_spec(const SynthSpec& spec);

/// Writes data.csv, schema.json, and truth.json into out_dir (created if
/// missing). truth.json holds the generating parameters, the planted pairs,
/// and the measured positive rate.
SynthOutput write_synth(const std::string& out_dir, const SynthSpec& spec);

}  // namespace graphfm
