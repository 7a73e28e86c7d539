#include "graphfm/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "graphfm/error.hpp"
#include "graphfm/rng.hpp"

namespace graphfm {

void SynthSpec::validate() const {
    if (n_fields < 2) throw ConfigError("synth needs at least 2 fields");
    if (vocab < 2) throw ConfigError("synth vocab must be >= 2");
    if (rows < 1) throw ConfigError("synth rows must be >= 1");
    if (noise_stddev < 0.0) throw ConfigError("synth noise must be >= 0");
    for (auto [i, j] : planted) {
        if (i < 0 || j < 0 || i >= n_fields || j >= n_fields)
            throw ConfigError("planted pair field out of range");
        if (i == j) throw ConfigError("planted pair must join two distinct fields");
    }
}

nlohmann::json SynthSpec::to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [i, j] : planted) pairs.push_back({i, j});
    return {{"n_fields", n_fields}, {"vocab", vocab},           {"planted_pairs", pairs},
            {"rows", rows},         {"seed", seed},             {"base_logit", base_logit},
            {"pair_coeff", pair_coeff}, {"noise_stddev", noise_stddev}};
}

SchemaSpec synth_schema_spec(const SynthSpec& spec) {
    SchemaSpec s;
    s.label_column = "y";
    for (int64_t f = 0; f < spec.n_fields; ++f)
        s.fields.push_back({"c" + std::to_string(f), FieldKind::categorical, 1});
    return s;
}

SynthOutput write_synth(const std::string& out_dir, const SynthSpec& spec) {
    spec.validate();
    std::filesystem::create_directories(out_dir);
    SynthOutput out{out_dir + "/data.csv", out_dir + "/schema.json", out_dir + "/truth.json"};

    Rng rng(spec.seed);
    const int64_t low_max = spec.vocab / 2;  // values 1..low_max are "low"

    std::ofstream csv(out.csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot write " + out.csv_path);
    std::string line;
    std::vector<std::string> cells;
    for (int64_t f = 0; f < spec.n_fields; ++f) cells.push_back("c" + std::to_string(f));
    cells.push_back("y");
    write_csv_row(line, cells);
    csv << line;

    int64_t positives = 0;
    std::vector<int64_t> value(static_cast<size_t>(spec.n_fields));
    for (int64_t r = 0; r < spec.rows; ++r) {
        for (int64_t f = 0; f < spec.n_fields; ++f)
            value[static_cast<size_t>(f)] = 1 + static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(spec.vocab)));
        double z = spec.base_logit + rng.normal(0.0, 1.0) * spec.noise_stddev;
        for (auto [i, j] : spec.planted)
            if (value[static_cast<size_t>(i)] <= low_max && value[static_cast<size_t>(j)] <= low_max)
                z += spec.pair_coeff;
        const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        const int label = rng.uniform01() < p ? 1 : 0;
        positives += label;

        line.clear();
        cells.clear();
        for (int64_t f = 0; f < spec.n_fields; ++f)
            cells.push_back("v" + std::to_string(value[static_cast<size_t>(f)]));
        cells.push_back(label ? "1" : "0");
        write_csv_row(line, cells);
        csv << line;
    }
    csv.close();

    nlohmann::json schema;
    schema["label"] = "y";
    schema["min_count"] = 1;
    schema["fields"] = nlohmann::json::array();
    for (int64_t f = 0; f < spec.n_fields; ++f)
        schema["fields"].push_back({{"name", "c" + std::to_string(f)}, {"kind", "categorical"}});
    std::ofstream sf(out.schema_path, std::ios::binary);
    if (!sf) throw DataError("cannot write " + out.schema_path);
    sf << schema.dump(2) << "\n";

    nlohmann::json truth = spec.to_json();
    truth["low_value_max"] = low_max;  // a pair fires when both raw values are v1..v<low_value_max>
    truth["positive_rate"] = static_cast<double>(positives) / static_cast<double>(spec.rows);
    std::ofstream tf(out.truth_path, std::ios::binary);
    if (!tf) throw DataError("cannot write " + out.truth_path);
    tf << truth.dump(2) << "\n";
    return out;
}

}  // namespace graphfm
