#pragma once

#include <string>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/model.hpp"
#include "graphfm/train.hpp"
#include "json.hpp"

namespace graphfm {

/// Everything one run needs, assembled from defaults, then a config file of
/// flat dotted keys, then command-line flags (later layers win).
struct RunConfig {
    std::string model_kind = "graphfm";  // lr | fm | graphfm
    ModelConfig model;
    TrainConfig train;
    SplitSpec split;
    std::string data_path, schema_path, out_dir;

    /// Applies one flat key ("model.dim", "train.lr", "seed", ...). Unknown
    /// keys and ill-typed values raise ConfigError. "seed" drives the split,
    /// the epoch shuffles, and the parameter init together.
    void set(const std::string& key, const nlohmann::json& value);

    /// JSON object of flat keys; later calls to set() still win.
    void apply_file(const std::string& path);

    /// The resolved run, flat keys in sorted order — a reproducibility record
    /// whose serialization is byte-stable.
    nlohmann::json to_json() const;
};

/// "7,4,2" -> {7,4,2}; empty string -> {} (layer-count default applies).
std::vector<int64_t> parse_m_list(const std::string& csv);

}  // namespace graphfm
