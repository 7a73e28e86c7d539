#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "graphfm/model.hpp"
#include "graphfm/train.hpp"
#include "json.hpp"

namespace graphfm {

/// A checkpoint is a directory: manifest.json (names, shapes, offsets, model
/// kind and config, free-form extra state), schema.json (the fitted schema the
/// model was built against), params.bin and optionally adam.bin (raw
/// little-endian f64, bit-exact round trip).
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& dir, const Model& model, const DatasetSchema& schema,
                     const Adam* optimizer = nullptr, const nlohmann::json& extra = {});

struct CheckpointInfo {
    std::string kind;
    nlohmann::json config;
    uint64_t schema_hash = 0;
    bool has_optimizer = false;
    nlohmann::json extra;
    DatasetSchema schema;
};

CheckpointInfo read_checkpoint_info(const std::string& dir);

/// Copies stored values into the model's parameters. Names and shapes must
/// match the model exactly.
void load_model_params(const std::string& dir, Model& model);

void load_optimizer_state(const std::string& dir, Adam& opt);

/// Raw parameter arrays as stored, in manifest order.
std::vector<std::pair<std::string, std::vector<double>>> read_params_raw(const std::string& dir);

/// Rebuilds the model a checkpoint came from and loads its parameters.
std::unique_ptr<Model> load_model(const std::string& dir);

}  // namespace graphfm
