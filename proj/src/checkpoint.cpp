#include "graphfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "graphfm/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian f64; add byte swapping before porting");

namespace graphfm {

namespace {

using nlohmann::json;

namespace fs = std::filesystem;

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return j;
}

void append_blob(std::ofstream& out, const std::vector<double>& values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_blob(const fs::path& path, int64_t offset, int64_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.seekg(offset * static_cast<int64_t>(sizeof(double)));
    std::vector<double> values(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(double)))
        throw DataError(path.string() + ": truncated blob");
    return values;
}

json manifest_of(const std::string& dir) { return read_json(fs::path(dir) / "manifest.json"); }

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model, const DatasetSchema& schema,
                     const Adam* optimizer, const nlohmann::json& extra) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "graphfm-checkpoint";
    manifest["version"] = kCheckpointVersion;
    manifest["kind"] = model.kind();
    manifest["config"] = model.config_json();
    manifest["schema_hash"] = schema.hash();
    manifest["extra"] = extra;

    json arrays = json::array();
    {
        std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary | std::ios::trunc);
        if (!blob) throw DataError("cannot write " + dir + "/params.bin");
        int64_t offset = 0;
        for (const auto& [name, p] : model.params()) {
            arrays.push_back(json{{"name", name},
                                  {"shape", p.shape()},
                                  {"dtype", "f64"},
                                  {"file", "params.bin"},
                                  {"offset", offset}});
            append_blob(blob, p.values());
            offset += p.size();
        }
    }
    manifest["arrays"] = std::move(arrays);

    if (optimizer) {
        std::ofstream blob(fs::path(dir) / "adam.bin", std::ios::binary | std::ios::trunc);
        if (!blob) throw DataError("cannot write " + dir + "/adam.bin");
        for (size_t i = 0; i < optimizer->names().size(); ++i) {
            append_blob(blob, optimizer->moment1(i));
            append_blob(blob, optimizer->moment2(i));
        }
        manifest["optimizer"] = json{{"algorithm", "adam"}, {"t", optimizer->steps()}, {"file", "adam.bin"}};
    }

    write_json(fs::path(dir) / "schema.json", schema.to_json());
    write_json(fs::path(dir) / "manifest.json", manifest);
}

CheckpointInfo read_checkpoint_info(const std::string& dir) {
    json manifest = manifest_of(dir);
    if (manifest.value("format", "") != "graphfm-checkpoint")
        throw DataError(dir + ": not a checkpoint directory");
    if (manifest.value("version", 0) != kCheckpointVersion)
        throw DataError(dir + ": unsupported checkpoint version");
    CheckpointInfo info;
    info.kind = manifest.at("kind").get<std::string>();
    info.config = manifest.at("config");
    info.schema_hash = manifest.at("schema_hash").get<uint64_t>();
    info.has_optimizer = manifest.contains("optimizer");
    info.extra = manifest.value("extra", json::object());
    info.schema = DatasetSchema::from_json(read_json(fs::path(dir) / "schema.json"));
    if (info.schema.hash() != info.schema_hash)
        throw DataError(dir + ": schema.json does not match the manifest hash");
    return info;
}

std::vector<std::pair<std::string, std::vector<double>>> read_params_raw(const std::string& dir) {
    json manifest = manifest_of(dir);
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& entry : manifest.at("arrays")) {
        Shape shape = entry.at("shape").get<Shape>();
        out.emplace_back(entry.at("name").get<std::string>(),
                         read_blob(fs::path(dir) / entry.at("file").get<std::string>(),
                                   entry.at("offset").get<int64_t>(), shape_numel(shape)));
    }
    return out;
}

void load_model_params(const std::string& dir, Model& model) {
    json manifest = manifest_of(dir);
    const auto& arrays = manifest.at("arrays");
    const ParamList& params = model.params();
    if (arrays.size() != params.size())
        throw DataError(dir + ": checkpoint has " + std::to_string(arrays.size()) + " arrays, model has " +
                        std::to_string(params.size()) + " parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = arrays[i];
        const auto& [name, p] = params[i];
        if (entry.at("name").get<std::string>() != name)
            throw DataError(dir + ": parameter order mismatch at '" + name + "' vs '" +
                            entry.at("name").get<std::string>() + "'");
        Shape shape = entry.at("shape").get<Shape>();
        if (shape != p.shape())
            throw DataError(dir + ": shape mismatch for '" + name + "': stored " + shape_to_string(shape) +
                            ", model " + p.shape_str());
        Tensor dst = p;
        dst.values() = read_blob(fs::path(dir) / entry.at("file").get<std::string>(),
                                 entry.at("offset").get<int64_t>(), p.size());
    }
}

void load_optimizer_state(const std::string& dir, Adam& opt) {
    json manifest = manifest_of(dir);
    if (!manifest.contains("optimizer")) throw DataError(dir + ": checkpoint has no optimizer state");
    const json& o = manifest["optimizer"];
    const fs::path blob = fs::path(dir) / o.at("file").get<std::string>();
    std::vector<std::vector<double>> m, v;
    int64_t offset = 0;
    for (const auto& entry : manifest.at("arrays")) {
        const int64_t count = shape_numel(entry.at("shape").get<Shape>());
        m.push_back(read_blob(blob, offset, count));
        offset += count;
        v.push_back(read_blob(blob, offset, count));
        offset += count;
    }
    if (m.size() != opt.names().size())
        throw DataError(dir + ": optimizer state covers " + std::to_string(m.size()) + " parameters, not " +
                        std::to_string(opt.names().size()));
    opt.restore(o.at("t").get<int64_t>(), std::move(m), std::move(v));
}

std::unique_ptr<Model> load_model(const std::string& dir) {
    CheckpointInfo info = read_checkpoint_info(dir);
    ModelConfig cfg = ModelConfig::from_json(info.config);
    std::unique_ptr<Model> model = make_model(info.kind, info.schema, cfg, /*seed=*/0);
    load_model_params(dir, *model);
    return model;
}

}  // namespace graphfm
