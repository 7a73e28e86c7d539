#include "graphfm/runconfig.hpp"

#include <fstream>

#include "graphfm/error.hpp"

namespace graphfm {

namespace {

int64_t want_int(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    return v.get<int64_t>();
}

double want_num(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number()) throw ConfigError(key + ": expected a number");
    return v.get<double>();
}

std::string want_str(const std::string& key, const nlohmann::json& v) {
    if (!v.is_string()) throw ConfigError(key + ": expected a string");
    return v.get<std::string>();
}

}  // namespace

std::vector<int64_t> parse_m_list(const std::string& csv) {
    std::vector<int64_t> out;
    if (csv.empty()) return out;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t next = csv.find(',', pos);
        const std::string cell = csv.substr(pos, next == std::string::npos ? next : next - pos);
        try {
            size_t used = 0;
            out.push_back(std::stoll(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw ConfigError("m list: expected integers like \"7,4,2\", got '" + csv + "'");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

void RunConfig::set(const std::string& key, const nlohmann::json& value) {
    if (key == "model.kind") {
        const std::string k = want_str(key, value);
        if (k != "lr" && k != "fm" && k != "graphfm")
            throw ConfigError("model.kind: expected lr, fm, or graphfm, got '" + k + "'");
        model_kind = k;
    } else if (key == "model.dim") {
        model.dim = want_int(key, value);
    } else if (key == "model.layers") {
        model.layers = want_int(key, value);
    } else if (key == "model.heads") {
        model.heads = want_int(key, value);
    } else if (key == "model.hidden") {
        model.hidden = want_int(key, value);
    } else if (key == "model.m") {
        if (value.is_string()) {
            model.m = parse_m_list(value.get<std::string>());
        } else if (value.is_array()) {
            model.m.clear();
            for (const auto& v : value) model.m.push_back(want_int(key, v));
        } else {
            throw ConfigError("model.m: expected an array or \"a,b,c\" string");
        }
    } else if (key == "model.nonlin") {
        model.nonlin = nonlin_from_string(want_str(key, value));
    } else if (key == "model.head_pool") {
        model.head_pool = head_pool_from_string(want_str(key, value));
    } else if (key == "model.variant") {
        model.variant = variant_from_string(want_str(key, value));
    } else if (key == "model.leaky_slope") {
        model.leaky_slope = want_num(key, value);
    } else if (key == "train.batch_size") {
        train.batch_size = want_int(key, value);
    } else if (key == "train.eval_batch_size") {
        train.eval_batch_size = want_int(key, value);
    } else if (key == "train.epochs") {
        train.max_epochs = want_int(key, value);
    } else if (key == "train.patience") {
        train.patience = want_int(key, value);
    } else if (key == "train.lr") {
        train.lr = want_num(key, value);
    } else if (key == "train.shuffle") {
        if (!value.is_boolean()) throw ConfigError("train.shuffle: expected a boolean");
        train.shuffle = value.get<bool>();
    } else if (key == "seed") {
        const int64_t s = want_int(key, value);
        if (s < 0) throw ConfigError("seed: expected a non-negative integer");
        train.seed = static_cast<uint64_t>(s);
        split.seed = static_cast<uint64_t>(s);
    } else if (key == "split.train") {
        split.train = want_num(key, value);
    } else if (key == "split.val") {
        split.val = want_num(key, value);
    } else if (key == "split.test") {
        split.test = want_num(key, value);
    } else if (key == "data.path") {
        data_path = want_str(key, value);
    } else if (key == "data.schema") {
        schema_path = want_str(key, value);
    } else if (key == "out.dir") {
        out_dir = want_str(key, value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file " + path + ": expected a JSON object of flat keys");
    for (const auto& [key, value] : j.items()) set(key, value);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["model.kind"] = model_kind;
    j["model.dim"] = model.dim;
    j["model.layers"] = model.layers;
    j["model.heads"] = model.heads;
    j["model.m"] = model.m;
    j["model.hidden"] = model.hidden;
    j["model.nonlin"] = nonlin_name(model.nonlin);
    j["model.head_pool"] = head_pool_name(model.head_pool);
    j["model.variant"] = variant_name(model.variant);
    j["model.leaky_slope"] = model.leaky_slope;
    j["train.batch_size"] = train.batch_size;
    j["train.eval_batch_size"] = train.eval_batch_size;
    j["train.epochs"] = train.max_epochs;
    j["train.patience"] = train.patience;
    j["train.lr"] = train.lr;
    j["train.shuffle"] = train.shuffle;
    j["seed"] = train.seed;
    j["split.train"] = split.train;
    j["split.val"] = split.val;
    j["split.test"] = split.test;
    j["data.path"] = data_path;
    j["data.schema"] = schema_path;
    j["out.dir"] = out_dir;
    return j;
}

}  // namespace graphfm
