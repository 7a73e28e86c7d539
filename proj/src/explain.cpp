#include "graphfm/explain.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "graphfm/error.hpp"

namespace graphfm {

namespace {

double sigmoid_stable(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Shortest decimal form that round-trips the double.
std::string fmt_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

nlohmann::json matrix_json(const std::vector<double>& flat, int64_t n) {
    nlohmann::json rows = nlohmann::json::array();
    for (int64_t i = 0; i < n; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int64_t j = 0; j < n; ++j) row.push_back(flat[static_cast<size_t>(i * n + j)]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void check_schema(const Model& model, const Dataset& data) {
    if (model.schema_hash() != data.schema.hash())
        throw DataError("data encoded against a different schema than the model was trained on");
}

}  // namespace

nlohmann::json ExplainRecord::to_json(bool include_alpha) const {
    const int64_t n = static_cast<int64_t>(field_names.size());
    nlohmann::json j;
    j["instance"] = instance_id;
    j["label"] = label;
    j["logit"] = logit;
    j["prediction"] = prediction;
    j["fields"] = field_names;
    j["layers"] = nlohmann::json::array();
    for (size_t k = 0; k < masked_p.size(); ++k) {
        nlohmann::json layer;
        layer["layer"] = k + 1;
        layer["masked_p"] = matrix_json(masked_p[k], n);
        if (include_alpha) layer["alpha"] = matrix_json(alpha[k], n);
        j["layers"].push_back(std::move(layer));
    }
    return j;
}

ExplainRecord explain_instance(const GraphFM& model, const Dataset& data, int64_t row) {
    check_schema(model, data);
    if (row < 0 || row >= data.n_rows()) throw DataError("instance id out of range");

    const std::vector<int64_t> rows = {row};
    Batch batch = gather_batch(data, rows, 0, 1);

    Tape tape(false);
    ForwardCapture cap;
    Tensor logits = model.forward(tape, batch, &cap);

    ExplainRecord rec;
    rec.instance_id = row;
    rec.label = batch.labels[0];
    rec.logit = logits.values()[0];
    rec.prediction = sigmoid_stable(rec.logit);
    rec.field_names = model.field_names();
    for (size_t k = 0; k < cap.masked_p.size(); ++k) {
        rec.masked_p.push_back(cap.masked_p[k].values());  // B=1: already n*n
        // Attention averaged over heads; masked entries are exactly zero in
        // every head, so the support is unchanged.
        const size_t nn = cap.masked_p[k].values().size();
        std::vector<double> mean(nn, 0.0);
        for (const Tensor& a : cap.alpha[k]) {
            const std::vector<double>& av = a.values();
            for (size_t e = 0; e < nn; ++e) mean[e] += av[e];
        }
        for (double& v : mean) v /= static_cast<double>(cap.alpha[k].size());
        rec.alpha.push_back(std::move(mean));
    }
    return rec;
}

SelectionStats selection_frequency(const GraphFM& model, const DatasetView& view, int64_t batch_size) {
    if (view.data == nullptr || view.size() == 0) throw DataError("selection frequency over an empty view");
    check_schema(model, *view.data);
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");

    const int64_t n = model.n_fields();
    SelectionStats stats;
    stats.n_fields = n;
    stats.counts.assign(static_cast<size_t>(model.config().layers),
                        std::vector<int64_t>(static_cast<size_t>(n * n), 0));

    for (int64_t begin = 0; begin < view.size(); begin += batch_size) {
        const int64_t count = std::min(batch_size, view.size() - begin);
        Batch batch = gather_batch(*view.data, view.rows, begin, count);
        Tape tape(false);
        ForwardCapture cap;
        model.forward(tape, batch, &cap);
        for (size_t k = 0; k < stats.counts.size(); ++k) {
            const std::vector<double>& mask = cap.mask[k].values();  // B x n x n of {0,1}
            std::vector<int64_t>& dst = stats.counts[k];
            for (int64_t b = 0; b < count; ++b) {
                const size_t base = static_cast<size_t>(b * n * n);
                for (size_t e = 0; e < static_cast<size_t>(n * n); ++e) dst[e] += mask[base + e] != 0.0;
            }
        }
        stats.n_instances += count;
    }
    return stats;
}

nlohmann::json SelectionStats::to_json() const {
    nlohmann::json j;
    j["n_instances"] = n_instances;
    j["n_fields"] = n_fields;
    j["layers"] = nlohmann::json::array();
    for (size_t k = 0; k < counts.size(); ++k) {
        nlohmann::json layer;
        layer["layer"] = k + 1;
        nlohmann::json cnt = nlohmann::json::array(), rt = nlohmann::json::array();
        for (int64_t i = 0; i < n_fields; ++i) {
            nlohmann::json crow = nlohmann::json::array(), rrow = nlohmann::json::array();
            for (int64_t j2 = 0; j2 < n_fields; ++j2) {
                crow.push_back(counts[k][static_cast<size_t>(i * n_fields + j2)]);
                rrow.push_back(rate(k, i, j2));
            }
            cnt.push_back(std::move(crow));
            rt.push_back(std::move(rrow));
        }
        layer["counts"] = std::move(cnt);
        layer["rates"] = std::move(rt);
        j["layers"].push_back(std::move(layer));
    }
    return j;
}

std::vector<DiagonalSummary> diagonal_summary(const std::vector<ExplainRecord>& records) {
    if (records.empty()) return {};
    const size_t layers = records.front().masked_p.size();
    const int64_t n = static_cast<int64_t>(records.front().field_names.size());
    std::vector<DiagonalSummary> out(layers);
    for (size_t k = 0; k < layers; ++k) {
        double diag = 0.0, off = 0.0;
        for (const ExplainRecord& rec : records) {
            const std::vector<double>& m = rec.masked_p[k];
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j)
                    (i == j ? diag : off) += m[static_cast<size_t>(i * n + j)];
        }
        const double rows_d = static_cast<double>(records.size());
        out[k].mean_diag = diag / (rows_d * static_cast<double>(n));
        if (n > 1) out[k].mean_offdiag = off / (rows_d * static_cast<double>(n * (n - 1)));
    }
    return out;
}

std::vector<ExplainRecord> export_explanations(const std::string& out_dir, const GraphFM& model,
                                               const Dataset& data, const std::vector<int64_t>& rows,
                                               bool include_alpha) {
    std::filesystem::create_directories(out_dir);
    const int64_t n = model.n_fields();

    std::vector<ExplainRecord> records;
    for (int64_t row : rows) {
        ExplainRecord rec = explain_instance(model, data, row);
        for (size_t k = 0; k < rec.masked_p.size(); ++k) {
            std::string csv;
            std::vector<std::string> cells = {""};
            for (const std::string& f : rec.field_names) cells.push_back(f);
            write_csv_row(csv, cells);
            for (int64_t i = 0; i < n; ++i) {
                cells.assign(1, rec.field_names[static_cast<size_t>(i)]);
                for (int64_t j = 0; j < n; ++j)
                    cells.push_back(fmt_double(rec.masked_p[k][static_cast<size_t>(i * n + j)]));
                write_csv_row(csv, cells);
            }
            const std::string path = out_dir + "/instance" + std::to_string(row) + "_layer" +
                                     std::to_string(k + 1) + ".csv";
            std::ofstream f(path, std::ios::binary);
            if (!f) throw DataError("cannot write " + path);
            f << csv;
        }
        records.push_back(std::move(rec));
    }

    nlohmann::json j;
    j["fields"] = model.field_names();
    j["records"] = nlohmann::json::array();
    for (const ExplainRecord& rec : records) j["records"].push_back(rec.to_json(include_alpha));
    j["diagonal_summary"] = nlohmann::json::array();
    std::vector<DiagonalSummary> ds = diagonal_summary(records);
    for (size_t k = 0; k < ds.size(); ++k)
        j["diagonal_summary"].push_back(
            {{"layer", k + 1}, {"mean_diag", ds[k].mean_diag}, {"mean_offdiag", ds[k].mean_offdiag}});

    const std::string jpath = out_dir + "/explain.json";
    std::ofstream jf(jpath, std::ios::binary);
    if (!jf) throw DataError("cannot write " + jpath);
    jf << j.dump(2) << "\n";
    return records;
}

}  // namespace graphfm
