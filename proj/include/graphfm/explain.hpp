#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/model.hpp"
#include "json.hpp"

namespace graphfm {

/// One instance's per-layer interaction picture: the masked selection matrix
/// each layer actually used (row-major n x n; row i holds the kept edges of
/// field i), head-averaged attention on the same support, and the prediction.
struct ExplainRecord {
    int64_t instance_id = 0;
    double label = 0.0;
    double logit = 0.0;
    double prediction = 0.0;  // sigmoid(logit)
    std::vector<std::string> field_names;
    std::vector<std::vector<double>> masked_p;  // [layer][i*n + j]
    std::vector<std::vector<double>> alpha;     // [layer][i*n + j]

    nlohmann::json to_json(bool include_alpha = false) const;
};

/// Runs one row through the model and captures the matrices the pass used.
/// The data must be encoded against the schema the model was built on.
ExplainRecord explain_instance(const GraphFM& model, const Dataset& data, int64_t row);

/// Edge-survival counts across a split. Counts stay integer so the row-sum
/// identity is exact: every instance keeps exactly m_k edges per row.
struct SelectionStats {
    int64_t n_fields = 0;
    int64_t n_instances = 0;
    std::vector<std::vector<int64_t>> counts;  // [layer][i*n + j]

    double rate(size_t layer, int64_t i, int64_t j) const {
        return static_cast<double>(counts[layer][static_cast<size_t>(i * n_fields + j)]) /
               static_cast<double>(n_instances);
    }
    nlohmann::json to_json() const;
};

SelectionStats selection_frequency(const GraphFM& model, const DatasetView& view,
                                   int64_t batch_size = 4096);

/// Mean kept weight on vs off the diagonal, per layer, over a set of records.
/// Reported for inspection (self-loops are expected to rank low), not asserted.
struct DiagonalSummary {
    double mean_diag = 0.0;
    double mean_offdiag = 0.0;
};
std::vector<DiagonalSummary> diagonal_summary(const std::vector<ExplainRecord>& records);

/// Writes one CSV heatmap per (instance, layer) and a combined explain.json
/// into out_dir. Returns the records it exported.
std::vector<ExplainRecord> export_explanations(const std::string& out_dir, const GraphFM& model,
                                               const Dataset& data, const std::vector<int64_t>& rows,
                                               bool include_alpha = false);

}  // namespace graphfm
