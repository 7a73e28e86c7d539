#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/ops.hpp"
#include "graphfm/rng.hpp"
#include "graphfm/tape.hpp"
#include "graphfm/tensor.hpp"
#include "json.hpp"

namespace graphfm {

/// Ablations. no_select keeps every pair (selection probabilities pinned to
/// 1, no selection network); no_interact scores and selects on interactions
/// but aggregates transformed neighbor embeddings instead of interactions;
/// single_head runs one attention head at full width.
enum class Variant { full, no_select, no_interact, single_head };

enum class Nonlin { relu, sigmoid, elu };
enum class HeadPool { concat, average };

const char* variant_name(Variant v);
Variant variant_from_string(const std::string& s);
const char* nonlin_name(Nonlin n);
Nonlin nonlin_from_string(const std::string& s);
const char* head_pool_name(HeadPool p);
HeadPool head_pool_from_string(const std::string& s);

struct ModelConfig {
    int64_t dim = 16;        // embedding width d
    int64_t layers = 3;      // stacked selection/aggregation layers K
    int64_t heads = 2;       // attention heads H
    std::vector<int64_t> m;  // kept neighbors per layer; empty -> default_m
    int64_t hidden = 0;      // selection network hidden width; 0 -> dim
    Nonlin nonlin = Nonlin::relu;
    HeadPool head_pool = HeadPool::concat;
    double leaky_slope = 0.2;
    Variant variant = Variant::full;

    /// Halve the neighborhood per layer: m_k = max(1, round(n / 2^(k-1))).
    static std::vector<int64_t> default_m(int64_t n_fields, int64_t layers);

    /// Fills defaults (m, hidden) and checks every constraint against the
    /// field count; throws ConfigError.
    void resolve(int64_t n_fields);

    int64_t head_width() const { return head_pool == HeadPool::concat ? dim / heads : dim; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Returns cfg adjusted for the ablation (single_head forces heads = 1).
ModelConfig make_variant(ModelConfig cfg, Variant v);

/// Named parameter handles in registration order. Stable across runs with the
/// same config, which is what checkpoints and optimizers key on.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// One embedding table per field: vocab x d for categorical fields (row 0 is
/// the unknown bucket), 1 x d for numeric fields (scaled by the transformed
/// value at lookup).
struct EmbeddingTables {
    std::vector<Tensor> tables;
    std::vector<int64_t> cat_slot;  // from the schema
    std::vector<int64_t> num_slot;
    int64_t dim = 0;

    int64_t n_fields() const { return static_cast<int64_t>(tables.size()); }
};

EmbeddingTables make_embedding_tables(const DatasetSchema& schema, int64_t dim, double init_stddev,
                                      Rng& rng);

/// B x n x d lookup of one embedding row per field. Backward scatters into
/// the active rows only.
Tensor embed_batch(Tape& tape, const EmbeddingTables& emb, const Batch& batch);

/// Two-layer scorer mapping an interaction vector to one logit.
struct SelectionMlp {
    Tensor w1, b1;  // hidden x d, hidden
    Tensor w2, b2;  // 1 x hidden, 1
};

/// Selection probabilities P[b,i,j] = sigmoid(mlp(t[b,i,j,:])), from the
/// interaction tensor t = pair_hadamard(e). Symmetric in (i, j) because the
/// input is.
Tensor edge_scores(Tape& tape, const SelectionMlp& mlp, const Tensor& t);

struct Selection {
    Tensor masked_p;  // probabilities zeroed outside the kept set
    Tensor mask;      // constant 0/1, B x n x n, m ones per row
};

/// Hard top-m per row. The cut is a forward-only decision; gradients reach
/// the scorer through the surviving probabilities.
Selection sample_neighbors(Tape& tape, const Tensor& probs, int64_t m);

struct AttnHead {
    Tensor wa;  // head_width x d
    Tensor a;   // head_width
};

/// Everything the explanation exporter needs from one forward pass, captured
/// (not recomputed) while the pass runs. Indexed [layer] / [layer][head].
struct ForwardCapture {
    std::vector<Tensor> probs;
    std::vector<Tensor> mask;
    std::vector<Tensor> masked_p;
    std::vector<std::vector<Tensor>> alpha;
};

class Model {
  public:
    virtual ~Model() = default;
    /// Logits, shape B. Run under a disabled tape for inference.
    virtual Tensor forward(Tape& tape, const Batch& batch) const = 0;
    virtual const ParamList& params() const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json config_json() const = 0;

    /// Identity of the schema the model was built against; paths that feed it
    /// data encoded against anything else must refuse.
    uint64_t schema_hash() const { return schema_hash_; }
    const std::vector<std::string>& field_names() const { return field_names_; }

  protected:
    void bind_schema(const DatasetSchema& schema) {
        schema_hash_ = schema.hash();
        for (const FieldSpec& f : schema.fields) field_names_.push_back(f.name);
    }

  private:
    uint64_t schema_hash_ = 0;
    std::vector<std::string> field_names_;
};

/// logit = b + sum_f w[active feature of f]
class LrModel : public Model {
  public:
    LrModel(const DatasetSchema& schema, uint64_t seed);
    Tensor forward(Tape& tape, const Batch& batch) const override;
    const ParamList& params() const override { return params_; }
    std::string kind() const override { return "lr"; }
    nlohmann::json config_json() const override;

  private:
    EmbeddingTables weights_;  // width-1 tables double as per-feature weights
    Tensor bias_;
    ParamList params_;
};

/// logit = b + sum_f w_f + sum_{i<j} <e_i, e_j>, pairwise term computed as
/// (|sum e|^2 - sum |e|^2) / 2.
class FmModel : public Model {
  public:
    FmModel(const DatasetSchema& schema, int64_t dim, uint64_t seed);
    Tensor forward(Tape& tape, const Batch& batch) const override;
    const ParamList& params() const override { return params_; }
    std::string kind() const override { return "fm"; }
    nlohmann::json config_json() const override;
    int64_t dim() const { return embed_.dim; }

  private:
    EmbeddingTables weights_, embed_;
    Tensor bias_;
    ParamList params_;
};

class GraphFM : public Model {
  public:
    GraphFM(const DatasetSchema& schema, ModelConfig cfg, uint64_t seed);

    Tensor forward(Tape& tape, const Batch& batch) const override { return forward(tape, batch, nullptr); }
    Tensor forward(Tape& tape, const Batch& batch, ForwardCapture* capture) const;

    const ParamList& params() const override { return params_; }
    std::string kind() const override { return "graphfm"; }
    nlohmann::json config_json() const override { return cfg_.to_json(); }
    const ModelConfig& config() const { return cfg_; }
    int64_t n_fields() const { return embed_.n_fields(); }

  private:
    struct Layer {
        SelectionMlp select;         // unused for no_select
        std::vector<AttnHead> heads;
    };

    ModelConfig cfg_;
    EmbeddingTables embed_;
    std::vector<Layer> layers_;
    Tensor out_p_;  // K*d, dotted with the field-averaged representation
    ParamList params_;
};

/// Builds the model named by kind ("lr", "fm", "graphfm").
std::unique_ptr<Model> make_model(const std::string& kind, const DatasetSchema& schema,
                                  const ModelConfig& cfg, uint64_t seed);

}  // namespace graphfm
