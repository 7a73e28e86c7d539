#include "graphfm/model.hpp"

#include <cmath>

#include "graphfm/error.hpp"
#include "graphfm/parallel.hpp"

namespace graphfm {

namespace {

// Parameter init draws from its own stream so it can never collide with the
// split shuffle (stream 0) or epoch shuffles (1..max_epochs).
constexpr uint64_t kParamStream = 1ULL << 32;

Tensor glorot(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (double& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
}

Tensor apply_nonlin(Tape& tape, const Tensor& x, Nonlin n) {
    switch (n) {
        case Nonlin::relu: return relu(tape, x);
        case Nonlin::sigmoid: return sigmoid(tape, x);
        case Nonlin::elu: return elu(tape, x);
    }
    throw ConfigError("unknown nonlinearity");
}

}  // namespace

// ---- config -------------------------------------------------------------

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_select: return "no_select";
        case Variant::no_interact: return "no_interact";
        case Variant::single_head: return "single_head";
    }
    throw ConfigError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "no_select") return Variant::no_select;
    if (s == "no_interact") return Variant::no_interact;
    if (s == "single_head") return Variant::single_head;
    throw ConfigError("unknown variant '" + s + "'");
}

const char* nonlin_name(Nonlin n) {
    switch (n) {
        case Nonlin::relu: return "relu";
        case Nonlin::sigmoid: return "sigmoid";
        case Nonlin::elu: return "elu";
    }
    throw ConfigError("unknown nonlinearity");
}

Nonlin nonlin_from_string(const std::string& s) {
    if (s == "relu") return Nonlin::relu;
    if (s == "sigmoid") return Nonlin::sigmoid;
    if (s == "elu") return Nonlin::elu;
    throw ConfigError("unknown nonlinearity '" + s + "'");
}

const char* head_pool_name(HeadPool p) {
    return p == HeadPool::concat ? "concat" : "average";
}

HeadPool head_pool_from_string(const std::string& s) {
    if (s == "concat") return HeadPool::concat;
    if (s == "average") return HeadPool::average;
    throw ConfigError("unknown head_pool '" + s + "'");
}

std::vector<int64_t> ModelConfig::default_m(int64_t n_fields, int64_t layers) {
    std::vector<int64_t> m;
    double divisor = 1.0;
    for (int64_t k = 0; k < layers; ++k) {
        m.push_back(std::max<int64_t>(1, std::llround(static_cast<double>(n_fields) / divisor)));
        divisor *= 2.0;
    }
    return m;
}

void ModelConfig::resolve(int64_t n_fields) {
    if (n_fields < 1) throw ConfigError("model needs at least one field");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in (0, 1)");
    if (variant == Variant::single_head && heads != 1)
        throw ConfigError("single_head variant requires heads == 1");
    if (hidden == 0) hidden = dim;
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (m.empty()) m = default_m(n_fields, layers);
    if (static_cast<int64_t>(m.size()) != layers)
        throw ConfigError("m has " + std::to_string(m.size()) + " entries for " + std::to_string(layers) +
                          " layers");
    for (int64_t mk : m)
        if (mk < 1 || mk > n_fields)
            throw ConfigError("m entry " + std::to_string(mk) + " outside [1, " + std::to_string(n_fields) +
                              "]");
    if (head_pool == HeadPool::concat && dim % heads != 0)
        throw ConfigError("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{{"dim", dim},
                          {"layers", layers},
                          {"heads", heads},
                          {"m", m},
                          {"hidden", hidden},
                          {"nonlin", nonlin_name(nonlin)},
                          {"head_pool", head_pool_name(head_pool)},
                          {"leaky_slope", leaky_slope},
                          {"variant", variant_name(variant)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.dim = j.value("dim", cfg.dim);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    if (j.contains("m")) cfg.m = j["m"].get<std::vector<int64_t>>();
    cfg.hidden = j.value("hidden", cfg.hidden);
    if (j.contains("nonlin")) cfg.nonlin = nonlin_from_string(j["nonlin"].get<std::string>());
    if (j.contains("head_pool")) cfg.head_pool = head_pool_from_string(j["head_pool"].get<std::string>());
    cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
    if (j.contains("variant")) cfg.variant = variant_from_string(j["variant"].get<std::string>());
    return cfg;
}

ModelConfig make_variant(ModelConfig cfg, Variant v) {
    cfg.variant = v;
    if (v == Variant::single_head) cfg.heads = 1;
    return cfg;
}

// ---- embeddings -----------------------------------------------------------

EmbeddingTables make_embedding_tables(const DatasetSchema& schema, int64_t dim, double init_stddev,
                                      Rng& rng) {
    EmbeddingTables emb;
    emb.dim = dim;
    emb.cat_slot = schema.cat_slot;
    emb.num_slot = schema.num_slot;
    for (size_t f = 0; f < schema.fields.size(); ++f) {
        const int64_t rows =
            schema.fields[f].kind == FieldKind::categorical ? schema.vocabs[f].size() : 1;
        emb.tables.push_back(gaussian({rows, dim}, init_stddev, rng));
    }
    return emb;
}

Tensor embed_batch(Tape& tape, const EmbeddingTables& emb, const Batch& batch) {
    const int64_t B = batch.size;
    const int64_t n = emb.n_fields();
    const int64_t d = emb.dim;
    if (B < 1) throw DimensionError("embed_batch: empty batch");
    if (static_cast<int64_t>(batch.cat.size()) + static_cast<int64_t>(batch.num.size()) != n)
        throw DimensionError("embed_batch: batch has " +
                             std::to_string(batch.cat.size() + batch.num.size()) + " columns for " +
                             std::to_string(n) + " fields");

    bool rg = false;
    for (const Tensor& t : emb.tables) rg = rg || t.requires_grad();
    Tensor out = Tensor::zeros({B, n, d}, rg && tape.enabled());

    for (int64_t f = 0; f < n; ++f) {  // bounds first, so the fill can't race a throw
        if (emb.cat_slot[static_cast<size_t>(f)] < 0) continue;
        const auto& col = batch.cat[static_cast<size_t>(emb.cat_slot[static_cast<size_t>(f)])];
        const int64_t rows = emb.tables[static_cast<size_t>(f)].dim(0);
        for (int64_t b = 0; b < B; ++b)
            if (col[static_cast<size_t>(b)] < 0 || col[static_cast<size_t>(b)] >= rows)
                throw DataError("embed_batch: index " + std::to_string(col[static_cast<size_t>(b)]) +
                                " outside table of " + std::to_string(rows) + " rows");
    }

    parallel_for(B, [&](int64_t b) {
        double* row = out.values().data() + b * n * d;
        for (int64_t f = 0; f < n; ++f, row += d) {
            const auto& table = emb.tables[static_cast<size_t>(f)];
            if (emb.cat_slot[static_cast<size_t>(f)] >= 0) {
                const int32_t idx =
                    batch.cat[static_cast<size_t>(emb.cat_slot[static_cast<size_t>(f)])][static_cast<size_t>(b)];
                const double* src = table.values().data() + static_cast<int64_t>(idx) * d;
                for (int64_t c = 0; c < d; ++c) row[c] = src[c];
            } else {
                const double v =
                    batch.num[static_cast<size_t>(emb.num_slot[static_cast<size_t>(f)])][static_cast<size_t>(b)];
                const double* src = table.values().data();
                for (int64_t c = 0; c < d; ++c) row[c] = v * src[c];
            }
        }
    });

    if (tape.enabled() && rg) {
        tape.record([emb, batch, out, B, n, d]() {
            const std::vector<double>& g = out.grad();
            // Each field owns its table, so fields can scatter independently.
            parallel_for(n, [&](int64_t f) {
                const Tensor& table = emb.tables[static_cast<size_t>(f)];
                if (!table.requires_grad()) return;
                std::vector<double>& tg = table.grad();
                for (int64_t b = 0; b < B; ++b) {
                    const double* gr = g.data() + (b * n + f) * d;
                    if (emb.cat_slot[static_cast<size_t>(f)] >= 0) {
                        const int32_t idx = batch.cat[static_cast<size_t>(
                            emb.cat_slot[static_cast<size_t>(f)])][static_cast<size_t>(b)];
                        double* dst = tg.data() + static_cast<int64_t>(idx) * d;
                        for (int64_t c = 0; c < d; ++c) dst[c] += gr[c];
                    } else {
                        const double v = batch.num[static_cast<size_t>(
                            emb.num_slot[static_cast<size_t>(f)])][static_cast<size_t>(b)];
                        for (int64_t c = 0; c < d; ++c) tg[static_cast<size_t>(c)] += v * gr[c];
                    }
                }
            });
        });
    }
    return out;
}

// ---- graph layers ---------------------------------------------------------

Tensor edge_scores(Tape& tape, const SelectionMlp& mlp, const Tensor& t) {
    Tensor h = relu(tape, linear(tape, t, mlp.w1, mlp.b1));
    return sigmoid(tape, squeeze_lastdim(tape, linear(tape, h, mlp.w2, mlp.b2)));
}

Selection sample_neighbors(Tape& tape, const Tensor& probs, int64_t m) {
    Selection s;
    s.mask = topm_row_mask(probs, m);
    s.masked_p = hadamard(tape, probs, s.mask);
    return s;
}

// ---- GraphFM ----------------------------------------------------------------

GraphFM::GraphFM(const DatasetSchema& schema, ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    bind_schema(schema);
    cfg_.resolve(schema.n_fields());
    Rng rng(derive_seed(seed, kParamStream));

    embed_ = make_embedding_tables(schema, cfg_.dim, 0.01, rng);
    for (size_t f = 0; f < schema.fields.size(); ++f)
        params_.emplace_back("embed." + schema.fields[f].name, embed_.tables[f]);

    const int64_t d = cfg_.dim;
    const int64_t hw = cfg_.head_width();
    for (int64_t k = 0; k < cfg_.layers; ++k) {
        Layer layer;
        const std::string pre = "layer" + std::to_string(k) + ".";
        if (cfg_.variant != Variant::no_select) {
            layer.select.w1 = glorot({cfg_.hidden, d}, d, cfg_.hidden, rng);
            layer.select.b1 = Tensor::zeros({cfg_.hidden}, true);
            layer.select.w2 = glorot({1, cfg_.hidden}, cfg_.hidden, 1, rng);
            layer.select.b2 = Tensor::zeros({1}, true);
            params_.emplace_back(pre + "select.w1", layer.select.w1);
            params_.emplace_back(pre + "select.b1", layer.select.b1);
            params_.emplace_back(pre + "select.w2", layer.select.w2);
            params_.emplace_back(pre + "select.b2", layer.select.b2);
        }
        for (int64_t h = 0; h < cfg_.heads; ++h) {
            AttnHead head;
            head.wa = glorot({hw, d}, d, hw, rng);
            head.a = glorot({hw}, hw, 1, rng);
            params_.emplace_back(pre + "head" + std::to_string(h) + ".wa", head.wa);
            params_.emplace_back(pre + "head" + std::to_string(h) + ".a", head.a);
            layer.heads.push_back(std::move(head));
        }
        layers_.push_back(std::move(layer));
    }
    out_p_ = glorot({cfg_.layers * d}, cfg_.layers * d, 1, rng);
    params_.emplace_back("out.p", out_p_);
}

Tensor GraphFM::forward(Tape& tape, const Batch& batch, ForwardCapture* capture) const {
    if (capture) *capture = ForwardCapture{};
    Tensor e = embed_batch(tape, embed_, batch);
    const int64_t B = batch.size;
    const int64_t n = embed_.n_fields();

    std::vector<Tensor> reps;
    for (int64_t k = 0; k < cfg_.layers; ++k) {
        const Layer& L = layers_[static_cast<size_t>(k)];
        Tensor t = pair_hadamard(tape, e);  // B x n x n x d

        Tensor probs, mask, masked_p;
        if (cfg_.variant == Variant::no_select) {
            mask = Tensor::full({B, n, n}, 1.0);
            probs = mask;
            masked_p = mask;  // probabilities pinned to 1, nothing to learn
        } else {
            probs = edge_scores(tape, L.select, t);
            Selection sel = sample_neighbors(tape, probs, cfg_.m[static_cast<size_t>(k)]);
            mask = sel.mask;
            masked_p = sel.masked_p;
        }

        std::vector<Tensor> head_outs;
        std::vector<Tensor> alphas;
        for (const AttnHead& head : L.heads) {
            // One transform per head, shared between the attention score and
            // the aggregated value.
            Tensor tt = linear(tape, t, head.wa);  // B x n x n x hw
            Tensor c = leaky_relu(tape, project_lastdim(tape, tt, head.a), cfg_.leaky_slope);
            Tensor alpha = masked_softmax(tape, c, mask);
            Tensor w =
                cfg_.variant == Variant::no_select ? alpha : hadamard(tape, alpha, masked_p);
            Tensor out = cfg_.variant == Variant::no_interact
                             ? attend_nodes(tape, w, linear(tape, e, head.wa))
                             : attend_pairs(tape, w, tt);
            head_outs.push_back(out);
            alphas.push_back(alpha);
        }

        Tensor agg;
        if (cfg_.head_pool == HeadPool::concat) {
            agg = concat_lastdim(tape, head_outs);
        } else {
            agg = head_outs[0];
            for (size_t h = 1; h < head_outs.size(); ++h) agg = add(tape, agg, head_outs[h]);
            agg = scale(tape, agg, 1.0 / static_cast<double>(head_outs.size()));
        }
        Tensor ek = apply_nonlin(tape, agg, cfg_.nonlin);

        if (capture) {
            capture->probs.push_back(probs);
            capture->mask.push_back(mask);
            capture->masked_p.push_back(masked_p);
            capture->alpha.push_back(std::move(alphas));
        }
        reps.push_back(ek);
        e = ek;
    }

    Tensor final_rep = concat_lastdim(tape, reps);       // B x n x K*d
    Tensor star = mean_fields(tape, final_rep);          // B x K*d
    return project_lastdim(tape, star, out_p_);          // B
}

// ---- baselines --------------------------------------------------------------

LrModel::LrModel(const DatasetSchema& schema, uint64_t seed) {
    bind_schema(schema);
    Rng rng(derive_seed(seed, kParamStream));
    weights_ = make_embedding_tables(schema, 1, 0.01, rng);
    bias_ = Tensor::scalar(0.0, true);
    for (size_t f = 0; f < schema.fields.size(); ++f)
        params_.emplace_back("w." + schema.fields[f].name, weights_.tables[f]);
    params_.emplace_back("bias", bias_);
}

Tensor LrModel::forward(Tape& tape, const Batch& batch) const {
    Tensor w = embed_batch(tape, weights_, batch);                // B x n x 1
    Tensor z = squeeze_lastdim(tape, sum_fields(tape, w));        // B
    return add_scalar_param(tape, z, bias_);
}

nlohmann::json LrModel::config_json() const { return nlohmann::json::object(); }

FmModel::FmModel(const DatasetSchema& schema, int64_t dim, uint64_t seed) {
    bind_schema(schema);
    if (dim < 1) throw ConfigError("dim must be >= 1");
    Rng rng(derive_seed(seed, kParamStream));
    weights_ = make_embedding_tables(schema, 1, 0.01, rng);
    embed_ = make_embedding_tables(schema, dim, 0.01, rng);
    bias_ = Tensor::scalar(0.0, true);
    for (size_t f = 0; f < schema.fields.size(); ++f)
        params_.emplace_back("w." + schema.fields[f].name, weights_.tables[f]);
    for (size_t f = 0; f < schema.fields.size(); ++f)
        params_.emplace_back("embed." + schema.fields[f].name, embed_.tables[f]);
    params_.emplace_back("bias", bias_);
}

Tensor FmModel::forward(Tape& tape, const Batch& batch) const {
    Tensor w = embed_batch(tape, weights_, batch);
    Tensor lin = squeeze_lastdim(tape, sum_fields(tape, w));  // B

    // sum_{i<j} <e_i, e_j> = (|sum_i e_i|^2 - sum_i |e_i|^2) / 2
    Tensor e = embed_batch(tape, embed_, batch);              // B x n x d
    Tensor s = sum_fields(tape, e);                           // B x d
    Tensor sq_of_sum = hadamard(tape, s, s);
    Tensor sum_of_sq = sum_fields(tape, hadamard(tape, e, e));
    Tensor pair = sum_lastdim(tape, scale(tape, sub(tape, sq_of_sum, sum_of_sq), 0.5));  // B

    return add_scalar_param(tape, add(tape, lin, pair), bias_);
}

nlohmann::json FmModel::config_json() const { return nlohmann::json{{"dim", embed_.dim}}; }

std::unique_ptr<Model> make_model(const std::string& kind, const DatasetSchema& schema,
                                  const ModelConfig& cfg, uint64_t seed) {
    if (kind == "lr") return std::make_unique<LrModel>(schema, seed);
    if (kind == "fm") return std::make_unique<FmModel>(schema, cfg.dim, seed);
    if (kind == "graphfm") return std::make_unique<GraphFM>(schema, cfg, seed);
    throw ConfigError("unknown model kind '" + kind + "'");
}

}  // namespace graphfm
