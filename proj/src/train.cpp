#include "graphfm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "graphfm/checkpoint.hpp"
#include "graphfm/error.hpp"

namespace graphfm {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_logloss_term(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

// ---- metrics ----------------------------------------------------------------

double auc_from_scores(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                             std::to_string(labels.size()) + " labels");
    const int64_t n = static_cast<int64_t>(scores.size());
    if (n == 0) throw MetricError("auc: no examples");
    int64_t pos = 0;
    for (uint8_t y : labels) pos += y ? 1 : 0;
    const int64_t neg = n - pos;
    if (pos == 0 || neg == 0) throw MetricError("auc: needs both classes, got one");

    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
        return a < b;
    });

    // Twice the positive rank-sum, in integers: a tie group spanning 1-based
    // ranks [lo, hi] gives each member 2*avg_rank = lo + hi.
    int64_t twice_rank_sum = 0;
    int64_t i = 0;
    while (i < n) {
        int64_t j = i;
        while (j + 1 < n &&
               scores[static_cast<size_t>(idx[static_cast<size_t>(j + 1)])] ==
                   scores[static_cast<size_t>(idx[static_cast<size_t>(i)])])
            ++j;
        const int64_t twice_avg = (i + 1) + (j + 1);
        for (int64_t k = i; k <= j; ++k)
            if (labels[static_cast<size_t>(idx[static_cast<size_t>(k)])]) twice_rank_sum += twice_avg;
        i = j + 1;
    }
    // 2U = 2*R_pos - P(P+1); AUC = U / (P*N)
    return static_cast<double>(twice_rank_sum - pos * (pos + 1)) / static_cast<double>(2 * pos * neg);
}

double mean_logloss(const std::vector<double>& logits, const std::vector<uint8_t>& labels) {
    if (logits.size() != labels.size())
        throw DimensionError("logloss: " + std::to_string(logits.size()) + " logits vs " +
                             std::to_string(labels.size()) + " labels");
    if (logits.empty()) throw MetricError("logloss: no examples");
    double acc = 0.0;
    for (size_t i = 0; i < logits.size(); ++i)
        acc += stable_logloss_term(logits[i], labels[i] ? 1.0 : 0.0);
    return acc / static_cast<double>(logits.size());
}

Tensor logloss_with_logits(Tape& tape, const Tensor& logits, const std::vector<double>& labels) {
    if (logits.rank() != 1)
        throw DimensionError("logloss: logits must be rank-1, got " + logits.shape_str());
    const int64_t B = logits.dim(0);
    if (static_cast<int64_t>(labels.size()) != B)
        throw DimensionError("logloss: " + std::to_string(B) + " logits vs " +
                             std::to_string(labels.size()) + " labels");
    for (double y : labels)
        if (!(y >= 0.0 && y <= 1.0)) throw DataError("logloss: label outside [0, 1]");

    const bool rg = tape.enabled() && logits.requires_grad();
    Tensor out = Tensor::zeros({}, rg);
    double acc = 0.0;
    for (int64_t b = 0; b < B; ++b)
        acc += stable_logloss_term(logits.values()[static_cast<size_t>(b)], labels[static_cast<size_t>(b)]);
    out.values()[0] = acc / static_cast<double>(B);

    if (rg) {
        tape.record([logits, out, labels, B]() {
            const double g = out.grad()[0] / static_cast<double>(B);
            auto& gl = logits.grad();
            for (int64_t b = 0; b < B; ++b)
                gl[static_cast<size_t>(b)] +=
                    g * (stable_sigmoid(logits.values()[static_cast<size_t>(b)]) - labels[static_cast<size_t>(b)]);
        });
    }
    return out;
}

// ---- optimizer ----------------------------------------------------------------

Adam::Adam(const ParamList& params, AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
    for (const auto& [name, p] : params) {
        names_.push_back(name);
        params_.push_back(p);
        m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
}

void Adam::zero_grad() {
    for (const Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const std::vector<double>& g = p.grad();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        std::vector<double>& w = p.values();
        for (size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            if (!std::isfinite(gj))
                throw DivergenceError("non-finite gradient in parameter '" + names_[i] + "'");
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        }
    }
}

void Adam::restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (t < 0) throw DataError("adam: negative step count");
    if (m.size() != params_.size() || v.size() != params_.size())
        throw DataError("adam: moment buffers do not match the parameter list");
    for (size_t i = 0; i < params_.size(); ++i)
        if (static_cast<int64_t>(m[i].size()) != params_[i].size() ||
            static_cast<int64_t>(v[i].size()) != params_[i].size())
            throw DataError("adam: moment size mismatch for parameter '" + names_[i] + "'");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---- evaluation -----------------------------------------------------------------

std::vector<double> predict_logits(const Model& model, const DatasetView& view, int64_t batch_size) {
    if (!view.data) throw ContractError("predict: view has no dataset");
    std::vector<double> out;
    out.reserve(static_cast<size_t>(view.size()));
    iterate_batches(view, batch_size, /*seed=*/0, /*epoch=*/0, /*shuffle=*/false, [&](const Batch& b) {
        Tape tape(false);
        Tensor logits = model.forward(tape, b);
        out.insert(out.end(), logits.values().begin(), logits.values().end());
    });
    return out;
}

EvalMetrics evaluate(const Model& model, const DatasetView& view, int64_t batch_size) {
    std::vector<double> logits = predict_logits(model, view, batch_size);
    std::vector<uint8_t> labels;
    labels.reserve(view.rows.size());
    for (int64_t r : view.rows) labels.push_back(view.data->labels[static_cast<size_t>(r)]);
    EvalMetrics m;
    m.n = static_cast<int64_t>(logits.size());
    m.auc = auc_from_scores(logits, labels);
    m.logloss = mean_logloss(logits, labels);
    return m;
}

nlohmann::json EvalMetrics::to_json() const {
    return nlohmann::json{{"auc", auc}, {"logloss", logloss}, {"n", n}};
}

// ---- fit ------------------------------------------------------------------------

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"batch_size", batch_size}, {"eval_batch_size", eval_batch_size},
                          {"lr", lr},                 {"max_epochs", max_epochs},
                          {"patience", patience},     {"seed", seed},
                          {"shuffle", shuffle}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.eval_batch_size = j.value("eval_batch_size", cfg.eval_batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.shuffle = j.value("shuffle", cfg.shuffle);
    return cfg;
}

nlohmann::json EpochStats::to_json() const {
    return nlohmann::json{{"epoch", epoch},
                          {"train_logloss", train_logloss},
                          {"val_auc", val_auc},
                          {"val_logloss", val_logloss},
                          {"wall_ms", wall_ms}};
}

FitResult fit(Model& model, const DatasetView& train, const DatasetView& val, const TrainConfig& cfg,
              const std::function<void(const EpochStats&)>& on_epoch) {
    if (!train.data || !val.data) throw ContractError("fit: views must carry a dataset");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (cfg.patience < 0) throw ConfigError("patience must be >= 0");
    const DatasetSchema& schema = train.data->schema;

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    Adam opt(model.params(), adam_cfg);
    EarlyStopper stopper(cfg.patience);

    const std::string last_dir = cfg.checkpoint_dir.empty() ? "" : cfg.checkpoint_dir + "/last";
    const std::string best_dir = cfg.checkpoint_dir.empty() ? "" : cfg.checkpoint_dir + "/best";

    int64_t start_epoch = 1;
    int64_t best_epoch = 0;
    double best_auc = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_values;

    if (cfg.resume) {
        if (last_dir.empty()) throw ConfigError("resume requires checkpoint_dir");
        CheckpointInfo info = read_checkpoint_info(last_dir);
        if (info.schema_hash != schema.hash())
            throw DataError("resume: checkpoint was trained against a different schema");
        load_model_params(last_dir, model);
        load_optimizer_state(last_dir, opt);
        start_epoch = info.extra.at("epoch").get<int64_t>() + 1;
        best_epoch = info.extra.at("best_epoch").get<int64_t>();
        best_auc = info.extra.at("best_val_auc").get<double>();
        stopper.restore(best_auc, info.extra.at("bad_epochs").get<int64_t>());
        if (best_epoch > 0)
            for (auto& [name, vals] : read_params_raw(best_dir)) best_values.push_back(std::move(vals));
    }

    FitResult result;
    for (int64_t epoch = start_epoch; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        int64_t seen = 0;
        try {
            iterate_batches(train, cfg.batch_size, cfg.seed, epoch, cfg.shuffle, [&](const Batch& b) {
                Tape tape;
                Tensor loss = logloss_with_logits(tape, model.forward(tape, b), b.labels);
                const double lv = loss.item();
                if (!std::isfinite(lv)) throw DivergenceError("non-finite training loss");
                loss_sum += lv * static_cast<double>(b.size);
                seen += b.size;
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
            });
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                  "; last completed epoch was " + std::to_string(epoch - 1));
        }

        EvalMetrics vm = evaluate(model, val, cfg.eval_batch_size);
        EpochStats st;
        st.epoch = epoch;
        st.train_logloss = loss_sum / static_cast<double>(seen);
        st.val_auc = vm.auc;
        st.val_logloss = vm.logloss;
        st.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(st);
        if (on_epoch) on_epoch(st);

        if (vm.auc > best_auc) {
            best_auc = vm.auc;
            best_epoch = epoch;
            best_values.clear();
            for (const auto& [name, p] : model.params()) best_values.push_back(p.values());
            if (!best_dir.empty())
                save_checkpoint(best_dir, model, schema, nullptr,
                                {{"epoch", epoch}, {"val_auc", vm.auc}});
        }
        const bool stop = stopper.update(vm.auc);
        if (!last_dir.empty())
            save_checkpoint(last_dir, model, schema, &opt,
                            {{"epoch", epoch},
                             {"best_epoch", best_epoch},
                             {"best_val_auc", best_auc},
                             {"bad_epochs", stopper.bad_epochs()}});
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }

    // Leave the model at its best epoch.
    if (best_epoch > 0 && !best_values.empty()) {
        size_t i = 0;
        for (const auto& [name, p] : model.params()) {
            Tensor dst = p;
            dst.values() = best_values[i++];
        }
    }
    result.best_epoch = best_epoch;
    result.best_val_auc = best_auc;
    return result;
}

}  // namespace graphfm
