#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "graphfm/data.hpp"
#include "graphfm/model.hpp"
#include "json.hpp"

namespace graphfm {

/// Exact ROC-AUC by average ranks (ties get half credit), all counting in
/// int64 so equal inputs give bit-equal results. Throws MetricError when
/// only one class is present.
double auc_from_scores(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

/// Mean binary cross-entropy from logits: max(z,0) - z*y + log1p(exp(-|z|)).
/// Finite for any finite logit.
double mean_logloss(const std::vector<double>& logits, const std::vector<uint8_t>& labels);

/// Same quantity as a tape op (labels are constants), for training.
Tensor logloss_with_logits(Tape& tape, const Tensor& logits, const std::vector<double>& labels);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed parameter list. Keeps first/second moment buffers per
/// parameter; step() consumes the accumulated gradients. A non-finite
/// gradient raises DivergenceError naming the parameter.
class Adam {
  public:
    explicit Adam(const ParamList& params, AdamConfig cfg = {});

    void zero_grad();
    void step();

    int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Checkpoint access; buffers are aligned with names().
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<double>& moment1(size_t i) const { return m_[i]; }
    const std::vector<double>& moment2(size_t i) const { return v_[i]; }
    void restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

/// Stops after more than `patience` consecutive epochs without a new best.
class EarlyStopper {
  public:
    explicit EarlyStopper(int64_t patience) : patience_(patience) {}

    /// True when training should stop after this epoch.
    bool update(double metric) {
        if (metric > best_) {
            best_ = metric;
            bad_ = 0;
            return false;
        }
        return ++bad_ > patience_;
    }

    double best() const { return best_; }
    int64_t bad_epochs() const { return bad_; }
    void restore(double best, int64_t bad) {
        best_ = best;
        bad_ = bad;
    }

  private:
    int64_t patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int64_t bad_ = 0;
};

struct EvalMetrics {
    double auc = 0.0;
    double logloss = 0.0;
    int64_t n = 0;

    nlohmann::json to_json() const;
};

std::vector<double> predict_logits(const Model& model, const DatasetView& view,
                                   int64_t batch_size = 4096);
EvalMetrics evaluate(const Model& model, const DatasetView& view, int64_t batch_size = 4096);

struct TrainConfig {
    int64_t batch_size = 1024;
    int64_t eval_batch_size = 4096;
    double lr = 1e-3;
    int64_t max_epochs = 30;
    int64_t patience = 3;
    uint64_t seed = 42;
    bool shuffle = true;
    std::string checkpoint_dir;  // writes <dir>/last and <dir>/best when set
    bool resume = false;         // continue from <checkpoint_dir>/last

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
    int64_t epoch = 0;
    double train_logloss = 0.0;
    double val_auc = 0.0;
    double val_logloss = 0.0;
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

struct FitResult {
    std::vector<EpochStats> history;  // epochs run in this call
    int64_t best_epoch = 0;
    double best_val_auc = 0.0;
    bool stopped_early = false;
};

/// Trains with Adam, selects the best epoch by validation AUC, and leaves the
/// model holding the best parameters. A non-finite loss or gradient aborts
/// with DivergenceError naming the last finite epoch. With checkpointing on,
/// each epoch is durable and a resumed run reproduces the uninterrupted one
/// bit for bit.
FitResult fit(Model& model, const DatasetView& train, const DatasetView& val, const TrainConfig& cfg,
              const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace graphfm
