#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graphfm/checkpoint.hpp"
#include "graphfm/data.hpp"
#include "graphfm/error.hpp"
#include "graphfm/explain.hpp"
#include "graphfm/ml1m.hpp"
#include "graphfm/model.hpp"
#include "graphfm/runconfig.hpp"
#include "graphfm/synth.hpp"
#include "graphfm/train.hpp"

namespace {

using namespace graphfm;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << text;
}

DatasetView full_view(const Dataset& d) {
    DatasetView v{&d, {}};
    v.rows.reserve(static_cast<size_t>(d.n_rows()));
    for (int64_t i = 0; i < d.n_rows(); ++i) v.rows.push_back(i);
    return v;
}

DatasetView pick_split(const Dataset& d, const Splits& sp, const std::string& name) {
    if (name == "all") return full_view(d);
    if (name == "train") return sp.train;
    if (name == "val") return sp.val;
    if (name == "test") return sp.test;
    throw ConfigError("--split: expected all, train, val, or test, got '" + name + "'");
}

/// Flags shared by train/eval/explain/ablate; config-file values fill in
/// first, then any flag the user actually passed wins.
struct CommonFlags {
    std::string config, data, schema, out, model_kind, variant, mk, nonlin, head_pool;
    int64_t seed = 0, layers = 0, heads = 0, dim = 0, hidden = 0, batch = 0, epochs = 0,
            patience = 0, eval_batch = 0;
    double lr = 0.0;

    CLI::Option *o_seed = nullptr, *o_layers = nullptr, *o_heads = nullptr, *o_dim = nullptr,
                *o_hidden = nullptr, *o_batch = nullptr, *o_epochs = nullptr, *o_patience = nullptr,
                *o_eval_batch = nullptr, *o_lr = nullptr, *o_model = nullptr, *o_variant = nullptr,
                *o_mk = nullptr, *o_nonlin = nullptr, *o_head_pool = nullptr, *o_data = nullptr,
                *o_schema = nullptr, *o_out = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON config of flat dotted keys; flags override it");
        o_data = cmd->add_option("--data", data, "input CSV");
        o_schema = cmd->add_option("--schema", schema, "ingestion schema JSON");
        o_out = cmd->add_option("--out", out, "output directory");
        o_seed = cmd->add_option("--seed", seed, "seed for split, shuffles, and init");
        o_model = cmd->add_option("--model", model_kind, "lr, fm, or graphfm");
        o_variant = cmd->add_option("--variant", variant, "full, no_select, no_interact, or single_head");
        o_layers = cmd->add_option("--layers", layers, "stacked layers K");
        o_heads = cmd->add_option("--heads", heads, "attention heads H");
        o_dim = cmd->add_option("--dim", dim, "embedding width d");
        o_hidden = cmd->add_option("--hidden", hidden, "selection net hidden width (0 = d)");
        o_mk = cmd->add_option("--mk", mk, "kept neighbors per layer, e.g. \"7,4,2\"");
        o_batch = cmd->add_option("--batch", batch, "training batch size");
        o_eval_batch = cmd->add_option("--eval-batch", eval_batch, "evaluation batch size");
        o_lr = cmd->add_option("--lr", lr, "Adam learning rate");
        o_epochs = cmd->add_option("--epochs", epochs, "maximum epochs");
        o_patience = cmd->add_option("--patience", patience, "early-stop patience");
        o_nonlin = cmd->add_option("--nonlin", nonlin, "relu, sigmoid, or elu");
        o_head_pool = cmd->add_option("--head-pool", head_pool, "concat or average");
    }

    RunConfig resolve() const {
        RunConfig rc;
        if (!config.empty()) rc.apply_file(config);
        if (*o_data) rc.set("data.path", data);
        if (*o_schema) rc.set("data.schema", schema);
        if (*o_out) rc.set("out.dir", out);
        if (*o_seed) rc.set("seed", seed);
        if (*o_model) rc.set("model.kind", model_kind);
        if (*o_variant) rc.set("model.variant", variant);
        if (*o_layers) rc.set("model.layers", layers);
        if (*o_heads) rc.set("model.heads", heads);
        if (*o_dim) rc.set("model.dim", dim);
        if (*o_hidden) rc.set("model.hidden", hidden);
        if (*o_mk) rc.set("model.m", mk);
        if (*o_batch) rc.set("train.batch_size", batch);
        if (*o_eval_batch) rc.set("train.eval_batch_size", eval_batch);
        if (*o_lr) rc.set("train.lr", lr);
        if (*o_epochs) rc.set("train.epochs", epochs);
        if (*o_patience) rc.set("train.patience", patience);
        if (*o_nonlin) rc.set("model.nonlin", nonlin);
        if (*o_head_pool) rc.set("model.head_pool", head_pool);
        return rc;
    }
};

void require(const std::string& value, const std::string& flag, const std::string& key) {
    if (value.empty()) throw ConfigError("missing " + flag + " (or " + key + " in the config file)");
}

nlohmann::json run_one_fit(Model& model, const Splits& sp, TrainConfig tcfg, const std::string& out_dir,
                           bool resume) {
    std::filesystem::create_directories(out_dir);
    tcfg.checkpoint_dir = out_dir + "/checkpoints";
    tcfg.resume = resume;

    std::ofstream history(out_dir + "/history.jsonl",
                          resume ? std::ios::binary | std::ios::app : std::ios::binary);
    if (!history) throw DataError("cannot write " + out_dir + "/history.jsonl");
    FitResult fr = fit(model, sp.train, sp.val, tcfg, [&](const EpochStats& st) {
        history << st.to_json().dump() << "\n";
        history.flush();
        std::cout << "epoch " << st.epoch << "  train_logloss " << st.train_logloss << "  val_auc "
                  << st.val_auc << "  val_logloss " << st.val_logloss << "\n";
    });

    EvalMetrics test = evaluate(model, sp.test, tcfg.eval_batch_size);
    nlohmann::json metrics;
    metrics["test_auc"] = test.auc;
    metrics["test_logloss"] = test.logloss;
    metrics["n_test"] = test.n;
    metrics["best_epoch"] = fr.best_epoch;
    metrics["best_val_auc"] = fr.best_val_auc;
    metrics["stopped_early"] = fr.stopped_early;
    return metrics;
}

int run_train(const RunConfig& rc_in, bool resume) {
    RunConfig rc = rc_in;
    require(rc.data_path, "--data", "data.path");
    require(rc.schema_path, "--schema", "data.schema");
    require(rc.out_dir, "--out", "out.dir");

    Dataset d = load_csv(rc.data_path, load_schema_spec(rc.schema_path));
    Splits sp = split_dataset(d, rc.split);
    std::filesystem::create_directories(rc.out_dir);
    write_text(rc.out_dir + "/config.json", rc.to_json().dump(2) + "\n");
    write_text(rc.out_dir + "/split.json", split_manifest(rc.split, d.n_rows()).dump(2) + "\n");

    std::unique_ptr<Model> model = make_model(rc.model_kind, d.schema, rc.model, rc.train.seed);
    nlohmann::json metrics = run_one_fit(*model, sp, rc.train, rc.out_dir, resume);
    write_text(rc.out_dir + "/metrics.json", metrics.dump(2) + "\n");
    std::cout << "test_auc " << metrics["test_auc"].get<double>() << "  test_logloss "
              << metrics["test_logloss"].get<double>() << "\nwrote " << rc.out_dir << "/metrics.json\n";
    return 0;
}

int run_eval(const RunConfig& rc, const std::string& checkpoint, const std::string& split_name,
             const std::string& out_path) {
    require(rc.data_path, "--data", "data.path");
    std::unique_ptr<Model> model = load_model(checkpoint);

    CheckpointInfo info = read_checkpoint_info(checkpoint);
    Dataset d = encode_csv(rc.data_path, info.schema);
    Splits sp;
    if (split_name != "all") sp = split_dataset(d, rc.split);
    DatasetView view = pick_split(d, sp, split_name);

    EvalMetrics m = evaluate(*model, view, rc.train.eval_batch_size);
    nlohmann::json j = m.to_json();
    j["split"] = split_name;
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty())
        std::cout << text;
    else
        write_text(out_path, text);
    return 0;
}

int run_explain(const RunConfig& rc, const std::string& checkpoint, const std::string& ids_csv,
                int64_t first_k, const std::string& split_name, bool alpha) {
    require(rc.data_path, "--data", "data.path");
    require(rc.out_dir, "--out", "out.dir");
    std::unique_ptr<Model> model = load_model(checkpoint);
    auto* gfm = dynamic_cast<GraphFM*>(model.get());
    if (gfm == nullptr)
        throw ConfigError("explain needs a graphfm checkpoint, got kind '" + model->kind() + "'");

    CheckpointInfo info = read_checkpoint_info(checkpoint);
    Dataset d = encode_csv(rc.data_path, info.schema);
    Splits sp;
    if (split_name != "all") sp = split_dataset(d, rc.split);
    DatasetView view = pick_split(d, sp, split_name);

    std::vector<int64_t> rows;
    if (!ids_csv.empty()) {
        rows = parse_m_list(ids_csv);
    } else {
        const int64_t k = std::min<int64_t>(first_k, view.size());
        rows.assign(view.rows.begin(), view.rows.begin() + k);
    }

    std::vector<ExplainRecord> recs = export_explanations(rc.out_dir, *gfm, d, rows, alpha);
    SelectionStats stats = selection_frequency(*gfm, view, rc.train.eval_batch_size);
    write_text(rc.out_dir + "/selection_frequency.json", stats.to_json().dump(2) + "\n");

    std::vector<DiagonalSummary> ds = diagonal_summary(recs);
    for (size_t k = 0; k < ds.size(); ++k)
        std::cout << "layer " << k + 1 << "  mean diagonal weight " << ds[k].mean_diag
                  << "  mean off-diagonal " << ds[k].mean_offdiag << "\n";
    std::cout << "wrote " << recs.size() << " explanation(s) to " << rc.out_dir << "\n";
    return 0;
}

int run_ablate(const RunConfig& rc_in) {
    RunConfig rc = rc_in;
    require(rc.data_path, "--data", "data.path");
    require(rc.schema_path, "--schema", "data.schema");
    require(rc.out_dir, "--out", "out.dir");
    if (rc.model_kind != "graphfm") throw ConfigError("ablate trains graphfm variants; drop model.kind");

    Dataset d = load_csv(rc.data_path, load_schema_spec(rc.schema_path));
    Splits sp = split_dataset(d, rc.split);  // one split shared by every variant
    std::filesystem::create_directories(rc.out_dir);
    write_text(rc.out_dir + "/config.json", rc.to_json().dump(2) + "\n");
    write_text(rc.out_dir + "/split.json", split_manifest(rc.split, d.n_rows()).dump(2) + "\n");

    nlohmann::json table;
    table["seed"] = rc.train.seed;
    table["variants"] = nlohmann::json::array();
    for (Variant v : {Variant::full, Variant::no_select, Variant::no_interact, Variant::single_head}) {
        const std::string name = variant_name(v);
        std::cout << "== variant " << name << "\n";
        GraphFM model(d.schema, make_variant(rc.model, v), rc.train.seed);
        nlohmann::json m = run_one_fit(model, sp, rc.train, rc.out_dir + "/" + name, false);
        m["variant"] = name;
        table["variants"].push_back(std::move(m));
    }
    write_text(rc.out_dir + "/ablation.json", table.dump(2) + "\n");

    std::cout << "variant        test_auc   test_logloss\n";
    for (const auto& row : table["variants"])
        std::cout << row["variant"].get<std::string>() << "  " << row["test_auc"].get<double>() << "  "
                  << row["test_logloss"].get<double>() << "\n";
    std::cout << "wrote " << rc.out_dir << "/ablation.json\n";
    return 0;
}

int run_synth(const std::string& out_dir, SynthSpec spec, const std::string& pairs_csv) {
    if (!pairs_csv.empty()) {
        spec.planted.clear();
        size_t pos = 0;
        while (pos <= pairs_csv.size()) {
            size_t next = pairs_csv.find(',', pos);
            const std::string cell =
                pairs_csv.substr(pos, next == std::string::npos ? next : next - pos);
            const size_t colon = cell.find(':');
            if (colon == std::string::npos)
                throw ConfigError("--pairs: expected i:j pairs like \"0:1,2:3\", got '" + pairs_csv + "'");
            spec.planted.emplace_back(parse_m_list(cell.substr(0, colon)).at(0),
                                      parse_m_list(cell.substr(colon + 1)).at(0));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
    }
    SynthOutput out = write_synth(out_dir, spec);
    std::cout << "wrote " << out.csv_path << " (" << spec.rows << " rows), " << out.schema_path << ", "
              << out.truth_path << "\n";
    return 0;
}

int run_prep_ml1m(const std::string& data_dir, const std::string& out_dir) {
    Ml1mPrep prep = prep_ml1m(data_dir, out_dir);
    std::cout << "wrote " << prep.csv_path << ": " << prep.rows_written << " rows ("
              << prep.rows_dropped << " neutral ratings dropped)\nschema: " << prep.schema_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"factorization-machine and graph-attention CTR models"};
    app.require_subcommand(1);

    auto* t_cmd = app.add_subcommand("train", "fit a model; write checkpoints, history, and metrics");
    CommonFlags t_flags;
    t_flags.attach(t_cmd);
    bool resume = false;
    t_cmd->add_flag("--resume", resume, "continue from <out>/checkpoints/last");

    auto* e_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
    CommonFlags e_flags;
    e_flags.attach(e_cmd);
    std::string e_checkpoint, e_split = "all", e_out_file;
    e_cmd->add_option("--checkpoint", e_checkpoint, "checkpoint directory")->required();
    e_cmd->add_option("--split", e_split, "all, train, val, or test (split derived from --seed)");
    e_cmd->add_option("--metrics-out", e_out_file, "write metrics JSON here instead of stdout");

    auto* x_cmd = app.add_subcommand("explain", "export per-instance edge-weight heatmaps");
    CommonFlags x_flags;
    x_flags.attach(x_cmd);
    std::string x_checkpoint, x_ids, x_split = "test";
    int64_t x_first_k = 8;
    bool x_alpha = false;
    x_cmd->add_option("--checkpoint", x_checkpoint, "graphfm checkpoint directory")->required();
    x_cmd->add_option("--ids", x_ids, "row indices to explain, e.g. \"0,17,42\"");
    x_cmd->add_option("--first-k", x_first_k, "explain the first k rows of --split instead");
    x_cmd->add_option("--split", x_split, "all, train, val, or test");
    x_cmd->add_flag("--alpha", x_alpha, "also export attention matrices");

    auto* a_cmd = app.add_subcommand("ablate", "train full, no_select, no_interact, single_head");
    CommonFlags a_flags;
    a_flags.attach(a_cmd);

    auto* s_cmd = app.add_subcommand("synth", "generate data with planted pairwise interactions");
    std::string s_out, s_pairs;
    SynthSpec s_spec;
    s_cmd->add_option("--out", s_out, "output directory")->required();
    s_cmd->add_option("--fields", s_spec.n_fields, "number of categorical fields");
    s_cmd->add_option("--vocab", s_spec.vocab, "values per field");
    s_cmd->add_option("--rows", s_spec.rows, "rows to generate");
    s_cmd->add_option("--seed", s_spec.seed, "generator seed");
    s_cmd->add_option("--pairs", s_pairs, "planted pairs, e.g. \"0:1,2:3\"");
    s_cmd->add_option("--coeff", s_spec.pair_coeff, "logit boost per firing pair");
    s_cmd->add_option("--base", s_spec.base_logit, "base logit");
    s_cmd->add_option("--noise", s_spec.noise_stddev, "logit noise stddev");

    auto* p_cmd = app.add_subcommand("prep-ml1m", "join the MovieLens-1M .dat files into a labeled CSV");
    std::string p_data, p_out;
    p_cmd->add_option("--data", p_data, "directory holding ratings.dat, users.dat, movies.dat")->required();
    p_cmd->add_option("--out", p_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (t_cmd->parsed()) return run_train(t_flags.resolve(), resume);
        if (e_cmd->parsed()) return run_eval(e_flags.resolve(), e_checkpoint, e_split, e_out_file);
        if (x_cmd->parsed())
            return run_explain(x_flags.resolve(), x_checkpoint, x_ids, x_first_k, x_split, x_alpha);
        if (a_cmd->parsed()) return run_ablate(a_flags.resolve());
        if (s_cmd->parsed()) return run_synth(s_out, s_spec, s_pairs);
        if (p_cmd->parsed()) return run_prep_ml1m(p_data, p_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
