#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "graphfm/data.hpp"
#include "graphfm/error.hpp"
#include "graphfm/ml1m.hpp"
#include "graphfm/runconfig.hpp"
#include "json.hpp"

using namespace graphfm;

namespace {

struct TempDir {
    std::string path;
    explicit TempDir(const char* tag) {
        path = (std::filesystem::temp_directory_path() /
                ("graphfm_test_" + std::string(tag) + "_" + std::to_string(::getpid())))
                   .string();
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct CliResult {
    int code = -1;
    std::string out, err;
};

/// Runs the real binary with workdir-relative redirection files.
CliResult run_cli(const std::string& workdir, const std::string& args) {
    const std::string out_file = workdir + "/cli_out.txt";
    const std::string err_file = workdir + "/cli_err.txt";
    const std::string cmd = "cd '" + workdir + "' && '" + GRAPHFM_BIN + "' " + args + " > '" +
                            out_file + "' 2> '" + err_file + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

/// jsonl -> parsed lines with the wall-clock field removed.
std::vector<nlohmann::json> history_sans_time(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(f, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        j.erase("wall_ms");
        out.push_back(std::move(j));
    }
    return out;
}

const char* kTrainArgs = "--dim 4 --layers 2 --mk 2,1 --epochs 2 --batch 256 --seed 3";

/// Generates a dataset once and trains once; shared by several cases.
struct SharedRun {
    TempDir dir{"cli_shared"};
    SharedRun() {
        CliResult s = run_cli(dir.path, "synth --out sdata --rows 1200 --fields 4 --vocab 6");
        REQUIRE(s.code == 0);
        CliResult t = run_cli(dir.path, std::string("train --data sdata/data.csv --schema "
                                                    "sdata/schema.json --out run ") +
                                            kTrainArgs);
        REQUIRE(t.code == 0);
    }
};

SharedRun& shared() {
    static SharedRun s;
    return s;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train writes the full artifact set") {
    SharedRun& s = shared();
    const std::string run = s.dir.path + "/run";
    for (const char* f : {"/config.json", "/split.json", "/metrics.json", "/history.jsonl",
                          "/checkpoints/best/manifest.json", "/checkpoints/best/params.bin",
                          "/checkpoints/best/schema.json", "/checkpoints/last/manifest.json",
                          "/checkpoints/last/adam.bin"})
        CHECK(std::filesystem::exists(run + f));

    nlohmann::json metrics = nlohmann::json::parse(slurp(run + "/metrics.json"));
    CHECK(metrics.contains("test_auc"));
    CHECK(metrics.contains("test_logloss"));
    CHECK(metrics["test_auc"].get<double>() > 0.4);
    CHECK(history_sans_time(run + "/history.jsonl").size() == 2);

    nlohmann::json manifest = nlohmann::json::parse(slurp(run + "/split.json"));
    CHECK(manifest["n_total"] == 1200);
}

TEST_CASE("training reruns are byte-identical where promised") {
    SharedRun& s = shared();
    CliResult t = run_cli(s.dir.path, std::string("train --data sdata/data.csv --schema "
                                                  "sdata/schema.json --out run_b ") +
                                          kTrainArgs);
    REQUIRE(t.code == 0);
    CHECK(slurp(s.dir.path + "/run/metrics.json") == slurp(s.dir.path + "/run_b/metrics.json"));
    nlohmann::json cfg_a = nlohmann::json::parse(slurp(s.dir.path + "/run/config.json"));
    nlohmann::json cfg_b = nlohmann::json::parse(slurp(s.dir.path + "/run_b/config.json"));
    cfg_a.erase("out.dir");  // the one input that legitimately differs
    cfg_b.erase("out.dir");
    CHECK(cfg_a == cfg_b);
    CHECK(slurp(s.dir.path + "/run/split.json") == slurp(s.dir.path + "/run_b/split.json"));
    CHECK(history_sans_time(s.dir.path + "/run/history.jsonl") ==
          history_sans_time(s.dir.path + "/run_b/history.jsonl"));
}

TEST_CASE("eval reproduces training metrics and is idempotent") {
    SharedRun& s = shared();
    const std::string args =
        "eval --checkpoint run/checkpoints/best --data sdata/data.csv --split test --seed 3 "
        "--metrics-out eval1.json";
    CliResult e1 = run_cli(s.dir.path, args);
    REQUIRE(e1.code == 0);
    nlohmann::json got = nlohmann::json::parse(slurp(s.dir.path + "/eval1.json"));
    nlohmann::json want = nlohmann::json::parse(slurp(s.dir.path + "/run/metrics.json"));
    CHECK(got["auc"].get<double>() == want["test_auc"].get<double>());
    CHECK(got["logloss"].get<double>() == want["test_logloss"].get<double>());

    CliResult e2 = run_cli(s.dir.path,
                           "eval --checkpoint run/checkpoints/best --data sdata/data.csv --split "
                           "test --seed 3 --metrics-out eval2.json");
    REQUIRE(e2.code == 0);
    CHECK(slurp(s.dir.path + "/eval1.json") == slurp(s.dir.path + "/eval2.json"));

    CliResult all = run_cli(s.dir.path, "eval --checkpoint run/checkpoints/best --data sdata/data.csv");
    CHECK(all.code == 0);
    CHECK(all.out.find("\"n\": 1200") != std::string::npos);

    CliResult bad = run_cli(s.dir.path,
                            "eval --checkpoint run/checkpoints/best --data sdata/data.csv --split nope");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("nope") != std::string::npos);
}

TEST_CASE("eval on a single-class file fails cleanly") {
    SharedRun& s = shared();
    std::ofstream csv(s.dir.path + "/oneclass.csv");
    csv << "c0,c1,c2,c3,y\n";
    for (int i = 0; i < 4; ++i) csv << "v1,v2,v1,v2,1\n";
    csv.close();
    CliResult r = run_cli(s.dir.path, "eval --checkpoint run/checkpoints/best --data oneclass.csv");
    CHECK(r.code == 2);
    CHECK(!r.err.empty());
}

TEST_CASE("explain exports heatmaps for chosen rows") {
    SharedRun& s = shared();
    CliResult x = run_cli(s.dir.path,
                          "explain --checkpoint run/checkpoints/best --data sdata/data.csv --out "
                          "exp --ids 0,5");
    REQUIRE(x.code == 0);
    for (const char* f : {"/exp/instance0_layer1.csv", "/exp/instance0_layer2.csv",
                          "/exp/instance5_layer1.csv", "/exp/instance5_layer2.csv",
                          "/exp/explain.json", "/exp/selection_frequency.json"})
        CHECK(std::filesystem::exists(s.dir.path + f));
    CHECK(x.out.find("mean diagonal weight") != std::string::npos);

    CliResult k = run_cli(s.dir.path,
                          "explain --checkpoint run/checkpoints/best --data sdata/data.csv --out "
                          "expk --first-k 3 --split test --seed 3 --alpha");
    REQUIRE(k.code == 0);
    nlohmann::json j = nlohmann::json::parse(slurp(s.dir.path + "/expk/explain.json"));
    CHECK(j["records"].size() == 3);
    CHECK(j["records"][0]["layers"][0].contains("alpha"));

    // Non-graph checkpoints have no edges to draw.
    CliResult lr = run_cli(s.dir.path, "train --data sdata/data.csv --schema sdata/schema.json "
                                       "--out runlr --model lr --epochs 1 --batch 256 --seed 3");
    REQUIRE(lr.code == 0);
    CliResult xl = run_cli(s.dir.path,
                           "explain --checkpoint runlr/checkpoints/best --data sdata/data.csv "
                           "--out explr --ids 0");
    CHECK(xl.code == 2);
    CHECK(xl.err.find("graphfm") != std::string::npos);
}

TEST_CASE("ablate trains all four variants on one split") {
    SharedRun& s = shared();
    CliResult a = run_cli(s.dir.path, "ablate --data sdata/data.csv --schema sdata/schema.json "
                                      "--out abl --dim 4 --layers 2 --mk 2,1 --epochs 1 "
                                      "--batch 256 --seed 3");
    REQUIRE(a.code == 0);
    nlohmann::json j = nlohmann::json::parse(slurp(s.dir.path + "/abl/ablation.json"));
    REQUIRE(j["variants"].size() == 4);
    CHECK(j["variants"][0]["variant"] == "full");
    CHECK(j["variants"][1]["variant"] == "no_select");
    CHECK(j["variants"][2]["variant"] == "no_interact");
    CHECK(j["variants"][3]["variant"] == "single_head");
    for (const auto& row : j["variants"]) {
        CHECK(row["test_auc"].get<double>() > 0.0);
        CHECK(row["test_logloss"].get<double>() > 0.0);
    }
    CHECK(j["seed"] == 3);
}

TEST_CASE("config file fills in and flags override") {
    SharedRun& s = shared();
    nlohmann::json cfg = {{"model.dim", 8},       {"train.epochs", 1},
                          {"seed", 5},            {"data.path", "sdata/data.csv"},
                          {"data.schema", "sdata/schema.json"}};
    std::ofstream(s.dir.path + "/cfg.json") << cfg.dump();
    CliResult t = run_cli(s.dir.path,
                          "train --config cfg.json --out runc --dim 4 --layers 2 --mk 2,1 --batch 256");
    REQUIRE(t.code == 0);
    nlohmann::json written = nlohmann::json::parse(slurp(s.dir.path + "/runc/config.json"));
    CHECK(written["model.dim"] == 4);      // flag beats file
    CHECK(written["train.epochs"] == 1);   // file beats default
    CHECK(written["seed"] == 5);
    CHECK(history_sans_time(s.dir.path + "/runc/history.jsonl").size() == 1);

    std::ofstream(s.dir.path + "/bad.json") << R"({"model.dmi": 3})";
    CliResult b = run_cli(s.dir.path, "train --config bad.json --data sdata/data.csv --schema "
                                      "sdata/schema.json --out runbad");
    CHECK(b.code == 2);
    CHECK(b.err.find("unknown config key") != std::string::npos);
}

TEST_CASE("missing inputs name the problem") {
    SharedRun& s = shared();
    CliResult a = run_cli(s.dir.path, std::string("train --data nope.csv --schema sdata/schema.json "
                                                  "--out runx ") +
                                          kTrainArgs);
    CHECK(a.code == 2);
    CHECK(a.err.find("nope.csv") != std::string::npos);

    CliResult b = run_cli(s.dir.path, "train --data sdata/data.csv --out runx");
    CHECK(b.code == 2);
    CHECK(b.err.find("--schema") != std::string::npos);

    CliResult c = run_cli(s.dir.path, "nonsense");
    CHECK(c.code != 0);
}

TEST_CASE("ml1m prep joins and binarizes") {
    TempDir dir("cli_ml1m");
    std::ofstream(dir.path + "/users.dat")
        << "1::F::1::10::48067\n"
           "2::M::56::16::70072\n";
    std::ofstream(dir.path + "/movies.dat")
        << "1::Toy Story (1995)::Animation|Children's|Comedy\n"
           "2::Twelve Monkeys (a.k.a. 12 Monkeys) (1995)::Drama|Sci-Fi\n";
    std::ofstream(dir.path + "/ratings.dat") << "1::1::5::978300760\n"
                                                "1::2::3::978302109\n"
                                                "2::1::1::978301968\n"
                                                "2::2::4::978300275\n";
    CliResult r = run_cli(dir.path, "prep-ml1m --data . --out prepped");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("3 rows") != std::string::npos);
    CHECK(r.out.find("1 neutral") != std::string::npos);

    const std::string csv = slurp(dir.path + "/prepped/ml1m.csv");
    CHECK(csv.rfind("Gender,Age,Occupation,Zipcode,ReleaseTime,WatchTime,Genre,y\n", 0) == 0);
    CHECK(csv.find("F,1,10,48067,1995,2000,Animation,1") != std::string::npos);
    CHECK(csv.find("M,56,16,70072,1995,2000,Drama,1") != std::string::npos);
    CHECK(csv.find("M,56,16,70072,1995,2000,Animation,0") != std::string::npos);
    CHECK(csv.find(",3,") == std::string::npos);  // the neutral rating left no row

    Dataset d = load_csv(dir.path + "/prepped/ml1m.csv",
                         load_schema_spec(dir.path + "/prepped/ml1m.schema.json"));
    CHECK(d.n_rows() == 3);
    CHECK(d.schema.n_fields() == 7);
}

TEST_CASE("ml1m prep rejects malformed inputs") {
    TempDir dir("cli_ml1m_bad");
    std::ofstream(dir.path + "/users.dat") << "1::F::1::10::48067\n";
    std::ofstream(dir.path + "/movies.dat") << "1::No Year Here::Drama\n";
    std::ofstream(dir.path + "/ratings.dat") << "1::1::5::978300760\n";
    CliResult r = run_cli(dir.path, "prep-ml1m --data . --out prepped");
    CHECK(r.code == 2);
    CHECK(r.err.find("No Year Here") != std::string::npos);

    TempDir dir2("cli_ml1m_bad2");
    CliResult r2 = run_cli(dir2.path, "prep-ml1m --data . --out prepped");
    CHECK(r2.code == 2);
    CHECK(r2.err.find("users.dat") != std::string::npos);
}

}  // TEST_SUITE

TEST_SUITE("runconfig") {

TEST_CASE("m lists parse strictly") {
    CHECK(parse_m_list("7,4,2") == std::vector<int64_t>{7, 4, 2});
    CHECK(parse_m_list("5") == std::vector<int64_t>{5});
    CHECK(parse_m_list("").empty());
    CHECK_THROWS_AS(parse_m_list("7,x"), ConfigError);
    CHECK_THROWS_AS(parse_m_list("7,,2"), ConfigError);
    CHECK_THROWS_AS(parse_m_list("7,4,"), ConfigError);
}

TEST_CASE("keys land in the right fields") {
    RunConfig rc;
    rc.set("model.kind", "fm");
    rc.set("model.dim", 8);
    rc.set("model.m", nlohmann::json::array({3, 2}));
    CHECK(rc.model_kind == "fm");
    CHECK(rc.model.dim == 8);
    CHECK(rc.model.m == std::vector<int64_t>{3, 2});
    rc.set("model.m", "4,1");
    CHECK(rc.model.m == std::vector<int64_t>{4, 1});
    rc.set("model.variant", "no_select");
    CHECK(rc.model.variant == Variant::no_select);
    rc.set("train.lr", 0.05);
    CHECK(rc.train.lr == 0.05);
    rc.set("train.shuffle", false);
    CHECK(!rc.train.shuffle);
    rc.set("seed", 9);
    CHECK(rc.train.seed == 9);
    CHECK(rc.split.seed == 9);  // one seed drives both
    rc.set("split.val", 0.2);
    CHECK(rc.split.val == 0.2);
}

TEST_CASE("bad keys and types are rejected") {
    RunConfig rc;
    CHECK_THROWS_WITH_AS(rc.set("model.dmi", 3), doctest::Contains("unknown config key"), ConfigError);
    CHECK_THROWS_AS(rc.set("model.dim", "four"), ConfigError);
    CHECK_THROWS_AS(rc.set("model.kind", "gbm"), ConfigError);
    CHECK_THROWS_AS(rc.set("model.m", 7), ConfigError);
    CHECK_THROWS_AS(rc.set("train.shuffle", 1), ConfigError);
    CHECK_THROWS_AS(rc.set("seed", -1), ConfigError);
    CHECK_THROWS_AS(rc.set("model.variant", "none"), ConfigError);
    CHECK_THROWS_AS(rc.apply_file("/definitely/not/here.json"), ConfigError);
}

TEST_CASE("serialization is flat and stable") {
    RunConfig rc;
    nlohmann::json j = rc.to_json();
    CHECK(j["model.kind"] == "graphfm");
    CHECK(j["model.nonlin"] == "relu");
    CHECK(j["split.train"] == 0.8);
    CHECK(j.dump() == RunConfig{}.to_json().dump());
}

}  // TEST_SUITE

TEST_SUITE("ml1m_units") {

TEST_CASE("title years parse from the trailing parenthetical") {
    CHECK(title_year("Toy Story (1995)") == 1995);
    CHECK(title_year("Twelve Monkeys (a.k.a. 12 Monkeys) (1995)") == 1995);
    CHECK(title_year("Trailing Space (2000) ") == 2000);
    CHECK_THROWS_AS(title_year("No Year"), ParseError);
    CHECK_THROWS_AS(title_year("Bad (19x5)"), ParseError);
    CHECK_THROWS_AS(title_year("Off (1995) extra"), ParseError);
}

TEST_CASE("watch years are utc") {
    CHECK(utc_year(0) == 1970);
    CHECK(utc_year(978300760) == 2000);   // 2000-12-31T22:12:40Z
    CHECK(utc_year(978307200) == 2001);   // 2001-01-01T00:00:00Z
}

}  // TEST_SUITE
