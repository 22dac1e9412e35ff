#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "arc/cli.hpp"
#include "arc/probe.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return sub.empty() ? path.string() : (path / sub).string();
    }
};

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
    std::ostringstream out, err;
    int code = arc::cli::run(args, out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

std::string tiny_config(const TempDir& dir, int n_train = 48, int n_val = 24) {
    nlohmann::json j = {
        {"dataset",
         {{"n_train", n_train}, {"n_val", n_val}, {"shortcut_strength", 0.6},
          {"synonym_fraction", 0.3}}},
        {"model", {{"embed_dim", 8}, {"hidden_dim", 8}}},
        {"train",
         {{"batch_size", 16}, {"max_epochs", 2}, {"early_stop_patience", 50},
          {"lr_halving_patience", 50}}},
        {"paths", {{"data_dir", dir.str("data")}, {"out_dir", dir.str("out")}}}};
    std::string path = dir.str("config.json");
    std::ofstream f(path);
    f << j.dump(2);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("gen writes files and prints statistics") {
    TempDir dir("arc_cli_gen");
    std::string cfg = tiny_config(dir);
    std::string out;
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}, &out) == 0);
    CHECK(fs::exists(dir.str("data") + "/train.jsonl"));
    CHECK(fs::exists(dir.str("data") + "/val.jsonl"));
    CHECK(out.find("shortcut_strength") != std::string::npos);
    CHECK(out.find("overlap") != std::string::npos);
}

TEST_CASE("gen rejects an out-of-range shortcut strength") {
    TempDir dir("arc_cli_gen_bad");
    std::string cfg = tiny_config(dir);
    std::string err;
    int code = run_cli({"gen", "--config", cfg, "--shortcut", "1.2"}, nullptr, &err);
    CHECK(code == 1);
    CHECK(err.find("shortcut_strength") != std::string::npos);
}

TEST_CASE("gen is deterministic across runs") {
    TempDir dir("arc_cli_gen_det");
    std::string cfg = tiny_config(dir);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "9"}) == 0);
    std::string first = slurp(dir.str("data") + "/train.jsonl");
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "9"}) == 0);
    CHECK(slurp(dir.str("data") + "/train.jsonl") == first);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "10"}) == 0);
    CHECK(slurp(dir.str("data") + "/train.jsonl") != first);
}

TEST_CASE("unknown config keys are rejected") {
    TempDir dir("arc_cli_badkey");
    std::string path = dir.str("config.json");
    std::ofstream f(path);
    f << R"({"train": {"learnin_rate": 1e-3}})";
    f.close();
    std::string err;
    CHECK(run_cli({"gen", "--config", path}, nullptr, &err) == 1);
    CHECK(err.find("learnin_rate") != std::string::npos);
}

TEST_CASE("train runs both modes and is idempotent") {
    TempDir dir("arc_cli_train");
    std::string cfg = tiny_config(dir);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}) == 0);

    std::string out;
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "7", "--alpha", "0", "--beta", "0"},
                    &out) == 0);
    CHECK(out.find("baseline (separate)") != std::string::npos);
    REQUIRE(fs::exists(dir.str("out") + "/seed_7/arc.ckpt"));
    REQUIRE(fs::exists(dir.str("out") + "/seed_7/metrics.jsonl"));
    CHECK_FALSE(fs::exists(dir.str("out") + "/seed_7/teacher.ckpt"));  // baseline skips stage 1

    std::string metrics_first = slurp(dir.str("out") + "/seed_7/metrics.jsonl");
    std::string ckpt_first = slurp(dir.str("out") + "/seed_7/arc.ckpt");
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "7", "--alpha", "0", "--beta", "0"}) ==
            0);
    CHECK(slurp(dir.str("out") + "/seed_7/metrics.jsonl") == metrics_first);
    CHECK(slurp(dir.str("out") + "/seed_7/arc.ckpt") == ckpt_first);

    // full two-stage mode writes the teacher checkpoint too
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "8"}, &out) == 0);
    CHECK(out.find("[arc]") != std::string::npos);
    CHECK(fs::exists(dir.str("out") + "/seed_8/teacher.ckpt"));
    arc::Checkpoint ckpt = arc::load_checkpoint(dir.str("out") + "/seed_8/arc.ckpt");
    CHECK(ckpt.branches.size() == 3);

    // an existing teacher can seed stage two directly
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "9", "--teacher",
                     dir.str("out") + "/seed_8/teacher.ckpt"}) == 0);
}

TEST_CASE("multi-seed training prints per-seed summaries and a median row") {
    TempDir dir("arc_cli_seeds");
    std::string cfg = tiny_config(dir, 32, 16);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}) == 0);
    std::string out;
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "20", "--seeds", "2", "--alpha", "0",
                     "--beta", "0"},
                    &out) == 0);
    CHECK(out.find("seed 20") != std::string::npos);
    CHECK(out.find("seed 21") != std::string::npos);
    CHECK(out.find("median over 2 seeds") != std::string::npos);
    CHECK(fs::exists(dir.str("out") + "/seed_20/arc.ckpt"));
    CHECK(fs::exists(dir.str("out") + "/seed_21/arc.ckpt"));
}

TEST_CASE("eval with an identity map matches standard mode") {
    TempDir dir("arc_cli_eval");
    std::string cfg = tiny_config(dir);
    // identity map: no reserved synonym ids
    {
        nlohmann::json j = nlohmann::json::parse(slurp(cfg));
        j["dataset"]["synonym_fraction"] = 0.0;
        std::ofstream f(cfg);
        f << j.dump(2);
    }
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}) == 0);
    REQUIRE(run_cli({"train", "--config", cfg, "--seed", "7", "--alpha", "0", "--beta", "0"}) ==
            0);

    std::string std_out, para_out;
    REQUIRE(run_cli({"eval", "--config", cfg, "--seed", "7", "--mode", "standard"}, &std_out) ==
            0);
    REQUIRE(run_cli({"eval", "--config", cfg, "--seed", "7", "--mode", "paraphrased"},
                    &para_out) == 0);
    auto std_line = nlohmann::json::parse(std_out.substr(0, std_out.find('\n')));
    auto para_line = nlohmann::json::parse(para_out.substr(0, para_out.find('\n')));
    CHECK(std_line["acc_qa"] == para_line["acc_qa"]);
    CHECK(std_line["acc_qar"] == para_line["acc_qar"]);
    CHECK(std_line["acc_joint"] == para_line["acc_joint"]);
    CHECK(fs::exists(dir.str("out") + "/eval_standard.json"));
    CHECK(fs::exists(dir.str("out") + "/eval_paraphrased.json"));

    std::string err;
    CHECK(run_cli({"eval", "--config", cfg, "--seed", "7", "--mode", "bogus"}, nullptr, &err) ==
          1);
}

TEST_CASE("probe runs on an untrained checkpoint and emits the documented schema") {
    TempDir dir("arc_cli_probe");
    std::string cfg = tiny_config(dir);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}) == 0);

    // untrained checkpoint built directly
    arc::ModelConfig mc;
    mc.vocab_size = 96;
    mc.embed_dim = 8;
    mc.hidden_dim = 8;
    arc::Checkpoint ckpt;
    ckpt.branches.push_back(arc::BranchModel::init(arc::BranchKind::Answering, mc, 1));
    ckpt.branches.push_back(arc::BranchModel::init(arc::BranchKind::Reasoning, mc, 1));
    ckpt.config_snapshot = {{"note", "untrained"}};
    std::string ckpt_path = dir.str("untrained.ckpt");
    arc::save_checkpoint(ckpt_path, ckpt);

    std::string out;
    REQUIRE(run_cli({"probe", "--config", cfg, "--checkpoint", ckpt_path}, &out) == 0);
    CHECK(out.find("median") != std::string::npos);

    arc::ProbeReport parsed = arc::parse_report(dir.str("out") + "/probe_report.csv");
    CHECK(parsed.ratios.size() == 24);  // n_val
    // untrained accuracies sit near chance
    CHECK(parsed.standard.acc_answer < 0.6);
    CHECK(parsed.acc_qar < 0.6);
    CHECK(parsed.config_snapshot.at("note") == "untrained");
}

TEST_CASE("runtime failures exit with code 2") {
    TempDir dir("arc_cli_runtime");
    std::string cfg = tiny_config(dir);
    REQUIRE(run_cli({"gen", "--config", cfg, "--seed", "5"}) == 0);
    std::string err;
    // missing checkpoint file
    CHECK(run_cli({"eval", "--config", cfg, "--checkpoint", dir.str("nope.ckpt")}, nullptr,
                  &err) == 2);
    // corrupt checkpoint magic
    std::string bad = dir.str("bad.ckpt");
    std::ofstream f(bad, std::ios::binary);
    f << "NOTACKPT\n{}\n";
    f.close();
    CHECK(run_cli({"probe", "--config", cfg, "--checkpoint", bad}, nullptr, &err) == 2);
    CHECK(err.find("version mismatch") != std::string::npos);

    // missing dataset directory
    CHECK(run_cli({"train", "--config", cfg, "--data", dir.str("absent")}, nullptr, &err) == 2);
}

TEST_CASE("usage errors exit with code 1") {
    std::string err;
    CHECK(run_cli({"frobnicate"}, nullptr, &err) == 1);
    CHECK(run_cli({}, nullptr, &err) == 1);
    CHECK(run_cli({"gen", "--seeds", "0"}, nullptr, &err) == 1);
}
