#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig =
    "# small model for quick runs\n"
    "resolution = 32\n"
    "episode_length = 10\n"
    "patch = 8\n"
    "channels = 8\n"
    "context_dim = 6\n"
    "stage_channels = 4,6\n"
    "dir_channels = 4\n"
    "fusion_hidden = 4\n"
    "tcn_channels = 8\n"
    "hidden = 8\n"
    "window = 4\n"
    "epochs = 2\n"
    "seed = 3\n";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("stableidm_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write("small.cfg", kSmallConfig);
    }

    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

    int run(const std::string& args) const {
        const std::string cmd = std::string("\"") + STABLEIDM_CLI_PATH + "\" " + args + " >\"" + path("stdout.txt").string() +
                                "\" 2>\"" + path("stderr.txt").string() + "\"";
        const int rc = std::system(cmd.c_str());
        return rc == -1 ? -1 : WEXITSTATUS(rc);
    }

    std::string q(const std::string& name) const { return "\"" + path(name).string() + "\""; }

    int generate(const std::string& out, const std::string& cfg = "small.cfg", int episodes = 8, int seed = 41) const {
        return run("generate --config " + q(cfg) + " --out " + q(out) + " --episodes " + std::to_string(episodes) +
                   " --seed " + std::to_string(seed));
    }

    int train(const std::string& data, const std::string& out, const std::string& cfg = "small.cfg") const {
        return run("train --data " + q(data) + " --config " + q(cfg) + " --out " + q(out));
    }

    fs::path dir_;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

}  // namespace

TEST_F(Cli, GenerateTrainEvalAreDeterministic) {
    ASSERT_EQ(generate("data_a"), 0);
    ASSERT_EQ(generate("data_b"), 0);
    EXPECT_EQ(tree(path("data_a")), tree(path("data_b")));
    EXPECT_NE(tree(path("data_a")), (generate("data_c", "small.cfg", 8, 42), tree(path("data_c"))));

    ASSERT_EQ(train("data_a", "model_a"), 0);
    ASSERT_EQ(train("data_a", "model_b"), 0);
    EXPECT_EQ(tree(path("model_a")), tree(path("model_b")));

    for (const char* fmt : {"csv", "json", "svg"}) {
        const std::string ext(fmt);
        ASSERT_EQ(run("eval --model " + q("model_a") + " --data " + q("data_a") + " --report " + q("a." + ext) +
                      " --format " + ext),
                  0);
        ASSERT_EQ(run("eval --model " + q("model_b") + " --data " + q("data_a") + " --report " + q("b." + ext) +
                      " --format " + ext),
                  0);
        EXPECT_EQ(slurp(path("a." + ext)), slurp(path("b." + ext))) << ext;
    }
    const auto j = nlohmann::json::parse(slurp(path("a.json")));
    ASSERT_EQ(j.at("rows").size(), 2u);
    EXPECT_EQ(j["rows"][0]["variant"], "full");
    EXPECT_EQ(j["config"]["resolution"], "32");
    EXPECT_EQ(slurp(path("a.svg")).rfind("<svg", 0), 0u);
}

TEST_F(Cli, AblateAndMaskStudyReports) {
    ASSERT_EQ(generate("data"), 0);
    ASSERT_EQ(run("ablate --data " + q("data") + " --config " + q("small.cfg") + " --variants full,no_tdr --report " +
                  q("ablate.csv")),
              0);
    const std::string csv = slurp(path("ablate.csv"));
    EXPECT_EQ(csv.rfind("variant,split,acc,acc_per_dim,l1,n\nfull,light,", 0), 0u);
    EXPECT_NE(csv.find("\nno_tdr,heavy,"), std::string::npos);

    ASSERT_EQ(train("data", "model"), 0);
    ASSERT_EQ(run("mask-study --model " + q("model") + " --data " + q("data") + " --severities 0,0.5 --report " +
                  q("mask.json") + " --format json --seed 9"),
              0);
    const auto j = nlohmann::json::parse(slurp(path("mask.json")));
    ASSERT_EQ(j.at("rows").size(), 6u);
    EXPECT_EQ(j["rows"][0]["variant"], "clean");
    EXPECT_EQ(j["rows"][2]["variant"], "severity=0");
    EXPECT_EQ(j["rows"][2]["l1"], j["rows"][0]["l1"]);
    EXPECT_EQ(j["rows"][3]["l1"], j["rows"][1]["l1"]);
}

TEST_F(Cli, ConfigErrorsExitWithTwo) {
    write("unknown.cfg", "no_such_key = 1\n");
    EXPECT_EQ(generate("x", "unknown.cfg"), 2);
    write("bad_value.cfg", "episode_length = many\n");
    EXPECT_EQ(generate("x", "bad_value.cfg"), 2);
    EXPECT_EQ(run("generate --config " + q("small.cfg") + " --out " + q("x")), 2);
    EXPECT_EQ(run("no-such-command"), 2);
    EXPECT_EQ(generate("x", "missing.cfg"), 2);
    ASSERT_EQ(generate("data"), 0);
    EXPECT_EQ(run("ablate --data " + q("data") + " --config " + q("small.cfg") + " --variants full,no_magic --report " +
                  q("r.csv")),
              2);
    write("bad_epochs.cfg", "epochs = many\n");
    EXPECT_EQ(train("data", "model", "bad_epochs.cfg"), 2);
    ASSERT_EQ(train("data", "model"), 0);
    EXPECT_EQ(run("eval --model " + q("model") + " --data " + q("data") + " --report " + q("r.pdf") + " --format pdf"), 2);
    EXPECT_EQ(run("mask-study --model " + q("model") + " --data " + q("data") + " --severities 0.5,2 --report " + q("r.csv")), 2);
}

TEST_F(Cli, DataErrorsExitWithThree) {
    EXPECT_EQ(train("missing", "model"), 3);
    ASSERT_EQ(generate("data"), 0);
    std::string r16 = kSmallConfig;
    r16.replace(r16.find("resolution = 32"), 15, "resolution = 16");
    write("r16.cfg", r16);
    EXPECT_EQ(train("data", "model", "r16.cfg"), 3);
    EXPECT_NE(slurp(path("stderr.txt")).find("resolution"), std::string::npos);
    EXPECT_EQ(run("eval --model " + q("no_model") + " --data " + q("data") + " --report " + q("r.csv")), 3);

    ASSERT_EQ(train("data", "model"), 0);
    std::ofstream(path("data") / "episodes.csv", std::ios::app) << "ep0000,train\n";
    EXPECT_EQ(run("eval --model " + q("model") + " --data " + q("data") + " --report " + q("r.csv")), 3);
    EXPECT_NE(slurp(path("stderr.txt")).find("duplicate"), std::string::npos);
}

TEST_F(Cli, DivergenceExitsWithFour) {
    ASSERT_EQ(generate("data"), 0);
    write("diverge.cfg", std::string(kSmallConfig) + "learning_rate = 1e300\n");
    EXPECT_EQ(train("data", "model", "diverge.cfg"), 4);
    EXPECT_NE(slurp(path("stderr.txt")).find("diverged"), std::string::npos);
    EXPECT_FALSE(fs::exists(path("model") / "manifest.json"));
}
