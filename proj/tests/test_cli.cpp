#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tgpt/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "tgpt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = tgpt::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("tgpt_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
    const auto p = dir / "run.cfg";
    std::ofstream(p) << body;
    return p;
}

const char* kTiny =
    "n_colors = 2\nn_shapes = 2\nper_class = 70\npretrain_per_class = 32\n"
    "d = 16\nheads = 2\nimage_depth = 1\ntext_depth = 1\nmax_len = 24\n"
    "k_ctg = 12\nk_con = 20\npretrain_iterations = 20\npretrain_batch_size = 16\n"
    "iterations = 20\neval_every = 10\nshots = 2\n";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UnknownVerbExitsTwoWithUsage) {
    const auto r = run({"frobnicate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("unknown verb"), std::string::npos);
    EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, HelpExitsZero) {
    const auto r = run({"train", "--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("--config"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitOneWithOneLine) {
    const auto dir = scratch("cfgerr");
    const auto missing = run({"costmodel", "--config", (dir / "nope.cfg").string(), "--out", dir.string()});
    EXPECT_EQ(missing.code, 1);
    const auto unknown =
        run({"costmodel", "--config", write_config(dir, "no_such_key = 3\n").string(), "--out", dir.string()});
    EXPECT_EQ(unknown.code, 1);
    EXPECT_NE(unknown.err.find("no_such_key"), std::string::npos);
    EXPECT_EQ(std::count(unknown.err.begin(), unknown.err.end(), '\n'), 1);
    const auto invalid = run({"costmodel", "--config", write_config(dir, "heads = 5\n").string(), "--out", dir.string()});
    EXPECT_EQ(invalid.code, 1);
    EXPECT_EQ(run({"costmodel"}).code, 1);
    EXPECT_EQ(run({"train", "--shots", "3", "--out", dir.string()}).code, 1);
}

TEST(Cli, CostModelWritesTable) {
    const auto dir = scratch("cost");
    const auto r = run({"costmodel", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("rows=18"), std::string::npos);
    const auto csv = slurp(dir / "cost.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 19);
}

TEST(Cli, GradcheckPasses) {
    const auto r = run({"gradcheck"});
    EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, SmallPipelineAndEvalReadsOnlyInferenceInputs) {
    const auto dir = scratch("pipe");
    const auto cfg = write_config(dir, kTiny).string();
    const auto root = (dir / "run").string();
    for (const char* verb : {"gen-data", "pretrain", "train"}) {
        const auto r = run({verb, "--config", cfg, "--out", root, "--quiet"});
        ASSERT_EQ(r.code, 0) << verb << ": " << r.err;
    }
    EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / "tgpt.ckpt"));

    const auto first = run({"eval", "--out", root, "--audit", "--embeddings"});
    ASSERT_EQ(first.code, 0) << first.err;
    EXPECT_NE(first.out.find("split=test"), std::string::npos);
    std::istringstream lines(first.out);
    std::string line;
    std::size_t audited = 0;
    while (std::getline(lines, line)) {
        if (!line.starts_with("audit read ")) continue;
        ++audited;
        EXPECT_EQ(line.find("descriptions"), std::string::npos) << line;
        EXPECT_EQ(line.find("templates"), std::string::npos) << line;
        EXPECT_EQ(line.find("vocab"), std::string::npos) << line;
        EXPECT_EQ(line.find("class_names"), std::string::npos) << line;
        EXPECT_EQ(line.find("encoders.ckpt"), std::string::npos) << line;
    }
    EXPECT_GT(audited, 0u);

    fs::remove(dir / "run" / "dataset" / "descriptions.tsv");
    fs::remove(dir / "run" / "dataset" / "templates.txt");
    const auto second = run({"eval", "--out", root});
    ASSERT_EQ(second.code, 0) << second.err;
    EXPECT_EQ(first.out.substr(0, first.out.find('\n')), second.out.substr(0, second.out.find('\n')));

    EXPECT_EQ(run({"eval", "--out", root, "--split", "nope"}).code, 1);
    EXPECT_EQ(run({"eval", "--out", root, "--seed", "5"}).code, 1);
}
