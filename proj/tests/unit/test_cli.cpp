#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "velo/cli.hpp"
#include "velo/io.hpp"
#include "tempdir.hpp"

using namespace velo;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

/// Every file under `dir` except run metadata, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename().string().rfind("run_meta_", 0) != 0) {
            files[fs::relative(e.path(), dir).string()] = read_text(e.path());
        }
    }
    return files;
}

const std::vector<std::string> kSmallNet{"--set", "encoder_hidden=16,8", "--set", "decoder_hidden=8,16",
                                         "--set", "batch_size=256"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("usage errors exit with code 2, module errors with code 1") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"simulate", "--bogus"}).code == 2);
    CHECK(cli({"--version"}).out == std::string(kVersion) + "\n");

    TempDir dir("cli-err");
    const auto no_seed = cli({"simulate", "--out", (dir / "a").string()});
    CHECK(no_seed.code == 1);
    CHECK(no_seed.err.find("seed") != std::string::npos);
    CHECK(cli({"simulate", "--seed", "1", "--set", "epoch=3", "--out", (dir / "b").string()}).code == 1);
    CHECK(cli({"simulate", "--seed", "1", "--set", "noequals"}).code == 1);
    CHECK(cli({"fit-vae", "--input", (dir / "missing").string(), "--out", (dir / "c").string()}).code == 1);
}

TEST_CASE("simulate and fit-vae are byte-identical for the same seed and config") {
    TempDir dir("cli-det");
    for (const char* run : {"r1", "r2"}) {
        const auto sim = cli({"simulate", "--seed", "3", "--preset", "S1", "--out", (dir / run / "data").string()});
        REQUIRE(sim.code == 0);
        const auto pre = cli({"preprocess", "--input", (dir / run / "data").string(), "--out",
                              (dir / run / "pre").string(), "--set", "n_top_genes=10", "--set", "k_neighbors=10"});
        REQUIRE(pre.code == 0);
        const auto fit = cli(with({"fit-vae", "--seed", "3", "--epochs", "2", "--model", "full", "--input",
                                   (dir / run / "pre").string(), "--out", (dir / run / "fit").string()},
                                  kSmallNet));
        REQUIRE(fit.code == 0);
    }
    const auto a = snapshot(dir / "r1"), b = snapshot(dir / "r2");
    CHECK(a.size() == b.size());
    CHECK(a == b);
    CHECK(a.count("fit/model.txt") == 1);
    CHECK(a.count("data/truth.csv") == 1);
    CHECK(fs::exists(dir / "r1" / "fit" / "run_meta_fit-vae.txt"));
}

TEST_CASE("full pipeline: baselines, refine, predict, evaluate, plot") {
    TempDir dir("cli-pipe");
    const auto data = (dir / "data").string(), pre = (dir / "pre").string();
    REQUIRE(cli({"simulate", "--seed", "5", "--preset", "S3", "--out", data}).code == 0);
    REQUIRE(cli({"preprocess", "--input", data, "--out", pre, "--set", "n_top_genes=8", "--set", "k_neighbors=10"})
                .code == 0);
    CHECK(read_text(dir / "pre" / "truth.csv") == read_text(dir / "data" / "truth.csv"));

    REQUIRE(cli({"fit-steady", "--input", pre, "--out", (dir / "steady").string()}).code == 0);
    CHECK(fs::exists(dir / "steady" / "params.csv"));
    const auto em = cli({"fit-em", "--input", pre, "--out", (dir / "em").string()});
    REQUIRE(em.code == 0);
    CHECK(fs::exists(dir / "em" / "times.csv"));

    const auto vae = (dir / "vae").string();
    REQUIRE(cli(with({"fit-vae", "--seed", "1", "--epochs", "3", "--model", "full", "--input", pre, "--out", vae,
                      "--set", "capture_prior=1"},
                     kSmallNet))
                .code == 0);
    for (const char* f : {"history.csv", "split.csv", "model.txt", "times.csv", "state.csv", "params.csv", "rho.csv",
                          "velocity.csv", "fitted_unspliced.csv", "fitted_spliced.csv", "model_info.txt"}) {
        CHECK_MESSAGE(fs::exists(dir / "vae" / f), f);
    }
    const auto history = read_csv(dir / "vae" / "history.csv");
    CHECK(history.rows.size() == 3);

    REQUIRE(cli(with({"refine", "--input", pre, "--out", vae, "--set", "refine_epochs=2"}, kSmallNet)).code == 0);
    const auto info = read_text(dir / "vae" / "model_info.txt");
    CHECK(info.find("refined = ") != std::string::npos);

    REQUIRE(cli({"predict", "--input", pre, "--model-path", (dir / "vae" / "model.txt").string(), "--out",
                 (dir / "pred").string()})
                .code == 0);
    CHECK(read_text(dir / "pred" / "fitted_spliced.csv") == read_text(dir / "vae" / "fitted_spliced.csv"));

    REQUIRE(cli({"evaluate", "--input", pre, "--out", vae}).code == 0);
    const auto metrics = nlohmann::json::parse(read_text(dir / "vae" / "metrics.json"));
    CHECK(metrics.contains("mse_train"));
    CHECK(metrics.contains("mse_test"));
    CHECK(metrics.contains("k_t_true"));
    CHECK(metrics["value_space"] == "preprocessed");

    const auto genes = read_csv(dir / "vae" / "params.csv").rows;
    const std::string gene = genes.front().front();
    REQUIRE(cli({"plot", "--input", pre, "--out", vae, "--genes", gene}).code == 0);
    CHECK(fs::exists(dir / "vae" / "plots" / (gene + "_phase.svg")));
    CHECK(fs::exists(dir / "vae" / "plots" / "times.svg"));

    const auto empty = cli({"plot", "--input", pre, "--out", (dir / "em").string(), "--genes", ""});
    CHECK(empty.code == 0);
}
