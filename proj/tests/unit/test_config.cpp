#include <doctest.h>

#include "velo/config.hpp"
#include "velo/error.hpp"
#include "tempdir.hpp"

using namespace velo;

TEST_CASE("key-value parsing: comments, whitespace, later entries win") {
    const auto kv = KeyValueConfig::parse("# run\n  epochs = 12 \n\nmodel=basic\nepochs = 15\nencoder_hidden = 8, 4\n");
    CHECK(kv.get_int("epochs", 0) == 15);
    CHECK(kv.get_string("model", "") == "basic");
    CHECK(kv.get_int_list("encoder_hidden", {}) == std::vector<int>{8, 4});
    CHECK(kv.get_double("missing", 2.5) == 2.5);
    CHECK(kv.dump() == "encoder_hidden = 8, 4\nepochs = 15\nmodel = basic\n");
}

TEST_CASE("key-value parsing: malformed input") {
    CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign"), InputError);
    CHECK_THROWS_AS(KeyValueConfig::parse("= value"), InputError);
    const auto kv = KeyValueConfig::parse("epochs = ten\nflag = maybe\nrate = 1e-3x\n");
    CHECK_THROWS_AS(kv.get_int("epochs", 0), InputError);
    CHECK_THROWS_AS(kv.get_bool("flag", false), InputError);
    CHECK_THROWS_AS(kv.get_double("rate", 0.0), InputError);
    CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/velo.cfg"), InputError);
}

TEST_CASE("run config: defaults, overrides and validation") {
    TempDir dir("cfg");
    write_text(dir / "run.cfg", "seed = 7\nmodel = basic\nlearning_rate = 0.001\nn_top_genes = 0\ncapture_prior = on\n");
    const auto rc = RunConfig::from(KeyValueConfig::load(dir / "run.cfg"));
    CHECK(rc.seed == 7);
    CHECK(rc.seed_given);
    CHECK(rc.train.seed == 7);
    CHECK(rc.model == ModelKind::basic);
    CHECK(rc.train.learning_rate == 0.001);
    CHECK(rc.train.epochs == 300);
    CHECK(rc.preprocess.n_top_genes == 0);
    CHECK(rc.use_capture_prior);

    CHECK_FALSE(RunConfig::from(KeyValueConfig{}).seed_given);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("epoch = 3")), InputError);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("model = huge")), InputError);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("seed = -1")), InputError);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("format = parquet")), InputError);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("delta1 = 0.1\ndelta2 = 0.5")), DomainError);
    CHECK_THROWS_AS(RunConfig::from(KeyValueConfig::parse("train_fraction = 1.5")), DomainError);
}
