#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

// Runs the CLI with stdout/stderr discarded and returns its exit status.
int run(const std::string& args) {
  const std::string cmd = std::string("\"") + QTS_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("cli");
    const auto& d = *dir_;
    ASSERT_EQ(run("synth --out " + q(d / "raw") +
                  " --identities 8 --sets-min 2 --sets-max 3 --dim 12"
                  " --exemplars-min 12 --exemplars-max 20 --tau 0.7 --seed 3"),
              0);
    ASSERT_EQ(run("sample --gallery " + q(d / "raw") + " --samples 6 --gamma auto --out " +
                  q(d / "gal")),
              0);
    ASSERT_EQ(run("proxies --gallery " + q(d / "gal") + " --baseline exemplar --k 3 --out " +
                  q(d / "px.tsv")),
              0);
    ASSERT_EQ(run("extract --gallery " + q(d / "gal") + " --proxies " + q(d / "px.tsv") +
                  " --baseline exemplar --train-sets 20 --cap 400 --seed 1 --out " +
                  q(d / "feats.tsv")),
              0);
    ASSERT_EQ(run("train --features " + q(d / "feats.tsv") +
                  " --epsilon 0.4 --cost 1000 --gamma 0.2 --out " + q(d / "model.qts")),
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static const testutil::TempDir& d() { return *dir_; }
  static std::string common() {
    return "--gallery " + q(d() / "gal") + " --baseline exemplar --model " +
           q(d() / "model.qts") + " --proxies " + q(d() / "px.tsv");
  }

  static testutil::TempDir* dir_;
};

testutil::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST_F(CliPipeline, ArtifactsAndRunLogs) {
  for (const char* f : {"raw/manifest.tsv", "raw/run.json", "gal/manifest.tsv", "gal/run.json",
                        "px.tsv", "px.tsv.run.json", "feats.tsv", "feats.tsv.run.json",
                        "model.qts", "model.qts.run.json"}) {
    EXPECT_TRUE(fs::exists(d() / f)) << f;
  }
  const auto log = testutil::slurp(d() / "raw/run.json");
  EXPECT_NE(log.find("\"seed\": \"3\""), std::string::npos) << log;
  EXPECT_NO_THROW(qts::load_model(d() / "model.qts"));
}

TEST_F(CliPipeline, RetrieveAndEvaluate) {
  const auto first = qts::load_gallery(d() / "gal").gallery[0].id;
  ASSERT_EQ(run("retrieve " + common() + " --method lqts --k 3 --query " + first + " --out " +
                q(d() / "rank.tsv")),
            0);
  const auto ranking = testutil::slurp(d() / "rank.tsv");
  // Headerless `rank \t set_id \t score` rows, query excluded.
  EXPECT_EQ(ranking.rfind("1\t", 0), 0u) << ranking;
  EXPECT_EQ(ranking.find("\t" + first + "\t"), std::string::npos);

  ASSERT_EQ(run("evaluate " + common() + " --method lqts --k 3 --out-dir " + q(d() / "ev")), 0);
  for (const char* f : {"anr.tsv", "cdf.csv", "rank100.csv", "run.json"}) {
    EXPECT_TRUE(fs::exists(d() / "ev" / f)) << f;
  }
}

TEST_F(CliPipeline, LqtsWithNoProxiesMatchesBaseline) {
  ASSERT_EQ(run("evaluate " + common() + " --method baseline --k 0 --out-dir " + q(d() / "b0")), 0);
  ASSERT_EQ(run("evaluate " + common() + " --method lqts --k 0 --out-dir " + q(d() / "l0")), 0);
  const auto a = testutil::slurp(d() / "b0/anr.tsv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, testutil::slurp(d() / "l0/anr.tsv"));
}

TEST_F(CliPipeline, RepeatedRunsByteIdentical) {
  ASSERT_EQ(run("extract --gallery " + q(d() / "gal") + " --proxies " + q(d() / "px.tsv") +
                " --baseline exemplar --train-sets 20 --cap 400 --seed 1 --out " +
                q(d() / "feats2.tsv")),
            0);
  EXPECT_EQ(testutil::slurp(d() / "feats.tsv"), testutil::slurp(d() / "feats2.tsv"));
  ASSERT_EQ(run("train --features " + q(d() / "feats2.tsv") + " --out " + q(d() / "model2.qts")), 0);
  EXPECT_EQ(testutil::slurp(d() / "model.qts"), testutil::slurp(d() / "model2.qts"));
}

TEST_F(CliPipeline, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("evaluate " + common() + " --bogus 1 --out-dir " + q(d() / "x")), 1);
  EXPECT_EQ(run("retrieve --gallery " + q(d() / "gal") + " --method lqts --query a --out " +
                q(d() / "r.tsv")),
            1);
  EXPECT_EQ(run("proxies --gallery " + q(d() / "gal") + " --baseline nope --out " +
                q(d() / "p.tsv")),
            1);
  EXPECT_EQ(run("energy --gallery " + q(d() / "missing") + " --out " + q(d() / "e.csv")), 1);

  // A corrupt set file is a data error.
  testutil::TempDir bad("cli_bad");
  fs::copy(d() / "gal", bad.path(), fs::copy_options::recursive);
  const auto lg = qts::load_gallery(bad.path());
  testutil::write_text(bad.path() / lg.gallery[0].source_path, "1,2,nan\n");
  EXPECT_EQ(run("energy --gallery " + q(bad.path()) + " --out " + q(bad / "e.csv")), 2);
}

TEST_F(CliPipeline, EnergyReport) {
  ASSERT_EQ(run("energy --gallery " + q(d() / "raw") + " --out " + q(d() / "energy.csv")), 0);
  const auto text = testutil::slurp(d() / "energy.csv");
  EXPECT_EQ(text.rfind("set_id,ratio2,ratio3\n", 0), 0u);
}
