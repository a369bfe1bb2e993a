#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using testutil::run_cli;
using testutil::slurp;
using testutil::source_path;
using testutil::spit;

namespace fs = std::filesystem;

namespace {

std::string q(const std::string& s) { return "\"" + s + "\""; }

// Value of a "key\tvalue" line in a generated report.
std::string field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
  return "";
}

// Everything from `header` up to the next blank line.
std::string section(const std::string& text, const std::string& header) {
  const auto at = text.find(header);
  if (at == std::string::npos) return "";
  return text.substr(at, text.find("\n\n", at) - at);
}

// One generated toy corpus and one trained model shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("cli");
    const auto gen = run_cli("gensynth --plan " + q(source_path("data/toy.plan")) + " --out " + q(corpus()), dir_->path());
    ASSERT_EQ(gen.code, 0) << gen.out;
    const auto tr = run_cli("train --data " + q(corpus()) + " --config " + q(source_path("data/toy.conf")) +
                                " --out " + q(model_dir()),
                            dir_->path());
    ASSERT_EQ(tr.code, 0) << tr.out;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string corpus() { return dir_->str("corpus"); }
  static std::string model_dir() { return dir_->str("model"); }
  static std::string checkpoint() { return dir_->str("model/model.ckpt"); }

  testutil::TempDir scratch_{"cli_case"};
  std::string path(const std::string& rel) const { return scratch_.str(rel); }

  static testutil::TempDir* dir_;
};

testutil::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, GensynthIsDeterministicAndSeedable) {
  const std::string plan = q(source_path("data/toy.plan"));
  ASSERT_EQ(run_cli("gensynth --plan " + plan + " --out " + q(path("a")), scratch_.path()).code, 0);
  for (const char* f : {"train.txt", "test.txt", "stats.txt"})
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(corpus() + "/" + f)) << f;
  ASSERT_EQ(run_cli("gensynth --plan " + plan + " --out " + q(path("b")) + " --seed 99", scratch_.path()).code, 0);
  EXPECT_NE(slurp(path("b/train.txt")), slurp(corpus() + "/train.txt"));
}

TEST_F(Cli, GensynthNoiseRateIsReported) {
  std::string plan = slurp(source_path("data/toy.plan"));
  plan.replace(plan.find("noise_rate = 0.1"), 16, "noise_rate = 0.3");
  spit(path("noisy.plan"), plan);
  ASSERT_EQ(run_cli("gensynth --plan " + q(path("noisy.plan")) + " --out " + q(path("n")), scratch_.path()).code, 0);
  const std::string stats = slurp(path("n/stats.txt"));
  EXPECT_NEAR(std::stod(field(stats, "train_mislabeled_fraction")), 0.3, 0.005);
  EXPECT_EQ(field(stats, "test_mislabeled"), "0");
}

TEST_F(Cli, TrainWritesItsArtifacts) {
  for (const char* f : {"manifest.json", "corpus_stats.txt", "metrics.tsv", "model.ckpt"})
    EXPECT_TRUE(fs::exists(model_dir() + "/" + f)) << f;
  std::istringstream metrics(slurp(model_dir() + "/metrics.tsv"));
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line, "epoch\tL_re\tL_hier\tL_ord\treg\tval_AUC");
  std::size_t epochs = 0;
  while (std::getline(metrics, line)) ++epochs;
  EXPECT_EQ(epochs, 3u);
  const auto manifest = nlohmann::json::parse(slurp(model_dir() + "/manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_EQ(manifest["config"]["filters"], "5");
  EXPECT_EQ(manifest["data"]["train"]["bytes"], fs::file_size(corpus() + "/train.txt"));
  EXPECT_EQ(rhia::checkpoint_width(checkpoint()), 4u);
}

TEST_F(Cli, TrainIsReproducible) {
  const auto r = run_cli("train --data " + q(corpus()) + " --config " + q(source_path("data/toy.conf")) + " --out " +
                             q(path("again")),
                         scratch_.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(path("again/model.ckpt")), slurp(checkpoint()));
  EXPECT_EQ(slurp(path("again/metrics.tsv")), slurp(model_dir() + "/metrics.tsv"));
}

TEST_F(Cli, FlagsOverrideTheConfigFile) {
  const auto r = run_cli("train --data " + q(corpus()) + " --config " + q(source_path("data/toy.conf")) +
                             " --epochs 1 --precision double --out " + q(path("flag")),
                         scratch_.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto manifest = nlohmann::json::parse(slurp(path("flag/manifest.json")));
  EXPECT_EQ(manifest["config"]["epochs"], "1");
  EXPECT_EQ(manifest["config"]["filters"], "5");
  EXPECT_EQ(rhia::checkpoint_width(path("flag/model.ckpt")), 8u);
}

TEST_F(Cli, MissingDataFailsBeforeWritingAnything) {
  const auto r = run_cli("train --data " + q(path("nowhere")) + " --out " + q(path("out")), scratch_.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("nowhere"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(path("out")));
}

TEST_F(Cli, UnknownConfigKeyListsValidKeys) {
  spit(path("bad.conf"), "filters = 5\nfliters = 7\n");
  const auto r = run_cli("train --data " + q(corpus()) + " --config " + q(path("bad.conf")) + " --out " + q(path("o")),
                         scratch_.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("fliters"), std::string::npos) << r.out;
  for (const auto& k : rhia::config_keys()) EXPECT_NE(r.out.find(k.name), std::string::npos) << k.name;
  EXPECT_FALSE(fs::exists(path("o")));
}

TEST_F(Cli, HelpListsEveryConfigKey) {
  const auto r = run_cli("train --help", scratch_.path());
  EXPECT_EQ(r.code, 0);
  for (const auto& k : rhia::config_keys()) EXPECT_NE(r.out.find("--" + k.name), std::string::npos) << k.name;
}

TEST_F(Cli, EvalReportHasEverySectionAndIsStable) {
  const std::string base = "eval --checkpoint " + q(checkpoint()) + " --data " + q(corpus());
  ASSERT_EQ(run_cli(base + " --report " + q(path("r1.txt")) + " --pr " + q(path("pr.tsv")) + " --trace " +
                        q(path("trace.txt")),
                    scratch_.path())
                .code,
            0);
  ASSERT_EQ(run_cli(base + " --report " + q(path("r2.txt")), scratch_.path()).code, 0);
  const std::string report = slurp(path("r1.txt"));
  EXPECT_EQ(report, slurp(path("r2.txt")));
  for (const char* s : {"[full test set]", "[long-tail hits]", "[retention all]", "AUC\t", "Max_F1\t", "P@100\t",
                        "P@2000\t", "P@mean\t", "<100", "<200"})
    EXPECT_NE(report.find(s), std::string::npos) << s;
  const double auc = std::stod(field(report, "AUC"));
  EXPECT_GE(auc, 0.0);
  EXPECT_LE(auc, 1.0);
  EXPECT_FALSE(slurp(path("pr.tsv")).empty());
  EXPECT_NE(slurp(path("trace.txt")).find("level 3"), std::string::npos);
}

TEST_F(Cli, RetentionOnlyChangesItsSection) {
  const std::string base = "eval --checkpoint " + q(checkpoint()) + " --data " + q(corpus());
  ASSERT_EQ(run_cli(base + " --retention one --report " + q(path("one.txt")), scratch_.path()).code, 0);
  ASSERT_EQ(run_cli(base + " --retention all --report " + q(path("all.txt")), scratch_.path()).code, 0);
  const std::string one = slurp(path("one.txt")), all = slurp(path("all.txt"));
  EXPECT_EQ(section(one, "[full test set]"), section(all, "[full test set]"));
  EXPECT_EQ(section(one, "[long-tail hits]"), section(all, "[long-tail hits]"));
  EXPECT_NE(one.find("[retention one]"), std::string::npos);
  EXPECT_FALSE(field(one, "bags").empty());
  EXPECT_EQ(run_cli(base + " --retention three", scratch_.path()).code, 1);
}

TEST_F(Cli, EvalRejectsForeignRelations) {
  auto records = rhia::read_corpus(corpus() + "/test.txt");
  records[0].relation = "/film/film/director";
  fs::create_directories(path("foreign"));
  rhia::write_corpus(path("foreign/test.txt"), records);
  const auto r = run_cli("eval --checkpoint " + q(checkpoint()) + " --data " + q(path("foreign")), scratch_.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/film/film/director"), std::string::npos) << r.out;
}

TEST_F(Cli, CurvesWritesOneFilePerCheckpoint) {
  const auto r = run_cli("curves --checkpoint " + q(checkpoint()) + " --checkpoint " + q(checkpoint()) + " --data " +
                             q(corpus()) + " --out " + q(path("curves")),
                         scratch_.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(path("curves/curve_1.tsv")), slurp(path("curves/curve_2.tsv")));
  std::istringstream summary(slurp(path("curves/summary.tsv")));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(summary, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST_F(Cli, GradcheckPassesAndCatchesCorruption) {
  const auto ok = run_cli("gradcheck", scratch_.path());
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("gradcheck PASS"), std::string::npos);

  const auto bad = run_cli("gradcheck --corrupt-op sigmoid", scratch_.path());
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("gradcheck FAIL"), std::string::npos);
  EXPECT_NE(bad.out.find("primitive sigmoid"), std::string::npos);
  EXPECT_NE(bad.out.find("worst"), std::string::npos);

  EXPECT_EQ(run_cli("gradcheck --tol 0", scratch_.path()).code, 3);
  EXPECT_EQ(run_cli("gradcheck --corrupt-op nosuchop", scratch_.path()).code, 1);
}

TEST_F(Cli, ConvertNyt) {
  spit(path("nyt.txt"), "m.1 m.2 barack_obama hawaii /people/person/place_of_birth barack_obama was born in hawaii . "
                        "###END###\n\n");
  const auto r = run_cli("convert-nyt --in " + q(path("nyt.txt")) + " --out " + q(path("nyt.tsv")), scratch_.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto recs = rhia::read_corpus(path("nyt.tsv"));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].relation, "/people/person/place_of_birth");
  EXPECT_EQ(recs[0].head_id, "m.1");
  EXPECT_EQ(recs[0].tokens.back(), ".");
}

TEST_F(Cli, NoSubcommandIsAUsageError) { EXPECT_EQ(run_cli("", scratch_.path()).code, 1); }
