#include <doctest.h>

#include <fstream>
#include <sstream>

#include "misd/cli.hpp"
#include "misd/data_io.hpp"
#include "misd/model_io.hpp"
#include "oracles.hpp"

using namespace misd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "misd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) { return read_text_file(p); }

// Small benchmark shared by the tests below.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    const auto d = oracle::scratch_dir("cli_data");
    const Run r = cli({"gen-synth", "--classes", "3", "--per-class", "6", "--train-per-class",
                       "16", "--seed", "4", "--out", d.string()});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-synth writes readable, reproducible files") {
  const fs::path d = data_dir();
  for (const char* f : {"train.img", "val.img", "train.emb", "val.emb", "manifest.json"}) {
    CHECK(fs::exists(d / f));
  }
  CHECK(read_images(d / "train.img").size() == 48);
  CHECK(read_images(d / "val.img").size() == 18);
  const EmbeddingDataset tr = read_embeddings(d / "train.emb");
  CHECK(tr.k == 8);
  CHECK(tr.count() == 48);
  CHECK(read_embeddings(d / "val.emb").k == 1);

  const auto again = oracle::scratch_dir("cli_data_again");
  REQUIRE(cli({"gen-synth", "--classes", "3", "--per-class", "6", "--train-per-class", "16",
               "--seed", "4", "--out", again.string()})
              .code == 0);
  for (const char* f : {"train.img", "val.img", "train.emb", "val.emb"}) {
    CHECK(bytes(d / f) == bytes(again / f));
  }
}

TEST_CASE("gen-synth rejects a single class") {
  const Run r = cli({"gen-synth", "--classes", "1", "--out", oracle::scratch_dir("one").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("degenerate") != std::string::npos);
}

TEST_CASE("train, eval and metrics") {
  const fs::path d = data_dir();
  const auto run = oracle::scratch_dir("cli_train");
  const Run t = cli({"train", "--data", d.string(), "--shots", "4", "--epochs", "10", "--out",
                     (run / "a").string()});
  REQUIRE(t.code == 0);
  for (const char* f : {"model.json", "loss_trace.csv", "manifest.json"}) CHECK(fs::exists(run / "a" / f));

  REQUIRE(cli({"train", "--data", d.string(), "--shots", "4", "--epochs", "10", "--out",
               (run / "b").string()})
              .code == 0);
  CHECK(bytes(run / "a/model.json") == bytes(run / "b/model.json"));
  CHECK(bytes(run / "a/loss_trace.csv") == bytes(run / "b/loss_trace.csv"));

  const Run e1 = cli({"eval", "--data", d.string(), "--model", (run / "a/model.json").string(),
                      "--report", (run / "e1/report.json").string()});
  REQUIRE(e1.code == 0);
  REQUIRE(cli({"eval", "--data", d.string(), "--model", (run / "a/model.json").string(),
               "--report", (run / "e2/report.json").string()})
              .code == 0);
  CHECK(bytes(run / "e1/report.json") == bytes(run / "e2/report.json"));
  CHECK(bytes(run / "e1/report.scores.csv") == bytes(run / "e2/report.scores.csv"));
  CHECK(fs::exists(run / "e1/report.csv"));
  CHECK(fs::exists(run / "e1/report.manifest.json"));

  const MisDReport r = read_report(run / "e1/report.json");
  REQUIRE(r.acc.has_value());
  CHECK(*r.acc >= 0.0);
  CHECK(*r.acc <= 100.0);

  const Run m = cli({"metrics", "--scores", (run / "e1/report.scores.csv").string(), "--report",
                     (run / "m/report.json").string()});
  REQUIRE(m.code == 0);
  const MisDReport again = read_report(run / "m/report.json");
  auto close = [](const std::optional<double>& a, const std::optional<double>& b) {
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(std::abs(*a - *b) < 1e-9);
  };
  close(r.acc, again.acc);
  close(r.fpr95, again.fpr95);
  close(r.aurc, again.aurc);
  close(r.e_aurc, again.e_aurc);
  close(r.auroc, again.auroc);
  close(r.aupr_success, again.aupr_success);
  close(r.aupr_error, again.aupr_error);

  // Training from precomputed crop embeddings and evaluating on embeddings.
  REQUIRE(cli({"train", "--data", (d / "train.emb").string(), "--shots", "2", "--epochs", "2",
               "--out", (run / "emb").string()})
              .code == 0);
  CHECK(cli({"eval", "--data", (d / "val.emb").string(), "--model", (run / "emb/model.json").string(),
             "--report", (run / "emb/report.json").string()})
            .code == 0);
}

TEST_CASE("train flag variants") {
  const fs::path d = data_dir();
  const auto run = oracle::scratch_dir("cli_flags");
  SUBCASE("zero epochs keep the initial bank") {
    REQUIRE(cli({"train", "--data", d.string(), "--epochs", "0", "--shots", "2", "--out", run.string()}).code == 0);
    const TrainedModel m = read_model(run / "model.json");
    TrainConfig cfg;
    cfg.shots = 2;
    CHECK(m.bank == initial_bank(*m.backbone, m.bank.class_names, cfg));
  }
  SUBCASE("CE-only ablation") {
    CHECK(cli({"train", "--data", d.string(), "--lambda-neg", "0", "--lambda-orth", "0",
               "--epochs", "3", "--out", run.string()})
              .code == 0);
  }
  SUBCASE("shot regimes") {
    for (const char* s : {"1", "4", "16"}) {
      CHECK(cli({"train", "--data", d.string(), "--shots", s, "--epochs", "2", "--out",
                 (run / s).string()})
                .code == 0);
    }
  }
  SUBCASE("bad schedule") {
    const Run r = cli({"train", "--data", d.string(), "--crop-schedule", "sometimes", "--out", run.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("sometimes") != std::string::npos);
  }
  SUBCASE("too many shots") {
    CHECK(cli({"train", "--data", d.string(), "--shots", "17", "--out", run.string()}).code == 2);
  }
}

TEST_CASE("metrics command") {
  const auto dir = oracle::scratch_dir("cli_metrics");
  write_text_file(dir / "worked.csv", "confidence,predicted,label\n0.9,1,1\n0.8,2,0\n0.7,0,0\n0.6,3,3\n");
  const Run r = cli({"metrics", "--scores", (dir / "worked.csv").string()});
  REQUIRE(r.code == 0);
  const MisDReport rep = read_report(dir / "worked.report.json");
  CHECK(std::round(*rep.aurc * 100) / 100 == 270.83);
  CHECK(std::round(*rep.aupr_success * 100) / 100 == 80.56);

  write_text_file(dir / "empty.csv", "");
  const Run e = cli({"metrics", "--scores", (dir / "empty.csv").string()});
  CHECK(e.code == 2);
  CHECK(e.err.find("line") != std::string::npos);

  write_text_file(dir / "bin.csv", "confidence,correct\n0.9,1\n0.2,0\n0.5,1\n");
  REQUIRE(cli({"metrics", "--scores", (dir / "bin.csv").string()}).code == 0);
  const MisDReport b = read_report(dir / "bin.report.json");
  CHECK(b.auroc.has_value());
  CHECK(b.fpr95.has_value());
  CHECK_FALSE(b.acc.has_value());
  CHECK_FALSE(b.aurc.has_value());
}

TEST_CASE("sweep aggregates child runs") {
  const fs::path d = data_dir();
  const auto run = oracle::scratch_dir("cli_sweep");
  const std::vector<std::string> args{"sweep", "--data", d.string(), "--shots", "1,2", "--seeds", "2",
                                      "--epochs", "3"};
  auto a = args;
  a.insert(a.end(), {"--out", (run / "a").string(), "--jobs", "2"});
  REQUIRE(cli(a).code == 0);
  auto b = args;
  b.insert(b.end(), {"--out", (run / "b").string(), "--jobs", "1"});
  REQUIRE(cli(b).code == 0);
  CHECK(bytes(run / "a/sweep.csv") == bytes(run / "b/sweep.csv"));

  std::istringstream table(bytes(run / "a/sweep.csv"));
  std::string header, row;
  std::getline(table, header);
  std::vector<std::string> rows;
  while (std::getline(table, row)) rows.push_back(row);
  REQUIRE(rows.size() == 2);
  CHECK(header.rfind("shots,runs,acc_mean,acc_std", 0) == 0);

  for (int shots : {1, 2}) {
    double sum = 0;
    for (int seed : {0, 1}) {
      const auto child = run / "a" / ("shots-" + std::to_string(shots)) / ("seed-" + std::to_string(seed));
      REQUIRE(fs::exists(child / "report.json"));
      sum += *read_report(child / "report.json").acc;
    }
    const std::string& r = rows[static_cast<std::size_t>(shots - 1)];
    std::vector<std::string> cells;
    std::stringstream ss(r);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    CHECK(cells[0] == std::to_string(shots));
    CHECK(cells[1] == "2");
    CHECK(std::stod(cells[2]) == doctest::Approx(sum / 2).epsilon(1e-12));
  }
}

TEST_CASE("gradcheck command") {
  const Run ok = cli({"gradcheck", "--trials", "20"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  const Run bad = cli({"gradcheck", "--trials", "3", "--perturb", "0.01"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("FAIL") != std::string::npos);
  CHECK(bad.err.find("trial") != std::string::npos);
  CHECK(cli({"gradcheck", "--trials", "0"}).code == 2);
  CHECK(cli({"gradcheck", "--no-such-flag"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}
