#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

// End-to-end checks against the built binary.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli = GCTAF_CLI_PATH;

struct Workspace {
  fs::path dir;
  explicit Workspace(const char* stem) {
    dir = fs::temp_directory_path() / (std::string("gctaf_cli_") + stem);
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

int run(const std::string& args) {
  std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json slurp_json(const fs::path& path) { return json::parse(slurp(path)); }

// Small three-partition dataset most tests share.
void make_data(const Workspace& ws, const char* name, const char* extra = "") {
  int rc = run("synth --out " + ws.path(name) +
               " --n 120 --tau 12 --features 6 --imbalance 0.2 --m 3 --partitions 3 --seed 7 " +
               extra);
  REQUIRE(rc == 0);
}

std::string small_model_flags() {
  return " --tau 12 --features 6 --heads 2 --head-size 4 --ff-dim 4 --mlp 8 --blocks 1 "
         "--epochs 2 --lr 1e-3 --batch-size 16 ";
}

}  // namespace

TEST_CASE("synth is deterministic and honors exact imbalance") {
  Workspace ws("synth");
  make_data(ws, "a");
  make_data(ws, "b");
  for (const char* file : {"partition_1/manifest.jsonl", "partition_2/manifest.jsonl",
                           "partition_1/instances/inst_00000.csv"}) {
    CHECK(slurp(ws.dir / "a" / file) == slurp(ws.dir / "b" / file));
  }
  // 40 instances per partition at 20% flare -> exactly 8 M/X records each.
  std::ifstream manifest(ws.dir / "a/partition_1/manifest.jsonl");
  std::string line;
  std::getline(manifest, line);  // header
  size_t flares = 0, total = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    std::string label = rec.at("label");
    flares += (label == "M" || label == "X") ? 1 : 0;
    ++total;
  }
  CHECK(total == 40);
  CHECK(flares == 8);
}

TEST_CASE("dispersed synth emits a verifiable ground-truth sidecar") {
  Workspace ws("sidecar");
  int rc = run("synth --out " + ws.path("d") +
               " --n 40 --tau 20 --features 6 --imbalance 0.25 --pattern dispersed --m 6 "
               "--seed 3");
  REQUIRE(rc == 0);
  json truth = slurp_json(ws.dir / "d/partition_1/ground_truth.json");
  CHECK(truth.at("pattern") == "dispersed");
  REQUIRE(truth.at("instances").size() == 10);
  for (const auto& rec : truth.at("instances")) {
    auto indices = rec.at("signal_indices").get<std::vector<size_t>>();
    REQUIRE(indices.size() == 6);
    for (size_t i = 1; i < indices.size(); ++i) CHECK(indices[i] >= indices[i - 1] + 2);
  }
}

TEST_CASE("train echoes the reference default configuration") {
  Workspace ws("defaults");
  int rc = run("synth --out " + ws.path("d") + " --n 30 --imbalance 0.2 --m 6 --seed 2");
  REQUIRE(rc == 0);
  rc = run("train --train " + ws.path("d/partition_1") + " --out " + ws.path("run") +
           " --epochs 1");
  REQUIRE(rc == 0);
  json cfg = slurp_json(ws.dir / "run/effective_config.json");
  CHECK(cfg.at("model").at("head_size") == 256);
  CHECK(cfg.at("model").at("heads") == 4);
  CHECK(cfg.at("model").at("ff_dim") == 4);
  CHECK(cfg.at("model").at("mlp_units") == json::array({128, 64}));
  CHECK(cfg.at("model").at("global_tokens") == 4);
  CHECK(cfg.at("model").at("dropout") == 0.1);
  CHECK(cfg.at("train").at("learning_rate") == 1e-4);
  CHECK(cfg.at("train").at("epochs") == 1);

  // --epochs 1 -> a one-row report.
  std::ifstream report(ws.dir / "run/report.csv");
  std::string line;
  size_t rows = 0;
  std::getline(report, line);
  CHECK(line == "epoch,train_loss,val_loss,val_tss,val_hss2,val_gs,val_acc");
  while (std::getline(report, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 1);
}

TEST_CASE("replaying the echoed config reproduces artifacts bit-exactly") {
  Workspace ws("replay");
  make_data(ws, "d");
  int rc = run("train --train " + ws.path("d/partition_1") + " --test " + ws.path("d/partition_2") +
               " --out " + ws.path("r1") + small_model_flags() + "--seed 11");
  REQUIRE(rc == 0);
  rc = run("train --config " + ws.path("r1/effective_config.json") + " --out " + ws.path("r2"));
  REQUIRE(rc == 0);
  CHECK(slurp(ws.dir / "r1/checkpoint.gctaf") == slurp(ws.dir / "r2/checkpoint.gctaf"));
  CHECK(slurp(ws.dir / "r1/report.csv") == slurp(ws.dir / "r2/report.csv"));
  CHECK(slurp(ws.dir / "r1/metrics.json") == slurp(ws.dir / "r2/metrics.json"));
}

TEST_CASE("eval writes per-pair reports and an aggregate with mean and std") {
  Workspace ws("eval");
  make_data(ws, "d");
  int rc = run("train --train " + ws.path("d/partition_1") + " --out " + ws.path("run") +
               small_model_flags() + "--seed 5");
  REQUIRE(rc == 0);
  rc = run("eval --checkpoint " + ws.path("run/checkpoint.gctaf") + " --data " +
           ws.path("d/partition_2") + " " + ws.path("d/partition_3") + " --out " + ws.path("ev"));
  REQUIRE(rc == 0);
  json agg = slurp_json(ws.dir / "ev/metrics_aggregate.json");
  for (const char* metric : {"accuracy", "hss2", "gs", "tss"}) {
    CHECK(agg.at(metric).contains("mean"));
    CHECK(agg.at(metric).contains("std"));
  }
  json per = slurp_json(ws.dir / "ev/metrics_partition_2.json");
  CHECK(per.contains("counts"));
}

TEST_CASE("baseline emits the same report schema as eval") {
  Workspace ws("baseline");
  make_data(ws, "d");
  int rc = run("baseline --data " + ws.path("d") + " --out " + ws.path("bl") + " --seed 4");
  REQUIRE(rc == 0);
  json out = slurp_json(ws.dir / "bl/baseline_metrics.json");
  REQUIRE(out.at("pairs").size() == 2);
  for (const auto& [name, report] : out.at("pairs").items()) {
    for (const char* field : {"accuracy", "hss2", "gs", "tss", "counts"}) {
      CHECK(report.contains(field));
    }
  }
  CHECK(out.at("aggregate").at("tss").contains("mean"));
}

TEST_CASE("ablate writes one row per variant with the verbatim labels") {
  Workspace ws("ablate");
  make_data(ws, "d");
  int rc = run("ablate --data " + ws.path("d") + " --out " + ws.path("abl") +
               small_model_flags() + "--seed 8 --threads 2");
  REQUIRE(rc == 0);
  std::ifstream csv(ws.dir / "abl/ablation.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "variant,mean_tss,std_tss,runs");
  std::vector<std::string> variants;
  while (std::getline(csv, line)) {
    if (!line.empty()) variants.push_back(line.substr(0, line.find(',')));
  }
  REQUIRE(variants.size() == 4);
  CHECK(variants[0] == "full");
  CHECK(variants[1] == "no global tokens");
  CHECK(variants[2] == "no cross-attention");
  CHECK(variants[3] == "no layer normalization");
}

TEST_CASE("global-token sweep emits one row per count") {
  Workspace ws("gsweep");
  make_data(ws, "d");
  int rc = run("sweep --data " + ws.path("d") + " --out " + ws.path("sw") + small_model_flags() +
               "--gsweep 1,2,3 --seed 9 --threads 2");
  REQUIRE(rc == 0);
  std::ifstream csv(ws.dir / "sw/global_token_sweep.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "global_tokens,tss");
  size_t rows = 0;
  while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 3);
}

TEST_CASE("singleton sweep matches a train run's best validation tss") {
  Workspace ws("sweepone");
  make_data(ws, "d");
  int rc = run("sweep --train " + ws.path("d/partition_1") + " --out " + ws.path("sw") +
               small_model_flags() + "--seed 13");
  REQUIRE(rc == 0);
  rc = run("train --train " + ws.path("d/partition_1") + " --out " + ws.path("run") +
           small_model_flags() + "--seed 13");
  REQUIRE(rc == 0);

  // Sweep reports the selected (max) validation TSS; recover it from the
  // train report's val_tss column.
  std::ifstream report(ws.dir / "run/report.csv");
  std::string line;
  std::getline(report, line);
  double best = -2.0;
  while (std::getline(report, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() > 3 && !cells[3].empty()) best = std::max(best, std::stod(cells[3]));
  }
  std::ifstream sweep_csv(ws.dir / "sw/sweep.csv");
  std::getline(sweep_csv, line);
  CHECK(line == "head_size,heads,ff_dim,mlp_units,global_tokens,dropout,num_blocks,learning_rate,tss");
  std::getline(sweep_csv, line);
  std::string tss_cell = line.substr(line.rfind(',') + 1);
  CHECK(std::stod(tss_cell) == doctest::Approx(best).epsilon(1e-12));
  std::getline(sweep_csv, line);
  CHECK(line.empty());  // singleton grid -> exactly one row
}

TEST_CASE("grid sweep carries the seven tabulated columns") {
  Workspace ws("grid");
  make_data(ws, "d");
  std::ofstream grid(ws.dir / "grid.json");
  grid << R"({"global_tokens":[1,2],"dropout":[0.0,0.1]})";
  grid.close();
  int rc = run("sweep --train " + ws.path("d/partition_1") + " --out " + ws.path("sw") +
               small_model_flags() + "--grid " + ws.path("grid.json") + " --seed 13 --threads 2");
  REQUIRE(rc == 0);
  std::ifstream csv(ws.dir / "sw/sweep.csv");
  std::string header;
  std::getline(csv, header);
  for (const char* col :
       {"head_size", "heads", "ff_dim", "mlp_units", "global_tokens", "dropout", "tss"}) {
    CHECK(header.find(col) != std::string::npos);
  }
  size_t rows = 0;
  std::string line;
  while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 4);
}

TEST_CASE("report aggregates metrics files") {
  Workspace ws("report");
  std::ofstream m1(ws.dir / "m1.json");
  m1 << R"({"accuracy":0.9,"hss2":0.5,"gs":0.4,"tss":0.7,"counts":{"tp":7,"fp":2,"fn":3,"tn":88}})";
  m1.close();
  std::ofstream m2(ws.dir / "m2.json");
  m2 << R"({"accuracy":0.8,"hss2":0.4,"gs":0.3,"tss":0.8,"counts":{"tp":8,"fp":12,"fn":2,"tn":78}})";
  m2.close();
  int rc = run("report --in " + ws.path("m1.json") + " " + ws.path("m2.json") + " --out " +
               ws.path("agg"));
  REQUIRE(rc == 0);
  json agg = slurp_json(ws.dir / "agg/aggregate.json");
  CHECK(agg.at("tss").at("mean") == doctest::Approx(0.75));
  CHECK(agg.at("tss").at("std") == doctest::Approx(0.0707).epsilon(1e-3));
}

TEST_CASE("exit codes distinguish the error families") {
  Workspace ws("codes");
  make_data(ws, "d");
  CHECK(run("train --no-such-flag") == 2);                       // CLI parse error
  CHECK(run("nonsense") == 2);                                   // unknown subcommand
  CHECK(run("train --out " + ws.path("x")) == 6);                // missing required config
  CHECK(run("eval --checkpoint missing.gctaf --data " + ws.path("d/partition_1") + " --out " +
            ws.path("y")) == 9);                                 // unreadable input

  // Temporal leakage: train on the later partition, test on the earlier one.
  CHECK(run("train --train " + ws.path("d/partition_2") + " --test " + ws.path("d/partition_1") +
            " --out " + ws.path("leak") + small_model_flags()) == 4);

  // Corrupt checkpoint -> format error.
  int rc = run("train --train " + ws.path("d/partition_1") + " --out " + ws.path("run") +
               small_model_flags());
  REQUIRE(rc == 0);
  std::string bytes = slurp(ws.dir / "run/checkpoint.gctaf");
  std::ofstream broken(ws.dir / "broken.gctaf", std::ios::binary);
  broken.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
  broken.close();
  CHECK(run("eval --checkpoint " + ws.path("broken.gctaf") + " --norm " +
            ws.path("run/checkpoint.gctaf.norm.json") + " --data " + ws.path("d/partition_2") +
            " --out " + ws.path("ev")) == 8);

  // Config-file parse error.
  std::ofstream bad(ws.dir / "bad.json");
  bad << "{ not json";
  bad.close();
  CHECK(run("train --config " + ws.path("bad.json") + " --out " + ws.path("z")) == 2);

  // Empty test manifest -> contract error.
  fs::create_directories(ws.dir / "empty");
  std::ofstream empty_manifest(ws.dir / "empty/manifest.jsonl");
  empty_manifest << R"({"type":"dataset","tau":12,"n_features":6})" << '\n';
  empty_manifest.close();
  CHECK(run("eval --checkpoint " + ws.path("run/checkpoint.gctaf") + " --data " +
            ws.path("empty") + " --out " + ws.path("ev2")) == 7);
}

TEST_CASE("GCTAF_LOG gates diagnostic output") {
  Workspace ws("logenv");
  make_data(ws, "d");
  std::string base = std::string(cli) + " baseline --data " + ws.path("d") + " --out ";
  std::string quiet_cmd = "GCTAF_LOG=error " + base + ws.path("q") + " >/dev/null 2>" + ws.path("q.log");
  std::string info_cmd = "GCTAF_LOG=info " + base + ws.path("v") + " >/dev/null 2>" + ws.path("v.log");
  REQUIRE(WEXITSTATUS(std::system(quiet_cmd.c_str())) == 0);
  REQUIRE(WEXITSTATUS(std::system(info_cmd.c_str())) == 0);
  CHECK(slurp(ws.dir / "q.log").empty());
  CHECK(slurp(ws.dir / "v.log").find("[info]") != std::string::npos);
}
