#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "domprompt/cli.hpp"

using namespace domprompt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(const std::vector<std::string>& args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("domprompt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Every file under `dir` keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

const std::vector<std::string> kTiny = {"--dim", "32", "--layers", "2", "--heads", "2", "--epochs", "1"};

std::vector<std::string> train_args(const fs::path& data, const fs::path& out,
                                    std::vector<std::string> extra = {}) {
  std::vector<std::string> a = {"train", "--data", data.string(), "--out", out.string()};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

const fs::path& small_dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data") / "ablation";
    REQUIRE(cli({"gen-data", "--preset", "ablation-depth", "--seed", "5", "--out", d.string()}).code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-data: conflict preset, rerun identity and holdout exclusion") {
  const fs::path root = scratch("gen");
  const auto a = cli({"gen-data", "--preset", "conflict", "--seed", "7", "--out", (root / "a").string()});
  REQUIRE(a.code == 0);
  const auto b = cli({"gen-data", "--preset", "conflict", "--seed", "7", "--out", (root / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(tree(root / "a") == tree(root / "b"));
  CHECK(a.out == b.out);

  const DatasetInfo info = load_dataset_info(root / "a");
  REQUIRE(info.domains.size() == 2);
  CHECK(info.conflict.at(info.domains[0]) == info.conflict.at(info.domains[1]));
  CHECK_FALSE(info.conflict.at(info.domains[0]).empty());
  for (const auto& d : info.domains) CHECK(a.out.find(d) != std::string::npos);

  const auto h = cli({"gen-data", "--preset", "holdout", "--holdout", "manual", "--seed", "2", "--image-size", "64",
                      "--out", (root / "h").string()});
  REQUIRE(h.code == 0);
  for (const char* split : {"train", "val"}) {
    for (const auto& e : load_manifest(root / "h", split)) CHECK(e.domain != "manual");
  }
  for (const auto& e : load_manifest(root / "h", "test")) CHECK(e.domain == "manual");

  CHECK(cli({"gen-data", "--preset", "holdout", "--holdout", "atlas", "--out", (root / "x").string()}).code != 0);
  CHECK(cli({"gen-data", "--preset", "nosuch", "--out", (root / "y").string()}).code != 0);
}

TEST_CASE("help lists every flag and unknown flags fail") {
  const auto top = cli({"--help"});
  CHECK(top.code == 0);
  for (const char* s : {"gen-data", "train", "eval", "--config"}) CHECK(top.out.find(s) != std::string::npos);
  const auto t = cli({"train", "--help"});
  CHECK(t.code == 0);
  for (const char* f : {"--data", "--out", "--backbone", "--head", "--spe", "--dpe", "--shared-mlp", "--no-prompt",
                        "--prompt-mode", "--domain-source", "--epochs", "--batch", "--lr", "--lambda", "--seed",
                        "--template", "--precision"}) {
    CHECK_MESSAGE(t.out.find(f) != std::string::npos, f);
  }
  const auto e = cli({"eval", "--help"});
  for (const char* f : {"--run", "--data", "--split", "--predictions", "--compare", "--out"}) {
    CHECK_MESSAGE(e.out.find(f) != std::string::npos, f);
  }
  CHECK(cli({"train", "--data", "d", "--out", "o", "--bogus"}).code != 0);
  CHECK(cli({"frobnicate"}).code != 0);
  CHECK(cli({}).code != 0);
  CHECK(cli({"train", "--data", "d", "--out", "o", "--backbone", "resnet"}).code != 0);
}

TEST_CASE("train: run directory, flag combinations and config precedence") {
  const fs::path root = scratch("train");
  const fs::path& data = small_dataset();

  const auto r = cli(train_args(data, root / "dpe_shared", {"--dpe", "--shared-mlp"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"model.ckpt", "meta.json", "config.ini", "log.jsonl", "seed.txt", "plots/loss.svg"}) {
    CHECK_MESSAGE(fs::exists(root / "dpe_shared" / f), f);
  }
  CHECK(slurp(root / "dpe_shared" / "plots/loss.svg").rfind("<svg", 0) == 0);
  const auto meta = nlohmann::json::parse(slurp(root / "dpe_shared" / "meta.json"));
  CHECK(meta.at("lambda").get<double>() == 1.0);
  CHECK_FALSE(meta.at("deviations").empty());
  std::size_t log_lines = 0;
  std::istringstream log(slurp(root / "dpe_shared" / "log.jsonl"));
  for (std::string line; std::getline(log, line);) ++log_lines;
  CHECK(log_lines == 2);  // initial loss plus one epoch

  const auto bad = cli(train_args(data, root / "spe_shared", {"--spe", "--shared-mlp"}));
  CHECK(bad.code != 0);
  CHECK_FALSE(fs::exists(root / "spe_shared" / "model.ckpt"));
  CHECK(cli(train_args(data, root / "both", {"--spe", "--dpe"})).code != 0);

  // defaults < file < flags
  std::ofstream(root / "run.ini") << "[train]\nepochs = 2\nlr = 0.01\nbatch = 4\n";
  const auto c = cli({"--config", (root / "run.ini").string(), "train", "--data", data.string(), "--out",
                      (root / "cfg").string(), "--dim", "32", "--layers", "2", "--heads", "2", "--lr", "0.02"});
  REQUIRE_MESSAGE(c.code == 0, c.err);
  const RunConfig got =
      run_config_from_json(nlohmann::json::parse(slurp(root / "cfg" / "meta.json")).at("config").dump());
  CHECK(got.epochs == 2);
  CHECK(got.batch == 4);
  CHECK(got.lr == 0.02);
  CHECK(got.weight_decay == RunConfig{}.weight_decay);

  // the written config.ini reproduces the run
  std::string ini = slurp(root / "cfg" / "config.ini");
  ini.replace(ini.find("out = "), ini.find('\n', ini.find("out = ")) - ini.find("out = "),
              "out = \"" + (root / "cfg2").string() + "\"");
  std::ofstream(root / "again.ini") << ini;
  REQUIRE(cli({"--config", (root / "again.ini").string(), "train"}).code == 0);
  CHECK(slurp(root / "cfg" / "model.ckpt") == slurp(root / "cfg2" / "model.ckpt"));

  std::ofstream(root / "bad.ini") << "[train]\nnot_a_key = 3\n";
  CHECK(cli({"--config", (root / "bad.ini").string(), "train", "--data", data.string(), "--out",
             (root / "z").string()})
            .code != 0);
}

TEST_CASE("eval: oracle predictions, self compare, domain coverage, fingerprint mismatch") {
  const fs::path root = scratch("eval");
  const fs::path& data = small_dataset();

  std::ostringstream oracle;
  std::vector<PredictionRecord> preds;
  std::set<std::string> test_domains;
  for (const auto& e : load_manifest(data, "test")) {
    PredictionRecord p{e.id, e.domain, {}};
    for (const auto& b : e.annotations) p.detections.push_back({b, 1.0, {}});
    preds.push_back(p);
    test_domains.insert(e.domain);
  }
  write_predictions(oracle, preds);
  const auto o = cli({"eval", "--data", data.string(), "--predictions", "-", "--out", (root / "oracle").string()},
                     oracle.str());
  REQUIRE_MESSAGE(o.code == 0, o.err);
  std::ifstream rep(root / "oracle" / "report.jsonl");
  const MapReport report = read_report_records(rep, class_names());
  CHECK(report.map == 1.0);
  for (const auto& [cls, ap] : report.per_class_ap) CHECK(ap == 1.0);

  REQUIRE(cli(train_args(data, root / "run")).code == 0);
  const auto e = cli({"eval", "--run", (root / "run").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  std::ifstream rep2(root / "run" / "eval-test" / "report.jsonl");
  const MapReport model_report = read_report_records(rep2, class_names());
  for (const auto& d : test_domains) {
    CHECK(model_report.per_domain.count(d) == 1);
    CHECK(e.out.find(d) != std::string::npos);
  }

  const auto self = cli({"eval", "--run", (root / "run").string(), "--out", (root / "self").string(), "--compare",
                         (root / "run").string()});
  REQUIRE_MESSAGE(self.code == 0, self.err);
  std::ifstream rep3(root / "self" / "report.jsonl");
  const DeltaTable delta = compare_runs(model_report, read_report_records(rep3, class_names()), class_names());
  CHECK(delta.overall.delta == 0.0);
  for (const auto& row : delta.classes) CHECK(row.delta == 0.0);
  for (const auto& row : delta.domains) CHECK(row.delta == 0.0);
  CHECK(fs::exists(root / "self" / "delta.txt"));
  CHECK(slurp(root / "self" / "plots/per_class_map.svg").rfind("<svg", 0) == 0);

  const auto mismatch = cli({"eval", "--run", (root / "run").string(), "--head", "set"});
  CHECK(mismatch.code != 0);
  CHECK(mismatch.err.find("different model") != std::string::npos);

  CHECK(cli({"eval", "--data", data.string(), "--predictions", "-", "--out", (root / "bad").string()},
            "{\"id\":\"nope\",\"domain\":\"x\",\"detections\":[]}\n")
            .code != 0);
  CHECK(cli({"eval"}).code != 0);
}

TEST_CASE("train and eval with classifier-chosen prompts") {
  const fs::path root = scratch("clf");
  const fs::path& data = small_dataset();
  const auto t = cli(train_args(data, root / "run", {"--domain-source", "classifier", "--classifier-epochs", "1"}));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(root / "run" / "classifier.ckpt"));
  const auto e = cli({"eval", "--run", (root / "run").string()});
  CHECK_MESSAGE(e.code == 0, e.err);
}

TEST_CASE("svg charts escape text and handle degenerate input") {
  const std::string line = svg_line_chart("a<b", "x", "y", {});
  CHECK(line.find("a&lt;b") != std::string::npos);
  CHECK(svg_line_chart("flat", "x", "y", {1.0, 1.0}).find("polyline") != std::string::npos);
  const std::string bars = svg_bar_chart("ap", {{"text", 0.5}, {"title", 2.0}});
  CHECK(bars.find("text") != std::string::npos);
  CHECK(bars.find("</svg>") != std::string::npos);
}
