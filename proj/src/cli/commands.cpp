#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"

#include "domprompt/cli.hpp"

namespace domprompt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct DepthFlags {
  bool spe = false;
  bool dpe = false;
};

/// Model and prompt flags shared by train and eval.
std::vector<CLI::Option*> add_model_options(CLI::App* app, RunConfig& c, DepthFlags& d) {
  std::vector<CLI::Option*> o;
  o.push_back(app->add_option("--backbone", c.backbone, "Visual backbone")
                  ->check(CLI::IsMember({"vit", "swin", "cnn"}))
                  ->capture_default_str());
  o.push_back(app->add_option("--head", c.head, "Detection head")
                  ->check(CLI::IsMember({"set", "dense"}))
                  ->capture_default_str());
  o.push_back(app->add_option("--depth", c.depth, "Prompt depth")
                  ->check(CLI::IsMember({"spe", "dpe"}))
                  ->capture_default_str());
  auto* spe = app->add_flag("--spe", d.spe, "Shallow prompt: one projection before the first layer");
  auto* dpe = app->add_flag("--dpe", d.dpe, "Deep prompt: a projection before every layer");
  spe->excludes(dpe);
  o.push_back(spe);
  o.push_back(dpe);
  o.push_back(app->add_flag("--shared-mlp", c.shared_mlp, "DPE only: one projection for every layer after the first"));
  o.push_back(app->add_flag("--no-prompt", c.no_prompt, "Mask the prompt out of the visual features (baseline)"));
  o.push_back(app->add_option("--precision", c.precision, "Parameter precision")
                  ->check(CLI::IsMember({"f32", "f64"}))
                  ->capture_default_str());
  o.push_back(app->add_option("--image-size", c.image_size, "Input size in pixels, 0 for the dataset's")->capture_default_str());
  o.push_back(app->add_option("--dim", c.dim, "ViT width")->capture_default_str());
  o.push_back(app->add_option("--layers", c.layers, "ViT depth")->capture_default_str());
  o.push_back(app->add_option("--heads", c.heads, "ViT attention heads")->capture_default_str());
  o.push_back(app->add_option("--patch", c.patch, "ViT patch size")->capture_default_str());
  o.push_back(app->add_option("--fpn-width", c.fpn_width, "Pyramid channels")->capture_default_str());
  o.push_back(app->add_option("--prompt-dim", c.prompt_dim, "Text embedding size")->capture_default_str());
  o.push_back(app->add_option("--queries", c.queries, "Set head object queries")->capture_default_str());
  o.push_back(app->add_option("--init-seed", c.init_seed, "Parameter initialisation seed")->capture_default_str());
  o.push_back(app->add_option("--prompt-mode", c.prompt_mode, "Prompt text source")
                  ->check(CLI::IsMember({"heuristic", "fixture", "hybrid"}))
                  ->capture_default_str());
  o.push_back(app->add_option("--template", c.template_id, "Template id from the dataset's templates.txt")
                  ->capture_default_str());
  o.push_back(app->add_option("--domain-source", c.domain_source, "Domain used to pick the prompt")
                  ->check(CLI::IsMember({"gold", "classifier"}))
                  ->capture_default_str());
  return o;
}

void apply_depth(RunConfig& c, const DepthFlags& d) {
  if (d.spe) c.depth = "spe";
  if (d.dpe) c.depth = "dpe";
}

// -- gen-data ---------------------------------------------------------------

struct GenFlags {
  std::string preset;
  std::uint64_t seed = 1;
  std::string out;
  std::string holdout;
  std::size_t image_size = 0;
};

void cmd_gen_data(const GenFlags& f, bool holdout_given, std::ostream& out) {
  DatasetPlan plan = preset_plan(f.preset, f.seed);
  if (holdout_given) plan.holdout = f.holdout == "none" ? "" : f.holdout;
  if (f.image_size) plan.image_size = f.image_size;
  plan.validate();
  build_dataset(plan, f.out);

  const DatasetInfo info = load_dataset_info(f.out);
  out << "dataset " << info.name << " seed " << info.seed << " image " << info.image_size << "px";
  if (!info.holdout.empty()) out << " holdout " << info.holdout;
  out << "\n";
  std::size_t wd = 6;
  for (const auto& d : info.domains) wd = std::max(wd, d.size());
  out << std::left << std::setw(6) << "split" << "  " << std::setw(wd) << "domain" << "  " << std::setw(8)
      << "style" << "  " << std::right << std::setw(5) << "pages" << "  " << std::setw(6) << "boxes" << "\n";
  for (const char* split : {"train", "val", "test"}) {
    std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& e : load_manifest(f.out, split)) {
      auto& c = counts[{e.domain, std::string(style_name(e.style))}];
      ++c.first;
      c.second += e.annotations.size();
    }
    for (const auto& d : info.domains) {
      for (const auto& [key, c] : counts) {
        if (key.first != d) continue;
        out << std::left << std::setw(6) << split << "  " << std::setw(wd) << key.first << "  " << std::setw(8)
            << key.second << "  " << std::right << std::setw(5) << c.first << "  " << std::setw(6) << c.second
            << "\n";
      }
    }
  }
  for (const auto& [domain, kind] : info.conflict) {
    if (!kind.empty()) out << "conflict " << domain << ": " << kind << "\n";
  }
}

// -- train ------------------------------------------------------------------

std::vector<std::string> deviations(const RunConfig& c) {
  std::vector<std::string> d = {
      "backbone trained from scratch at toy width; no document-image pretraining",
      "batch " + std::to_string(c.batch) + " on one CPU process (reference recipe: 16 across 8 devices)",
      "base lr " + fixed(c.lr, 6) + " (reference recipe: 2e-4 for a pretrained backbone)",
      "lambda " + fixed(c.lambda, 4) + " (no reference value given)",
      "synthetic documents replace the real corpora",
  };
  if (c.head == "dense") d.push_back("dense single-stage head stands in for the two-stage detector");
  return d;
}

std::vector<std::string> train_domains(const std::vector<Sample>& train, const DatasetInfo& info) {
  std::set<std::string> seen;
  for (const auto& s : train) seen.insert(s.entry.domain);
  std::vector<std::string> out;
  for (const auto& d : info.domains) {
    if (seen.count(d)) out.push_back(d);
  }
  return out;
}

void cmd_train(RunConfig c, std::ostream& out) {
  c.validate();
  if (c.data.empty() || c.out.empty()) throw std::invalid_argument("train needs --data and --out");
  const fs::path data = c.data, dir = c.out;
  const DatasetInfo info = load_dataset_info(data);
  const ModelConfig mcfg = c.model_config(info);
  const Precision prec = c.model_precision();
  fs::create_directories(dir / "plots");

  Model model(mcfg);
  const FrozenTextEncoder enc(FrozenTextEncoder::kDefaultSeed, c.prompt_dim);
  const PromptTable prompts = build_prompts(enc, c.prompt_settings(data), info.domains, prec);
  const std::vector<Sample> train_set = load_split(data, "train", prec);
  if (train_set.empty()) throw std::runtime_error("training split of " + data.string() + " is empty");

  const TrainConfig tcfg = c.train_config();
  std::vector<const Sample*> all;
  for (const auto& s : train_set) all.push_back(&s);
  const double initial = batch_loss(model, all, prompts, tcfg.loss).item();

  std::ofstream log(dir / "log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + (dir / "log.jsonl").string());
  log << json{{"epoch", 0}, {"loss", initial}, {"lr", 0.0}}.dump() << "\n";
  out << "epoch 0/" << c.epochs << " loss " << fixed(initial, 5) << "\n";
  std::vector<double> curve{initial};
  const TrainResult result = train(model, train_set, prompts, tcfg, {}, [&](const EpochLog& e) {
    log << json{{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}}.dump() << "\n" << std::flush;
    curve.push_back(e.loss);
    out << "epoch " << e.epoch << "/" << c.epochs << " loss " << fixed(e.loss, 5) << " lr " << e.lr << "\n";
  });

  json meta{{"dataset", info.name},
            {"fingerprint", mcfg.fingerprint()},
            {"params", model.params().numel()},
            {"prompt_params", model.params().numel(std::string(Encoder::kPromptPrefix))},
            {"lambda", c.lambda},
            {"base_lr", c.lr},
            {"warmup_factor", c.warmup_factor},
            {"warmup_steps", static_cast<std::size_t>(std::lround(c.warmup_fraction * result.steps))},
            {"total_steps", result.steps},
            {"initial_loss", initial},
            {"final_loss", result.epochs.back().loss},
            {"text_encoder_seed", enc.seed()},
            {"deviations", deviations(c)},
            {"config", json::parse(run_config_json(c))}};

  if (c.domain_source == "classifier") {
    DomainClassifier clf(c.classifier_config(info), train_domains(train_set, info));
    const double acc = train_domain_classifier(clf, train_set, load_split(data, "val", prec));
    save_params(dir / "classifier.ckpt", clf.params(), clf.fingerprint(),
                {{"val_accuracy", fixed(acc, 6)}});
    meta["classifier_val_accuracy"] = acc;
    meta["classifier_domains"] = clf.domains();
    out << "domain classifier val accuracy " << fixed(acc, 4) << "\n";
  }

  save_checkpoint(dir / "model.ckpt", model,
                  {{"epochs", std::to_string(c.epochs)},
                   {"steps", std::to_string(result.steps)},
                   {"final_loss", fixed(result.epochs.back().loss, 8)},
                   {"lambda", fixed(c.lambda, 6)}});
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  write_file(dir / "config.ini", run_config_ini(c));
  write_file(dir / "seed.txt", "seed = " + std::to_string(c.seed) + "\ninit_seed = " + std::to_string(c.init_seed) +
                                   "\ntext_encoder_seed = " + std::to_string(enc.seed()) +
                                   "\ndataset_seed = " + std::to_string(info.seed) + "\n");
  write_file(dir / "plots" / "loss.svg", svg_line_chart("training loss", "epoch", "loss", curve));
  out << "wrote " << dir.string() << "\n";
}

// -- eval -------------------------------------------------------------------

struct EvalFlags {
  std::string run;
  std::string data;
  std::string split = "test";
  std::string out;
  std::string predictions;
  std::string compare;
  double score_thresh = DecodeOptions{}.score_thresh;
  double nms_iou = DecodeOptions{}.nms_iou;
};

fs::path report_path(const fs::path& p, const std::string& split) {
  if (fs::is_regular_file(p)) return p;
  if (fs::exists(p / "report.jsonl")) return p / "report.jsonl";
  if (fs::exists(p / ("eval-" + split) / "report.jsonl")) return p / ("eval-" + split) / "report.jsonl";
  throw std::runtime_error("no report.jsonl under " + p.string() + "; run eval on it first");
}

std::vector<EvalRecord> records_from_predictions(std::istream& in, const std::vector<Sample>& data) {
  std::map<std::string, std::vector<Detection>> by_id;
  for (auto& r : read_predictions(in)) {
    if (!by_id.emplace(r.id, std::move(r.detections)).second) {
      throw std::invalid_argument("predictions repeat image id '" + r.id + "'");
    }
  }
  std::vector<EvalRecord> records;
  for (const auto& s : data) {
    EvalRecord r{s.entry.id, s.entry.domain, {}, s.entry.annotations};
    if (auto it = by_id.find(s.entry.id); it != by_id.end()) {
      r.detections = std::move(it->second);
      by_id.erase(it);
    }
    records.push_back(std::move(r));
  }
  if (!by_id.empty()) throw std::invalid_argument("predictions name unknown image id '" + by_id.begin()->first + "'");
  return records;
}

void cmd_eval(const EvalFlags& f, const std::vector<CLI::Option*>& overrides, const RunConfig& flagged,
              const DepthFlags& depth, std::istream& in, std::ostream& out) {
  if (f.run.empty() && f.predictions.empty()) throw std::invalid_argument("eval needs --run or --predictions");
  RunConfig c;
  if (!f.run.empty()) {
    c = run_config_from_json(json::parse(read_file(fs::path(f.run) / "meta.json")).at("config").dump());
    json base = json::parse(run_config_json(c));
    const json given = json::parse(run_config_json(flagged));
    for (const auto* o : overrides) {
      if (o->count() == 0) continue;
      std::string key = o->get_name(false, true);
      key.erase(0, key.find_first_not_of('-'));
      if (key == "spe" || key == "dpe") continue;
      base[key] = given.at(key);
    }
    c = run_config_from_json(base.dump());
    apply_depth(c, depth);
    c.validate();
  }
  const fs::path data = f.data.empty() ? fs::path(c.data) : fs::path(f.data);
  if (data.empty()) throw std::invalid_argument("eval needs --data");
  const fs::path dir = !f.out.empty() ? fs::path(f.out) : fs::path(f.run) / ("eval-" + f.split);
  if (f.out.empty() && f.run.empty()) throw std::invalid_argument("eval with --predictions needs --out or --run");

  const DatasetInfo info = load_dataset_info(data);
  const std::vector<Sample> samples = load_split(data, f.split, c.model_precision());
  if (samples.empty()) throw std::runtime_error("split " + f.split + " of " + data.string() + " is empty");

  std::vector<EvalRecord> records;
  if (!f.predictions.empty()) {
    if (f.predictions == "-") {
      records = records_from_predictions(in, samples);
    } else {
      std::ifstream pin(f.predictions);
      if (!pin) throw std::runtime_error("cannot open " + f.predictions);
      records = records_from_predictions(pin, samples);
    }
  } else {
    Model model(c.model_config(info));
    load_checkpoint(fs::path(f.run) / "model.ckpt", model);
    const FrozenTextEncoder enc(FrozenTextEncoder::kDefaultSeed, c.prompt_dim);
    const PromptTable prompts = build_prompts(enc, c.prompt_settings(data), info.domains, c.model_precision());
    std::unique_ptr<DomainClassifier> clf;
    if (c.domain_source == "classifier") {
      const json meta = json::parse(read_file(fs::path(f.run) / "meta.json"));
      if (!meta.contains("classifier_domains")) {
        throw std::runtime_error("run " + f.run + " was trained without a domain classifier");
      }
      clf = std::make_unique<DomainClassifier>(c.classifier_config(info),
                                               meta.at("classifier_domains").get<std::vector<std::string>>());
      load_params(fs::path(f.run) / "classifier.ckpt", clf->params(), clf->fingerprint());
    }
    records = run_detection(model, samples, prompts, {f.score_thresh, f.nms_iou}, clf.get());
  }

  const MapReport report = map_5095(records);
  fs::create_directories(dir / "plots");
  {
    std::ofstream r(dir / "report.jsonl", std::ios::binary);
    write_report_records(r, report, info.classes);
    std::ofstream p(dir / "predictions.jsonl", std::ios::binary);
    std::vector<PredictionRecord> preds;
    for (const auto& rec : records) preds.push_back({rec.id, rec.domain, rec.detections});
    write_predictions(p, preds);
  }
  std::ostringstream table;
  write_report_table(table, report, info.classes);

  const bool has_conflict = std::any_of(info.conflict.begin(), info.conflict.end(),
                                        [](const auto& kv) { return !kv.second.empty(); });
  if (has_conflict) {
    const ConflictStats st = conflict_accuracy(records, samples, info);
    const json cj{{"elements", st.elements}, {"localized", st.localized}, {"correct", st.correct},
                  {"accuracy", st.accuracy()}, {"coverage", st.coverage()}};
    write_file(dir / "conflict.json", cj.dump(2) + "\n");
    table << "conflict elements " << st.elements << ", localized " << st.localized << ", correct " << st.correct
          << ", accuracy " << fixed(st.accuracy(), 4) << "\n";
  }
  if (!f.compare.empty()) {
    std::ifstream other(report_path(f.compare, f.split));
    const MapReport base = read_report_records(other, info.classes);
    const DeltaTable delta = compare_runs(base, report, info.classes);
    std::ostringstream d;
    write_delta_table(d, delta, f.compare, f.run.empty() ? dir.string() : f.run);
    write_file(dir / "delta.txt", d.str());
    table << "\n" << d.str();
  }
  write_file(dir / "report.txt", table.str());

  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [cls, ap] : report.per_class_ap) bars.emplace_back(class_label(cls, info.classes), ap);
  write_file(dir / "plots" / "per_class_map.svg", svg_bar_chart("per-class AP@[.50:.95]", bars));
  out << table.str() << "wrote " << dir.string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-prompted document layout detection on synthetic pages", "domprompt"};
  app.set_config("--config", "", "INI file with [gen-data], [train] or [eval] sections");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  GenFlags gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset from a preset");
  g->add_option("--preset", gen.preset, "conflict, holdout, multilang or ablation-depth")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(kPresets.begin(), kPresets.end())));
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  auto* holdout = g->add_option("--holdout", gen.holdout, "Domain kept out of train/val (none to disable)");
  g->add_option("--image-size", gen.image_size, "Page size in pixels, a multiple of 64");

  RunConfig tc;
  DepthFlags td;
  auto* t = app.add_subcommand("train", "Train a detector and write a run directory");
  t->add_option("--data", tc.data, "Dataset directory")->required();
  t->add_option("--out", tc.out, "Run directory")->required();
  add_model_options(t, tc, td);
  t->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  t->add_option("--batch", tc.batch, "Images per step")->capture_default_str();
  t->add_option("--lr", tc.lr, "Peak learning rate")->capture_default_str();
  t->add_option("--warmup-factor", tc.warmup_factor, "Warmup start as a fraction of the peak")->capture_default_str();
  t->add_option("--warmup-fraction", tc.warmup_fraction, "Share of steps spent warming up")->capture_default_str();
  t->add_option("--weight-decay", tc.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  t->add_option("--lambda", tc.lambda, "Dense head classification weight")->capture_default_str();
  t->add_option("--grad-clip", tc.grad_clip, "Global gradient norm clip, 0 disables")->capture_default_str();
  t->add_option("--seed", tc.seed, "Data order seed")->capture_default_str();
  t->add_option("--classifier-epochs", tc.classifier_epochs, "Domain classifier epochs")->capture_default_str();

  EvalFlags ef;
  RunConfig ec;
  DepthFlags ed;
  auto* e = app.add_subcommand("eval", "Evaluate a run or a prediction file");
  e->add_option("--run", ef.run, "Run directory written by train");
  e->add_option("--data", ef.data, "Dataset directory (default: the run's)");
  e->add_option("--split", ef.split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  e->add_option("--out", ef.out, "Report directory (default: RUN/eval-SPLIT)");
  e->add_option("--predictions", ef.predictions, "Prediction JSONL to score instead of the model; - reads stdin");
  e->add_option("--compare", ef.compare, "Run, report directory or report.jsonl to diff against");
  e->add_option("--score-thresh", ef.score_thresh, "Decode score threshold")->capture_default_str();
  e->add_option("--nms-iou", ef.nms_iou, "NMS IoU threshold")->capture_default_str();
  const auto overrides = add_model_options(e, ec, ed);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }
  try {
    if (g->parsed()) {
      cmd_gen_data(gen, holdout->count() > 0, out);
    } else if (t->parsed()) {
      apply_depth(tc, td);
      cmd_train(tc, out);
    } else {
      cmd_eval(ef, overrides, ec, ed, in, out);
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace domprompt
