#include <fstream>
#include <set>

#include "domprompt/rng.hpp"
#include "domprompt/snapshot.hpp"
#include "domprompt/synthdoc.hpp"
#include "json.hpp"

namespace domprompt {

using nlohmann::json;

void DatasetPlan::validate() const {
  if (domains.empty()) throw std::invalid_argument("dataset '" + name + "' has no domains");
  if (sizes.train + sizes.val + sizes.test == 0) {
    throw std::invalid_argument("dataset '" + name + "' has no samples");
  }
  std::set<std::string> seen;
  for (const auto& d : domains) {
    d.spec.validate();
    if (!seen.insert(d.spec.name).second) throw std::invalid_argument("duplicate domain " + d.spec.name);
  }
  if (!holdout.empty()) {
    if (!seen.count(holdout)) throw std::invalid_argument("holdout domain '" + holdout + "' is not in the plan");
    if (domains.size() < 2) throw std::invalid_argument("holdout needs at least two domains");
  }
}

namespace {

using Mix = std::array<double, kNumKinds>;

DomainPlan domain(std::string name, std::vector<double> columns, Mix mix, std::string texture,
                  LabelingStyle style, std::string description) {
  DomainPlan p;
  p.spec.name = std::move(name);
  p.spec.columns = std::move(columns);
  p.spec.mix = mix;
  p.spec.texture = texture_preset(texture);
  p.style = style;
  p.description = std::move(description);
  return p;
}

constexpr std::string_view kMergedLists = "each list is annotated as one merged block.";
constexpr std::string_view kItemLists = "every list item is annotated as its own separate box.";

DatasetPlan conflict_plan() {
  //                text  title  fig   table list  cap   foot  head  foot
  const Mix mix = {0.30, 0.15, 0.15, 0.10, 0.10, 0.20, 0.0, 0.0, 0.0};
  DatasetPlan plan;
  plan.name = "conflict";
  plan.domains = {
      domain("paper", {0.5, 0.5}, mix, "latin", LabelingStyle::per_item,
             "journal articles where captions are annotated as plain text."),
      domain("report", {0.5, 0.5}, mix, "latin", LabelingStyle::per_item,
             "business reports where captions are annotated as captions."),
  };
  plan.domains[0].spec.conflict_class = "caption";
  plan.domains[0].spec.conflict_label = "text";
  plan.domains[1].spec.conflict_class = "caption";
  plan.domains[1].spec.conflict_label = "caption";
  plan.sizes = {768, 64, 128};
  return plan;
}

std::vector<DomainPlan> six_domains() {
  using S = LabelingStyle;
  return {
      domain("patent", {1.0}, {0.45, 0.1, 0.2, 0.0, 0.1, 0.0, 0.05, 0.05, 0.05}, "latin", S::merged,
             std::string("single column latin pages with long text and figures. ") + std::string(kMergedLists)),
      domain("manual", {0.7, 0.3}, {0.2, 0.15, 0.2, 0.05, 0.3, 0.05, 0.0, 0.05, 0.0}, "latin", S::per_item,
             std::string("single column latin pages with many lists and figures. ") + std::string(kItemLists)),
      domain("report", {0.3, 0.7}, {0.3, 0.15, 0.1, 0.2, 0.1, 0.05, 0.05, 0.0, 0.05}, "cyrillic", S::merged,
             std::string("two column cyrillic pages with text and tables. ") + std::string(kMergedLists)),
      domain("paper", {0.2, 0.8}, {0.4, 0.1, 0.15, 0.1, 0.1, 0.1, 0.05, 0.0, 0.0}, "latin", S::per_item,
             std::string("two column latin pages with text figures and captions. ") + std::string(kItemLists)),
      domain("textbook", {0.8, 0.2}, {0.35, 0.2, 0.1, 0.05, 0.2, 0.05, 0.0, 0.05, 0.0}, "devanagari", S::per_item,
             std::string("single column devanagari pages with titles and lists. ") + std::string(kItemLists)),
      domain("magazine", {0.2, 0.3, 0.5}, {0.35, 0.2, 0.25, 0.0, 0.1, 0.1, 0.0, 0.0, 0.0}, "arabic", S::merged,
             std::string("three column arabic pages with figures and titles. ") + std::string(kMergedLists)),
  };
}

// Columns x script x labeling style, with the dominant content cycling, so
// every attribute of the held-out domain also occurs in training domains.
std::vector<DomainPlan> factorial_domains() {
  struct Content {
    const char* words;
    Mix mix;
  };
  //                                             text  title fig   table list  cap   foot  head  foot
  const Content contents[] = {{"many lists and figures", {0.20, 0.15, 0.20, 0.05, 0.30, 0.05, 0.0, 0.05, 0.0}},
                              {"long text and tables", {0.40, 0.10, 0.05, 0.25, 0.10, 0.05, 0.05, 0.0, 0.0}},
                              {"figures and titles", {0.30, 0.25, 0.25, 0.0, 0.10, 0.10, 0.0, 0.0, 0.0}}};
  const char* names[] = {"manual",   "patent",  "report",     "paper",   "textbook", "magazine",
                         "brochure", "thesis",  "newsletter", "catalog", "handbook", "bulletin"};
  std::vector<DomainPlan> out;
  std::size_t i = 0;
  for (const bool single : {true, false}) {
    for (const char* script : {"latin", "cyrillic", "devanagari"}) {
      for (const LabelingStyle style : {LabelingStyle::per_item, LabelingStyle::merged}) {
        const Content& c = contents[i % 3];
        std::string text = std::string(single ? "single" : "two") + " column " + script + " pages with " + c.words +
                           ". " + std::string(style == LabelingStyle::merged ? kMergedLists : kItemLists);
        out.push_back(domain(names[i], single ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.2, 0.8},
                             c.mix, script, style, std::move(text)));
        ++i;
      }
    }
  }
  return out;
}

DatasetPlan holdout_plan() {
  DatasetPlan plan;
  plan.name = "holdout";
  plan.domains = factorial_domains();
  plan.holdout = "manual";
  plan.sizes = {480, 48, 192};
  return plan;
}

DatasetPlan multilang_plan() {
  DatasetPlan plan;
  plan.name = "multilang";
  const Mix mix = {0.4, 0.15, 0.15, 0.1, 0.1, 0.1, 0.0, 0.0, 0.0};
  for (const Texture& t : texture_presets()) {
    plan.domains.push_back(domain(t.name, {0.5, 0.5}, mix, t.name, LabelingStyle::per_item,
                                  "pages printed in the " + t.name + " script."));
  }
  plan.sizes = {210, 35, 70};
  return plan;
}

DatasetPlan ablation_plan() {
  DatasetPlan plan;
  plan.name = "ablation-depth";
  for (auto& d : six_domains()) {
    if (d.spec.name == "paper" || d.spec.name == "report" || d.spec.name == "manual") {
      plan.domains.push_back(std::move(d));
    }
  }
  plan.sizes = {48, 12, 24};
  return plan;
}

}  // namespace

DatasetPlan preset_plan(std::string_view preset, std::uint64_t seed) {
  DatasetPlan plan;
  if (preset == "conflict") {
    plan = conflict_plan();
  } else if (preset == "holdout") {
    plan = holdout_plan();
  } else if (preset == "multilang") {
    plan = multilang_plan();
  } else if (preset == "ablation-depth") {
    plan = ablation_plan();
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(preset) + "'");
  }
  plan.seed = seed;
  return plan;
}

// -- manifest ---------------------------------------------------------------

namespace {

json box_row(const Box& b) { return json::array({b.label, b.cx, b.cy, b.w, b.h}); }

Box row_box(const json& r) {
  if (!r.is_array() || r.size() != 5) throw std::invalid_argument("box rows need 5 fields");
  return Box{r[1].get<double>(), r[2].get<double>(), r[3].get<double>(), r[4].get<double>(), r[0].get<int>()};
}

}  // namespace

std::string manifest_line(const ManifestEntry& e) {
  json ann = json::array(), groups = json::array();
  for (const Box& b : e.annotations) ann.push_back(box_row(b));
  for (const ElementGroup& g : e.groups) {
    json items = json::array();
    for (const Box& b : g.items) items.push_back(box_row(b));
    groups.push_back({{"kind", kElementKinds[static_cast<std::size_t>(g.kind)]},
                      {"box", box_row(g.extent)},
                      {"items", items},
                      {"seed", g.seed}});
  }
  return json{{"id", e.id},         {"domain", e.domain}, {"style", style_name(e.style)},
              {"seed", e.seed},     {"raster", e.raster}, {"annotations", ann},
              {"groups", groups}}
      .dump();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  const json j = json::parse(line);
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.domain = j.at("domain").get<std::string>();
  e.style = parse_style(j.at("style").get<std::string>());
  e.seed = j.at("seed").get<std::uint64_t>();
  e.raster = j.at("raster").get<std::string>();
  for (const auto& r : j.at("annotations")) e.annotations.push_back(row_box(r));
  if (j.contains("groups")) {
    for (const auto& g : j.at("groups")) {
      ElementGroup eg;
      eg.kind = kind_index(g.at("kind").get<std::string>());
      eg.extent = row_box(g.at("box"));
      eg.label = eg.extent.label;
      for (const auto& r : g.at("items")) eg.items.push_back(row_box(r));
      eg.seed = g.at("seed").get<std::uint64_t>();
      e.groups.push_back(std::move(eg));
    }
  }
  return e;
}

void build_dataset(const DatasetPlan& plan, const std::filesystem::path& dir) {
  plan.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "rasters");

  std::vector<const DomainPlan*> seen, held;
  for (const auto& d : plan.domains) (d.spec.name == plan.holdout ? held : seen).push_back(&d);

  const std::pair<std::string_view, std::size_t> splits[] = {
      {"train", plan.sizes.train}, {"val", plan.sizes.val}, {"test", plan.sizes.test}};
  for (const auto& [split, count] : splits) {
    const auto& pool = (split == "test" && !held.empty()) ? held : seen;
    std::ofstream out(dir / (std::string(split) + ".jsonl"));
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    const std::uint64_t split_seed = mix_seed(plan.seed, fnv1a(split));
    for (std::size_t i = 0; i < count; ++i) {
      const DomainPlan& d = *pool[i % pool.size()];
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", std::string(split).c_str(), i);
      const std::uint64_t seed = mix_seed(split_seed, i);
      DocumentSample doc = generate_document(d.spec, d.style, seed, plan.image_size);
      ManifestEntry e{id, d.spec.name, d.style, seed, "rasters/" + std::string(id) + ".snap",
                      doc.annotations, doc.groups};
      save_snapshot(dir / e.raster, doc.image);
      out << manifest_line(e) << '\n';
    }
  }

  FixtureCorpus fixtures;
  for (const auto& d : plan.domains) fixtures[d.spec.name] = d.description;
  save_fixtures(dir / "fixtures.tsv", fixtures);
  save_templates(dir / "templates.txt", default_templates());

  json domains = json::array();
  for (const auto& d : plan.domains) {
    domains.push_back({{"name", d.spec.name},
                       {"style", style_name(d.style)},
                       {"texture", d.spec.texture.name},
                       {"conflict_class", d.spec.conflict_class},
                       {"conflict_label", d.spec.conflict_label}});
  }
  const json info{{"name", plan.name},
                  {"seed", plan.seed},
                  {"image_size", plan.image_size},
                  {"holdout", plan.holdout},
                  {"classes", class_names()},
                  {"domains", domains},
                  {"sizes", {plan.sizes.train, plan.sizes.val, plan.sizes.test}}};
  std::ofstream(dir / "dataset.json") << info.dump(2) << '\n';
}

DatasetInfo load_dataset_info(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw std::runtime_error("no dataset.json in " + dir.string());
  const json j = json::parse(in);
  DatasetInfo info;
  info.name = j.at("name").get<std::string>();
  info.seed = j.at("seed").get<std::uint64_t>();
  info.image_size = j.at("image_size").get<std::size_t>();
  info.holdout = j.at("holdout").get<std::string>();
  info.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& d : j.at("domains")) {
    const auto name = d.at("name").get<std::string>();
    info.domains.push_back(name);
    info.styles[name] = parse_style(d.at("style").get<std::string>());
    const auto conflict = d.at("conflict_class").get<std::string>();
    if (!conflict.empty()) info.conflict[name] = conflict;
  }
  return info;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& dir, std::string_view split) {
  const auto path = dir / (std::string(split) + ".jsonl");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Tensor load_raster(const std::filesystem::path& dir, const ManifestEntry& entry) {
  return load_snapshot(dir / entry.raster);
}

}  // namespace domprompt
