#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "domprompt/synthdoc.hpp"

using namespace domprompt;
namespace fs = std::filesystem;

namespace {

std::vector<float> pixels(const Tensor& t) {
  auto d = t.data<float>();
  return {d.begin(), d.end()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("domprompt_test_" + name);
  fs::remove_all(p);
  return p;
}

DomainSpec basic_spec() {
  DomainSpec s;
  s.name = "basic";
  s.mix = {0.3, 0.1, 0.15, 0.1, 0.15, 0.1, 0.05, 0.025, 0.025};
  return s;
}

// Crop of the element's extent from a 64 px page.
std::vector<float> crop(const std::vector<float>& px, const Box& b) {
  const auto c = b.corners();
  std::vector<float> out;
  for (int y = static_cast<int>(std::lround(c[1] * 64)); y < std::lround(c[3] * 64); ++y)
    for (int x = static_cast<int>(std::lround(c[0] * 64)); x < std::lround(c[2] * 64); ++x)
      out.push_back(px[static_cast<std::size_t>(y * 64 + x)]);
  return out;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const DomainSpec spec = basic_spec();
  for (std::uint64_t seed : {1u, 2u, 77u}) {
    const auto a = generate_document(spec, LabelingStyle::per_item, seed);
    const auto b = generate_document(spec, LabelingStyle::per_item, seed);
    const auto pa = pixels(a.image), pb = pixels(b.image);
    CHECK(std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(float)) == 0);
    CHECK(a.annotations == b.annotations);
    CHECK(a.image.shape() == Shape{1, 64, 64});
  }
  const auto a = generate_document(spec, LabelingStyle::per_item, 1);
  const auto c = generate_document(spec, LabelingStyle::per_item, 2);
  CHECK(pixels(a.image) != pixels(c.image));
}

TEST_CASE("single-kind mix labels everything with that kind") {
  DomainSpec spec = basic_spec();
  spec.mix.fill(0.0);
  spec.mix[static_cast<std::size_t>(kind_index("figure"))] = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto doc = generate_document(spec, LabelingStyle::per_item, seed);
    CHECK(!doc.annotations.empty());
    for (const Box& b : doc.annotations) CHECK(b.label == kind_index("figure"));
  }
}

TEST_CASE("element frequencies follow the mix") {
  const DomainSpec spec = basic_spec();
  std::array<double, kNumKinds> count{};
  double total = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    for (const auto& g : generate_document(spec, LabelingStyle::merged, seed).groups) {
      count[static_cast<std::size_t>(g.kind)] += 1;
      total += 1;
    }
  }
  for (std::size_t k = 0; k < kNumKinds; ++k) {
    INFO(kElementKinds[k]);
    CHECK(std::abs(count[k] / total - spec.mix[k]) <= 0.05);
  }
}

TEST_CASE("generated boxes are valid and siblings do not overlap") {
  for (const auto& preset : kPresets) {
    const DatasetPlan plan = preset_plan(preset, 1);
    for (const auto& d : plan.domains) {
      for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto doc = generate_document(d.spec, d.style, seed);
        for (const Box& b : doc.annotations) {
          CHECK(b.valid());
          CHECK(b.w >= kBoxEps);
        }
        for (std::size_t i = 0; i < doc.groups.size(); ++i) {
          for (std::size_t j = i + 1; j < doc.groups.size(); ++j) {
            CHECK(iou(doc.groups[i].extent, doc.groups[j].extent) == 0.0);
          }
        }
        const auto px = doc.image.data<float>();
        CHECK(*std::min_element(px.begin(), px.end()) >= 0.0f);
        CHECK(*std::max_element(px.begin(), px.end()) <= 1.0f);
      }
    }
  }
}

TEST_CASE("spec validation") {
  DomainSpec s = basic_spec();
  s.mix[0] += 0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec();
  s.conflict_class = "sidebar";
  CHECK_THROWS(s.validate());
  s = basic_spec();
  s.columns = {0.5, 0.6};
  CHECK_THROWS(s.validate());
  s = basic_spec();
  s.max_per_column = 5;
  CHECK_THROWS(s.validate());
  CHECK_THROWS(generate_document(basic_spec(), LabelingStyle::merged, 1, 48));
  CHECK(generate_document(basic_spec(), LabelingStyle::merged, 1, 128).image.shape() == Shape{1, 128, 128});
}

TEST_CASE("restyle examples") {
  ElementGroup list;
  list.kind = kind_index("list");
  list.label = list.kind;
  list.items = {Box::from_corners(0.2, 0.1, 0.6, 0.2, 4), Box::from_corners(0.2, 0.2, 0.6, 0.3, 4),
                Box::from_corners(0.2, 0.3, 0.6, 0.4, 4)};
  list.extent = enclosing(list.items);
  DocumentSample s;
  s.image = Tensor::zeros({1, 64, 64});
  s.groups = {list};
  s.annotations = annotations_for(s.groups, LabelingStyle::per_item);
  const auto merged = restyle(s, LabelingStyle::merged);
  REQUIRE(merged.annotations.size() == 1);
  const auto c = merged.annotations[0].corners();
  CHECK(c[1] == doctest::Approx(0.1));
  CHECK(c[3] == doctest::Approx(0.4));
  CHECK(merged.image.id() == s.image.id());
  CHECK(restyle(merged, LabelingStyle::per_item).annotations == s.annotations);

  DocumentSample bare = s;
  bare.groups.clear();
  CHECK_THROWS_AS(restyle(bare, LabelingStyle::merged), std::invalid_argument);
}

TEST_CASE("restyle round trips and preserves covered area") {
  const DomainSpec spec = basic_spec();
  std::size_t with_lists = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto doc = generate_document(spec, LabelingStyle::per_item, seed);
    const auto merged = restyle(doc, LabelingStyle::merged);
    CHECK(restyle(merged, LabelingStyle::per_item).annotations == doc.annotations);
    const bool has_list = std::any_of(doc.groups.begin(), doc.groups.end(),
                                      [](const ElementGroup& g) { return !g.items.empty(); });
    with_lists += has_list;
    if (!has_list) CHECK(merged.annotations == doc.annotations);
    for (const auto& g : doc.groups) {
      if (g.items.empty()) continue;
      double items = 0;
      for (const Box& b : g.items) items += b.area();
      CHECK(items == enclosing(g.items).area());
      CHECK(enclosing(g.items) == g.extent);
    }
  }
  CHECK(with_lists > 10);
}

TEST_CASE("label mapping") {
  const auto fine = fine_scheme(), coarse = coarse_scheme();
  const auto id = [](const std::vector<std::string>& s, const std::string& n) {
    return static_cast<int>(std::find(s.begin(), s.end(), n) - s.begin());
  };
  const std::vector<Box> boxes{Box{0.5, 0.5, 0.2, 0.1, id(fine, "caption")},
                               Box{0.3, 0.2, 0.4, 0.1, id(fine, "section-header")},
                               Box{0.5, 0.9, 0.3, 0.05, id(fine, "page-footer")}};
  const auto mapped = map_labels(boxes, fine, fine_to_coarse_mapping(), coarse);
  CHECK(mapped[0].label == id(coarse, "text"));
  CHECK(mapped[1].label == id(coarse, "title"));
  CHECK(mapped[2].label == id(coarse, "page-footer"));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(mapped[i].cx == boxes[i].cx);
    CHECK(mapped[i].w == boxes[i].w);
  }
  LabelMapping partial = fine_to_coarse_mapping();
  partial.erase("footnote");
  CHECK_THROWS_AS(map_labels({Box{0.5, 0.5, 0.1, 0.1, id(fine, "footnote")}}, fine, partial, coarse),
                  std::invalid_argument);
  CHECK_THROWS(map_labels({Box{0.5, 0.5, 0.1, 0.1, 99}}, fine, partial, coarse));
}

TEST_CASE("conflict element pixels are shared, labels are not") {
  const DatasetPlan plan = preset_plan("conflict", 7);
  REQUIRE(plan.domains.size() == 2);
  const DomainSpec& a = plan.domains[0].spec;
  const DomainSpec& b = plan.domains[1].spec;
  CHECK(a.conflict_class == b.conflict_class);
  CHECK(a.label_of(kind_index("caption")) != b.label_of(kind_index("caption")));
  std::size_t conflicts = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto da = generate_document(a, LabelingStyle::per_item, seed);
    const auto db = generate_document(b, LabelingStyle::per_item, seed);
    CHECK(pixels(da.image) == pixels(db.image));
    REQUIRE(da.groups.size() == db.groups.size());
    for (std::size_t i = 0; i < da.groups.size(); ++i) {
      if (da.groups[i].kind == kind_index("caption")) {
        ++conflicts;
        CHECK(da.groups[i].label == kind_index("text"));
        CHECK(db.groups[i].label == kind_index("caption"));
      } else {
        CHECK(da.groups[i].label == db.groups[i].label);
      }
    }
  }
  CHECK(conflicts > 5);

  // Even when the domains' own textures differ, the conflict element is
  // drawn the same way.
  DomainSpec x = basic_spec(), y = basic_spec();
  x.conflict_class = y.conflict_class = "list";
  x.conflict_label = "text";
  y.texture = texture_preset("hangul");
  std::size_t lists = 0, differing_text = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto dx = generate_document(x, LabelingStyle::merged, seed);
    const auto dy = generate_document(y, LabelingStyle::merged, seed);
    const auto px = pixels(dx.image), py = pixels(dy.image);
    for (std::size_t i = 0; i < dx.groups.size(); ++i) {
      const auto& g = dx.groups[i];
      if (g.kind == kind_index("list")) {
        ++lists;
        CHECK(crop(px, g.extent) == crop(py, g.extent));
        CHECK(g.label != dy.groups[i].label);
      }
      if (g.kind == kind_index("text")) differing_text += crop(px, g.extent) != crop(py, g.extent);
    }
  }
  CHECK(lists > 5);
  CHECK(differing_text > 5);
}

TEST_CASE("dataset build counts, holdout and determinism") {
  DatasetPlan plan = preset_plan("holdout", 3);
  plan.sizes = {200, 50, 50};
  const fs::path d1 = scratch("build1"), d2 = scratch("build2");
  build_dataset(plan, d1);
  build_dataset(plan, d2);
  const auto train = load_manifest(d1, "train"), val = load_manifest(d1, "val"),
             test = load_manifest(d1, "test");
  CHECK(train.size() == 200);
  CHECK(val.size() == 50);
  CHECK(test.size() == 50);
  for (const auto& e : train) CHECK(e.domain != "manual");
  for (const auto& e : val) CHECK(e.domain != "manual");
  for (const auto& e : test) CHECK(e.domain == "manual");
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "dataset.json", "fixtures.tsv"}) {
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  CHECK(slurp(d1 / train[17].raster) == slurp(d2 / train[17].raster));

  // Round-robin domains and the raster matches a fresh generation.
  CHECK(train[0].domain != train[1].domain);
  const auto info = load_dataset_info(d1);
  CHECK(info.holdout == "manual");
  CHECK(info.domains.size() == 12);
  CHECK(info.classes.size() == kNumKinds);
  CHECK(load_fixtures(d1 / "fixtures.tsv").at("manual").find("separate box") != std::string::npos);
  const auto& spec = *std::find_if(plan.domains.begin(), plan.domains.end(),
                                   [&](const DomainPlan& p) { return p.spec.name == train[3].domain; });
  const auto doc = generate_document(spec.spec, spec.style, train[3].seed);
  CHECK(pixels(load_raster(d1, train[3])) == pixels(doc.image));
  CHECK(train[3].annotations == doc.annotations);
  CHECK(train[3].style == spec.style);

  DatasetPlan bad = plan;
  bad.holdout = "atlas";
  CHECK_THROWS_AS(build_dataset(bad, scratch("bad")), std::invalid_argument);
  CHECK_THROWS(preset_plan("nope", 1));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("holdout description uses only training vocabulary") {
  const DatasetPlan plan = preset_plan("holdout", 1);
  std::set<std::string> seen;
  std::string held;
  for (const auto& d : plan.domains) {
    if (d.spec.name == plan.holdout) {
      held = d.description;
      continue;
    }
    for (const auto& w : tokenize(d.description)) seen.insert(w);
  }
  REQUIRE_FALSE(held.empty());
  for (const auto& w : tokenize(held)) CHECK_MESSAGE(seen.count(w) == 1, w);
  std::set<std::string> descriptions;
  for (const auto& d : plan.domains) descriptions.insert(d.description);
  CHECK(descriptions.size() == plan.domains.size());
}

TEST_CASE("manifest lines round trip") {
  const auto doc = generate_document(basic_spec(), LabelingStyle::per_item, 12);
  ManifestEntry e{"train-00001", "basic", LabelingStyle::per_item, 12, "rasters/x.snap", doc.annotations, doc.groups};
  const auto back = parse_manifest_line(manifest_line(e));
  CHECK(back.id == e.id);
  CHECK(back.seed == 12);
  CHECK(back.annotations == e.annotations);
  REQUIRE(back.groups.size() == e.groups.size());
  for (std::size_t i = 0; i < e.groups.size(); ++i) {
    CHECK(back.groups[i].extent == e.groups[i].extent);
    CHECK(back.groups[i].items == e.groups[i].items);
    CHECK(back.groups[i].seed == e.groups[i].seed);
  }
  CHECK_THROWS(parse_manifest_line("{\"id\": 1}"));
}

TEST_CASE("presets") {
  for (const auto& name : kPresets) {
    const auto plan = preset_plan(name, 5);
    CHECK_NOTHROW(plan.validate());
    CHECK(plan.seed == 5);
  }
  CHECK(preset_plan("multilang", 0).domains.size() == 7);
  CHECK(preset_plan("holdout", 0).holdout == "manual");
  CHECK(texture_presets().size() == 7);
}
