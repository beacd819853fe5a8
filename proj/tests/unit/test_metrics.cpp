#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "domprompt/metrics.hpp"
#include "domprompt/rng.hpp"
#include "json.hpp"

using namespace domprompt;

namespace {

Detection det(Box b, double score) { return {b, score, {}}; }

Box random_box(Rng& rng, int label) {
  const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
  return {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h, label};
}

// Noisy copies of the ground truth plus a few spurious boxes.
std::vector<EvalRecord> random_records(Rng& rng, std::size_t n, int classes) {
  const char* domains[] = {"paper", "manual", "patent"};
  std::vector<EvalRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    EvalRecord r{"img" + std::to_string(i), domains[i % 3], {}, {}};
    const std::size_t objs = 1 + rng.below(4);
    for (std::size_t o = 0; o < objs; ++o) {
      const Box g = random_box(rng, static_cast<int>(rng.below(classes)));
      r.gt.push_back(g);
      if (rng.uniform() < 0.8) {
        Box p = g;
        p.cx += rng.uniform(-0.03, 0.03);
        p.w *= rng.uniform(0.8, 1.2);
        if (rng.uniform() < 0.1) p.label = static_cast<int>(rng.below(classes));
        // Coarse scores make ties frequent.
        r.detections.push_back(det(p, std::round(rng.uniform() * 4) / 4));
      }
    }
    if (rng.uniform() < 0.5) {
      r.detections.push_back(det(random_box(rng, static_cast<int>(rng.below(classes))), rng.uniform()));
    }
    recs.push_back(r);
  }
  return recs;
}

}  // namespace

TEST_CASE("iou examples") {
  const Box a = Box::from_corners(0, 0, 2, 2), b = Box::from_corners(1, 1, 3, 3);
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box::from_corners(5, 5, 6, 6)) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("average precision examples") {
  const Box g0 = Box::from_corners(0.1, 0.1, 0.3, 0.3, 0);
  std::vector<EvalRecord> recs{{"a", "paper", {det(g0, 0.9)}, {g0}}};
  CHECK(*average_precision(recs, 0, 0.5) == doctest::Approx(1.0));

  recs[0].detections = {det(Box::from_corners(0.2, 0.2, 0.4, 0.4, 0), 0.9)};
  CHECK(*average_precision(recs, 0, 0.5) == 0.0);
  CHECK(!average_precision(recs, 1, 0.5).has_value());
  CHECK_THROWS(average_precision(recs, 0, 1.0));

  // Two gt; the top detection is right, the second misses. PR points are
  // (recall 0.5, precision 1) and (0.5, 0.5).
  const Box g1 = Box::from_corners(0.6, 0.6, 0.9, 0.9, 0);
  recs = {{"a", "paper",
           {det(g0, 0.9), det(Box::from_corners(0.0, 0.6, 0.1, 0.7, 0), 0.8)},
           {g0, g1}}};
  CHECK(*average_precision(recs, 0, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("map examples") {
  const Box g = Box::from_corners(0.0, 0.0, 0.5, 0.5, 0);
  const Box h = Box::from_corners(0.5, 0.5, 0.75, 1.0, 1);
  std::vector<EvalRecord> perfect{{"a", "paper", {det(g, 0.7), det(h, 0.6)}, {g, h}},
                                  {"b", "manual", {det(h, 0.5)}, {h}}};
  MapReport rep = map_5095(perfect);
  CHECK(rep.map == doctest::Approx(1.0));
  CHECK(rep.per_domain.size() == 2);
  CHECK(rep.per_domain.at("manual").map == doctest::Approx(1.0));
  CHECK(rep.per_domain.at("manual").per_class_ap.size() == 1);
  CHECK(rep.gt_count.at(1) == 2);

  // Overlap of exactly 0.6: height 0.3 inside a 0.5 square.
  const Box p = Box::from_corners(0.0, 0.0, 0.5, 0.3, 0);
  REQUIRE(iou(p, g) == doctest::Approx(0.6));
  rep = map_5095({{"a", "paper", {det(p, 0.9)}, {g}}});
  CHECK(rep.map == doctest::Approx(0.3));

  rep = map_5095({{"a", "paper", {}, {g, h}}});
  CHECK(rep.map == 0.0);
  CHECK(rep.per_class_ap.size() == 2);

  CHECK_THROWS(map_5095({}));
  CHECK_THROWS(map_5095({{"a", "paper", {}, {g}}, {"a", "manual", {}, {h}}}));
}

TEST_CASE("map report invariants") {
  Rng rng(41);
  for (int t = 0; t < 10; ++t) {
    auto recs = random_records(rng, 12, 4);
    const MapReport rep = map_5095(recs);
    double mean = 0;
    for (const auto& [c, ap] : rep.per_class_ap) {
      CHECK(ap >= 0.0);
      CHECK(ap <= 1.0);
      CHECK(rep.gt_count.at(c) > 0);
      mean += ap;
    }
    CHECK(rep.map == doctest::Approx(mean / static_cast<double>(rep.per_class_ap.size())));
    for (const auto& [d, sub] : rep.per_domain) {
      CHECK(sub.per_domain.empty());
      CHECK(sub.map >= 0.0);
      CHECK(sub.map <= 1.0);
    }

    // Record order does not matter.
    std::reverse(recs.begin(), recs.end());
    std::swap(recs[0], recs[5]);
    const MapReport shuffled = map_5095(recs);
    CHECK(shuffled.map == rep.map);
    CHECK(shuffled.per_class_ap == rep.per_class_ap);
  }
}

TEST_CASE("average precision is monotone and duplicates never help") {
  Rng rng(43);
  for (int t = 0; t < 20; ++t) {
    auto recs = random_records(rng, 10, 3);
    auto doubled = recs;
    for (auto& r : doubled) {
      const auto dets = r.detections;
      r.detections.insert(r.detections.end(), dets.begin(), dets.end());
    }
    for (int c = 0; c < 3; ++c) {
      double prev = 2.0;
      for (double thr : iou_thresholds()) {
        const auto ap = average_precision(recs, c, thr);
        if (!ap) continue;
        CHECK(*ap <= prev + 1e-12);
        prev = *ap;
        CHECK(*average_precision(doubled, c, thr) <= *ap + 1e-12);
      }
    }
  }
}

TEST_CASE("compare runs") {
  MapReport a;
  for (int c = 0; c < 5; ++c) a.per_class_ap[c] = 0.1 * (c + 1);
  a.map = 0.3;
  a.per_domain["paper"].map = 0.25;
  MapReport b = a;
  DeltaTable t = compare_runs(a, a);
  for (const auto& r : t.classes) CHECK(r.delta == 0.0);
  CHECK(t.overall.delta == 0.0);

  b.per_class_ap[2] += 0.1;
  b.map = 0.32;
  b.per_domain["paper"].map = 0.4;
  t = compare_runs(a, b, {"text", "title", "list", "table", "figure"});
  CHECK(t.overall.delta == doctest::Approx(0.02));
  REQUIRE(t.classes.size() == 5);
  CHECK(t.classes[2].key == "list");
  CHECK(t.classes[2].delta == doctest::Approx(0.1));
  CHECK(t.classes[0].delta == 0.0);
  REQUIRE(t.domains.size() == 1);
  CHECK(t.domains[0].delta == doctest::Approx(0.15));

  std::ostringstream out;
  write_delta_table(out, t, "joint", "prompted");
  CHECK(out.str().find("40.0 (+10.0)") != std::string::npos);
  CHECK(out.str().find("32.0 (+2.0)") != std::string::npos);

  MapReport c = a;
  c.per_class_ap.erase(4);
  CHECK_THROWS_AS(compare_runs(a, c), std::invalid_argument);
}

TEST_CASE("delta formatting") {
  CHECK(format_delta(0.023) == "(+2.3)");
  CHECK(format_delta(-0.0104) == "(-1.0)");
  CHECK(format_delta(0.0) == "(+0.0)");
  CHECK(format_delta(-0.0001) == "(+0.0)");
}

TEST_CASE("report writers") {
  const Box g = Box::from_corners(0.0, 0.0, 0.5, 0.5, 0);
  const MapReport rep = map_5095({{"a", "paper", {det(g, 0.9)}, {g}}, {"b", "manual", {}, {g}}});
  std::ostringstream rec;
  write_report_records(rec, rep, {"text"});
  std::istringstream lines(rec.str());
  std::string line;
  std::size_t n = 0;
  bool saw_mean = false;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("scope"));
    CHECK(j.contains("ap"));
    saw_mean |= j["class"] == "mAP" && j["scope"] == "all";
    ++n;
  }
  CHECK(n == 6);
  CHECK(saw_mean);

  std::ostringstream table;
  write_report_table(table, rep, {"text"});
  const std::string s = table.str();
  CHECK(s.find("class") == 0);
  CHECK(s.find("text") != std::string::npos);
  CHECK(s.find("100.0") != std::string::npos);
  CHECK(s.find("manual") < s.find("paper"));
}

TEST_CASE("report records read back to the same report") {
  MapReport r;
  r.per_class_ap = {{0, 0.25}, {2, 1.0 / 3.0}};
  r.gt_count = {{0, 4}, {2, 7}};
  r.map = (0.25 + 1.0 / 3.0) / 2.0;
  MapReport d;
  d.per_class_ap = {{0, 0.5}};
  d.gt_count = {{0, 2}};
  d.map = 0.5;
  r.per_domain["paper"] = d;
  const std::vector<std::string> names = {"text", "title", "figure"};
  for (const auto& labels : {names, std::vector<std::string>{}}) {
    std::stringstream s;
    write_report_records(s, r, labels);
    const auto back = read_report_records(s, labels);
    CHECK(back.per_class_ap == r.per_class_ap);
    CHECK(back.gt_count == r.gt_count);
    CHECK(back.map == r.map);
    REQUIRE(back.per_domain.count("paper") == 1);
    CHECK(back.per_domain.at("paper").per_class_ap == d.per_class_ap);
    CHECK(back.per_domain.at("paper").map == 0.5);
  }
  std::stringstream bad("{\"scope\": \"all\"}\n");
  CHECK_THROWS_AS(read_report_records(bad), std::invalid_argument);
}
