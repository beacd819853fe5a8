#include "domprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace domprompt {

std::vector<double> iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

namespace {
// Lets an overlap that equals a threshold in exact arithmetic pass it.
constexpr double kIouSlack = 1e-9;
}  // namespace

std::optional<double> average_precision(const std::vector<EvalRecord>& records, int cls,
                                        double iou_thresh) {
  if (!(iou_thresh > 0 && iou_thresh < 1)) {
    throw std::invalid_argument("average_precision: threshold must lie in (0, 1)");
  }
  struct Ranked {
    double score;
    const std::string* id;
    std::size_t det, rec;
  };
  std::size_t n_gt = 0;
  std::vector<Ranked> ranked;
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (const Box& g : records[r].gt) n_gt += g.label == cls;
    for (std::size_t d = 0; d < records[r].detections.size(); ++d) {
      const Detection& det = records[r].detections[d];
      if (det.box.label == cls) ranked.push_back({det.score, &records[r].id, d, r});
    }
  }
  if (n_gt == 0) return std::nullopt;
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (*a.id != *b.id) return *a.id < *b.id;
    return a.det < b.det;
  });

  std::vector<std::vector<char>> taken(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) taken[r].assign(records[r].gt.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const EvalRecord& rec = records[ranked[i].rec];
    const Box& box = rec.detections[ranked[i].det].box;
    double best = 0.0;
    std::ptrdiff_t match = -1;
    for (std::size_t g = 0; g < rec.gt.size(); ++g) {
      if (rec.gt[g].label != cls || taken[ranked[i].rec][g]) continue;
      const double o = iou(box, rec.gt[g]);
      if (o + kIouSlack >= iou_thresh && (match < 0 || o > best)) {
        best = o;
        match = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (match >= 0) {
      taken[ranked[i].rec][static_cast<std::size_t>(match)] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  // Precision envelope from the right.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double area = 0.0;
  std::size_t j = 0;
  for (int step = 1; step <= 100; ++step) {
    const double r = step / 100.0;
    while (j < recall.size() && recall[j] < r - 1e-12) ++j;
    if (j == recall.size()) break;
    area += precision[j];
  }
  return area / 100.0;
}

namespace {

MapReport score(const std::vector<EvalRecord>& records) {
  MapReport rep;
  std::set<int> classes;
  for (const auto& r : records) {
    for (const Box& g : r.gt) {
      classes.insert(g.label);
      ++rep.gt_count[g.label];
    }
  }
  const auto thresholds = iou_thresholds();
  for (int c : classes) {
    double total = 0.0;
    for (double t : thresholds) total += *average_precision(records, c, t);
    rep.per_class_ap[c] = total / static_cast<double>(thresholds.size());
  }
  for (const auto& [c, ap] : rep.per_class_ap) rep.map += ap;
  if (!rep.per_class_ap.empty()) rep.map /= static_cast<double>(rep.per_class_ap.size());
  return rep;
}

}  // namespace

MapReport map_5095(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("map_5095: no records");
  std::set<std::string> ids;
  std::map<std::string, std::vector<EvalRecord>> by_domain;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw std::invalid_argument("map_5095: repeated image id " + r.id);
    by_domain[r.domain].push_back(r);
  }
  MapReport rep = score(records);
  for (const auto& [domain, subset] : by_domain) rep.per_domain[domain] = score(subset);
  return rep;
}

std::string class_label(int cls, const std::vector<std::string>& class_names) {
  if (cls >= 0 && static_cast<std::size_t>(cls) < class_names.size()) {
    return class_names[static_cast<std::size_t>(cls)];
  }
  return std::to_string(cls);
}

DeltaTable compare_runs(const MapReport& a, const MapReport& b,
                        const std::vector<std::string>& class_names) {
  std::set<int> ca, cb;
  for (const auto& [c, v] : a.per_class_ap) ca.insert(c);
  for (const auto& [c, v] : b.per_class_ap) cb.insert(c);
  if (ca != cb) throw std::invalid_argument("compare_runs: reports cover different classes");
  DeltaTable t;
  for (const auto& [c, va] : a.per_class_ap) {
    const double vb = b.per_class_ap.at(c);
    t.classes.push_back({class_label(c, class_names), va, vb, vb - va});
  }
  for (const auto& [d, ra] : a.per_domain) {
    auto it = b.per_domain.find(d);
    if (it != b.per_domain.end()) t.domains.push_back({d, ra.map, it->second.map, it->second.map - ra.map});
  }
  t.overall = {"mAP", a.map, b.map, b.map - a.map};
  return t;
}

std::string format_delta(double delta) {
  double pts = std::round(delta * 1000.0) / 10.0;
  if (pts == 0.0) pts = 0.0;  // drop the sign of negative zero
  char buf[32];
  std::snprintf(buf, sizeof buf, "(%+.1f)", pts);
  return buf;
}

void write_report_records(std::ostream& out, const MapReport& report,
                          const std::vector<std::string>& class_names) {
  auto emit = [&](const std::string& scope, const MapReport& r) {
    for (const auto& [c, ap] : r.per_class_ap) {
      out << nlohmann::json{{"scope", scope},
                            {"class", class_label(c, class_names)},
                            {"ap", ap},
                            {"gt", r.gt_count.at(c)}}
                 .dump()
          << '\n';
    }
    out << nlohmann::json{{"scope", scope}, {"class", "mAP"}, {"ap", r.map}}.dump() << '\n';
  };
  emit("all", report);
  for (const auto& [d, r] : report.per_domain) emit(d, r);
}

MapReport read_report_records(std::istream& in, const std::vector<std::string>& class_names) {
  MapReport all;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto scope = j.at("scope").get<std::string>();
      const auto cls = j.at("class").get<std::string>();
      MapReport& r = scope == "all" ? all : all.per_domain[scope];
      const double ap = j.at("ap").get<double>();
      if (cls == "mAP") {
        r.map = ap;
        continue;
      }
      const auto it = std::find(class_names.begin(), class_names.end(), cls);
      const int c = it != class_names.end() ? static_cast<int>(it - class_names.begin()) : std::stoi(cls);
      r.per_class_ap[c] = ap;
      r.gt_count[c] = j.at("gt").get<std::size_t>();
    } catch (const std::exception& e) {
      throw std::invalid_argument("report line " + std::to_string(n) + ": " + e.what());
    }
  }
  return all;
}

namespace {

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v * 100.0;
  return s.str();
}

void write_rows(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) {
        line += row[i] + std::string(width[i] - row[i].size(), ' ');
      } else {
        line += "  " + std::string(width[i] - row[i].size(), ' ') + row[i];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
}

}  // namespace

void write_report_table(std::ostream& out, const MapReport& report,
                        const std::vector<std::string>& class_names) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"class", "all"};
  for (const auto& [d, r] : report.per_domain) head.push_back(d);
  rows.push_back(head);
  for (const auto& [c, ap] : report.per_class_ap) {
    std::vector<std::string> row{class_label(c, class_names), pct(ap)};
    for (const auto& [d, r] : report.per_domain) {
      auto it = r.per_class_ap.find(c);
      row.push_back(it == r.per_class_ap.end() ? "-" : pct(it->second));
    }
    rows.push_back(row);
  }
  std::vector<std::string> last{"mAP", pct(report.map)};
  for (const auto& [d, r] : report.per_domain) last.push_back(pct(r.map));
  rows.push_back(last);
  write_rows(out, rows);
}

void write_delta_table(std::ostream& out, const DeltaTable& table, const std::string& label_a,
                       const std::string& label_b) {
  std::vector<std::vector<std::string>> rows{{"", label_a, label_b}};
  auto add = [&](const DeltaRow& r) {
    rows.push_back({r.key, pct(r.a), pct(r.b) + " " + format_delta(r.delta)});
  };
  for (const auto& r : table.classes) add(r);
  for (const auto& r : table.domains) add(DeltaRow{"domain " + r.key, r.a, r.b, r.delta});
  add(table.overall);
  write_rows(out, rows);
}

}  // namespace domprompt
