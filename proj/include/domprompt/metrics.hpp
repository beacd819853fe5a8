#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "domprompt/box.hpp"
#include "domprompt/heads.hpp"

// Box-level evaluation: per-class AP over IoU thresholds, mAP@[.50:.95],
// per-domain breakdowns and run-to-run delta tables.

namespace domprompt {

/// One evaluated image.
struct EvalRecord {
  std::string id;
  std::string domain;
  std::vector<Detection> detections;
  std::vector<Box> gt;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> iou_thresholds();

/// AP of `cls` at one IoU threshold: detections ranked by score (ties by
/// image id, then detection index), greedily matched one-to-one to the
/// best-overlapping unmatched ground truth, and precision interpolated at
/// recall 0.01, 0.02, ..., 1.00. Empty when no ground truth has the class.
std::optional<double> average_precision(const std::vector<EvalRecord>& records, int cls,
                                        double iou_thresh);

struct MapReport {
  std::map<int, double> per_class_ap;  // classes present in the ground truth only
  std::map<int, std::size_t> gt_count;
  double map = 0.0;
  std::map<std::string, MapReport> per_domain;  // one level deep
};

/// Throws std::invalid_argument on empty records or repeated image ids.
MapReport map_5095(const std::vector<EvalRecord>& records);

struct DeltaRow {
  std::string key;
  double a = 0.0, b = 0.0, delta = 0.0;  // delta = b - a
};

struct DeltaTable {
  std::vector<DeltaRow> classes;
  std::vector<DeltaRow> domains;  // overall mAP of domains present in both runs
  DeltaRow overall;
};

/// Throws std::invalid_argument when the class sets differ.
DeltaTable compare_runs(const MapReport& a, const MapReport& b,
                        const std::vector<std::string>& class_names = {});

/// Percentage-point delta with one decimal: 0.023 -> "(+2.3)".
std::string format_delta(double delta);

/// Class label for reports; falls back to the numeric id.
std::string class_label(int cls, const std::vector<std::string>& class_names);

/// Line-delimited JSON: one object per (scope, class) plus one per scope for
/// the mean.
void write_report_records(std::ostream& out, const MapReport& report,
                          const std::vector<std::string>& class_names = {});
/// Inverse of write_report_records. Throws std::invalid_argument on a
/// malformed line, naming its number.
MapReport read_report_records(std::istream& in, const std::vector<std::string>& class_names = {});
/// Aligned text table; rows are classes plus "mAP", columns are "all" and
/// each domain. Values are percentages.
void write_report_table(std::ostream& out, const MapReport& report,
                        const std::vector<std::string>& class_names = {});
void write_delta_table(std::ostream& out, const DeltaTable& table, const std::string& label_a,
                       const std::string& label_b);

}  // namespace domprompt
