#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "domprompt/heads.hpp"
#include "domprompt/ops.hpp"
#include "json.hpp"

namespace domprompt {

std::vector<Detection> decode_set(const SetPrediction& pred, const DecodeOptions& opt) {
  const std::size_t q = pred.logits.dim(0), k = pred.logits.dim(1);
  const auto probs = softmax(pred.logits.detach(), 1).values();
  const auto boxes = pred.boxes.values();
  std::vector<Detection> out;
  for (std::size_t i = 0; i < q; ++i) {
    const auto row = probs.begin() + static_cast<std::ptrdiff_t>(i * k);
    const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row);
    if (best == k - 1 || row[static_cast<std::ptrdiff_t>(best)] < opt.score_thresh) continue;
    Detection d;
    d.box = Box{boxes[i * 4], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3],
                static_cast<int>(best)}
                .clipped();
    d.score = row[static_cast<std::ptrdiff_t>(best)];
    d.probs.assign(row, row + static_cast<std::ptrdiff_t>(k));
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> decode_dense(const DensePrediction& pred, const DecodeOptions& opt) {
  std::vector<Detection> out;
  for (std::size_t l = 0; l < pred.cls.size(); ++l) {
    const std::size_t k = pred.cls[l].dim(0), gh = pred.cls[l].dim(1), gw = pred.cls[l].dim(2);
    const std::size_t hw = gh * gw;
    const auto probs = softmax(transpose(reshape(pred.cls[l].detach(), {k, hw})), 1).values();
    const auto reg = pred.box[l].values();
    for (std::size_t cell = 0; cell < hw; ++cell) {
      const auto row = probs.begin() + static_cast<std::ptrdiff_t>(cell * k);
      const auto best = static_cast<std::size_t>(
          std::max_element(row, row + static_cast<std::ptrdiff_t>(k - 1)) - row);
      const double score = row[static_cast<std::ptrdiff_t>(best)];
      if (score < opt.score_thresh) continue;
      const double r = static_cast<double>(cell / gw), c = static_cast<double>(cell % gw);
      const double dx = reg[cell], dy = reg[hw + cell];
      const double lw = std::min(reg[2 * hw + cell], 10.0), lh = std::min(reg[3 * hw + cell], 10.0);
      Detection d;
      d.box = Box{(c + dx) / static_cast<double>(gw), (r + dy) / static_cast<double>(gh),
                  std::exp(lw) / static_cast<double>(gw), std::exp(lh) / static_cast<double>(gh),
                  static_cast<int>(best)}
                  .clipped();
      d.score = score;
      d.probs.assign(row, row + static_cast<std::ptrdiff_t>(k));
      out.push_back(std::move(d));
    }
  }
  return nms(std::move(out), opt.nms_iou);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.box.label == dets[i].box.label && iou(k.box, dets[i].box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(std::move(dets[i]));
  }
  return kept;
}

void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const PredictionRecord& r : records) {
    nlohmann::json dets = nlohmann::json::array();
    for (const Detection& d : r.detections) {
      dets.push_back({d.box.label, d.score, d.box.cx, d.box.cy, d.box.w, d.box.h});
    }
    out << nlohmann::json{{"id", r.id}, {"domain", r.domain}, {"detections", dets}}.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord r{j.at("id").get<std::string>(), j.at("domain").get<std::string>(), {}};
      for (const auto& d : j.at("detections")) {
        if (d.size() != 6) throw std::invalid_argument("detection needs 6 fields");
        Detection det;
        det.box = Box{d[2].get<double>(), d[3].get<double>(), d[4].get<double>(),
                      d[5].get<double>(), d[0].get<int>()};
        det.score = d[1].get<double>();
        r.detections.push_back(std::move(det));
      }
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace domprompt
