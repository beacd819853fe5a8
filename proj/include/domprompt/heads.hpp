#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "domprompt/box.hpp"
#include "domprompt/encoder.hpp"
#include "domprompt/nn.hpp"

// Detection heads: a set-prediction head trained through Hungarian matching
// and a single-stage dense head with per-cell targets.

namespace domprompt {

enum class HeadKind { set, dense };
std::string_view head_name(HeadKind h);
HeadKind parse_head(std::string_view text);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth)
  double total_cost = 0.0;
};

/// Minimum-cost assignment of a P x G cost matrix (row-major). Among optimal
/// assignments the lexicographically smallest pair list is returned.
MatchResult hungarian_match(const std::vector<double>& cost, std::size_t preds, std::size_t gts);

struct SetHeadConfig {
  std::size_t num_classes = 9;
  std::size_t queries = 16;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 2;
  /// Pyramid level the decoder attends to.
  std::size_t memory_level = 1;
};

struct SetLossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct SetPrediction {
  Tensor logits;  // [Q x (K + 1)]; class K is no-object
  Tensor boxes;   // [Q x 4], centre form in [0, 1]
};

class SetHead {
 public:
  SetHead() = default;
  /// `memory_size` is the number of cells of the attended pyramid level.
  SetHead(ParamStore& store, const SetHeadConfig& cfg, std::size_t width, std::size_t memory_size);

  SetPrediction forward(const FeaturePyramid& features) const;
  const SetHeadConfig& config() const { return cfg_; }

 private:
  struct Layer {
    AttentionParams self_attn, cross_attn;
    FeedForwardParams ffn;
  };
  SetHeadConfig cfg_;
  Tensor queries_, memory_pos_;
  std::vector<Layer> layers_;
  LayerNorm out_norm_;
  Linear cls_, box1_, box2_;
};

/// Matching cost w_cls * (-p(class)) + w_l1 * L1 + w_giou * (1 - giou).
std::vector<double> set_match_cost(const SetPrediction& pred, const std::vector<Box>& gt,
                                   const SetLossWeights& w);

/// w_cls * mean-over-queries CE (unmatched queries target no-object) plus
/// (w_l1 * sum L1 + w_giou * sum (1 - giou)) / max(1, |gt|) over matches.
Tensor set_loss(const SetPrediction& pred, const std::vector<Box>& gt, const SetLossWeights& w);

struct DenseHeadConfig {
  std::size_t num_classes = 9;
  std::size_t image_size = 64;
};

struct DensePrediction {
  std::vector<Tensor> cls;  // per level [(K + 1) x H x W]; class K is background
  std::vector<Tensor> box;  // per level [4 x H x W]: dx, dy, log w, log h in cell units
  std::vector<std::size_t> strides;
};

class DenseHead {
 public:
  DenseHead() = default;
  DenseHead(ParamStore& store, const DenseHeadConfig& cfg, std::size_t width);

  DensePrediction forward(const FeaturePyramid& features) const;
  const DenseHeadConfig& config() const { return cfg_; }

 private:
  DenseHeadConfig cfg_;
  Tensor tower_w_, tower_b_, cls_w_, cls_b_, box_w_, box_b_;
};

/// Ground truth assigned to one cell of one pyramid level.
struct CellTarget {
  std::size_t level = 0;
  std::size_t row = 0, col = 0;
  std::size_t gt = 0;
  std::array<double, 4> reg{};  // cx*G - col, cy*G - row, log(w*G), log(h*G)
};

/// Each box goes to the centre cell of the level whose stride is closest
/// (in log scale, finer on ties) to a quarter of its longer side in pixels.
/// When two boxes claim a cell the smaller one keeps it.
std::vector<CellTarget> assign_cells(const std::vector<Box>& gt,
                                     const std::vector<std::size_t>& grid_sizes,
                                     const std::vector<std::size_t>& strides,
                                     std::size_t image_size);

/// R_loc + lambda * R_cls: smooth-L1 (beta 1) summed over assigned cells and
/// coordinates, plus cross-entropy summed over every cell.
Tensor dense_loss(const DensePrediction& pred, const std::vector<Box>& gt, double lambda,
                  std::size_t image_size);

struct Detection {
  Box box;  // label = predicted class
  double score = 0.0;
  std::vector<double> probs;  // full class distribution, sums to 1
};

struct DecodeOptions {
  double score_thresh = 0.05;
  double nms_iou = 0.5;
};

std::vector<Detection> decode_set(const SetPrediction& pred, const DecodeOptions& opt = {});
std::vector<Detection> decode_dense(const DensePrediction& pred, const DecodeOptions& opt = {});

/// Greedy class-aware NMS; order by score descending, then input index.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

/// One image's detections in the prediction dump.
struct PredictionRecord {
  std::string id;
  std::string domain;
  std::vector<Detection> detections;
};

/// Line-delimited JSON: {"id", "domain", "detections": [[class, score, cx,
/// cy, w, h], ...]}.
void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(std::istream& in);

}  // namespace domprompt
