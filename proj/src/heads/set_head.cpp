#include <cmath>

#include "domprompt/heads.hpp"
#include "domprompt/ops.hpp"

namespace domprompt {

std::string_view head_name(HeadKind h) { return h == HeadKind::set ? "set" : "dense"; }

HeadKind parse_head(std::string_view text) {
  if (text == "set") return HeadKind::set;
  if (text == "dense") return HeadKind::dense;
  throw std::invalid_argument("unknown head " + std::string(text));
}

SetHead::SetHead(ParamStore& store, const SetHeadConfig& cfg, std::size_t width,
                 std::size_t memory_size)
    : cfg_(cfg) {
  if (cfg.queries == 0 || cfg.num_classes == 0) {
    throw std::invalid_argument("set head: queries and classes must be positive");
  }
  queries_ = store.uniform_range("head.queries", {cfg.queries, width}, 1.0);
  memory_pos_ = store.uniform_range("head.memory_pos", {memory_size, width}, 0.02);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "head.layer" + std::to_string(l);
    layers_.push_back({AttentionParams::create(store, p + ".self", width, cfg.heads),
                       AttentionParams::create(store, p + ".cross", width, cfg.heads),
                       FeedForwardParams::create(store, p + ".ffn", width, cfg.ffn_mult)});
  }
  out_norm_ = LayerNorm::create(store, "head.norm", width);
  cls_ = Linear::create(store, "head.cls", width, cfg.num_classes + 1);
  box1_ = Linear::create(store, "head.box1", width, width);
  box2_ = Linear::create(store, "head.box2", width, 4);
}

SetPrediction SetHead::forward(const FeaturePyramid& features) const {
  if (cfg_.memory_level >= features.levels.size()) {
    throw DimensionError("set head: pyramid has " + std::to_string(features.levels.size()) +
                         " levels, memory level is " + std::to_string(cfg_.memory_level));
  }
  const Tensor& level = features.levels[cfg_.memory_level];
  const std::size_t c = level.dim(0), cells = level.dim(1) * level.dim(2);
  if (cells != memory_pos_.dim(0) || c != memory_pos_.dim(1)) {
    throw DimensionError("set head: memory " + shape_str(level.shape()) + " does not match " +
                         shape_str(memory_pos_.shape()));
  }
  const Tensor memory = add(transpose(reshape(level, {c, cells})), memory_pos_);
  Tensor q = queries_;
  for (const Layer& layer : layers_) {
    q = attention(q, layer.self_attn);
    q = add(q, multi_head(layer.cross_attn.norm(q), memory, layer.cross_attn, 1));
    q = feedforward(q, layer.ffn);
  }
  const Tensor h = out_norm_(q);
  return {cls_(h), sigmoid(box2_(gelu(box1_(h))))};
}

namespace {

Box row_box(const std::vector<double>& v, std::size_t r) {
  return {v[r * 4], v[r * 4 + 1], v[r * 4 + 2], v[r * 4 + 3]};
}

}  // namespace

std::vector<double> set_match_cost(const SetPrediction& pred, const std::vector<Box>& gt,
                                   const SetLossWeights& w) {
  const std::size_t q = pred.logits.dim(0), k = pred.logits.dim(1);
  const auto probs = softmax(pred.logits.detach(), 1).values();
  const auto boxes = pred.boxes.values();
  std::vector<double> cost(q * gt.size());
  for (std::size_t i = 0; i < q; ++i) {
    const Box b = row_box(boxes, i);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const Box& t = gt[j];
      if (t.label < 0 || static_cast<std::size_t>(t.label) + 1 >= k) {
        throw std::invalid_argument("set_match_cost: label " + std::to_string(t.label) +
                                    " out of range");
      }
      const double l1 = std::abs(b.cx - t.cx) + std::abs(b.cy - t.cy) + std::abs(b.w - t.w) +
                        std::abs(b.h - t.h);
      cost[i * gt.size() + j] =
          -w.cls * probs[i * k + static_cast<std::size_t>(t.label)] + w.l1 * l1 +
          w.giou * (1.0 - giou(b, t));
    }
  }
  return cost;
}

Tensor set_loss(const SetPrediction& pred, const std::vector<Box>& gt, const SetLossWeights& w) {
  const std::size_t q = pred.logits.dim(0), k = pred.logits.dim(1);
  if (q < gt.size()) {
    throw std::invalid_argument("set_loss: " + std::to_string(q) + " queries for " +
                                std::to_string(gt.size()) + " objects");
  }
  const MatchResult match = hungarian_match(set_match_cost(pred, gt, w), q, gt.size());
  std::vector<int> targets(q, static_cast<int>(k - 1));
  for (const auto& [i, j] : match.pairs) targets[i] = gt[j].label;
  Tensor loss = mul(mean(cross_entropy_rows(pred.logits, targets)), w.cls);
  if (match.pairs.empty()) return loss;

  std::vector<std::size_t> rows;
  std::vector<double> target_boxes;
  for (const auto& [i, j] : match.pairs) {
    rows.push_back(i);
    target_boxes.insert(target_boxes.end(), {gt[j].cx, gt[j].cy, gt[j].w, gt[j].h});
  }
  const Tensor matched = gather_rows(pred.boxes, rows);
  const Tensor target = Tensor::from_values({rows.size(), 4}, target_boxes, pred.boxes.precision());
  const Tensor l1 = sum(abs(sub(matched, target)));
  const Tensor g = add(mul(sum(giou_rows(matched, target)), -1.0), static_cast<double>(rows.size()));
  const Tensor box_terms = add(mul(l1, w.l1), mul(g, w.giou));
  return add(loss, mul(box_terms, 1.0 / static_cast<double>(std::max<std::size_t>(1, gt.size()))));
}

}  // namespace domprompt
