#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "domprompt/heads.hpp"
#include "domprompt/ops.hpp"

namespace domprompt {

DenseHead::DenseHead(ParamStore& store, const DenseHeadConfig& cfg, std::size_t width) : cfg_(cfg) {
  tower_w_ = store.uniform("head.tower.weight", {width, width, 3, 3}, width * 9);
  tower_b_ = store.constant("head.tower.bias", {width}, 0.0);
  cls_w_ = store.uniform("head.cls.weight", {cfg.num_classes + 1, width, 1, 1}, width);
  cls_b_ = store.constant("head.cls.bias", {cfg.num_classes + 1}, 0.0);
  // Background prior of 0.99 so the many empty cells do not dominate early steps.
  const double bg = std::log(99.0 * static_cast<double>(cfg.num_classes));
  visit_precision(cls_b_.precision(), [&]<class T>() { cls_b_.mutable_data<T>()[cfg.num_classes] = static_cast<T>(bg); });
  box_w_ = store.uniform("head.box.weight", {4, width, 1, 1}, width);
  box_b_ = store.constant("head.box.bias", {4}, 0.0);
}

DensePrediction DenseHead::forward(const FeaturePyramid& features) const {
  DensePrediction out;
  out.strides = features.strides;
  for (const Tensor& level : features.levels) {
    const Tensor t = gelu(conv2d(level, tower_w_, tower_b_, 1, 1));
    out.cls.push_back(conv2d(t, cls_w_, cls_b_, 1, 0));
    out.box.push_back(conv2d(t, box_w_, box_b_, 1, 0));
  }
  return out;
}

std::vector<CellTarget> assign_cells(const std::vector<Box>& gt,
                                     const std::vector<std::size_t>& grid_sizes,
                                     const std::vector<std::size_t>& strides,
                                     std::size_t image_size) {
  if (grid_sizes.size() != strides.size() || strides.empty()) {
    throw DimensionError("assign_cells: " + std::to_string(grid_sizes.size()) + " grids for " +
                         std::to_string(strides.size()) + " strides");
  }
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CellTarget> cells;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Box& b = gt[i];
    const double want = std::max(b.w, b.h) * static_cast<double>(image_size) / 4.0;
    std::size_t level = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < strides.size(); ++l) {
      const double d = std::abs(std::log2(static_cast<double>(strides[l])) -
                                std::log2(std::max(want, kBoxEps)));
      if (d < best) {
        best = d;
        level = l;
      }
    }
    const double g = static_cast<double>(grid_sizes[level]);
    const auto cell = [&](double c) {
      return std::min(grid_sizes[level] - 1, static_cast<std::size_t>(std::max(0.0, c * g)));
    };
    CellTarget t{level, cell(b.cy), cell(b.cx), i, {}};
    t.reg = {b.cx * g - static_cast<double>(t.col), b.cy * g - static_cast<double>(t.row),
             std::log(std::max(b.w, kBoxEps) * g), std::log(std::max(b.h, kBoxEps) * g)};
    const auto key = std::make_tuple(level, t.row, t.col);
    auto it = cells.find(key);
    if (it == cells.end()) {
      cells.emplace(key, t);
    } else if (b.area() < gt[it->second.gt].area()) {
      it->second = t;
    }
  }
  std::vector<CellTarget> out;
  for (const auto& [key, t] : cells) out.push_back(t);
  return out;
}

Tensor dense_loss(const DensePrediction& pred, const std::vector<Box>& gt, double lambda,
                  std::size_t image_size) {
  if (lambda < 0) throw std::invalid_argument("dense_loss: lambda must be non-negative");
  if (pred.cls.empty()) throw DimensionError("dense_loss: empty prediction");
  std::vector<std::size_t> grids;
  for (const Tensor& c : pred.cls) grids.push_back(c.dim(1));
  const auto targets = assign_cells(gt, grids, pred.strides, image_size);
  const std::size_t k = pred.cls[0].dim(0);
  const Precision prec = pred.cls[0].precision();

  Tensor r_cls = Tensor::scalar(0.0, prec);
  Tensor r_loc = Tensor::scalar(0.0, prec);
  for (std::size_t l = 0; l < pred.cls.size(); ++l) {
    const std::size_t hw = pred.cls[l].dim(1) * pred.cls[l].dim(2);
    std::vector<int> labels(hw, static_cast<int>(k - 1));
    std::vector<std::size_t> rows;
    std::vector<double> reg;
    for (const CellTarget& t : targets) {
      if (t.level != l) continue;
      const std::size_t cell = t.row * pred.cls[l].dim(2) + t.col;
      labels[cell] = gt[t.gt].label;
      rows.push_back(cell);
      reg.insert(reg.end(), t.reg.begin(), t.reg.end());
    }
    const Tensor logits = transpose(reshape(pred.cls[l], {k, hw}));
    r_cls = add(r_cls, sum(cross_entropy_rows(logits, labels)));
    if (!rows.empty()) {
      const Tensor box = gather_rows(transpose(reshape(pred.box[l], {4, hw})), rows);
      const Tensor target = Tensor::from_values({rows.size(), 4}, reg, prec);
      r_loc = add(r_loc, sum(smooth_l1(sub(box, target), 1.0)));
    }
  }
  return add(r_loc, mul(r_cls, lambda));
}

}  // namespace domprompt
