#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "domprompt/gradcheck.hpp"
#include "domprompt/heads.hpp"
#include "domprompt/ops.hpp"
#include "domprompt/rng.hpp"

using namespace domprompt;

namespace {

constexpr auto f64 = Precision::f64;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), v, f64);
}

Box random_box(Rng& rng, int label = 0) {
  const double w = rng.uniform(0.05, 0.5), h = rng.uniform(0.05, 0.5);
  return {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h, label};
}

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

// Exhaustive search over every matching of min(P, G) pairs. Returns the
// minimum cost and the lexicographically smallest optimal pair list.
void brute_force(const std::vector<double>& cost, std::size_t p, std::size_t g, std::size_t pred,
                 std::vector<char>& used, Pairs& cur, double acc, double& best, Pairs& best_pairs) {
  const std::size_t target = std::min(p, g);
  if (cur.size() + (p - pred) < target) return;
  if (cur.size() == target) {
    if (acc < best - 1e-12 || (std::abs(acc - best) <= 1e-12 && cur < best_pairs)) {
      best = acc;
      best_pairs = cur;
    }
    return;
  }
  for (std::size_t j = 0; j < g; ++j) {
    if (used[j]) continue;
    used[j] = 1;
    cur.emplace_back(pred, j);
    brute_force(cost, p, g, pred + 1, used, cur, acc + cost[pred * g + j], best, best_pairs);
    cur.pop_back();
    used[j] = 0;
  }
  brute_force(cost, p, g, pred + 1, used, cur, acc, best, best_pairs);
}

double log_softmax_at(const std::vector<double>& row, std::size_t k) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0;
  for (double v : row) s += std::exp(v - m);
  return row[k] - m - std::log(s);
}

SetPrediction random_set_prediction(Rng& rng, std::size_t q, std::size_t classes) {
  return {random_tensor(rng, {q, classes + 1}, -2, 2),
          sigmoid(random_tensor(rng, {q, 4}, -1.5, 1.5))};
}

}  // namespace

TEST_CASE("giou examples and properties") {
  const Box a = Box::from_corners(0, 0, 1, 1), b = Box::from_corners(2, 0, 3, 1);
  CHECK(giou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, b) == 0.0);
  CHECK(giou(a, b) == doctest::Approx(-1.0 / 3.0));
  const Box inner = Box::from_corners(0.25, 0.25, 0.5, 0.5);
  CHECK(giou(a, inner) == doctest::Approx(0.0625));
  CHECK(giou(a, inner) == doctest::Approx(iou(a, inner)));

  Rng rng(11);
  for (int t = 0; t < 500; ++t) {
    const Box x = random_box(rng), y = random_box(rng);
    CHECK(giou(x, y) <= iou(x, y) + 1e-12);
    CHECK(giou(x, y) == doctest::Approx(giou(y, x)).epsilon(1e-12));
    CHECK(giou(x, y) >= -1.0);
    const auto [x0, y0, x1, y1] = x.corners();
    const auto [u0, v0, u1, v1] = y.corners();
    const bool nested = (x0 <= u0 && y0 <= v0 && x1 >= u1 && y1 >= v1) ||
                        (u0 <= x0 && v0 <= y0 && u1 >= x1 && v1 >= y1);
    if (nested) CHECK(giou(x, y) == doctest::Approx(iou(x, y)));
    if (iou(x, y) == 0.0) CHECK(giou(x, y) < 0.0);
  }
}

TEST_CASE("box clipping keeps boxes valid") {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    Box b{rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(0, 2), rng.uniform(0, 2), 1};
    if (t % 10 == 0) b.w = 0;
    const Box c = b.clipped();
    CHECK(c.valid());
    CHECK(c.w >= kBoxEps);
    CHECK(c.h >= kBoxEps);
    CHECK(c.label == 1);
  }
  const Box inside{0.5, 0.5, 0.2, 0.4, 3};
  CHECK(inside.clipped().cx == doctest::Approx(0.5));
  CHECK(inside.clipped().h == doctest::Approx(0.4));
}

TEST_CASE("giou_rows agrees with scalar giou and is differentiable") {
  Rng rng(3);
  std::vector<double> av, bv;
  std::vector<Box> as, bs;
  for (int i = 0; i < 6; ++i) {
    as.push_back(random_box(rng));
    bs.push_back(random_box(rng));
    av.insert(av.end(), {as.back().cx, as.back().cy, as.back().w, as.back().h});
    bv.insert(bv.end(), {bs.back().cx, bs.back().cy, bs.back().w, bs.back().h});
  }
  const Tensor a = Tensor::from_values({6, 4}, av, f64), b = Tensor::from_values({6, 4}, bv, f64);
  const auto g = giou_rows(a, b).values();
  REQUIRE(g.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(giou(as[i], bs[i])).epsilon(1e-12));
  CHECK(finite_diff_check([&](const Tensor& x) { return sum(giou_rows(x, b)); }, a) < 1e-6);
  CHECK_THROWS_AS(giou_rows(a, Tensor::zeros({5, 4}, f64)), DimensionError);
}

TEST_CASE("hungarian examples") {
  auto m = hungarian_match({1, 2, 3, 1}, 2, 2);
  CHECK(m.pairs == Pairs{{0, 0}, {1, 1}});
  CHECK(m.total_cost == 2.0);

  std::vector<double> id(25, 10.0);
  for (std::size_t i = 0; i < 5; ++i) id[i * 5 + i] = 0.0;
  m = hungarian_match(id, 5, 5);
  CHECK(m.pairs == Pairs{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}});
  CHECK(m.total_cost == 0.0);

  CHECK(hungarian_match({}, 0, 3).pairs.empty());
  CHECK(hungarian_match({}, 4, 0).total_cost == 0.0);
  CHECK_THROWS(hungarian_match({1, 2}, 2, 2));

  // All-equal costs: the lexicographically smallest assignment wins.
  m = hungarian_match(std::vector<double>(9, 1.0), 3, 3);
  CHECK(m.pairs == Pairs{{0, 0}, {1, 1}, {2, 2}});
  m = hungarian_match(std::vector<double>(6, 1.0), 3, 2);
  CHECK(m.pairs == Pairs{{0, 0}, {1, 1}});
}

TEST_CASE("hungarian matches factorial brute force") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 1 + rng.below(7), g = 1 + rng.below(7);
    std::vector<double> cost(p * g);
    // Half the trials use small integers so ties are common.
    for (auto& c : cost) c = trial % 2 ? static_cast<double>(rng.below(4)) : rng.uniform(-3, 3);
    double best = std::numeric_limits<double>::infinity();
    Pairs best_pairs, cur;
    std::vector<char> used(g, 0);
    brute_force(cost, p, g, 0, used, cur, 0.0, best, best_pairs);
    const MatchResult m = hungarian_match(cost, p, g);
    INFO("trial " << trial << " " << p << "x" << g);
    CHECK(m.total_cost == doctest::Approx(best).epsilon(1e-12));
    CHECK(m.pairs.size() == std::min(p, g));
    std::vector<char> seen_p(p, 0), seen_g(g, 0);
    for (const auto& [i, j] : m.pairs) {
      CHECK(!seen_p[i]);
      CHECK(!seen_g[j]);
      seen_p[i] = seen_g[j] = 1;
    }
    if (trial % 2) CHECK(m.pairs == best_pairs);
  }
}

TEST_CASE("set loss examples") {
  Rng rng(17);
  const std::size_t q = 5, k = 3;
  const SetPrediction pred = random_set_prediction(rng, q, k);
  const auto logits = pred.logits.values();
  double expect = 0;
  for (std::size_t i = 0; i < q; ++i) {
    std::vector<double> row(logits.begin() + i * (k + 1), logits.begin() + (i + 1) * (k + 1));
    expect -= log_softmax_at(row, k);
  }
  CHECK(set_loss(pred, {}, {}).item() == doctest::Approx(expect / q).epsilon(1e-12));

  const Box target{0.4, 0.6, 0.2, 0.3, 1};
  const SetPrediction perfect{Tensor::from_values({1, 4}, {-40, 40, -40, -40}, f64),
                              Tensor::from_values({1, 4}, {0.4, 0.6, 0.2, 0.3}, f64)};
  CHECK(set_loss(perfect, {target}, {}).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(set_loss(perfect, {target}, {}).item()) < 1e-12);

  CHECK_THROWS_AS(set_loss(perfect, {target, target}, {}), std::invalid_argument);
  Box bad = target;
  bad.label = 3;
  CHECK_THROWS(set_loss(perfect, {bad}, {}));
}

TEST_CASE("set loss matched terms follow the hand formula") {
  // Two queries, one gt: query 1 is the clear match.
  const SetPrediction pred{Tensor::from_values({2, 3}, {0, 0, 3, 0, 2, 0}, f64),
                           Tensor::from_values({2, 4}, {0.1, 0.1, 0.1, 0.1, 0.5, 0.5, 0.4, 0.4}, f64)};
  const Box gt{0.55, 0.5, 0.4, 0.5, 1};
  const SetLossWeights w{1.0, 5.0, 2.0};
  const double ce0 = -log_softmax_at({0, 0, 3}, 2), ce1 = -log_softmax_at({0, 2, 0}, 1);
  const double l1 = 0.05 + 0 + 0 + 0.1;
  const double g = giou(Box{0.5, 0.5, 0.4, 0.4}, gt);
  CHECK(set_loss(pred, {gt}, w).item() ==
        doctest::Approx((ce0 + ce1) / 2 + 5 * l1 + 2 * (1 - g)).epsilon(1e-12));
}

TEST_CASE("set loss is invariant to query and ground-truth order") {
  Rng rng(99);
  for (int t = 0; t < 20; ++t) {
    const std::size_t q = 6, k = 4, n = 1 + rng.below(4);
    const SetPrediction pred = random_set_prediction(rng, q, k);
    std::vector<Box> gt;
    for (std::size_t i = 0; i < n; ++i) gt.push_back(random_box(rng, static_cast<int>(rng.below(k))));
    std::vector<std::size_t> perm(q);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = q - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const SetPrediction shuffled{gather_rows(pred.logits, perm), gather_rows(pred.boxes, perm)};
    std::vector<Box> gt_rev(gt.rbegin(), gt.rend());
    const double base = set_loss(pred, gt, {}).item();
    CHECK(std::abs(set_loss(shuffled, gt, {}).item() - base) < 1e-9);
    CHECK(std::abs(set_loss(pred, gt_rev, {}).item() - base) < 1e-9);
  }
}

TEST_CASE("set loss gradient matches finite differences") {
  Rng rng(8);
  Tensor logits = random_tensor(rng, {4, 4}, -1, 1).set_requires_grad(true);
  Tensor raw = random_tensor(rng, {4, 4}, -1, 1).set_requires_grad(true);
  const std::vector<Box> gt{random_box(rng, 0), random_box(rng, 2)};
  auto loss = [&] { return set_loss({logits, sigmoid(raw)}, gt, {}); };
  CHECK(finite_diff_check_params(loss, {logits, raw}, 32, 1e-6, 1) < 1e-5);
}

TEST_CASE("set head forward shapes and gradients") {
  ParamStore store(4, f64);
  SetHeadConfig cfg;
  cfg.num_classes = 3;
  cfg.queries = 5;
  cfg.heads = 2;
  SetHead head(store, cfg, 8, 16);
  Rng rng(1);
  FeaturePyramid pyr{{random_tensor(rng, {8, 8, 8}), random_tensor(rng, {8, 4, 4})}, {4, 8}};
  const SetPrediction p = head.forward(pyr);
  CHECK(p.logits.shape() == Shape{5, 4});
  CHECK(p.boxes.shape() == Shape{5, 4});
  for (double v : p.boxes.values()) CHECK((v > 0 && v < 1));
  CHECK_THROWS_AS(head.forward(FeaturePyramid{{pyr.levels[0]}, {4}}), DimensionError);
  CHECK_THROWS_AS(head.forward(FeaturePyramid{{pyr.levels[1], pyr.levels[0]}, {4, 8}}),
                  DimensionError);

  std::vector<Tensor> params;
  for (auto& [name, t] : store.params()) params.push_back(t);
  for (auto& t : params) t.set_requires_grad(true);
  const std::vector<Box> gt{random_box(rng, 1)};
  CHECK(finite_diff_check_params([&] { return set_loss(head.forward(pyr), gt, {}); }, params, 60,
                                 1e-6, 3) < 1e-4);
}

TEST_CASE("dense assignment") {
  // 16 px box on a 64 px page: a quarter of its side is 4 px, the stride-4 level.
  const std::vector<std::size_t> grids{16, 8, 4}, strides{4, 8, 16};
  auto cells = assign_cells({Box{0.5, 0.5, 0.25, 0.1, 2}}, grids, strides, 64);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].level == 0);
  CHECK(cells[0].row == 8);
  CHECK(cells[0].col == 8);
  CHECK(cells[0].reg[0] == doctest::Approx(0.0));
  CHECK(cells[0].reg[2] == doctest::Approx(std::log(4.0)));

  cells = assign_cells({Box{0.3, 0.7, 0.9, 0.5, 0}}, grids, strides, 64);
  CHECK(cells[0].level == 2);
  CHECK(cells[0].col == 1);
  CHECK(cells[0].row == 2);
  CHECK(cells[0].reg[0] == doctest::Approx(0.2));

  // Same level and centre cell: the smaller box keeps it.
  cells = assign_cells({Box{0.5, 0.5, 0.5, 0.5, 0}, Box{0.52, 0.52, 0.45, 0.45, 1}}, grids,
                       strides, 64);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].gt == 1);

  // Right and bottom edges stay inside the grid.
  cells = assign_cells({Box{1.0, 1.0, 0.1, 0.1, 0}}, grids, strides, 64);
  CHECK(cells[0].row == grids[cells[0].level] - 1);
}

TEST_CASE("dense loss examples") {
  Rng rng(21);
  const std::size_t k = 3;
  DensePrediction pred{{random_tensor(rng, {k + 1, 4, 4}), random_tensor(rng, {k + 1, 2, 2})},
                       {random_tensor(rng, {4, 4, 4}), random_tensor(rng, {4, 2, 2})},
                       {8, 16}};
  double background = 0;
  for (const Tensor& c : pred.cls) {
    const auto v = c.values();
    const std::size_t hw = c.dim(1) * c.dim(2);
    for (std::size_t cell = 0; cell < hw; ++cell) {
      std::vector<double> row;
      for (std::size_t j = 0; j <= k; ++j) row.push_back(v[j * hw + cell]);
      background -= log_softmax_at(row, k);
    }
  }
  CHECK(dense_loss(pred, {}, 1.0, 32).item() == doctest::Approx(background).epsilon(1e-12));
  CHECK(dense_loss(pred, {}, 0.3, 32).item() == doctest::Approx(0.3 * background).epsilon(1e-12));

  // Regression output offset by exactly 0.5 from the target in every coordinate.
  const Box gt{0.4, 0.3, 0.25, 0.25, 1};
  const auto cells = assign_cells({gt}, {4, 2}, {8, 16}, 32);
  REQUIRE(cells.size() == 1);
  const CellTarget& c = cells[0];
  const std::size_t g = c.level == 0 ? 4 : 2;
  std::vector<double> box = pred.box[c.level].values();
  for (std::size_t r = 0; r < 4; ++r) box[r * g * g + c.row * g + c.col] = c.reg[r] + 0.5;
  pred.box[c.level] = Tensor::from_values({4, g, g}, box, f64);
  CHECK(dense_loss(pred, {gt}, 0.0, 32).item() == doctest::Approx(4 * 0.125).epsilon(1e-12));

  double prev = -1;
  for (double lambda : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const double l = dense_loss(pred, {gt}, lambda, 32).item();
    CHECK(l >= prev);
    prev = l;
  }
  CHECK_THROWS(dense_loss(pred, {gt}, -1.0, 32));
}

TEST_CASE("dense head forward and gradients") {
  ParamStore store(6, f64);
  DenseHead head(store, {3, 32}, 4);
  Rng rng(2);
  FeaturePyramid pyr{{random_tensor(rng, {4, 4, 4}), random_tensor(rng, {4, 2, 2})}, {8, 16}};
  const DensePrediction p = head.forward(pyr);
  CHECK(p.cls[0].shape() == Shape{4, 4, 4});
  CHECK(p.box[1].shape() == Shape{4, 2, 2});
  CHECK(p.strides == pyr.strides);
  std::vector<Tensor> params;
  for (auto& [name, t] : store.params()) params.push_back(t);
  for (auto& t : params) t.set_requires_grad(true);
  const std::vector<Box> gt{Box{0.4, 0.6, 0.3, 0.2, 0}, Box{0.8, 0.2, 0.6, 0.3, 2}};
  CHECK(finite_diff_check_params([&] { return dense_loss(head.forward(pyr), gt, 1.0, 32); },
                                 params, 60, 1e-6, 5) < 1e-4);
}

TEST_CASE("decode examples") {
  const SetPrediction none{Tensor::from_values({2, 3}, {0, 0, 5, 1, 0, 4}, f64),
                           Tensor::full({2, 4}, 0.5, f64)};
  CHECK(decode_set(none).empty());

  const SetPrediction one{Tensor::from_values({2, 3}, {4, 0, 0, 1, 0, 4}, f64),
                          Tensor::from_values({2, 4}, {0.5, 0.5, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1}, f64)};
  const auto d = decode_set(one);
  REQUIRE(d.size() == 1);
  CHECK(d[0].box.label == 0);
  CHECK(d[0].box.w == doctest::Approx(0.2));

  const Detection same{Box{0.5, 0.5, 0.2, 0.2, 1}, 0.6, {}};
  CHECK(nms({same, same}, 0.5).size() == 1);

  // Pairwise IoU of these three boxes is above 0.5.
  const std::vector<Detection> trio{{Box{0.50, 0.5, 0.4, 0.4, 0}, 0.8, {}},
                                    {Box{0.52, 0.5, 0.4, 0.4, 0}, 0.9, {}},
                                    {Box{0.54, 0.5, 0.4, 0.4, 0}, 0.7, {}}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) REQUIRE(iou(trio[i].box, trio[j].box) > 0.5);
  auto kept = nms(trio, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);

  // Different classes do not suppress each other; equal scores keep input order.
  auto other = trio;
  other[2].box.label = 1;
  other[0].score = 0.9;
  kept = nms(other, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].box.cx == 0.50);
  CHECK(kept[1].box.label == 1);
}

TEST_CASE("decoded detections satisfy box invariants") {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    const SetPrediction sp{random_tensor(rng, {8, 4}, -3, 3), random_tensor(rng, {8, 4}, -0.5, 1.5)};
    DensePrediction dp{{random_tensor(rng, {4, 4, 4}, -3, 3)}, {random_tensor(rng, {4, 4, 4}, -3, 3)}, {8}};
    auto all = decode_set(sp, {0.0, 0.5});
    const auto dense = decode_dense(dp, {0.0, 0.5});
    CHECK(!dense.empty());
    all.insert(all.end(), dense.begin(), dense.end());
    for (const Detection& d : all) {
      CHECK(d.box.valid());
      CHECK(d.box.w >= kBoxEps);
      CHECK(d.probs.size() == 4);
      CHECK(std::accumulate(d.probs.begin(), d.probs.end(), 0.0) == doctest::Approx(1.0));
      CHECK(d.score == doctest::Approx(d.probs[static_cast<std::size_t>(d.box.label)]));
      CHECK(d.box.label < 3);
    }
  }
}

TEST_CASE("prediction dump round trip") {
  std::vector<PredictionRecord> recs{
      {"img-0", "patent", {{Box{0.5, 0.25, 0.125, 0.5, 2}, 0.75, {}}}},
      {"img-1", "manual", {}}};
  std::stringstream ss;
  write_predictions(ss, recs);
  const auto back = read_predictions(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "img-0");
  CHECK(back[0].domain == "patent");
  REQUIRE(back[0].detections.size() == 1);
  CHECK(back[0].detections[0].box == recs[0].detections[0].box);
  CHECK(back[0].detections[0].score == 0.75);
  CHECK(back[1].detections.empty());
  std::stringstream broken("{\"id\": \"x\"}\n");
  CHECK_THROWS_AS(read_predictions(broken), std::invalid_argument);
  CHECK(head_name(parse_head("dense")) == "dense");
  CHECK_THROWS(parse_head("rcnn"));
}
