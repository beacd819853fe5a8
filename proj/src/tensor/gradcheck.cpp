#include "domprompt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "domprompt/rng.hpp"

namespace domprompt {
namespace {

// Power-of-two steps keep x +/- eps exact for dyadic inputs.
double snap_step(double eps) { return std::exp2(std::round(std::log2(eps))); }

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_coords == 0 || max_coords >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(max_coords);
  return idx;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                         std::size_t max_coords, std::uint64_t seed) {
  if (x.precision() != Precision::f64) {
    throw std::invalid_argument("finite_diff_check requires 64-bit tensors");
  }
  eps = snap_step(eps);
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(leaf);
    tape.backward(loss);
    analytic = tape.grad(leaf).values();
  }
  double worst = 0.0;
  for (std::size_t i : pick_coords(x.numel(), max_coords, seed)) {
    Tensor probe = x.detach();
    auto v = probe.mutable_data<double>();
    const double orig = v[i];
    v[i] = orig + eps;
    const double up = f(probe).item();
    v[i] = orig - eps;
    const double down = f(probe).item();
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double finite_diff_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                std::size_t coords, double eps, std::uint64_t seed) {
  eps = snap_step(eps);
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    tape.backward(l);
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (params[p].precision() != Precision::f64) {
        throw std::invalid_argument("finite_diff_check_params requires 64-bit parameters");
      }
      analytic[p] = tape.has_grad(params[p]) ? tape.grad(params[p]).values()
                                             : std::vector<double>(params[p].numel(), 0.0);
    }
  }
  std::size_t total = 0;
  for (const Tensor& p : params) total += p.numel();
  double worst = 0.0;
  for (std::size_t flat : pick_coords(total, coords, seed)) {
    std::size_t p = 0;
    while (flat >= params[p].numel()) flat -= params[p++].numel();
    auto v = params[p].mutable_data<double>();
    const double orig = v[flat];
    v[flat] = orig + eps;
    const double up = loss().item();
    v[flat] = orig - eps;
    const double down = loss().item();
    v[flat] = orig;
    worst = std::max(worst, relative_error(analytic[p][flat], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace domprompt
