#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "domprompt/trainer.hpp"

namespace domprompt {

void Schedule::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw std::invalid_argument("schedule: base lr must be positive");
  if (!(warmup_factor > 0.0) || warmup_factor > 1.0) {
    throw std::invalid_argument("schedule: warmup factor must lie in (0, 1]");
  }
  if (total_steps == 0) throw std::invalid_argument("schedule: zero total steps");
  if (warmup_steps > total_steps) throw std::invalid_argument("schedule: warmup longer than training");
}

double lr_at(const Schedule& s, std::size_t step) {
  s.validate();
  if (step > s.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " beyond " +
                            std::to_string(s.total_steps));
  }
  if (step < s.warmup_steps) {
    const double t = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.base_lr * (s.warmup_factor + (1.0 - s.warmup_factor) * t);
  }
  const std::size_t decay = s.total_steps - s.warmup_steps;
  if (decay == 0) return 0.0;
  const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay);
  return 0.5 * s.base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

bool FreezeSet::frozen(const std::string& name) const {
  if (names.count(name)) return true;
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

AdamW::AdamW(AdamWConfig cfg, FreezeSet freeze) : cfg_(cfg), freeze_(std::move(freeze)) {
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1) {
    throw std::invalid_argument("adamw: betas must lie in [0, 1)");
  }
  if (!(cfg_.eps > 0) || cfg_.weight_decay < 0) throw std::invalid_argument("adamw: bad eps or weight decay");
  const std::string te(FreezeSet::kTextEncoder);
  bool has_te = false;
  for (const auto& p : freeze_.prefixes) has_te = has_te || p == te;
  if (!has_te) freeze_.prefixes.push_back(te);
}

void AdamW::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("adamw: learning rate must be finite and >= 0");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& [name, unused] : params.params()) {
    if (freeze_.frozen(name)) continue;
    const auto g = grads.find(name);
    if (g == grads.end()) throw std::invalid_argument("adamw: no gradient for trainable parameter " + name);
    Tensor& p = params.at(name);
    if (g->second.numel() != p.numel()) {
      throw DimensionError("adamw: gradient of " + name + " has shape " + shape_str(g->second.shape()));
    }
    const auto gv = g->second.values();
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(gv.size(), 0.0);
      mom.v.assign(gv.size(), 0.0);
    }
    visit_precision(p.precision(), [&]<class T>() {
      auto w = p.mutable_data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double x = static_cast<double>(w[i]) * (1.0 - lr * cfg_.weight_decay);
        mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gv[i];
        mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gv[i] * gv[i];
        const double mh = mom.m[i] / bc1;
        const double vh = mom.v[i] / bc2;
        x -= lr * mh / (std::sqrt(vh) + cfg_.eps);
        w[i] = static_cast<T>(x);
      }
    });
  }
}

}  // namespace domprompt
