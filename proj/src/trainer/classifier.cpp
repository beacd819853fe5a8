#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "domprompt/ops.hpp"
#include "domprompt/trainer.hpp"

namespace domprompt {

DomainClassifier::DomainClassifier(const ClassifierConfig& cfg, std::vector<std::string> domains)
    : cfg_(cfg), domains_(std::move(domains)) {
  if (domains_.size() < 2) throw std::invalid_argument("domain classifier: needs at least two domains");
  cfg_.encoder.prompted = false;
  store_ = std::make_unique<ParamStore>(cfg_.seed, cfg_.precision);
  encoder_ = std::make_unique<Encoder>(cfg_.encoder, *store_);
  const std::size_t levels = encoder_->tap_strides().size();
  head_ = Linear::create(*store_, "classifier.head", cfg_.encoder.fpn_width * levels, domains_.size());
}

Tensor DomainClassifier::logits(const Tensor& image) const {
  const FeaturePyramid f = encoder_->encode(image, Tensor());
  std::vector<Tensor> pooled;
  for (const auto& level : f.levels) {
    const std::size_t c = level.dim(0);
    pooled.push_back(mean_rows(transpose(reshape(level, {c, level.numel() / c}))));
  }
  return head_(concat(pooled, 1));
}

std::string DomainClassifier::fingerprint() const {
  std::string s = "classifier;" + cfg_.encoder.fingerprint() + ";domains=";
  for (std::size_t i = 0; i < domains_.size(); ++i) s += (i ? "," : "") + domains_[i];
  return s + (cfg_.precision == Precision::f64 ? ";f64" : ";f32");
}

std::size_t DomainClassifier::predict(const Tensor& image) const {
  const auto v = logits(image).values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double train_domain_classifier(DomainClassifier& clf, const std::vector<Sample>& train,
                               const std::vector<Sample>& heldout,
                               const std::vector<std::size_t>* labels) {
  const auto& domains = clf.domains();
  auto index_of = [&](const std::string& d) {
    const auto it = std::find(domains.begin(), domains.end(), d);
    if (it == domains.end()) throw std::invalid_argument("domain classifier: unknown domain '" + d + "'");
    return static_cast<std::size_t>(it - domains.begin());
  };
  if (train.empty()) throw std::invalid_argument("domain classifier: no training samples");
  std::vector<std::size_t> y;
  if (labels) {
    if (labels->size() != train.size()) throw std::invalid_argument("domain classifier: label count mismatch");
    y = *labels;
    for (auto l : y) {
      if (l >= domains.size()) throw std::invalid_argument("domain classifier: label out of range");
    }
  } else {
    for (const auto& s : train) y.push_back(index_of(s.entry.domain));
  }
  if (std::set<std::size_t>(y.begin(), y.end()).size() < 2) {
    throw std::invalid_argument("domain classifier: training data covers fewer than two domains");
  }

  const ClassifierConfig& cfg = clf.config();
  ParamStore& store = clf.params();
  for (auto& [name, t] : store.params()) store.at(name).set_requires_grad(true);
  const std::size_t per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;
  Schedule sched{cfg.base_lr, 0.01, 0, cfg.epochs * per_epoch};
  sched.warmup_steps = std::max<std::size_t>(1, sched.total_steps / 20);
  AdamW opt;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        std::vector<Tensor> rows;
        std::vector<int> targets;
        for (std::size_t i = b * cfg.batch; i < std::min(train.size(), (b + 1) * cfg.batch); ++i) {
          rows.push_back(clf.logits(train[order[i]].image));
          targets.push_back(static_cast<int>(y[order[i]]));
        }
        loss = mean(cross_entropy_rows(concat(rows, 0), targets));
      }
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, t] : store.params()) {
        grads.emplace(name, tape.has_grad(t) ? tape.grad(t) : Tensor::zeros(t.shape(), t.precision()));
      }
      opt.step(store, grads, lr_at(sched, step++));
    }
  }
  for (auto& [name, t] : store.params()) store.at(name).set_requires_grad(false);

  if (heldout.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : heldout) correct += clf.predict(s.image) == index_of(s.entry.domain) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

}  // namespace domprompt
