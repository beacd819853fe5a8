#include <cmath>
#include <numeric>
#include <stdexcept>

#include "domprompt/ops.hpp"
#include "domprompt/rng.hpp"
#include "domprompt/trainer.hpp"

namespace domprompt {

std::vector<Sample> load_split(const std::filesystem::path& dir, std::string_view split,
                               Precision precision) {
  std::vector<Sample> out;
  for (auto& e : load_manifest(dir, split)) {
    Tensor img = load_raster(dir, e);
    if (img.precision() != precision) img = img.cast(precision);
    out.push_back({std::move(e), std::move(img)});
  }
  return out;
}

PromptTable build_prompts(const FrozenTextEncoder& enc, const PromptSettings& settings,
                          const std::vector<std::string>& domains, Precision precision) {
  PromptTable table;
  for (const auto& d : domains) {
    table[d] = make_domain_prompt(enc, settings.mode, d, &settings.fixtures, &settings.tmpl, precision)
                   .embedding;
  }
  return table;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: zero epochs");
  if (batch == 0) throw std::invalid_argument("train: zero batch size");
  if (warmup_fraction < 0 || warmup_fraction > 1) throw std::invalid_argument("train: warmup fraction outside [0, 1]");
  if (grad_clip < 0) throw std::invalid_argument("train: negative gradient clip");
  if (loss.lambda < 0) throw std::invalid_argument("train: negative lambda");
  Schedule{base_lr, warmup_factor, 0, 1}.validate();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(order);
  return order;
}

Tensor prompt_for(const Model& model, const PromptTable& prompts, const std::string& domain) {
  if (!model.config().encoder.prompted) return Tensor();
  const auto it = prompts.find(domain);
  if (it == prompts.end()) throw std::invalid_argument("no prompt for domain '" + domain + "'");
  return it->second;
}

Tensor batch_loss(const Model& model, const std::vector<const Sample*>& batch,
                  const PromptTable& prompts, const LossConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  Tensor total;
  for (const Sample* s : batch) {
    Tensor l = model.loss(s->image, prompt_for(model, prompts, s->entry.domain), s->entry.annotations, cfg);
    total = total.defined() ? add(total, l) : l;
  }
  return mul(total, 1.0 / static_cast<double>(batch.size()));
}

TrainResult train(Model& model, const std::vector<Sample>& data, const PromptTable& prompts,
                  const TrainConfig& cfg, FreezeSet freeze,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: no training samples");
  for (const auto& n : model.inert_params()) freeze.names.insert(n);

  ParamStore& store = model.params();
  for (auto& [name, t] : store.params()) store.at(name).set_requires_grad(!freeze.frozen(name));

  const std::size_t per_epoch = (data.size() + cfg.batch - 1) / cfg.batch;
  Schedule sched;
  sched.base_lr = cfg.base_lr;
  sched.warmup_factor = cfg.warmup_factor;
  sched.total_steps = cfg.epochs * per_epoch;
  sched.warmup_steps = static_cast<std::size_t>(std::lround(cfg.warmup_fraction * static_cast<double>(sched.total_steps)));

  AdamW opt(cfg.adamw, freeze);
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b * cfg.batch; i < std::min(data.size(), (b + 1) * cfg.batch); ++i) {
        batch.push_back(&data[order[i]]);
      }
      lr = lr_at(sched, step);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = batch_loss(model, batch, prompts, cfg.loss);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);

      std::map<std::string, Tensor> grads;
      double norm2 = 0.0;
      for (const auto& [name, t] : store.params()) {
        if (freeze.frozen(name)) continue;
        Tensor g = tape.has_grad(t) ? tape.grad(t) : Tensor::zeros(t.shape(), t.precision());
        for (double x : g.values()) norm2 += x * x;
        grads.emplace(name, std::move(g));
      }
      if (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip) {
        const double scale = cfg.grad_clip / std::sqrt(norm2);
        for (auto& [name, g] : grads) g = mul(g, scale);
      }
      opt.step(store, grads, lr);
      loss_sum += value;
      ++step;
    }
    EpochLog log{epoch + 1, loss_sum / static_cast<double>(per_epoch), lr};
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.steps = step;
  for (auto& [name, t] : store.params()) store.at(name).set_requires_grad(false);
  return result;
}

}  // namespace domprompt
