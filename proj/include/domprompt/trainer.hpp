#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "domprompt/metrics.hpp"
#include "domprompt/model.hpp"
#include "domprompt/prompt.hpp"
#include "domprompt/synthdoc.hpp"

// Optimisation: warmup + cosine schedule, AdamW with a freeze set, the
// training loop, the domain classifier and evaluation helpers.

namespace domprompt {

struct Schedule {
  double base_lr = 2e-4;
  double warmup_factor = 0.01;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  void validate() const;
};

/// Linear ramp from warmup_factor * base_lr to base_lr over warmup_steps, then
/// cosine decay reaching 0 at total_steps. Throws std::out_of_range outside
/// [0, total_steps].
double lr_at(const Schedule& s, std::size_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Parameters excluded from optimisation. The frozen text encoder is always
/// part of it even though its table lives outside the parameter store.
struct FreezeSet {
  static constexpr std::string_view kTextEncoder = "text_encoder.";

  std::vector<std::string> prefixes{std::string(kTextEncoder)};
  std::set<std::string> names;

  bool frozen(const std::string& name) const;
};

class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  explicit AdamW(AdamWConfig cfg = {}, FreezeSet freeze = {});

  /// One decoupled-weight-decay update of every non-frozen parameter. Throws
  /// std::invalid_argument when a trainable parameter has no gradient.
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);

  std::size_t steps() const { return steps_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  const FreezeSet& freeze() const { return freeze_; }

 private:
  AdamWConfig cfg_;
  FreezeSet freeze_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// A manifest entry with its raster in model precision.
struct Sample {
  ManifestEntry entry;
  Tensor image;
};

std::vector<Sample> load_split(const std::filesystem::path& dir, std::string_view split,
                               Precision precision = Precision::f32);

/// Domain name -> frozen prompt embedding p_v.
using PromptTable = std::map<std::string, Tensor>;

struct PromptSettings {
  PromptMode mode = PromptMode::heuristic;
  PromptTemplate tmpl{"t5", "A document page comes from {Domain Class}"};
  FixtureCorpus fixtures;
};

PromptTable build_prompts(const FrozenTextEncoder& enc, const PromptSettings& settings,
                          const std::vector<std::string>& domains, Precision precision);

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch = 8;
  double base_lr = 3e-3;
  double warmup_factor = 0.01;
  double warmup_fraction = 0.05;
  AdamWConfig adamw;
  LossConfig loss;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  std::uint64_t seed = 1;  // data order

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean batch loss
  double lr = 0.0;        // at the epoch's last step
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
};

/// Sample order for one epoch; depends on the seed and data size only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Mean loss over `batch`. Undefined prompts are used for unprompted models.
Tensor batch_loss(const Model& model, const std::vector<const Sample*>& batch,
                  const PromptTable& prompts, const LossConfig& cfg);

/// Prompt for a sample's domain, or an undefined tensor for an unprompted model.
Tensor prompt_for(const Model& model, const PromptTable& prompts, const std::string& domain);

TrainResult train(Model& model, const std::vector<Sample>& data, const PromptTable& prompts,
                  const TrainConfig& cfg, FreezeSet freeze = {},
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// -- domain classifier ------------------------------------------------------

struct ClassifierConfig {
  EncoderConfig encoder;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  double base_lr = 3e-3;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
};

/// Unprompted encoder, every pyramid level mean-pooled and concatenated,
/// linear domain head.
class DomainClassifier {
 public:
  DomainClassifier(const ClassifierConfig& cfg, std::vector<std::string> domains);
  DomainClassifier(const DomainClassifier&) = delete;
  DomainClassifier& operator=(const DomainClassifier&) = delete;

  Tensor logits(const Tensor& image) const;  // [1 x domains]
  std::size_t predict(const Tensor& image) const;
  const std::string& infer_domain(const Tensor& image) const { return domains_[predict(image)]; }
  const std::vector<std::string>& domains() const { return domains_; }
  const ClassifierConfig& config() const { return cfg_; }
  /// Identifies encoder shape and domain list for save_params/load_params.
  std::string fingerprint() const;
  ParamStore& params() { return *store_; }

 private:
  ClassifierConfig cfg_;
  std::vector<std::string> domains_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<Encoder> encoder_;
  Linear head_;
};

/// Trains on `train` and returns accuracy on `heldout`. `labels`, when given,
/// replaces the training labels (indices into clf.domains()). Throws
/// std::invalid_argument when fewer than two domains are present.
double train_domain_classifier(DomainClassifier& clf, const std::vector<Sample>& train,
                               const std::vector<Sample>& heldout,
                               const std::vector<std::size_t>* labels = nullptr);

// -- evaluation -------------------------------------------------------------

/// Runs detection over `data`. With a classifier, prompts come from the
/// inferred domain instead of the manifest.
std::vector<EvalRecord> run_detection(const Model& model, const std::vector<Sample>& data,
                                      const PromptTable& prompts, const DecodeOptions& opt = {},
                                      const DomainClassifier* classifier = nullptr);

struct ConflictStats {
  std::size_t elements = 0;   // conflict-kind ground-truth boxes
  std::size_t localized = 0;  // with a detection of any class at IoU >= 0.5
  std::size_t correct = 0;    // ... whose top-scoring such detection has the domain's label
  double accuracy() const { return localized ? static_cast<double>(correct) / static_cast<double>(localized) : 0.0; }
  double coverage() const { return elements ? static_cast<double>(localized) / static_cast<double>(elements) : 0.0; }
};

/// Classification accuracy on the elements each domain renders as its
/// conflict kind.
ConflictStats conflict_accuracy(const std::vector<EvalRecord>& records,
                                const std::vector<Sample>& data, const DatasetInfo& info);

}  // namespace domprompt
