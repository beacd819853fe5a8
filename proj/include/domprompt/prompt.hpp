#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "domprompt/nn.hpp"
#include "domprompt/tensor.hpp"

// Domain prompts: text generation from templates or description fixtures, a
// frozen bag-of-words text encoder, template selection by zero-shot accuracy,
// and the trainable projection into the visual token space.

namespace domprompt {

inline constexpr std::string_view kPlaceholder = "{Domain Class}";

struct PromptTemplate {
  std::string id;
  std::string text;

  /// Throws std::invalid_argument unless `text` holds exactly one placeholder.
  void validate() const;
  std::string fill(std::string_view domain) const;
};

/// The five stock templates, in the order they are listed on disk.
std::vector<PromptTemplate> default_templates();
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::filesystem::path& path, const std::vector<PromptTemplate>& t);

/// domain -> description, stored as `domain<TAB>description` lines.
using FixtureCorpus = std::map<std::string, std::string>;
FixtureCorpus load_fixtures(const std::filesystem::path& path);
void save_fixtures(const std::filesystem::path& path, const FixtureCorpus& fixtures);

enum class PromptMode { heuristic, fixture, hybrid };
std::string_view mode_name(PromptMode mode);
PromptMode parse_mode(std::string_view text);

/// Resolves the prompt text for `domain`. `fixtures` is required by the
/// fixture and hybrid modes, `tmpl` by heuristic and hybrid.
std::string generate_prompt(PromptMode mode, const std::string& domain,
                            const FixtureCorpus* fixtures, const PromptTemplate* tmpl);

std::vector<std::string> tokenize(std::string_view text);

/// Seeded hash-bucket embedding table; mean of token vectors, L2-normalised.
/// Holds no trainable state and never records on a tape.
class FrozenTextEncoder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed7e47;

  explicit FrozenTextEncoder(std::uint64_t seed = kDefaultSeed, std::size_t dim = 32,
                             std::size_t buckets = 4096);

  Tensor encode(std::string_view text, Precision precision = Precision::f32) const;

  std::size_t dim() const { return dim_; }
  std::size_t buckets() const { return buckets_; }
  std::uint64_t seed() const { return seed_; }
  const Tensor& table() const { return table_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::size_t buckets_;
  Tensor table_;  // [buckets x dim], f32
};

struct DomainPrompt {
  std::string domain;
  PromptMode mode = PromptMode::heuristic;
  std::string text;
  Tensor embedding;  // [D_prompt], detached
};

DomainPrompt make_domain_prompt(const FrozenTextEncoder& enc, PromptMode mode,
                                const std::string& domain, const FixtureCorpus* fixtures,
                                const PromptTemplate* tmpl,
                                Precision precision = Precision::f32);

double cosine(const Tensor& a, const Tensor& b);

/// Index of the domain whose filled template embeds closest (cosine) to
/// `image_embedding`; ties go to the lowest index.
std::size_t zero_shot_classify(const FrozenTextEncoder& enc, const Tensor& image_embedding,
                               const std::vector<std::string>& domains,
                               const PromptTemplate& tmpl);

/// Top `k` templates by descending score; equal scores keep input order.
std::vector<PromptTemplate> select_templates(
    const std::vector<PromptTemplate>& candidates,
    const std::function<double(const PromptTemplate&)>& scorer, std::size_t k);

/// Synthetic "image" embeddings: the text embedding of a domain signature
/// plus Gaussian noise. The signature is the bare domain name, or a filled
/// template when one is given, which makes images align best with that
/// phrasing.
struct CalibrationSet {
  std::vector<std::string> domains;
  std::vector<Tensor> embeddings;
  std::vector<std::size_t> labels;
};

CalibrationSet make_calibration_set(const FrozenTextEncoder& enc,
                                    const std::vector<std::string>& domains,
                                    std::size_t per_domain, double noise, std::uint64_t seed,
                                    const PromptTemplate* signature = nullptr);

double zero_shot_accuracy(const FrozenTextEncoder& enc, const CalibrationSet& set,
                          const PromptTemplate& tmpl);

/// Mean over samples of cos(true class) - max cos(other classes).
double zero_shot_margin(const FrozenTextEncoder& enc, const CalibrationSet& set,
                        const PromptTemplate& tmpl);

/// Two-layer projection D_prompt -> D -> D (GELU between).
struct PromptMlp {
  Linear fc1, fc2;

  static PromptMlp create(ParamStore& store, const std::string& name, std::size_t prompt_dim,
                          std::size_t dim);
  std::size_t in_dim() const { return fc1.weight.dim(0); }
  std::size_t out_dim() const { return fc2.weight.dim(1); }
};

/// Projects `p_v` ([D_prompt] or [1 x D_prompt]) to a [1 x D] token.
Tensor project_prompt(const Tensor& p_v, const PromptMlp& mlp);

}  // namespace domprompt
