#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "domprompt/encoder.hpp"
#include "domprompt/heads.hpp"

// Encoder plus detection head under one parameter store, and the checkpoint
// file that carries its weights.

namespace domprompt {

struct ModelConfig {
  EncoderConfig encoder;
  HeadKind head = HeadKind::dense;
  SetHeadConfig set_head;
  std::size_t num_classes = 9;
  Precision precision = Precision::f32;
  std::uint64_t seed = 1;  // parameter initialisation

  void validate() const;
  /// Everything that changes parameter names or shapes.
  std::string fingerprint() const;
};

struct LossConfig {
  double lambda = 1.0;  // dense head: R_loc + lambda * R_cls
  SetLossWeights set_weights;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const Encoder& encoder() const { return *encoder_; }

  FeaturePyramid features(const Tensor& image, const Tensor& p_v) const;
  Tensor loss(const Tensor& image, const Tensor& p_v, const std::vector<Box>& gt,
              const LossConfig& cfg) const;
  std::vector<Detection> detect(const Tensor& image, const Tensor& p_v,
                                const DecodeOptions& opt = {}) const;

  /// Parameters with no path to the loss in this configuration: pyramid
  /// levels the set head never reads, and every prompt weight when the
  /// prompt is masked.
  std::vector<std::string> inert_params() const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<Encoder> encoder_;
  std::optional<SetHead> set_head_;
  std::optional<DenseHead> dense_head_;
};

/// Any parameter store in the checkpoint format below, tagged with `fingerprint`.
void save_params(const std::filesystem::path& path, const ParamStore& params,
                 const std::string& fingerprint, const std::map<std::string, std::string>& meta = {});
/// Throws std::runtime_error on a fingerprint or parameter mismatch.
std::map<std::string, std::string> load_params(const std::filesystem::path& path, ParamStore& params,
                                               const std::string& fingerprint);

/// Binary checkpoint: magic line, u64 header length, JSON header (fingerprint,
/// metadata, parameter names in order), then one tensor snapshot per name.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& meta = {});
/// Throws std::runtime_error when the file's fingerprint differs from the
/// model's. Returns the stored metadata.
std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path, Model& model);
/// Fingerprint recorded in a checkpoint file.
std::string checkpoint_fingerprint(const std::filesystem::path& path);

}  // namespace domprompt
