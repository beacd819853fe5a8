#include "domprompt/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "domprompt/snapshot.hpp"
#include "json.hpp"

namespace domprompt {

namespace {

std::size_t pyramid_levels(const EncoderConfig& e) {
  switch (e.backbone) {
    case Backbone::vit: return tap_layers(e.layers).size();
    case Backbone::swin: return e.swin_stages;
    case Backbone::cnn: return e.cnn_widths.size();
  }
  return 0;
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  if (num_classes == 0) throw std::invalid_argument("model config: zero classes");
  if (head == HeadKind::set) {
    if (set_head.queries == 0) throw std::invalid_argument("model config: zero queries");
    if (set_head.memory_level >= pyramid_levels(encoder)) {
      throw std::invalid_argument("model config: set head memory level beyond the pyramid");
    }
  }
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream s;
  s << encoder.fingerprint() << ";head=" << head_name(head) << ";classes=" << num_classes
    << ";precision=" << (precision == Precision::f64 ? "f64" : "f32");
  if (head == HeadKind::set) {
    s << ";queries=" << set_head.queries << ";dec_layers=" << set_head.layers
      << ";dec_heads=" << set_head.heads << ";dec_ffn=" << set_head.ffn_mult
      << ";memory=" << set_head.memory_level;
  }
  return s.str();
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  store_ = std::make_unique<ParamStore>(cfg_.seed, cfg_.precision);
  encoder_ = std::make_unique<Encoder>(cfg_.encoder, *store_);
  const std::size_t width = cfg_.encoder.fpn_width;
  if (cfg_.head == HeadKind::set) {
    SetHeadConfig sc = cfg_.set_head;
    sc.num_classes = cfg_.num_classes;
    const std::size_t grid = cfg_.encoder.image_size / encoder_->tap_strides()[sc.memory_level];
    set_head_.emplace(*store_, sc, width, grid * grid);
  } else {
    dense_head_.emplace(*store_, DenseHeadConfig{cfg_.num_classes, cfg_.encoder.image_size}, width);
  }
}

FeaturePyramid Model::features(const Tensor& image, const Tensor& p_v) const {
  return encoder_->encode(image, p_v);
}

Tensor Model::loss(const Tensor& image, const Tensor& p_v, const std::vector<Box>& gt,
                   const LossConfig& cfg) const {
  const FeaturePyramid f = features(image, p_v);
  if (set_head_) return set_loss(set_head_->forward(f), gt, cfg.set_weights);
  return dense_loss(dense_head_->forward(f), gt, cfg.lambda, cfg_.encoder.image_size);
}

std::vector<Detection> Model::detect(const Tensor& image, const Tensor& p_v,
                                     const DecodeOptions& opt) const {
  const FeaturePyramid f = features(image, p_v);
  if (set_head_) return decode_set(set_head_->forward(f), opt);
  return decode_dense(dense_head_->forward(f), opt);
}

std::vector<std::string> Model::inert_params() const {
  std::vector<std::string> out;
  if (set_head_) {
    // Level m of the pyramid reads laterals m.. and smoothing m only.
    const std::size_t m = cfg_.set_head.memory_level;
    const std::size_t n = encoder_->tap_strides().size();
    for (std::size_t l = 0; l < n; ++l) {
      const std::string p = "fpn.level" + std::to_string(l);
      if (l < m) {
        out.push_back(p + ".lateral.weight");
        out.push_back(p + ".lateral.bias");
      }
      if (l != m && n > 1) {
        out.push_back(p + ".smooth.weight");
        out.push_back(p + ".smooth.bias");
      }
    }
  }
  if (cfg_.encoder.prompted && cfg_.encoder.prompt_mask) {
    for (const auto& [name, t] : store_->params()) {
      if (name.rfind(Encoder::kPromptPrefix, 0) == 0 || name.find(".prompt_weight") != std::string::npos) {
        out.push_back(name);
      }
    }
  }
  return out;
}

// -- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[] = "DPCKPT1\n";

nlohmann::json read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[sizeof kMagic - 1];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  for (int i = 7; i >= 0; --i) len = (len << 8) | b[i];
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  return nlohmann::json::parse(text);
}

}  // namespace

void save_params(const std::filesystem::path& path, const ParamStore& params,
                 const std::string& fingerprint, const std::map<std::string, std::string>& meta) {
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : params.params()) names.push_back(name);
  const std::string header =
      nlohmann::json{{"fingerprint", fingerprint}, {"meta", meta}, {"params", names}}.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic - 1);
  std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out << header;
  for (const auto& [name, t] : params.params()) write_snapshot(out, t);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::map<std::string, std::string> load_params(const std::filesystem::path& path, ParamStore& params,
                                               const std::string& fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto header = read_header(in, path);
  const auto fp = header.at("fingerprint").get<std::string>();
  if (fp != fingerprint) {
    throw std::runtime_error("checkpoint " + path.string() + " was written for a different model:\n  file:  " +
                             fp + "\n  model: " + fingerprint);
  }
  if (header.at("params").size() != params.size()) {
    throw std::runtime_error("checkpoint " + path.string() + " holds " +
                             std::to_string(header.at("params").size()) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  for (const auto& name : header.at("params")) {
    Tensor stored = read_snapshot(in);
    Tensor& dst = params.at(name.get<std::string>());
    if (stored.shape() != dst.shape() || stored.precision() != dst.precision()) {
      throw std::runtime_error("checkpoint parameter " + name.get<std::string>() + " has shape " +
                               shape_str(stored.shape()));
    }
    visit_precision(dst.precision(), [&]<class T>() {
      auto src = stored.data<T>();
      std::copy(src.begin(), src.end(), dst.mutable_data<T>().begin());
    });
  }
  return header.at("meta").get<std::map<std::string, std::string>>();
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& meta) {
  save_params(path, model.params(), model.config().fingerprint(), meta);
}

std::string checkpoint_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in, path).at("fingerprint").get<std::string>();
}

std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path, Model& model) {
  return load_params(path, model.params(), model.config().fingerprint());
}

}  // namespace domprompt
