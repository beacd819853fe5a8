#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "domprompt/cli.hpp"

namespace domprompt {

namespace {

using nlohmann::json;

json to_json(const RunConfig& c) {
  return json{{"data", c.data},
              {"out", c.out},
              {"backbone", c.backbone},
              {"head", c.head},
              {"depth", c.depth},
              {"shared-mlp", c.shared_mlp},
              {"no-prompt", c.no_prompt},
              {"precision", c.precision},
              {"image-size", c.image_size},
              {"dim", c.dim},
              {"layers", c.layers},
              {"heads", c.heads},
              {"patch", c.patch},
              {"fpn-width", c.fpn_width},
              {"prompt-dim", c.prompt_dim},
              {"queries", c.queries},
              {"init-seed", c.init_seed},
              {"prompt-mode", c.prompt_mode},
              {"template", c.template_id},
              {"domain-source", c.domain_source},
              {"classifier-epochs", c.classifier_epochs},
              {"epochs", c.epochs},
              {"batch", c.batch},
              {"lr", c.lr},
              {"warmup-factor", c.warmup_factor},
              {"warmup-fraction", c.warmup_fraction},
              {"weight-decay", c.weight_decay},
              {"lambda", c.lambda},
              {"grad-clip", c.grad_clip},
              {"seed", c.seed}};
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  parse_backbone(backbone);
  parse_head(head);
  parse_depth(depth);
  parse_mode(prompt_mode);
  model_precision();
  if (domain_source != "gold" && domain_source != "classifier") {
    throw std::invalid_argument("domain-source must be gold or classifier, got '" + domain_source + "'");
  }
  if (shared_mlp && depth == "spe") throw std::invalid_argument("--shared-mlp needs DPE; it cannot be combined with --spe");
  if (classifier_epochs == 0) throw std::invalid_argument("classifier-epochs must be positive");
  train_config().validate();
}

Precision RunConfig::model_precision() const {
  if (precision == "f32") return Precision::f32;
  if (precision == "f64") return Precision::f64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + precision + "'");
}

ModelConfig RunConfig::model_config(const DatasetInfo& info) const {
  ModelConfig m;
  EncoderConfig& e = m.encoder;
  e.backbone = parse_backbone(backbone);
  e.image_size = image_size ? image_size : info.image_size;
  e.dim = dim;
  e.layers = layers;
  e.heads = heads;
  e.patch = patch;
  e.fpn_width = fpn_width;
  e.prompt_dim = prompt_dim;
  e.prompted = true;
  e.depth = parse_depth(depth);
  e.shared_mlp = shared_mlp;
  e.prompt_mask = no_prompt;
  m.head = parse_head(head);
  m.num_classes = info.classes.size();
  m.set_head.num_classes = m.num_classes;
  m.set_head.queries = queries;
  m.precision = model_precision();
  m.seed = init_seed;
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = batch;
  t.base_lr = lr;
  t.warmup_factor = warmup_factor;
  t.warmup_fraction = warmup_fraction;
  t.adamw.weight_decay = weight_decay;
  t.loss.lambda = lambda;
  t.grad_clip = grad_clip;
  t.seed = seed;
  return t;
}

ClassifierConfig RunConfig::classifier_config(const DatasetInfo& info) const {
  ClassifierConfig c;
  c.encoder = model_config(info).encoder;
  c.encoder.prompted = false;
  c.encoder.prompt_mask = false;
  c.encoder.shared_mlp = false;
  c.epochs = classifier_epochs;
  c.batch = batch;
  c.base_lr = lr;
  c.seed = init_seed;
  c.precision = model_precision();
  return c;
}

PromptSettings RunConfig::prompt_settings(const std::filesystem::path& data_dir) const {
  PromptSettings s;
  s.mode = parse_mode(prompt_mode);
  const auto fixtures = data_dir / "fixtures.tsv";
  if (std::filesystem::exists(fixtures)) s.fixtures = load_fixtures(fixtures);
  const auto templates = data_dir / "templates.txt";
  const auto all = std::filesystem::exists(templates) ? load_templates(templates) : default_templates();
  bool found = false;
  for (const auto& t : all) {
    if (t.id == template_id) {
      s.tmpl = t;
      found = true;
    }
  }
  if (!found) throw std::invalid_argument("unknown template id '" + template_id + "'");
  return s;
}

std::string run_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

RunConfig run_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c;
  take(j, "data", c.data);
  take(j, "out", c.out);
  take(j, "backbone", c.backbone);
  take(j, "head", c.head);
  take(j, "depth", c.depth);
  take(j, "shared-mlp", c.shared_mlp);
  take(j, "no-prompt", c.no_prompt);
  take(j, "precision", c.precision);
  take(j, "image-size", c.image_size);
  take(j, "dim", c.dim);
  take(j, "layers", c.layers);
  take(j, "heads", c.heads);
  take(j, "patch", c.patch);
  take(j, "fpn-width", c.fpn_width);
  take(j, "prompt-dim", c.prompt_dim);
  take(j, "queries", c.queries);
  take(j, "init-seed", c.init_seed);
  take(j, "prompt-mode", c.prompt_mode);
  take(j, "template", c.template_id);
  take(j, "domain-source", c.domain_source);
  take(j, "classifier-epochs", c.classifier_epochs);
  take(j, "epochs", c.epochs);
  take(j, "batch", c.batch);
  take(j, "lr", c.lr);
  take(j, "warmup-factor", c.warmup_factor);
  take(j, "warmup-fraction", c.warmup_fraction);
  take(j, "weight-decay", c.weight_decay);
  take(j, "lambda", c.lambda);
  take(j, "grad-clip", c.grad_clip);
  take(j, "seed", c.seed);
  return c;
}

std::string run_config_ini(const RunConfig& cfg) {
  std::ostringstream o;
  o << "[train]\n";
  const json j = to_json(cfg);
  for (const auto& [key, value] : j.items()) {
    o << key << " = " << value.dump() << "\n";
  }
  return o.str();
}

}  // namespace domprompt
