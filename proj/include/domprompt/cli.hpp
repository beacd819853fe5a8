#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "domprompt/trainer.hpp"

// Command-line front end: gen-data, train and eval, run configuration and
// the SVG plots written next to reports.

namespace domprompt {

/// Everything `train` needs. Defaults here, then the config file, then flags.
struct RunConfig {
  std::string data;
  std::string out;

  // model
  std::string backbone = "vit";
  std::string head = "dense";
  std::string depth = "dpe";
  bool shared_mlp = false;
  bool no_prompt = false;
  std::string precision = "f32";
  std::size_t image_size = 0;  // 0: take it from the dataset
  std::size_t dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t patch = 8;
  std::size_t fpn_width = 32;
  std::size_t prompt_dim = 32;
  std::size_t queries = 16;
  std::uint64_t init_seed = 1;

  // prompts
  std::string prompt_mode = "heuristic";
  std::string template_id = "t5";
  std::string domain_source = "gold";
  std::size_t classifier_epochs = 10;

  // schedule
  std::size_t epochs = 12;
  std::size_t batch = 8;
  double lr = 3e-3;
  double warmup_factor = 0.01;
  double warmup_fraction = 0.05;
  double weight_decay = 0.01;
  double lambda = 1.0;
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on unknown names or bad combinations.
  void validate() const;
  ModelConfig model_config(const DatasetInfo& info) const;
  TrainConfig train_config() const;
  ClassifierConfig classifier_config(const DatasetInfo& info) const;
  PromptSettings prompt_settings(const std::filesystem::path& data_dir) const;
  Precision model_precision() const;
};

/// Keys are the long flag names without dashes.
std::string run_config_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
/// `[train]` section that `train --config` reads back.
std::string run_config_ini(const RunConfig& cfg);

/// argv without the program name. Returns the process exit code; `in` feeds
/// `--predictions -`.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err);

// -- plots ------------------------------------------------------------------

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& ys);
std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars);

}  // namespace domprompt
