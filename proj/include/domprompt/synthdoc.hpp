#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "domprompt/box.hpp"
#include "domprompt/prompt.hpp"
#include "domprompt/tensor.hpp"

// Procedural document pages: domain-parameterised layouts rasterised as
// glyph textures, labeling-style transforms, label-scheme mapping and the
// on-disk dataset format.

namespace domprompt {

/// Renderable element kinds; the index doubles as the class id.
inline constexpr std::array<std::string_view, 9> kElementKinds = {
    "text", "title", "figure", "table", "list", "caption", "footnote", "page-header", "page-footer"};
inline constexpr std::size_t kNumKinds = kElementKinds.size();

int kind_index(std::string_view name);  // throws on unknown names
std::vector<std::string> class_names();

/// Stroke texture standing in for a script. Units are pixels at a 64 px page.
struct Texture {
  std::string name = "latin";
  int pitch = 3;  // line spacing
  int stroke = 1;
  int word_min = 2, word_max = 6;
  int word_gap = 1;
  double density = 0.85;  // chance a word slot is inked
  bool vertical = false;
  bool rtl = false;

  void validate() const;
};

/// The seven script textures; the first is the default.
std::vector<Texture> texture_presets();
const Texture& texture_preset(std::string_view name);

struct DomainSpec {
  std::string name;
  /// P(1 column), P(2 columns), ...
  std::vector<double> columns = {0.5, 0.5};
  /// Element mix in kElementKinds order.
  std::array<double, kNumKinds> mix = {0.4, 0.15, 0.15, 0.1, 0.1, 0.1, 0.0, 0.0, 0.0};
  Texture texture;
  /// Body elements per column.
  int min_per_column = 2, max_per_column = 3;
  /// Element rendered with the canonical texture in every domain; its label
  /// here is `conflict_label`.
  std::string conflict_class;
  std::string conflict_label;

  void validate() const;
  int label_of(int kind) const;
};

enum class LabelingStyle { per_item, merged };
std::string_view style_name(LabelingStyle s);
LabelingStyle parse_style(std::string_view text);

/// A placed element. Lists keep their item boxes so the labeling style can
/// be changed after the fact.
struct ElementGroup {
  int kind = 0;
  int label = 0;
  Box extent;
  std::vector<Box> items;  // lists only; they tile `extent` top to bottom
  std::uint64_t seed = 0;
};

struct DocumentSample {
  Tensor image;  // [1 x S x S], f32, ink in (0, 1], background 0
  std::vector<Box> annotations;
  std::string domain;
  LabelingStyle style = LabelingStyle::per_item;
  std::uint64_t seed = 0;
  std::vector<ElementGroup> groups;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Placement is resampled up to 100 times before GenerationError.
DocumentSample generate_document(const DomainSpec& spec, LabelingStyle style, std::uint64_t seed,
                                 std::size_t image_size = 64);

/// Draws one element into a row-major S x S raster. The pixels depend only on
/// (kind, extent, seed, texture).
void render_element(std::vector<float>& raster, std::size_t image_size, const ElementGroup& group,
                    const Texture& texture);

std::vector<Box> annotations_for(const std::vector<ElementGroup>& groups, LabelingStyle style);

/// Rebuilds the annotations under `target`; the image is shared, not copied.
/// Throws std::invalid_argument when the sample has annotations but no
/// group metadata.
DocumentSample restyle(const DocumentSample& sample, LabelingStyle target);

/// Tight enclosing box; label from the first box.
Box enclosing(const std::vector<Box>& boxes);

/// Source class name -> target class name, or kRetain to keep the name.
inline constexpr std::string_view kRetain = "retain";
using LabelMapping = std::map<std::string, std::string>;

/// Fine-grained page scheme to the coarse five-class scheme plus the
/// retained page furniture.
LabelMapping fine_to_coarse_mapping();
std::vector<std::string> fine_scheme();
std::vector<std::string> coarse_scheme();

/// Relabels boxes from `source` class ids to `target` class ids. Throws
/// std::invalid_argument on a class without a mapping entry or a mapped name
/// missing from `target`.
std::vector<Box> map_labels(const std::vector<Box>& boxes, const std::vector<std::string>& source,
                            const LabelMapping& mapping, const std::vector<std::string>& target);

// -- datasets ---------------------------------------------------------------

struct DomainPlan {
  DomainSpec spec;
  LabelingStyle style = LabelingStyle::per_item;
  std::string description;  // fixture text
};

struct DatasetSizes {
  std::size_t train = 0, val = 0, test = 0;
};

struct DatasetPlan {
  std::string name;
  std::vector<DomainPlan> domains;
  DatasetSizes sizes;
  /// Domain excluded from train/val and used alone for test; empty for none.
  std::string holdout;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;

  void validate() const;
};

inline constexpr std::array<std::string_view, 4> kPresets = {"conflict", "holdout", "multilang",
                                                             "ablation-depth"};
DatasetPlan preset_plan(std::string_view preset, std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string domain;
  LabelingStyle style = LabelingStyle::per_item;
  std::uint64_t seed = 0;
  std::string raster;  // relative to the dataset directory
  std::vector<Box> annotations;
  std::vector<ElementGroup> groups;
};

struct DatasetInfo {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::string holdout;
  std::vector<std::string> classes;
  std::vector<std::string> domains;
  std::map<std::string, LabelingStyle> styles;
  std::map<std::string, std::string> conflict;  // domain -> conflict element kind
};

/// Writes dataset.json, {train,val,test}.jsonl, rasters/, fixtures.tsv and
/// templates.txt under `dir`. Domains are assigned round-robin.
void build_dataset(const DatasetPlan& plan, const std::filesystem::path& dir);

DatasetInfo load_dataset_info(const std::filesystem::path& dir);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& dir, std::string_view split);
Tensor load_raster(const std::filesystem::path& dir, const ManifestEntry& entry);

/// Boxes as [class, cx, cy, w, h] rows.
std::string manifest_line(const ManifestEntry& entry);
ManifestEntry parse_manifest_line(const std::string& line);

}  // namespace domprompt
