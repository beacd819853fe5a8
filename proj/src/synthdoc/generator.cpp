#include <algorithm>
#include <cmath>
#include <set>

#include "domprompt/rng.hpp"
#include "domprompt/synthdoc.hpp"

namespace domprompt {

int kind_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumKinds; ++i) {
    if (kElementKinds[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown element kind '" + std::string(name) + "'");
}

std::vector<std::string> class_names() { return {kElementKinds.begin(), kElementKinds.end()}; }

void Texture::validate() const {
  if (pitch < 2 || stroke < 1 || stroke >= pitch || word_min < 1 || word_max < word_min ||
      word_gap < 1 || density <= 0 || density > 1) {
    throw std::invalid_argument("texture '" + name + "' has invalid stroke parameters");
  }
}

std::vector<Texture> texture_presets() {
  return {
      {"latin", 3, 1, 2, 6, 1, 0.85, false, false},
      {"cjk", 4, 2, 2, 2, 1, 0.95, false, false},
      {"arabic", 3, 1, 3, 9, 1, 0.9, false, true},
      {"cyrillic", 3, 1, 4, 8, 1, 0.85, false, false},
      {"devanagari", 4, 1, 6, 12, 1, 1.0, false, false},
      {"vertical-cjk", 4, 2, 2, 2, 1, 0.95, true, false},
      {"hangul", 4, 2, 2, 3, 2, 0.9, false, false},
  };
}

const Texture& texture_preset(std::string_view name) {
  static const std::vector<Texture> presets = texture_presets();
  for (const auto& t : presets) {
    if (t.name == name) return t;
  }
  throw std::invalid_argument("unknown texture '" + std::string(name) + "'");
}

void DomainSpec::validate() const {
  const auto fail = [&](const std::string& why) {
    throw std::invalid_argument("domain '" + name + "': " + why);
  };
  if (name.empty()) fail("empty name");
  double total = 0.0;
  for (double p : mix) {
    if (!(p >= 0)) fail("negative element probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("element probabilities sum to " + std::to_string(total));
  double col_total = 0.0;
  for (double p : columns) {
    if (!(p >= 0)) fail("negative column probability");
    col_total += p;
  }
  if (columns.empty() || columns.size() > 3 || std::abs(col_total - 1.0) > 1e-9) {
    fail("column distribution must cover 1 to 3 columns and sum to 1");
  }
  if (min_per_column < 1 || max_per_column < min_per_column || max_per_column > 4) {
    fail("elements per column must satisfy 1 <= min <= max <= 4");
  }
  texture.validate();
  if (!conflict_class.empty()) {
    kind_index(conflict_class);
    if (!conflict_label.empty()) kind_index(conflict_label);
  } else if (!conflict_label.empty()) {
    fail("conflict_label without conflict_class");
  }
}

int DomainSpec::label_of(int kind) const {
  if (!conflict_class.empty() && kind == kind_index(conflict_class)) {
    return kind_index(conflict_label.empty() ? conflict_class : conflict_label);
  }
  return kind;
}

std::string_view style_name(LabelingStyle s) {
  return s == LabelingStyle::per_item ? "per_item" : "merged";
}

LabelingStyle parse_style(std::string_view text) {
  if (text == "per_item") return LabelingStyle::per_item;
  if (text == "merged") return LabelingStyle::merged;
  throw std::invalid_argument("unknown labeling style " + std::string(text));
}

Box enclosing(const std::vector<Box>& boxes) {
  if (boxes.empty()) throw std::invalid_argument("enclosing: no boxes");
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const Box& b : boxes) {
    const auto c = b.corners();
    x0 = std::min(x0, c[0]);
    y0 = std::min(y0, c[1]);
    x1 = std::max(x1, c[2]);
    y1 = std::max(y1, c[3]);
  }
  return Box::from_corners(x0, y0, x1, y1, boxes.front().label);
}

// -- layout -----------------------------------------------------------------

namespace {

// Geometry in units of a 64 px page.
constexpr int kDesign = 64;
constexpr int kMargin = 2;
constexpr int kBodyTop = 8, kBodyBottom = 56;
constexpr int kGap = 2;
constexpr int kHeaderTop = 2, kFooterTop = 59, kBandHeight = 3;
constexpr int kListItem = 4;
constexpr int kMaxAttempts = 100;

enum Kind { kText, kTitle, kFigure, kTable, kList, kCaption, kFootnote, kHeader, kFooter };

struct KindGeom {
  int min_h, max_h;
  double min_wf, max_wf;
  bool left;
};

constexpr KindGeom kGeom[kNumKinds] = {
    {6, 16, 0.85, 1.0, true},   // text
    {3, 5, 0.4, 0.9, true},     // title
    {8, 18, 0.5, 1.0, false},   // figure
    {8, 16, 0.7, 1.0, false},   // table
    {8, 16, 0.6, 1.0, true},    // list
    {3, 4, 0.5, 1.0, false},    // caption
    {3, 5, 0.7, 1.0, true},     // footnote
    {3, 3, 0.0, 0.0, false},    // page-header
    {3, 3, 0.0, 0.0, false},    // page-footer
};

struct Rect {
  int x0, y0, x1, y1;
};

struct Placed {
  int kind;
  Rect rect;
  std::uint64_t seed;
};

bool is_band(int kind) { return kind == kHeader || kind == kFooter; }

// One layout attempt; empty when the drawn elements do not fit.
std::vector<Placed> try_layout(const DomainSpec& spec, Rng& rng) {
  const int cols = static_cast<int>(rng.categorical(spec.columns)) + 1;
  const int col_w = (kDesign - 2 * kMargin - kGap * (cols - 1)) / cols;
  int total = 0;
  for (int c = 0; c < cols; ++c) total += rng.between(spec.min_per_column, spec.max_per_column);
  const std::vector<double> mix(spec.mix.begin(), spec.mix.end());
  std::vector<int> kinds;
  for (int i = 0; i < total; ++i) kinds.push_back(static_cast<int>(rng.categorical(mix)));

  std::vector<std::vector<int>> column(static_cast<std::size_t>(cols));
  std::vector<Placed> out;
  int slots[2] = {0, 0};  // used band slots: header, footer
  int first_slot[2] = {0, 0};
  for (int kind : kinds) {
    if (is_band(kind)) {
      const int band = kind == kHeader ? 0 : 1;
      if (slots[band] == 2) return {};
      const int side = slots[band] == 0 ? static_cast<int>(rng.below(2)) : 1 - first_slot[band];
      if (slots[band] == 0) first_slot[band] = side;
      ++slots[band];
      const int w = rng.between(8, 24);
      const int half = kDesign / 2;
      const int lo = side == 0 ? kMargin : half;
      const int hi = side == 0 ? half - w : kDesign - kMargin - w;
      const int x = rng.between(lo, hi);
      const int y = band == 0 ? kHeaderTop : kFooterTop;
      out.push_back({kind, {x, y, x + w, y + kBandHeight}, rng.next_u64()});
      continue;
    }
    auto least = std::min_element(column.begin(), column.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    least->push_back(kind);
  }

  for (int c = 0; c < cols; ++c) {
    const auto& ks = column[static_cast<std::size_t>(c)];
    if (ks.empty()) continue;
    const int n = static_cast<int>(ks.size());
    int spare = (kBodyBottom - kBodyTop) - kGap * (n - 1);
    for (int k : ks) spare -= kGeom[k].min_h;
    if (spare < 0) return {};
    std::vector<int> heights;
    for (int k : ks) {
      int h = kGeom[k].min_h + rng.between(0, std::min(kGeom[k].max_h - kGeom[k].min_h, spare));
      if (k == kList) h -= h % kListItem;
      spare -= h - kGeom[k].min_h;
      heights.push_back(h);
    }
    const int col_x = kMargin + c * (col_w + kGap);
    int y = kBodyTop;
    for (int i = 0; i < n; ++i) {
      const int k = ks[static_cast<std::size_t>(i)];
      const int lead = rng.between(0, spare / (n - i + 1));
      spare -= lead;
      y += lead;
      const int w = std::max(4, static_cast<int>(std::lround(
                                    col_w * rng.uniform(kGeom[k].min_wf, kGeom[k].max_wf))));
      const int x = kGeom[k].left ? col_x : col_x + rng.between(0, col_w - w);
      const int h = heights[static_cast<std::size_t>(i)];
      out.push_back({k, {x, y, x + w, y + h}, rng.next_u64()});
      y += h + kGap;
    }
  }
  return out;
}

// -- rasterisation ----------------------------------------------------------

class Canvas {
 public:
  Canvas(std::vector<float>& px, int size) : px_(px), size_(size) {}

  void fill(int x0, int y0, int x1, int y1, float v) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, size_);
    y1 = std::min(y1, size_);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        float& p = px_[static_cast<std::size_t>(y * size_ + x)];
        p = std::max(p, v);
      }
    }
  }

 private:
  std::vector<float>& px_;
  int size_;
};

// Word strokes along one line. `along` runs over [a0, a1) in the reading
// direction, `across` is the line's top (or left) edge.
void stroke_line(Canvas& cv, Rng& rng, const Texture& t, int s, bool vertical, bool rtl, int a0,
                 int a1, int across, int thickness, int min_word, int max_word, double density,
                 float ink) {
  int pos = a0;
  while (pos < a1) {
    const int end = std::min(a1, pos + s * rng.between(min_word, max_word));
    if (rng.bernoulli(density)) {
      const int p0 = rtl ? a0 + a1 - end : pos;
      const int p1 = rtl ? a0 + a1 - pos : end;
      if (vertical) {
        cv.fill(across, p0, across + thickness, p1, ink);
      } else {
        cv.fill(p0, across, p1, across + thickness, ink);
      }
    }
    pos = end + s * t.word_gap;
  }
}

// Block of text lines filling `r`; the last line stops short.
void text_block(Canvas& cv, Rng& rng, const Texture& t, int s, const Rect& r, int pitch, int thickness,
                int min_word, int max_word, double density, float ink, bool vertical) {
  const int a0 = vertical ? r.y0 : r.x0, a1 = vertical ? r.y1 : r.x1;
  const int c0 = vertical ? r.x0 : r.y0, c1 = vertical ? r.x1 : r.y1;
  for (int c = c0; c + thickness <= c1; c += pitch) {
    const bool last = c + pitch + thickness > c1;
    const int len = last ? std::max(s, static_cast<int>((a1 - a0) * rng.uniform(0.3, 1.0))) : a1 - a0;
    stroke_line(cv, rng, t, s, vertical, t.rtl, a0, a0 + len, c, thickness, min_word, max_word,
                density, ink);
  }
}

}  // namespace

void render_element(std::vector<float>& raster, std::size_t image_size, const ElementGroup& g,
                    const Texture& t) {
  const int size = static_cast<int>(image_size);
  const int s = size / kDesign;
  const auto c = g.extent.corners();
  const Rect r{static_cast<int>(std::lround(c[0] * size)), static_cast<int>(std::lround(c[1] * size)),
               static_cast<int>(std::lround(c[2] * size)), static_cast<int>(std::lround(c[3] * size))};
  Canvas cv(raster, size);
  Rng rng(g.seed);
  switch (g.kind) {
    case kText:
      text_block(cv, rng, t, s, r, s * t.pitch, s * t.stroke, t.word_min, t.word_max, t.density, 1.0f,
                 t.vertical);
      break;
    case kTitle:
      text_block(cv, rng, t, s, r, r.y1 - r.y0, std::min(s * (t.stroke + 1), r.y1 - r.y0 - s),
                 t.word_min + 2, t.word_max + 3, 1.0, 1.0f, false);
      break;
    case kFigure: {
      cv.fill(r.x0, r.y0, r.x1, r.y1, 0.3f);
      const int w = r.x1 - r.x0, h = r.y1 - r.y0;
      const int iw = std::max(s, static_cast<int>(w * rng.uniform(0.2, 0.6)));
      const int ih = std::max(s, static_cast<int>(h * rng.uniform(0.2, 0.6)));
      const int ix = r.x0 + s + static_cast<int>(rng.below(static_cast<std::size_t>(std::max(1, w - iw - 2 * s))));
      const int iy = r.y0 + s + static_cast<int>(rng.below(static_cast<std::size_t>(std::max(1, h - ih - 2 * s))));
      cv.fill(ix, iy, ix + iw, iy + ih, 0.7f);
      cv.fill(r.x0, r.y0, r.x1, r.y0 + s, 1.0f);
      cv.fill(r.x0, r.y1 - s, r.x1, r.y1, 1.0f);
      cv.fill(r.x0, r.y0, r.x0 + s, r.y1, 1.0f);
      cv.fill(r.x1 - s, r.y0, r.x1, r.y1, 1.0f);
      break;
    }
    case kTable: {
      const float ink = 0.9f;
      const int row = s * rng.between(3, 4);
      for (int y = r.y0; y < r.y1; y += row) cv.fill(r.x0, y, r.x1, y + s, ink);
      cv.fill(r.x0, r.y1 - s, r.x1, r.y1, ink);
      cv.fill(r.x0, r.y0, r.x0 + s, r.y1, ink);
      cv.fill(r.x1 - s, r.y0, r.x1, r.y1, ink);
      const int cols = rng.between(1, 3);
      for (int k = 1; k <= cols; ++k) {
        const int x = r.x0 + (r.x1 - r.x0) * k / (cols + 1);
        cv.fill(x, r.y0, x + s, r.y1, ink);
      }
      break;
    }
    case kList:
      for (const Box& item : g.items) {
        const int y = static_cast<int>(std::lround((item.cy - item.h / 2) * size));
        cv.fill(r.x0, y + s, r.x0 + 2 * s, y + 3 * s, 1.0f);
        const int end = r.x0 + 3 * s + static_cast<int>((r.x1 - r.x0 - 3 * s) * rng.uniform(0.5, 1.0));
        stroke_line(cv, rng, t, s, false, false, r.x0 + 3 * s, end, y + s, s * t.stroke, t.word_min,
                    t.word_max, t.density, 1.0f);
      }
      break;
    case kCaption: {
      const int end = r.x0 + static_cast<int>((r.x1 - r.x0) * rng.uniform(0.6, 1.0));
      for (int x = r.x0; x < end; x += 2 * s) cv.fill(x, r.y0 + s, x + s, r.y0 + 2 * s, 0.7f);
      break;
    }
    case kFootnote:
      text_block(cv, rng, t, s, r, 2 * s, s, t.word_min, t.word_max, t.density, 0.5f, false);
      break;
    case kHeader:
      stroke_line(cv, rng, t, s, false, t.rtl, r.x0, r.x1, r.y0 + s, s, t.word_min, t.word_max, 1.0,
                  0.6f);
      break;
    case kFooter:
      cv.fill(r.x0, r.y0 + s, r.x1 - 3 * s, r.y0 + 2 * s, 0.6f);
      cv.fill(r.x1 - 2 * s, r.y0, r.x1, r.y0 + 2 * s, 1.0f);
      break;
    default:
      throw std::invalid_argument("render_element: bad kind " + std::to_string(g.kind));
  }
}

std::vector<Box> annotations_for(const std::vector<ElementGroup>& groups, LabelingStyle style) {
  std::vector<Box> out;
  for (const ElementGroup& g : groups) {
    if (g.items.empty()) {
      out.push_back(g.extent);
    } else if (style == LabelingStyle::per_item) {
      out.insert(out.end(), g.items.begin(), g.items.end());
    } else {
      out.push_back(enclosing(g.items));
    }
  }
  return out;
}

DocumentSample generate_document(const DomainSpec& spec, LabelingStyle style, std::uint64_t seed,
                                 std::size_t image_size) {
  spec.validate();
  if (image_size == 0 || image_size % kDesign != 0) {
    throw std::invalid_argument("page size must be a positive multiple of 64, got " +
                                std::to_string(image_size));
  }
  Rng rng(seed);
  std::vector<Placed> layout;
  for (int attempt = 0; attempt < kMaxAttempts && layout.empty(); ++attempt) layout = try_layout(spec, rng);
  if (layout.empty()) {
    throw GenerationError("domain '" + spec.name + "': no feasible layout after " +
                          std::to_string(kMaxAttempts) + " attempts (seed " + std::to_string(seed) + ")");
  }

  DocumentSample doc;
  doc.domain = spec.name;
  doc.style = style;
  doc.seed = seed;
  const auto norm = [](int v) { return static_cast<double>(v) / kDesign; };
  const Texture canonical;
  std::vector<float> px(image_size * image_size, 0.0f);
  for (const Placed& p : layout) {
    ElementGroup g;
    g.kind = p.kind;
    g.label = spec.label_of(p.kind);
    g.extent = Box::from_corners(norm(p.rect.x0), norm(p.rect.y0), norm(p.rect.x1), norm(p.rect.y1), g.label);
    g.seed = p.seed;
    if (p.kind == kList) {
      for (int y = p.rect.y0; y < p.rect.y1; y += kListItem) {
        g.items.push_back(Box::from_corners(norm(p.rect.x0), norm(y), norm(p.rect.x1), norm(y + kListItem), g.label));
      }
    }
    const bool shared = !spec.conflict_class.empty() && p.kind == kind_index(spec.conflict_class);
    render_element(px, image_size, g, shared ? canonical : spec.texture);
    doc.groups.push_back(std::move(g));
  }
  doc.annotations = annotations_for(doc.groups, style);
  doc.image = Tensor::from_buffer({1, image_size, image_size}, std::move(px));
  return doc;
}

DocumentSample restyle(const DocumentSample& sample, LabelingStyle target) {
  if (sample.groups.empty() && !sample.annotations.empty()) {
    throw std::invalid_argument("restyle: sample has no element-group metadata");
  }
  DocumentSample out = sample;
  out.style = target;
  out.annotations = annotations_for(sample.groups, target);
  return out;
}

// -- label schemes ----------------------------------------------------------

std::vector<std::string> fine_scheme() {
  return {"caption", "footnote", "formula",  "list-item", "page-footer", "page-header",
          "picture", "section-header", "table", "text", "title"};
}

std::vector<std::string> coarse_scheme() {
  return {"text", "title", "list", "table", "figure", "page-header", "page-footer", "formula"};
}

LabelMapping fine_to_coarse_mapping() {
  const std::string keep(kRetain);
  return {{"caption", "text"},       {"footnote", "text"},      {"text", "text"},
          {"title", "title"},        {"section-header", "title"}, {"list-item", "list"},
          {"table", "table"},        {"picture", "figure"},     {"page-footer", keep},
          {"page-header", keep},     {"formula", keep}};
}

std::vector<Box> map_labels(const std::vector<Box>& boxes, const std::vector<std::string>& source,
                            const LabelMapping& mapping, const std::vector<std::string>& target) {
  std::vector<Box> out;
  out.reserve(boxes.size());
  for (const Box& b : boxes) {
    if (b.label < 0 || static_cast<std::size_t>(b.label) >= source.size()) {
      throw std::invalid_argument("map_labels: class id " + std::to_string(b.label) + " not in source scheme");
    }
    const std::string& name = source[static_cast<std::size_t>(b.label)];
    auto it = mapping.find(name);
    if (it == mapping.end()) throw std::invalid_argument("map_labels: no mapping for '" + name + "'");
    const std::string& to = it->second == kRetain ? name : it->second;
    auto pos = std::find(target.begin(), target.end(), to);
    if (pos == target.end()) throw std::invalid_argument("map_labels: '" + to + "' not in target scheme");
    Box m = b;
    m.label = static_cast<int>(pos - target.begin());
    out.push_back(m);
  }
  return out;
}

}  // namespace domprompt
