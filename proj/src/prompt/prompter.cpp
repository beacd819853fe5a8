#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "domprompt/ops.hpp"
#include "domprompt/prompt.hpp"
#include "domprompt/rng.hpp"

namespace domprompt {
namespace {

std::size_t count_placeholders(std::string_view text) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(kPlaceholder); pos != std::string_view::npos;
       pos = text.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++n;
  }
  return n;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

void PromptTemplate::validate() const {
  const std::size_t n = count_placeholders(text);
  if (n != 1) {
    throw std::invalid_argument("template \"" + text + "\" has " + std::to_string(n) +
                                " placeholders, expected 1");
  }
}

std::string PromptTemplate::fill(std::string_view domain) const {
  validate();
  std::string out = text;
  out.replace(out.find(kPlaceholder), kPlaceholder.size(), domain);
  return out;
}

std::vector<PromptTemplate> default_templates() {
  return {
      {"t1", "A page comes from {Domain Class}"},
      {"t2", "A document page of {Domain Class}"},
      {"t3", "A piece of paper concerning with {Domain Class}"},
      {"t4", "A piece of paper comes from {Domain Class}"},
      {"t5", "A document page comes from {Domain Class}"},
  };
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template file " + path.string());
  std::vector<PromptTemplate> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    PromptTemplate t{"t" + std::to_string(out.size() + 1), line};
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

void save_templates(const std::filesystem::path& path, const std::vector<PromptTemplate>& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& tmpl : t) out << tmpl.text << '\n';
}

FixtureCorpus load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture file " + path.string());
  FixtureCorpus out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing tab");
    }
    out[trim(line.substr(0, tab))] = trim(line.substr(tab + 1));
  }
  return out;
}

void save_fixtures(const std::filesystem::path& path, const FixtureCorpus& fixtures) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [domain, text] : fixtures) out << domain << '\t' << text << '\n';
}

std::string_view mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::heuristic: return "heuristic";
    case PromptMode::fixture: return "fixture";
    case PromptMode::hybrid: return "hybrid";
  }
  return "?";
}

PromptMode parse_mode(std::string_view text) {
  if (text == "heuristic") return PromptMode::heuristic;
  if (text == "fixture") return PromptMode::fixture;
  if (text == "hybrid") return PromptMode::hybrid;
  throw std::invalid_argument("unknown prompt mode " + std::string(text));
}

std::string generate_prompt(PromptMode mode, const std::string& domain,
                            const FixtureCorpus* fixtures, const PromptTemplate* tmpl) {
  auto lookup = [&]() -> const std::string& {
    if (fixtures == nullptr) throw std::invalid_argument("prompt mode needs a fixture corpus");
    auto it = fixtures->find(domain);
    if (it == fixtures->end()) throw std::out_of_range("no fixture for domain " + domain);
    return it->second;
  };
  auto heuristic = [&] {
    if (tmpl == nullptr) throw std::invalid_argument("prompt mode needs a template");
    return tmpl->fill(domain);
  };
  switch (mode) {
    case PromptMode::heuristic: return heuristic();
    case PromptMode::fixture: return lookup();
    case PromptMode::hybrid: {
      std::string head = heuristic();
      return head + ". " + lookup();
    }
  }
  throw std::invalid_argument("bad prompt mode");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

FrozenTextEncoder::FrozenTextEncoder(std::uint64_t seed, std::size_t dim, std::size_t buckets)
    : seed_(seed), dim_(dim), buckets_(buckets) {
  Rng rng(mix_seed(seed, fnv1a("text-encoder")));
  std::vector<float> v(buckets * dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  table_ = Tensor::from_buffer({buckets, dim}, std::move(v));
}

Tensor FrozenTextEncoder::encode(std::string_view text, Precision precision) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty text");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];
  auto table = table_.data<float>();
  std::vector<double> acc(dim_, 0.0);
  const double n = static_cast<double>(tokens.size());
  for (const auto& [token, count] : counts) {
    const std::size_t bucket = fnv1a(token) % buckets_;
    const double w = static_cast<double>(count) / n;
    for (std::size_t d = 0; d < dim_; ++d) acc[d] += w * table[bucket * dim_ + d];
  }
  double norm = std::sqrt(std::inner_product(acc.begin(), acc.end(), acc.begin(), 0.0));
  if (norm == 0.0) norm = 1.0;
  for (auto& x : acc) x /= norm;
  return Tensor::from_values({dim_}, acc, precision);
}

DomainPrompt make_domain_prompt(const FrozenTextEncoder& enc, PromptMode mode,
                                const std::string& domain, const FixtureCorpus* fixtures,
                                const PromptTemplate* tmpl, Precision precision) {
  DomainPrompt p;
  p.domain = domain;
  p.mode = mode;
  p.text = generate_prompt(mode, domain, fixtures, tmpl);
  p.embedding = enc.encode(p.text, precision);
  return p;
}

double cosine(const Tensor& a, const Tensor& b) {
  const auto x = a.values(), y = b.values();
  if (x.size() != y.size()) {
    throw DimensionError("cosine: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0 || ny == 0) return 0.0;
  return dot / std::sqrt(nx * ny);
}

std::size_t zero_shot_classify(const FrozenTextEncoder& enc, const Tensor& image_embedding,
                               const std::vector<std::string>& domains,
                               const PromptTemplate& tmpl) {
  if (domains.size() < 2) throw std::invalid_argument("zero_shot_classify: need >= 2 domains");
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const double s = cosine(image_embedding, enc.encode(tmpl.fill(domains[i]), Precision::f64));
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

std::vector<PromptTemplate> select_templates(
    const std::vector<PromptTemplate>& candidates,
    const std::function<double(const PromptTemplate&)>& scorer, std::size_t k) {
  if (candidates.empty()) throw std::invalid_argument("select_templates: no candidates");
  if (k > candidates.size()) throw std::invalid_argument("select_templates: k exceeds candidates");
  std::vector<double> score;
  score.reserve(candidates.size());
  for (const auto& c : candidates) score.push_back(scorer(c));
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::vector<PromptTemplate> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(candidates[order[i]]);
  return out;
}

CalibrationSet make_calibration_set(const FrozenTextEncoder& enc,
                                    const std::vector<std::string>& domains,
                                    std::size_t per_domain, double noise, std::uint64_t seed,
                                    const PromptTemplate* signature) {
  CalibrationSet set;
  set.domains = domains;
  Rng rng(seed);
  for (std::size_t d = 0; d < domains.size(); ++d) {
    const std::string text = signature ? signature->fill(domains[d]) : domains[d];
    const auto base = enc.encode(text, Precision::f64).values();
    for (std::size_t i = 0; i < per_domain; ++i) {
      std::vector<double> v = base;
      for (auto& x : v) x += noise * rng.normal();
      set.embeddings.push_back(Tensor::from_values({v.size()}, v, Precision::f64));
      set.labels.push_back(d);
    }
  }
  return set;
}

namespace {

std::vector<std::vector<double>> class_cosines(const FrozenTextEncoder& enc,
                                               const CalibrationSet& set,
                                               const PromptTemplate& tmpl) {
  std::vector<Tensor> text;
  for (const auto& d : set.domains) text.push_back(enc.encode(tmpl.fill(d), Precision::f64));
  std::vector<std::vector<double>> out;
  for (const auto& e : set.embeddings) {
    std::vector<double> row;
    for (const auto& t : text) row.push_back(cosine(e, t));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

double zero_shot_accuracy(const FrozenTextEncoder& enc, const CalibrationSet& set,
                          const PromptTemplate& tmpl) {
  if (set.embeddings.empty()) return 0.0;
  const auto cos = class_cosines(enc, set, tmpl);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cos.size(); ++i) {
    const auto best = std::max_element(cos[i].begin(), cos[i].end()) - cos[i].begin();
    hits += static_cast<std::size_t>(best) == set.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(cos.size());
}

double zero_shot_margin(const FrozenTextEncoder& enc, const CalibrationSet& set,
                        const PromptTemplate& tmpl) {
  if (set.embeddings.empty()) return 0.0;
  const auto cos = class_cosines(enc, set, tmpl);
  double total = 0;
  for (std::size_t i = 0; i < cos.size(); ++i) {
    double other = -2.0;
    for (std::size_t c = 0; c < cos[i].size(); ++c) {
      if (c != set.labels[i]) other = std::max(other, cos[i][c]);
    }
    total += cos[i][set.labels[i]] - other;
  }
  return total / static_cast<double>(cos.size());
}

PromptMlp PromptMlp::create(ParamStore& store, const std::string& name, std::size_t prompt_dim,
                            std::size_t dim) {
  return {Linear::create(store, name + ".fc1", prompt_dim, dim),
          Linear::create(store, name + ".fc2", dim, dim)};
}

Tensor project_prompt(const Tensor& p_v, const PromptMlp& mlp) {
  const std::size_t n = p_v.numel();
  if (n != mlp.in_dim() || (p_v.rank() == 2 && p_v.dim(0) != 1) || p_v.rank() > 2) {
    throw DimensionError("project_prompt: prompt " + shape_str(p_v.shape()) +
                         " does not match MLP input " + std::to_string(mlp.in_dim()));
  }
  return mlp.fc2(gelu(mlp.fc1(reshape(p_v, {1, n}))));
}

}  // namespace domprompt
