#include <stdexcept>

#include "domprompt/trainer.hpp"

namespace domprompt {

std::vector<EvalRecord> run_detection(const Model& model, const std::vector<Sample>& data,
                                      const PromptTable& prompts, const DecodeOptions& opt,
                                      const DomainClassifier* classifier) {
  std::vector<EvalRecord> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    std::string domain = s.entry.domain;
    if (classifier && model.config().encoder.prompted) domain = classifier->infer_domain(s.image);
    EvalRecord r;
    r.id = s.entry.id;
    r.domain = s.entry.domain;
    r.detections = model.detect(s.image, prompt_for(model, prompts, domain), opt);
    r.gt = s.entry.annotations;
    out.push_back(std::move(r));
  }
  return out;
}

ConflictStats conflict_accuracy(const std::vector<EvalRecord>& records,
                                const std::vector<Sample>& data, const DatasetInfo& info) {
  if (records.size() != data.size()) throw std::invalid_argument("conflict_accuracy: record count mismatch");
  ConflictStats st;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data[i].entry;
    if (records[i].id != e.id) throw std::invalid_argument("conflict_accuracy: record order differs from data");
    const auto c = info.conflict.find(e.domain);
    if (c == info.conflict.end() || c->second.empty()) continue;
    const int kind = kind_index(c->second);
    for (const auto& g : e.groups) {
      if (g.kind != kind) continue;
      ++st.elements;
      const Detection* best = nullptr;
      for (const auto& d : records[i].detections) {
        if (iou(d.box, g.extent) >= 0.5 && (!best || d.score > best->score)) best = &d;
      }
      if (!best) continue;
      ++st.localized;
      if (best->box.label == g.label) ++st.correct;
    }
  }
  return st;
}

}  // namespace domprompt
