#include "evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "error.hpp"

namespace memefusion {

namespace {

VecD split_logits(const TrainedModel& model, const DatasetSplit& split,
                  const EncoderSet& encoders, const CacheOptions& cache) {
  if (split.empty()) throw Error(ErrorKind::kInput, "split has no records");
  const EmbeddingTable table = embed_split(split, encoders, model.config, cache);
  const VecD logits = predict_logits(model.classifier, table);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits(i))) {
      throw Error(ErrorKind::kNumeric,
                  "non-finite logit for record " + split.records()[i].id);
    }
  }
  return logits;
}

}  // namespace

EvalReport evaluate(const TrainedModel& model, const DatasetSplit& split,
                    const EncoderSet& encoders, const CacheOptions& cache) {
  std::vector<std::optional<Label>> gold;
  for (const auto& r : split.records()) gold.push_back(r.label);
  if (const auto missing = split.unlabeled_ids(); !missing.empty()) {
    throw Error(ErrorKind::kInput,
                "cannot evaluate records without gold labels: " + join_for_message(missing));
  }
  const VecD logits = split_logits(model, split, encoders, cache);
  std::vector<Label> pred;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    pred.push_back(predict_label(logits(i), model.config.model.threshold));
  }
  return make_report(std::string(to_string(model.config.model.kind)),
                     confusion_matrix(gold, pred));
}

std::vector<Prediction> predict(const TrainedModel& model, const DatasetSplit& split,
                                const EncoderSet& encoders, const CacheOptions& cache) {
  const VecD logits = split_logits(model, split, encoders, cache);
  std::vector<Prediction> out;
  out.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    const double z = logits(static_cast<Eigen::Index>(i));
    Prediction p;
    p.id = split.records()[i].id;
    p.label = predict_label(z, model.config.model.threshold);
    p.probability = std::clamp(sigmoid(z), kBceEpsilon, 1.0 - kBceEpsilon);
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<Prediction>& predictions) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << "id,label,probability\n";
  for (const auto& p : predictions) {
    std::string id = p.id;
    if (id.find_first_of(",\"\n\r") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : id) {
        if (c == '"') quoted += '"';
        quoted += c;
      }
      id = quoted + "\"";
    }
    char prob[32];
    std::snprintf(prob, sizeof prob, "%.9g", p.probability);
    out << id << ',' << to_string(p.label) << ',' << prob << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

}  // namespace memefusion
