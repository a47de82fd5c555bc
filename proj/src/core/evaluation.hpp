#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "features.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

namespace memefusion {

struct Prediction {
  std::string id;
  Label label = Label::kNotTroll;
  double probability = 0.0;  // P(troll), kept inside [1e-7, 1 - 1e-7]
};

// Scores every record of `split` (all must be labeled).
EvalReport evaluate(const TrainedModel& model, const DatasetSplit& split,
                    const EncoderSet& encoders, const CacheOptions& cache);

// Labels every record of `split`; gold labels are not needed.
std::vector<Prediction> predict(const TrainedModel& model, const DatasetSplit& split,
                                const EncoderSet& encoders, const CacheOptions& cache);

// `id,label,probability` with a header row.
void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<Prediction>& predictions);

}  // namespace memefusion
