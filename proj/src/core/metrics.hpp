#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"

namespace memefusion {

// 2x2 counts indexed (gold, predicted). Field names read gold-then-pred:
// `troll_not_troll` is a troll meme predicted not_troll.
struct ConfusionMatrix {
  std::uint64_t troll_troll = 0;
  std::uint64_t troll_not_troll = 0;
  std::uint64_t not_troll_troll = 0;
  std::uint64_t not_troll_not_troll = 0;

  std::uint64_t n() const {
    return troll_troll + troll_not_troll + not_troll_troll + not_troll_not_troll;
  }
  std::uint64_t at(Label gold, Label pred) const;
  std::uint64_t support(Label gold) const;  // row sum
  std::uint64_t predicted(Label pred) const;  // column sum
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_matrix(std::span<const Label> gold, std::span<const Label> pred);
// Overload for gold labels straight off a split; any missing label is an
// input error.
ConfusionMatrix confusion_matrix(std::span<const std::optional<Label>> gold,
                                 std::span<const Label> pred);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Collects notes about metrics that hit a zero denominator and were set to 0.
using MetricWarnings = std::vector<std::string>;

double accuracy(const ConfusionMatrix& cm);
Prf per_class_prf(const ConfusionMatrix& cm, Label cls, MetricWarnings* warnings = nullptr);
// Support-weighted mean of the per-class metrics (weights = gold count / n).
Prf weighted_prf(const ConfusionMatrix& cm, MetricWarnings* warnings = nullptr);

struct EvalReport {
  std::string model;
  double accuracy = 0.0;
  double f1_troll = 0.0;
  Prf weighted;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;

  std::uint64_t n() const { return confusion.n(); }
};

EvalReport make_report(const std::string& model, const ConfusionMatrix& cm);

}  // namespace memefusion
