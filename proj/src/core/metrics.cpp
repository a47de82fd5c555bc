#include "metrics.hpp"

#include <algorithm>

#include "error.hpp"

namespace memefusion {

std::uint64_t ConfusionMatrix::at(Label gold, Label pred) const {
  if (gold == Label::kTroll) {
    return pred == Label::kTroll ? troll_troll : troll_not_troll;
  }
  return pred == Label::kTroll ? not_troll_troll : not_troll_not_troll;
}

std::uint64_t ConfusionMatrix::support(Label gold) const {
  return at(gold, Label::kTroll) + at(gold, Label::kNotTroll);
}

std::uint64_t ConfusionMatrix::predicted(Label pred) const {
  return at(Label::kTroll, pred) + at(Label::kNotTroll, pred);
}

namespace {

void tally(ConfusionMatrix& cm, Label gold, Label pred) {
  if (gold == Label::kTroll) {
    ++(pred == Label::kTroll ? cm.troll_troll : cm.troll_not_troll);
  } else {
    ++(pred == Label::kTroll ? cm.not_troll_troll : cm.not_troll_not_troll);
  }
}

void check_lengths(std::size_t gold, std::size_t pred) {
  if (gold != pred) {
    throw Error(ErrorKind::kInput, "gold and predicted label lists differ in length (" +
                                       std::to_string(gold) + " vs " +
                                       std::to_string(pred) + ")");
  }
  if (gold == 0) throw Error(ErrorKind::kInput, "no labels to evaluate");
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const Label> gold, std::span<const Label> pred) {
  check_lengths(gold.size(), pred.size());
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gold.size(); ++i) tally(cm, gold[i], pred[i]);
  return cm;
}

ConfusionMatrix confusion_matrix(std::span<const std::optional<Label>> gold,
                                 std::span<const Label> pred) {
  check_lengths(gold.size(), pred.size());
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!gold[i]) {
      throw Error(ErrorKind::kInput, "gold label missing at position " + std::to_string(i));
    }
    tally(cm, *gold[i], pred[i]);
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.n() == 0) throw Error(ErrorKind::kInput, "accuracy of an empty confusion matrix");
  return ratio(cm.troll_troll + cm.not_troll_not_troll, cm.n());
}

Prf per_class_prf(const ConfusionMatrix& cm, Label cls, MetricWarnings* warnings) {
  if (cm.n() == 0) throw Error(ErrorKind::kInput, "metrics of an empty confusion matrix");
  const std::uint64_t tp = cm.at(cls, cls);
  const std::uint64_t predicted = cm.predicted(cls);
  const std::uint64_t support = cm.support(cls);
  const std::string name(to_string(cls));
  Prf out;
  if (predicted == 0) {
    if (warnings) warnings->push_back("precision for " + name + " undefined (never predicted); set to 0");
  } else {
    out.precision = ratio(tp, predicted);
  }
  if (support == 0) {
    if (warnings) warnings->push_back("recall for " + name + " undefined (no gold instances); set to 0");
  } else {
    out.recall = ratio(tp, support);
  }
  // F1 from counts: 2TP / (2TP + FP + FN), equal to the harmonic mean
  // whenever that is defined.
  const std::uint64_t f1_den = predicted + support;
  if (tp == 0) {
    if (f1_den == 0 && warnings) {
      warnings->push_back("f1 for " + name + " undefined; set to 0");
    }
  } else {
    out.f1 = ratio(2 * tp, f1_den);
  }
  return out;
}

Prf weighted_prf(const ConfusionMatrix& cm, MetricWarnings* warnings) {
  if (cm.n() == 0) throw Error(ErrorKind::kInput, "metrics of an empty confusion matrix");
  // Sum support_c * metric_c with each term reduced from integer counts
  // before dividing by n once. The recall term support_c * tp_c / support_c
  // reduces to tp_c, so weighted recall is trace / n: bitwise the accuracy.
  double precision_sum = 0.0;
  std::uint64_t recall_sum = 0;
  double f1_sum = 0.0;
  for (Label cls : {Label::kTroll, Label::kNotTroll}) {
    const std::uint64_t support = cm.support(cls);
    if (support == 0) continue;  // zero weight
    per_class_prf(cm, cls, warnings);  // records zero-denominator notes
    const std::uint64_t tp = cm.at(cls, cls);
    const std::uint64_t predicted = cm.predicted(cls);
    if (predicted > 0) precision_sum += ratio(support * tp, predicted);
    recall_sum += tp;
    if (tp > 0) f1_sum += ratio(2 * support * tp, support + predicted);
  }
  const auto n = static_cast<double>(cm.n());
  Prf out;
  out.precision = precision_sum / n;
  out.recall = ratio(recall_sum, cm.n());
  out.f1 = f1_sum / n;
  return out;
}

EvalReport make_report(const std::string& model, const ConfusionMatrix& cm) {
  EvalReport report;
  report.model = model;
  report.confusion = cm;
  report.accuracy = accuracy(cm);
  report.f1_troll = per_class_prf(cm, Label::kTroll, &report.warnings).f1;
  MetricWarnings weighted_warnings;
  report.weighted = weighted_prf(cm, &weighted_warnings);
  for (auto& w : weighted_warnings) {
    if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end()) {
      report.warnings.push_back(std::move(w));
    }
  }
  return report;
}

}  // namespace memefusion
