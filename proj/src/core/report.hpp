#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"
#include "metrics.hpp"

namespace memefusion {

nlohmann::json to_json(const EvalReport& report);
// Throws Error(kFormat) on missing or mistyped fields.
EvalReport report_from_json(const nlohmann::json& j);

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

// Fixed three decimals, as shown in reports.
std::string format_metric(double value);

// Markdown table with columns Accuracy, F1(T), F1(w), P(w), R(w); with two
// or more rows the best value(s) of each column are bold.
std::string render_comparison_markdown(std::span<const EvalReport> reports);
std::string render_comparison_csv(std::span<const EvalReport> reports);

// `gold,pred_troll,pred_not_troll` then one row per gold class.
std::string render_confusion_csv(const ConfusionMatrix& cm);
// 2x2 heatmap PNG with counts drawn in each cell.
void write_confusion_heatmap(const ConfusionMatrix& cm, const std::string& title,
                             const std::filesystem::path& png_path);

}  // namespace memefusion
