#include "report.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "error.hpp"

namespace memefusion {

nlohmann::json to_json(const EvalReport& r) {
  return {{"model", r.model},
          {"accuracy", r.accuracy},
          {"f1_troll", r.f1_troll},
          {"weighted",
           {{"precision", r.weighted.precision},
            {"recall", r.weighted.recall},
            {"f1", r.weighted.f1}}},
          {"confusion",
           {{"tt", r.confusion.troll_troll},
            {"tn", r.confusion.troll_not_troll},
            {"nt", r.confusion.not_troll_troll},
            {"nn", r.confusion.not_troll_not_troll}}},
          {"n", r.n()},
          {"warnings", r.warnings}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.model = j.at("model").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.f1_troll = j.at("f1_troll").get<double>();
    const auto& w = j.at("weighted");
    r.weighted.precision = w.at("precision").get<double>();
    r.weighted.recall = w.at("recall").get<double>();
    r.weighted.f1 = w.at("f1").get<double>();
    const auto& c = j.at("confusion");
    r.confusion.troll_troll = c.at("tt").get<std::uint64_t>();
    r.confusion.troll_not_troll = c.at("tn").get<std::uint64_t>();
    r.confusion.not_troll_troll = c.at("nt").get<std::uint64_t>();
    r.confusion.not_troll_not_troll = c.at("nn").get<std::uint64_t>();
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("n") && j.at("n").get<std::uint64_t>() != r.n()) {
      throw Error(ErrorKind::kFormat, "report n disagrees with its confusion matrix");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  out << to_json(report).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open report " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": invalid JSON: " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  return buf;
}

namespace {

struct Column {
  const char* title;
  std::function<double(const EvalReport&)> value;
};

const std::array<Column, 5>& columns() {
  static const std::array<Column, 5> cols{{
      {"Accuracy", [](const EvalReport& r) { return r.accuracy; }},
      {"F1(T)", [](const EvalReport& r) { return r.f1_troll; }},
      {"F1(w)", [](const EvalReport& r) { return r.weighted.f1; }},
      {"P(w)", [](const EvalReport& r) { return r.weighted.precision; }},
      {"R(w)", [](const EvalReport& r) { return r.weighted.recall; }},
  }};
  return cols;
}

}  // namespace

std::string render_comparison_markdown(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "| Model |";
  for (const auto& c : columns()) out << ' ' << c.title << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < columns().size(); ++i) out << "---:|";
  out << '\n';
  // Best per column compared on the printed value, so displayed ties are
  // all marked.
  std::array<std::string, 5> best;
  if (reports.size() >= 2) {
    for (std::size_t c = 0; c < columns().size(); ++c) {
      double top = -1.0;
      for (const auto& r : reports) top = std::max(top, columns()[c].value(r));
      best[c] = format_metric(top);
    }
  }
  for (const auto& r : reports) {
    out << "| " << r.model << " |";
    for (std::size_t c = 0; c < columns().size(); ++c) {
      const std::string v = format_metric(columns()[c].value(r));
      out << ' ' << (v == best[c] ? "**" + v + "**" : v) << " |";
    }
    out << '\n';
  }
  return out.str();
}

std::string render_comparison_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "model";
  for (const auto& c : columns()) out << ',' << c.title;
  out << '\n';
  for (const auto& r : reports) {
    out << r.model;
    for (const auto& c : columns()) out << ',' << format_metric(c.value(r));
    out << '\n';
  }
  return out.str();
}

std::string render_confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "gold,pred_troll,pred_not_troll\n"
      << "troll," << cm.troll_troll << ',' << cm.troll_not_troll << '\n'
      << "not_troll," << cm.not_troll_troll << ',' << cm.not_troll_not_troll << '\n';
  return out.str();
}

void write_confusion_heatmap(const ConfusionMatrix& cm, const std::string& title,
                             const std::filesystem::path& png_path) {
  constexpr int kCell = 160;
  constexpr int kLeft = 130;
  constexpr int kTop = 70;
  cv::Mat img(kTop + 2 * kCell + 40, kLeft + 2 * kCell + 20, CV_8UC3,
              cv::Scalar(255, 255, 255));
  const std::uint64_t counts[2][2] = {{cm.troll_troll, cm.troll_not_troll},
                                      {cm.not_troll_troll, cm.not_troll_not_troll}};
  const std::uint64_t peak = std::max<std::uint64_t>(
      1, std::max({counts[0][0], counts[0][1], counts[1][0], counts[1][1]}));
  const char* names[2] = {"troll", "not_troll"};
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(img, title, {10, 25}, font, 0.7, cv::Scalar(0, 0, 0), 2);
  cv::putText(img, "predicted", {kLeft + kCell - 45, kTop - 28}, font, 0.5,
              cv::Scalar(60, 60, 60), 1);
  for (int g = 0; g < 2; ++g) {
    cv::putText(img, names[g], {10, kTop + g * kCell + kCell / 2 + 5}, font, 0.55,
                cv::Scalar(0, 0, 0), 1);
    cv::putText(img, names[g], {kLeft + g * kCell + 30, kTop - 8}, font, 0.55,
                cv::Scalar(0, 0, 0), 1);
    for (int p = 0; p < 2; ++p) {
      const double t = static_cast<double>(counts[g][p]) / static_cast<double>(peak);
      // White to dark blue (BGR).
      const cv::Scalar fill(255 - 90 * t, 255 - 190 * t, 255 - 220 * t);
      const cv::Rect cell(kLeft + p * kCell, kTop + g * kCell, kCell, kCell);
      cv::rectangle(img, cell, fill, cv::FILLED);
      cv::rectangle(img, cell, cv::Scalar(120, 120, 120), 1);
      const cv::Scalar ink = t > 0.55 ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0);
      const std::string text = std::to_string(counts[g][p]);
      int baseline = 0;
      const cv::Size size = cv::getTextSize(text, font, 0.9, 2, &baseline);
      cv::putText(img, text,
                  {cell.x + (kCell - size.width) / 2, cell.y + (kCell + size.height) / 2},
                  font, 0.9, ink, 2);
    }
  }
  cv::putText(img, "gold rows", {10, kTop + 2 * kCell + 28}, font, 0.5,
              cv::Scalar(60, 60, 60), 1);
  if (!cv::imwrite(png_path.string(), img)) {
    throw Error(ErrorKind::kIo, "cannot write " + png_path.string());
  }
}

}  // namespace memefusion
