#include <gtest/gtest.h>

#include "error.hpp"
#include "fixtures.hpp"
#include "report.hpp"

using namespace memefusion;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    out.push_back(text.substr(start, end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST(Format, ThreeDecimals) {
  EXPECT_EQ(format_metric(371.0 / 667.0), "0.556");
  EXPECT_EQ(format_metric(0.0), "0.000");
  EXPECT_EQ(format_metric(1.0), "1.000");
  EXPECT_EQ(format_metric(0.5875), "0.588");
}

TEST(Markdown, SingleRowShowsAccuracyAndWeightedRecall) {
  // 667 memes, 371 correct.
  const auto r = make_report("text_only", ConfusionMatrix{250, 145, 151, 121});
  ASSERT_EQ(r.n(), 667u);
  const auto md = render_comparison_markdown(std::vector<EvalReport>{r});
  const auto rows = lines(md);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "| Model | Accuracy | F1(T) | F1(w) | P(w) | R(w) |");
  EXPECT_EQ(rows[1], "|---|---:|---:|---:|---:|---:|");
  EXPECT_EQ(rows[2].rfind("| text_only | 0.556 |", 0), 0u) << rows[2];
  EXPECT_TRUE(rows[2].ends_with("| 0.556 |")) << rows[2];
  EXPECT_EQ(rows[2].find("**"), std::string::npos);
}

TEST(Markdown, BestPerColumnIsBold) {
  const auto a = make_report("text_only", ConfusionMatrix{300, 95, 200, 72});
  const auto b = make_report("image_only", ConfusionMatrix{350, 45, 230, 42});
  const auto md = render_comparison_markdown(std::vector<EvalReport>{a, b});
  const auto rows = lines(md);
  ASSERT_EQ(rows.size(), 4u);
  const std::string acc_a = format_metric(a.accuracy), acc_b = format_metric(b.accuracy);
  const bool b_wins = b.accuracy > a.accuracy;
  EXPECT_NE(rows[b_wins ? 3 : 2].find("**" + (b_wins ? acc_b : acc_a) + "**"),
            std::string::npos);
  EXPECT_EQ(rows[b_wins ? 2 : 3].find("**" + (b_wins ? acc_a : acc_b) + "**"),
            std::string::npos);
  // Each column has at least one bold cell.
  std::size_t bold = 0;
  for (const auto& row : rows) {
    for (auto pos = row.find("**"); pos != std::string::npos; pos = row.find("**", pos + 2)) {
      ++bold;
    }
  }
  EXPECT_GE(bold / 2, 5u);
}

TEST(Markdown, PrintedTiesAreAllBold) {
  const auto a = make_report("a", ConfusionMatrix{1, 0, 0, 1});
  const auto b = make_report("b", ConfusionMatrix{2, 0, 0, 2});
  const auto md = render_comparison_markdown(std::vector<EvalReport>{a, b});
  const auto rows = lines(md);
  EXPECT_NE(rows[2].find("**1.000**"), std::string::npos);
  EXPECT_NE(rows[3].find("**1.000**"), std::string::npos);
}

TEST(Csv, ComparisonAndConfusion) {
  const auto r = make_report("fusion", ConfusionMatrix{5, 2, 3, 4});
  EXPECT_EQ(render_comparison_csv(std::vector<EvalReport>{r}),
            "model,Accuracy,F1(T),F1(w),P(w),R(w)\nfusion," + format_metric(r.accuracy) + "," +
                format_metric(r.f1_troll) + "," + format_metric(r.weighted.f1) + "," +
                format_metric(r.weighted.precision) + "," + format_metric(r.weighted.recall) +
                "\n");
  EXPECT_EQ(render_confusion_csv(r.confusion),
            "gold,pred_troll,pred_not_troll\ntroll,5,2\nnot_troll,3,4\n");
}

TEST(Json, SchemaAndRoundTrip) {
  const auto r = make_report("image_only", ConfusionMatrix{395, 0, 272, 0});
  const auto j = to_json(r);
  for (const char* key : {"model", "accuracy", "f1_troll", "weighted", "confusion", "n",
                          "warnings"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.at("n"), 667);
  EXPECT_EQ(j.at("confusion").at("tt"), 395);
  EXPECT_EQ(j.at("confusion").at("nt"), 272);
  for (const char* key : {"precision", "recall", "f1"}) {
    EXPECT_TRUE(j.at("weighted").contains(key)) << key;
  }
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.accuracy, r.accuracy);
  EXPECT_EQ(back.weighted.f1, r.weighted.f1);
  EXPECT_EQ(back.confusion, r.confusion);
  EXPECT_EQ(back.warnings, r.warnings);

  mftest::TempDir dir;
  write_report(dir / "r.json", r);
  EXPECT_EQ(read_report(dir / "r.json").confusion, r.confusion);
}

TEST(Json, MalformedReportsAreFormatErrors) {
  auto j = to_json(make_report("m", ConfusionMatrix{1, 2, 3, 4}));
  j.at("confusion").erase("tn");
  try {
    report_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  }
  j = to_json(make_report("m", ConfusionMatrix{1, 2, 3, 4}));
  j["n"] = 11;
  EXPECT_THROW(report_from_json(j), Error);
  mftest::TempDir dir;
  mftest::write_text(dir / "bad.json", "{\"model\": ");
  try {
    read_report(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  }
}

TEST(Heatmap, WritesAPng) {
  mftest::TempDir dir;
  write_confusion_heatmap(ConfusionMatrix{9, 1, 2, 8}, "fusion", dir / "cm.png");
  const auto bytes = mftest::read_text(dir / "cm.png");
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
}
