#include "dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "error.hpp"
#include "image_io.hpp"
#include "random.hpp"

namespace memefusion {

namespace {

std::string lower_trimmed(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  std::string out(text.substr(begin, end - begin));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trimmed(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

}  // namespace

std::string_view to_string(Label label) {
  return label == Label::kTroll ? "troll" : "not_troll";
}

std::optional<Label> parse_label(std::string_view text) {
  const std::string key = lower_trimmed(text);
  if (key == "troll" || key == "1") return Label::kTroll;
  if (key == "not_troll" || key == "not-troll" || key == "non-troll" ||
      key == "non_troll" || key == "0") {
    return Label::kNotTroll;
  }
  return std::nullopt;
}

std::string_view to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain: return "train";
    case SplitRole::kVal: return "val";
    case SplitRole::kTest: return "test";
  }
  return "?";
}

SplitRole parse_split_role(std::string_view text) {
  const std::string key = lower_trimmed(text);
  if (key == "train") return SplitRole::kTrain;
  if (key == "val" || key == "validation") return SplitRole::kVal;
  if (key == "test") return SplitRole::kTest;
  throw Error(ErrorKind::kInvalidArgument,
              "unknown split role '" + std::string(text) + "'");
}

DatasetSplit::DatasetSplit(SplitRole role, std::vector<MemeRecord> records)
    : role_(role), records_(std::move(records)) {
  for (const auto& r : records_) {
    if (!r.label) continue;
    if (*r.label == Label::kTroll) {
      ++counts_.troll;
    } else {
      ++counts_.not_troll;
    }
  }
}

std::vector<std::string> DatasetSplit::unlabeled_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records_) {
    if (!r.label) ids.push_back(r.id);
  }
  return ids;
}

std::vector<std::vector<std::string>> parse_delimited(std::string_view text,
                                                      char delimiter) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    const bool blank = row.size() == 1 && row[0].empty();
    if (!blank) rows.push_back(std::move(row));
    row.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delimiter) {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) {
    throw Error(ErrorKind::kValidation, "unterminated quoted field");
  }
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

DatasetSplit load_manifest(const std::filesystem::path& manifest_path,
                           const std::filesystem::path& images_root,
                           SplitRole role, const ManifestOptions& options) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kValidation,
                "cannot read manifest " + manifest_path.string());
  }
  if (!std::filesystem::is_directory(images_root)) {
    throw Error(ErrorKind::kValidation,
                "images root is not a directory: " + images_root.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string content = buffer.str();
  if (content.starts_with("\xEF\xBB\xBF")) content.erase(0, 3);

  const auto rows = parse_delimited(content, options.delimiter);
  if (rows.empty()) {
    throw Error(ErrorKind::kValidation,
                manifest_path.string() + ": no records");
  }

  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    column[lower_trimmed(rows[0][i])] = i;
  }
  for (const char* required : {"id", "image_file", "caption"}) {
    if (!column.count(required)) {
      throw Error(ErrorKind::kValidation,
                  manifest_path.string() + ": missing header column '" +
                      required + "'");
    }
  }
  const std::size_t id_col = column["id"];
  const std::size_t image_col = column["image_file"];
  const std::size_t caption_col = column["caption"];
  const auto label_it = column.find("label");
  const std::optional<std::size_t> label_col =
      label_it == column.end() ? std::nullopt
                               : std::optional<std::size_t>(label_it->second);

  if (rows.size() == 1) {
    throw Error(ErrorKind::kValidation,
                manifest_path.string() + ": no records");
  }

  std::vector<MemeRecord> records;
  std::vector<std::string> missing_ids;
  std::vector<std::string> duplicate_ids;
  std::vector<std::string> bad_labels;
  std::vector<std::string> missing_labels;
  std::vector<std::string> missing_images;
  std::vector<std::string> undecodable_images;
  std::set<std::string> seen;

  auto cell = [](const std::vector<std::string>& row, std::size_t col) {
    return col < row.size() ? row[col] : std::string();
  };

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    MemeRecord record;
    record.id = trimmed(cell(row, id_col));
    const std::string line = "row " + std::to_string(r + 1);
    if (record.id.empty()) {
      missing_ids.push_back(line);
    } else if (!seen.insert(record.id).second) {
      duplicate_ids.push_back(record.id);
    }
    record.text = cell(row, caption_col);
    record.image_path = images_root / trimmed(cell(row, image_col));

    if (label_col) {
      const std::string raw = trimmed(cell(row, *label_col));
      if (!raw.empty()) {
        record.label = parse_label(raw);
        if (!record.label) bad_labels.push_back(record.id + "='" + raw + "'");
      }
    }
    if (!record.label && role != SplitRole::kTest && label_col &&
        trimmed(cell(row, *label_col)).empty()) {
      missing_labels.push_back(record.id.empty() ? line : record.id);
    }

    std::error_code ec;
    if (!std::filesystem::is_regular_file(record.image_path, ec)) {
      missing_images.push_back(record.image_path.string());
    } else if (options.verify_images && !image_decodable(record.image_path)) {
      undecodable_images.push_back(record.image_path.string());
    }
    records.push_back(std::move(record));
  }

  if (!label_col && role != SplitRole::kTest) {
    throw Error(ErrorKind::kValidation,
                manifest_path.string() + ": " +
                    std::string(to_string(role)) +
                    " split requires a label column");
  }

  std::string problems;
  auto report = [&](const char* what, const std::vector<std::string>& items) {
    if (items.empty()) return;
    if (!problems.empty()) problems += "; ";
    problems += what;
    problems += ": ";
    problems += join_for_message(items);
  };
  report("missing id", missing_ids);
  report("duplicate id", duplicate_ids);
  report("unknown label", bad_labels);
  report("missing label", missing_labels);
  report("missing image file", missing_images);
  report("undecodable image", undecodable_images);
  if (!problems.empty()) {
    throw Error(ErrorKind::kValidation,
                manifest_path.string() + ": " + problems);
  }

  return DatasetSplit(role, std::move(records));
}

SplitStats split_stats(const DatasetSplit& split) {
  SplitStats stats;
  for (const auto& r : split.records()) {
    if (!r.label) {
      ++stats.unlabeled;
    } else if (*r.label == Label::kTroll) {
      ++stats.counts.troll;
    } else {
      ++stats.counts.not_troll;
    }
  }
  return stats;
}

std::pair<DatasetSplit, DatasetSplit> stratified_holdout(
    const DatasetSplit& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "holdout fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> troll;
  std::vector<std::size_t> not_troll;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& label = split.records()[i].label;
    if (!label) {
      throw Error(ErrorKind::kValidation,
                  "stratified holdout needs labels; '" +
                      split.records()[i].id + "' is unlabeled");
    }
    (*label == Label::kTroll ? troll : not_troll).push_back(i);
  }

  Rng rng(derive_seed(seed, "stratified_holdout"));
  std::vector<bool> held(split.size(), false);
  for (const auto* members : {&troll, &not_troll}) {
    const std::size_t n = members->size();
    const auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    if (n < 2 || take == 0 || take >= n) {
      throw Error(ErrorKind::kValidation,
                  "holdout fraction " + std::to_string(fraction) +
                      " would leave a class empty (class size " +
                      std::to_string(n) + ")");
    }
    const auto order = rng.permutation(n);
    for (std::size_t k = 0; k < take; ++k) held[(*members)[order[k]]] = true;
  }

  std::vector<MemeRecord> rest;
  std::vector<MemeRecord> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    (held[i] ? out : rest).push_back(split.records()[i]);
  }
  return {DatasetSplit(split.role(), std::move(rest)),
          DatasetSplit(SplitRole::kVal, std::move(out))};
}

}  // namespace memefusion
