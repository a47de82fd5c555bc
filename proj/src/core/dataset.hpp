#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace memefusion {

// Encoded as troll=1, not_troll=0 everywhere (troll is the positive class).
enum class Label : int { kNotTroll = 0, kTroll = 1 };

std::string_view to_string(Label label);

// Accepts troll/Troll/1 and not_troll/not-troll/Non-troll/non_troll/0,
// case-insensitively. Returns nullopt for anything else.
std::optional<Label> parse_label(std::string_view text);

enum class SplitRole { kTrain, kVal, kTest };

std::string_view to_string(SplitRole role);
SplitRole parse_split_role(std::string_view text);

struct MemeRecord {
  std::string id;
  std::filesystem::path image_path;
  std::string text;
  std::optional<Label> label;

  bool operator==(const MemeRecord&) const = default;
};

struct ClassCounts {
  std::size_t troll = 0;
  std::size_t not_troll = 0;

  std::size_t labeled() const { return troll + not_troll; }
  bool operator==(const ClassCounts&) const = default;
};

struct SplitStats {
  ClassCounts counts;
  std::size_t unlabeled = 0;
};

class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(SplitRole role, std::vector<MemeRecord> records);

  SplitRole role() const { return role_; }
  const std::vector<MemeRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ClassCounts& counts() const { return counts_; }

  // Ids of records without a gold label, in manifest order.
  std::vector<std::string> unlabeled_ids() const;

  bool operator==(const DatasetSplit&) const = default;

 private:
  SplitRole role_ = SplitRole::kTrain;
  std::vector<MemeRecord> records_;
  ClassCounts counts_;
};

struct ManifestOptions {
  char delimiter = ',';
  // Decode every image at load time. Disabling only skips the decode; the
  // existence check always runs.
  bool verify_images = true;
};

// Reads a delimited manifest with header columns id,image_file,caption and
// an optional label column. Image paths are resolved against images_root.
// Train and val splits require a label on every row.
DatasetSplit load_manifest(const std::filesystem::path& manifest_path,
                           const std::filesystem::path& images_root,
                           SplitRole role,
                           const ManifestOptions& options = {});

SplitStats split_stats(const DatasetSplit& split);

// Per-class proportional partition. Returns (remaining, held_out); the
// held-out part takes round(fraction * class_size) records of each class.
std::pair<DatasetSplit, DatasetSplit> stratified_holdout(
    const DatasetSplit& split, double fraction, std::uint64_t seed);

// RFC 4180 style parsing: quoted fields may contain the delimiter, doubled
// quotes and newlines.
std::vector<std::vector<std::string>> parse_delimited(std::string_view text,
                                                      char delimiter);

}  // namespace memefusion
