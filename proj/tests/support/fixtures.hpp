#pragma once

// Shared fixtures for the unit and acceptance tests: scratch directories,
// synthetic meme sets written to disk, and small seeded encoders.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"
#include "json.hpp"
#include "models.hpp"

namespace mftest {

namespace fs = std::filesystem;

// Directory holding the frozen oracle outputs (tests/data).
fs::path data_dir();
nlohmann::json read_json(const fs::path& path);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

// Removed with its contents on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mf");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

struct MemeSet {
  fs::path manifest;
  fs::path images;
  std::vector<std::string> ids;
};

// Red square + "aaa" captions are troll, blue + "bbb" are not_troll, with
// seeded pixel noise so no two images are identical. `labeled` false
// writes a manifest without the label column.
MemeSet write_color_memes(const fs::path& dir, int per_class, std::uint64_t seed,
                          const std::string& name = "memes", bool labeled = true,
                          int side = 48);

// Manifests with the class counts of the released train and test splits,
// pointing at a handful of tiny shared images.
struct CorpusSets {
  MemeSet train;
  MemeSet test;
};
CorpusSets write_corpus_manifests(const fs::path& dir);

struct EncoderDirs {
  fs::path text;
  fs::path image;
};

// Seeded random encoders written once per process. Both produce full-width
// embeddings; the small text encoder has 2 layers, the full one 12.
const EncoderDirs& small_encoders();
const EncoderDirs& full_encoders();

// Config wired to the given encoders with small inputs for fast tests.
memefusion::RunConfig small_config(memefusion::ModelKind kind,
                                   const EncoderDirs& encoders = small_encoders());

// Standard-normal embeddings for every modality `spec` consumes, with
// alternating labels.
memefusion::Classifier::Batch random_batch(const memefusion::ModelSpec& spec, int rows,
                                           std::uint64_t seed);
std::vector<memefusion::Label> alternating_labels(int rows);

// Central-difference check of Classifier::backward on the mean BCE loss.
// Probes cycle over the parameter tensors and pick a seeded element in
// each. In train mode the dropout stream is replayed for every evaluation.
struct GradCheckReport {
  int probes = 0;
  double max_rel_error = 0.0;
  std::string worst;
};
GradCheckReport gradient_check(memefusion::Classifier& model,
                               const memefusion::Classifier::Batch& batch,
                               const std::vector<memefusion::Label>& labels, bool train_mode,
                               int probes, double step, std::uint64_t seed);

// Random (gold, predicted) label pairs of length 1..500 scored by the
// library and by a from-scratch oracle over the raw label lists. Class
// balance varies per pair, so single-class and never-predicted cases occur.
struct MetricFuzzReport {
  int pairs = 0;
  double max_abs_error = 0.0;
  bool recall_is_accuracy = true;
  std::string worst;
};
MetricFuzzReport metric_fuzz(int pairs, std::uint64_t seed);

}  // namespace mftest
