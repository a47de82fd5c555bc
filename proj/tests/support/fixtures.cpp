#include "fixtures.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "encoders.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "trainer.hpp"

namespace mftest {

fs::path data_dir() { return fs::path(MEMEFUSION_TEST_DATA); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

TempDir::TempDir(const std::string& tag) {
  std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

void write_png(const fs::path& path, const cv::Mat& bgr) {
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

cv::Mat noisy_square(int side, cv::Vec3b bgr, memefusion::Rng& rng) {
  cv::Mat img(side, side, CV_8UC3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      cv::Vec3b px = bgr;
      for (int c = 0; c < 3; ++c) {
        const int jitter = static_cast<int>(rng.below(31)) - 15;
        px[c] = static_cast<unsigned char>(std::clamp(px[c] + jitter, 0, 255));
      }
      img.at<cv::Vec3b>(y, x) = px;
    }
  }
  return img;
}

}  // namespace

MemeSet write_color_memes(const fs::path& dir, int per_class, std::uint64_t seed,
                          const std::string& name, bool labeled, int side) {
  memefusion::Rng rng(seed);
  MemeSet set;
  set.images = dir / (name + "_images");
  set.manifest = dir / (name + ".csv");
  std::ostringstream csv;
  csv << (labeled ? "id,image_file,caption,label\n" : "id,image_file,caption\n");
  for (int i = 0; i < 2 * per_class; ++i) {
    const bool troll = i % 2 == 0;
    const std::string id = name + "-" + std::to_string(i);
    const std::string file = id + ".png";
    write_png(set.images / file,
              noisy_square(side, troll ? cv::Vec3b(30, 30, 220) : cv::Vec3b(220, 30, 30), rng));
    const std::string caption = troll ? "aaa aaa aaa" : "bbb bbb bbb";
    csv << id << ',' << file << ',' << caption;
    if (labeled) csv << ',' << (troll ? "troll" : "not_troll");
    csv << '\n';
    set.ids.push_back(id);
  }
  write_text(set.manifest, csv.str());
  return set;
}

namespace {

MemeSet corpus_split(const fs::path& dir, const std::string& name, int troll, int not_troll) {
  MemeSet set;
  set.images = dir / "corpus_images";
  set.manifest = dir / (name + ".csv");
  std::ostringstream csv;
  csv << "id,image_file,caption,label\n";
  for (int i = 0; i < troll + not_troll; ++i) {
    const std::string id = name + "_" + std::to_string(i);
    csv << id << ",img" << (i % 4) << ".png,caption " << i << ','
        << (i < troll ? "troll" : "not_troll") << '\n';
    set.ids.push_back(id);
  }
  write_text(set.manifest, csv.str());
  return set;
}

}  // namespace

CorpusSets write_corpus_manifests(const fs::path& dir) {
  memefusion::Rng rng(11);
  for (int i = 0; i < 4; ++i) {
    write_png(dir / "corpus_images" / ("img" + std::to_string(i) + ".png"),
              noisy_square(8, cv::Vec3b(40 * i, 100, 200 - 40 * i), rng));
  }
  return {corpus_split(dir, "train", 1282, 1018), corpus_split(dir, "test", 395, 272)};
}

namespace {

struct EncoderStore {
  std::unique_ptr<TempDir> dir;
  EncoderDirs paths;
};

EncoderDirs make_encoders(EncoderStore& store, const std::string& tag, int layers,
                          int intermediate) {
  store.dir = std::make_unique<TempDir>(tag);
  store.paths = {store.dir->path() / "text", store.dir->path() / "image"};
  const auto vocab = memefusion::default_random_vocab();
  memefusion::BertConfig config;
  config.vocab_size = static_cast<int>(vocab.size());
  config.num_hidden_layers = layers;
  config.intermediate_size = intermediate;
  config.max_position_embeddings = 128;
  memefusion::write_random_text_encoder(store.paths.text, config, vocab, 101);
  memefusion::write_random_image_encoder(store.paths.image, 202);
  return store.paths;
}

}  // namespace

const EncoderDirs& small_encoders() {
  static EncoderStore store;
  static const EncoderDirs dirs = make_encoders(store, "mf-enc-small", 2, 256);
  return dirs;
}

const EncoderDirs& full_encoders() {
  static EncoderStore store;
  static const EncoderDirs dirs = make_encoders(store, "mf-enc-full", 12, 3072);
  return dirs;
}

memefusion::RunConfig small_config(memefusion::ModelKind kind, const EncoderDirs& encoders) {
  memefusion::RunConfig c;
  c.model.kind = kind;
  c.preprocess.image_size = 32;
  c.preprocess.text_max_len = 16;
  c.encoders.text_encoder = encoders.text.string();
  c.encoders.image_encoder = encoders.image.string();
  c.train.epochs = 5;
  c.train.batch_size = 8;
  c.train.seed = 3;
  return c;
}

memefusion::Classifier::Batch random_batch(const memefusion::ModelSpec& spec, int rows,
                                           std::uint64_t seed) {
  memefusion::Rng rng(seed);
  memefusion::Classifier::Batch batch;
  auto fill = [&](memefusion::MatD& m, int cols) {
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
    }
  };
  if (spec.uses_text()) fill(batch.text, memefusion::kTextEmbeddingDim);
  if (spec.uses_image()) fill(batch.image, memefusion::kImageEmbeddingDim);
  return batch;
}

std::vector<memefusion::Label> alternating_labels(int rows) {
  std::vector<memefusion::Label> labels;
  for (int i = 0; i < rows; ++i) {
    labels.push_back(i % 2 == 0 ? memefusion::Label::kTroll : memefusion::Label::kNotTroll);
  }
  return labels;
}

namespace {

double mean_bce(const memefusion::Classifier& model, const memefusion::Classifier::Batch& batch,
                const std::vector<memefusion::Label>& labels, bool train_mode,
                std::uint64_t dropout_seed, memefusion::Classifier::Cache* cache,
                memefusion::VecD* d_logits) {
  memefusion::Rng rng(dropout_seed);
  const memefusion::VecD logits = model.forward(batch, train_mode, &rng, cache);
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  if (d_logits) d_logits->resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    double d = 0.0;
    loss += memefusion::bce_with_logits(logits(i), labels[i], 1.0, &d);
    if (d_logits) (*d_logits)(i) = d / n;
  }
  return loss / n;
}

}  // namespace

GradCheckReport gradient_check(memefusion::Classifier& model,
                               const memefusion::Classifier::Batch& batch,
                               const std::vector<memefusion::Label>& labels, bool train_mode,
                               int probes, double step, std::uint64_t seed) {
  const std::uint64_t dropout_seed = memefusion::derive_seed(seed, "dropout");
  model.zero_grad();
  memefusion::Classifier::Cache cache;
  memefusion::VecD d_logits;
  mean_bce(model, batch, labels, train_mode, dropout_seed, &cache, &d_logits);
  model.backward(cache, d_logits);

  const auto slots = model.parameters();
  memefusion::Rng pick(seed);
  GradCheckReport report;
  for (int p = 0; p < probes; ++p) {
    const auto& slot = slots[static_cast<std::size_t>(p) % slots.size()];
    const std::size_t k = pick.below(slot.size);
    const double saved = slot.value[k];
    slot.value[k] = saved + step;
    const double up = mean_bce(model, batch, labels, train_mode, dropout_seed, nullptr, nullptr);
    slot.value[k] = saved - step;
    const double down =
        mean_bce(model, batch, labels, train_mode, dropout_seed, nullptr, nullptr);
    slot.value[k] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = slot.grad[k];
    const double scale = std::max(std::abs(numeric), std::abs(analytic));
    // Both sides vanish on dead ReLU units; there the absolute gap is the
    // meaningful quantity.
    const double rel = scale < 1e-10 ? std::abs(numeric - analytic)
                                     : std::abs(numeric - analytic) / scale;
    ++report.probes;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = slot.name + "[" + std::to_string(k) + "]";
    }
  }
  return report;
}

namespace {

struct OracleScores {
  double accuracy, f1_troll, precision_w, recall_w, f1_w;
};

OracleScores oracle_scores(const std::vector<int>& gold, const std::vector<int>& pred) {
  const double n = static_cast<double>(gold.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += gold[i] == pred[i] ? 1.0 : 0.0;
  OracleScores s{correct / n, 0.0, 0.0, 0.0, 0.0};
  for (int cls : {1, 0}) {
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == cls && gold[i] == cls) tp += 1.0;
      if (pred[i] == cls && gold[i] != cls) fp += 1.0;
      if (pred[i] != cls && gold[i] == cls) fn += 1.0;
    }
    const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    const double weight = (tp + fn) / n;
    if (cls == 1) s.f1_troll = f1;
    s.precision_w += weight * precision;
    s.recall_w += weight * recall;
    s.f1_w += weight * f1;
  }
  return s;
}

}  // namespace

MetricFuzzReport metric_fuzz(int pairs, std::uint64_t seed) {
  using memefusion::Label;
  memefusion::Rng rng(seed);
  MetricFuzzReport report;
  for (int p = 0; p < pairs; ++p) {
    const int length = 1 + static_cast<int>(rng.below(500));
    // Mix of balanced, skewed and single-class draws.
    const double gold_rate = p % 10 == 0 ? static_cast<double>(rng.below(2)) : rng.uniform();
    const double pred_rate = p % 7 == 0 ? static_cast<double>(rng.below(2)) : rng.uniform();
    std::vector<int> gold(length), pred(length);
    std::vector<Label> gold_labels(length), pred_labels(length);
    for (int i = 0; i < length; ++i) {
      gold[i] = rng.bernoulli(gold_rate) ? 1 : 0;
      pred[i] = rng.bernoulli(pred_rate) ? 1 : 0;
      gold_labels[i] = gold[i] ? Label::kTroll : Label::kNotTroll;
      pred_labels[i] = pred[i] ? Label::kTroll : Label::kNotTroll;
    }
    const auto r = memefusion::make_report("fuzz", memefusion::confusion_matrix(gold_labels,
                                                                                pred_labels));
    const auto o = oracle_scores(gold, pred);
    const std::pair<const char*, double> errors[] = {
        {"accuracy", std::abs(r.accuracy - o.accuracy)},
        {"f1_troll", std::abs(r.f1_troll - o.f1_troll)},
        {"precision_w", std::abs(r.weighted.precision - o.precision_w)},
        {"recall_w", std::abs(r.weighted.recall - o.recall_w)},
        {"f1_w", std::abs(r.weighted.f1 - o.f1_w)},
    };
    for (const auto& [name, err] : errors) {
      if (!(err <= report.max_abs_error)) {
        report.max_abs_error = err;
        report.worst = std::string(name) + " in pair " + std::to_string(p);
      }
    }
    if (r.weighted.recall != r.accuracy) report.recall_is_accuracy = false;
    ++report.pairs;
  }
  return report;
}

}  // namespace mftest
