#include "memefusion/memefusion.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "features.hpp"
#include "json.hpp"
#include "report.hpp"
#include "trainer.hpp"

using namespace memefusion;

struct mf_config {
  RunConfig value;
};

struct mf_split {
  DatasetSplit value;
};

struct mf_encoders {
  EncoderSet value;
};

struct mf_run {
  TrainedModel model;
  TrainHistory history;
};

struct mf_report {
  EvalReport value;
};

struct mf_predictions {
  std::vector<Prediction> value;
};

namespace {

thread_local std::string g_last_error;

mf_status status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return MF_ERR_INVALID_ARGUMENT;
    case ErrorKind::kValidation: return MF_ERR_VALIDATION;
    case ErrorKind::kShape: return MF_ERR_SHAPE;
    case ErrorKind::kInput: return MF_ERR_INPUT;
    case ErrorKind::kPreprocess: return MF_ERR_PREPROCESS;
    case ErrorKind::kLoad: return MF_ERR_LOAD;
    case ErrorKind::kConfig: return MF_ERR_CONFIG;
    case ErrorKind::kFingerprint: return MF_ERR_FINGERPRINT;
    case ErrorKind::kFormat: return MF_ERR_FORMAT;
    case ErrorKind::kNumeric: return MF_ERR_NUMERIC;
    case ErrorKind::kIo: return MF_ERR_IO;
  }
  return MF_ERR_INTERNAL;
}

mf_status fail(mf_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename Body>
mf_status guarded(Body&& body) {
  try {
    g_last_error.clear();
    body();
    return MF_OK;
  } catch (const Error& e) {
    return fail(status_for(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(MF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MF_ERR_INTERNAL, "unknown failure");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, what);
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

CacheOptions cache_options(const char* cache_dir) {
  CacheOptions options;
  if (cache_dir && *cache_dir) {
    options.enabled = true;
    options.root = cache_dir;
  }
  return options;
}

}  // namespace

extern "C" {

const char* mf_last_error(void) { return g_last_error.c_str(); }

const char* mf_status_name(mf_status status) {
  switch (status) {
    case MF_OK: return "ok";
    case MF_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case MF_ERR_VALIDATION: return "validation";
    case MF_ERR_SHAPE: return "shape";
    case MF_ERR_INPUT: return "input";
    case MF_ERR_PREPROCESS: return "preprocess";
    case MF_ERR_LOAD: return "load";
    case MF_ERR_CONFIG: return "config";
    case MF_ERR_FINGERPRINT: return "fingerprint";
    case MF_ERR_FORMAT: return "format";
    case MF_ERR_NUMERIC: return "numeric";
    case MF_ERR_IO: return "io";
    case MF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int mf_status_exit_code(mf_status status) {
  switch (status) {
    case MF_OK:
      return 0;
    case MF_ERR_INVALID_ARGUMENT:
    case MF_ERR_VALIDATION:
    case MF_ERR_INPUT:
      return 2;
    case MF_ERR_SHAPE:
    case MF_ERR_LOAD:
    case MF_ERR_CONFIG:
    case MF_ERR_FINGERPRINT:
    case MF_ERR_FORMAT:
      return 3;
    case MF_ERR_PREPROCESS:
    case MF_ERR_NUMERIC:
    case MF_ERR_IO:
    case MF_ERR_INTERNAL:
      return 4;
  }
  return 4;
}

const char* mf_version(void) { return "0.1.0"; }

void mf_string_free(char* s) { std::free(s); }

// ---- configuration ----------------------------------------------------------

mf_status mf_config_create(mf_config** out) {
  return guarded([&] {
    require(out, "out is null");
    *out = new mf_config{};
  });
}

mf_status mf_config_clone(const mf_config* config, mf_config** out) {
  return guarded([&] {
    require(config && out, "null argument");
    *out = new mf_config{config->value};
  });
}

mf_status mf_config_merge_json(mf_config* config, const char* json) {
  return guarded([&] {
    require(config && json, "null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidation, std::string("invalid config JSON: ") + e.what());
    }
    config->value = apply_json(config->value, j);
  });
}

mf_status mf_config_merge_file(mf_config* config, const char* path) {
  return guarded([&] {
    require(config && path, "null argument");
    config->value = load_config_file(path, config->value);
  });
}

mf_status mf_config_to_json(const mf_config* config, char** out) {
  return guarded([&] {
    require(config && out, "null argument");
    *out = copy_string(to_json(config->value).dump(2));
  });
}

mf_status mf_config_fingerprint(const mf_config* config, char** out) {
  return guarded([&] {
    require(config && out, "null argument");
    *out = copy_string(config_fingerprint(config->value));
  });
}

void mf_config_free(mf_config* config) { delete config; }

// ---- datasets ------------------------------------------------------------------

mf_status mf_split_load(const char* manifest, const char* images_root, mf_split_role role,
                        char delimiter, mf_split** out) {
  return guarded([&] {
    require(manifest && images_root && out, "null argument");
    SplitRole r = SplitRole::kTrain;
    switch (role) {
      case MF_SPLIT_TRAIN: r = SplitRole::kTrain; break;
      case MF_SPLIT_VAL: r = SplitRole::kVal; break;
      case MF_SPLIT_TEST: r = SplitRole::kTest; break;
      default: throw Error(ErrorKind::kInvalidArgument, "unknown split role");
    }
    ManifestOptions options;
    if (delimiter) options.delimiter = delimiter;
    *out = new mf_split{load_manifest(manifest, images_root, r, options)};
  });
}

size_t mf_split_size(const mf_split* split) { return split ? split->value.size() : 0; }

mf_status mf_split_counts_get(const mf_split* split, mf_split_counts* out) {
  return guarded([&] {
    require(split && out, "null argument");
    const SplitStats stats = split_stats(split->value);
    out->troll = stats.counts.troll;
    out->not_troll = stats.counts.not_troll;
    out->unlabeled = stats.unlabeled;
  });
}

mf_status mf_split_stats_json(const mf_split* split, char** out) {
  return guarded([&] {
    require(split && out, "null argument");
    const SplitStats stats = split_stats(split->value);
    const nlohmann::ordered_json j{{"troll", stats.counts.troll},
                           {"not_troll", stats.counts.not_troll},
                           {"unlabeled", stats.unlabeled}};
    *out = copy_string(j.dump());
  });
}

mf_status mf_split_holdout(const mf_split* split, double fraction, uint64_t seed,
                           mf_split** rest, mf_split** held_out) {
  return guarded([&] {
    require(split && rest && held_out, "null argument");
    auto [a, b] = stratified_holdout(split->value, fraction, seed);
    auto* first = new mf_split{std::move(a)};
    *held_out = new mf_split{std::move(b)};
    *rest = first;
  });
}

void mf_split_free(mf_split* split) { delete split; }

// ---- encoders -------------------------------------------------------------------

mf_status mf_encoders_load(const mf_config* config, mf_encoders** out) {
  return guarded([&] {
    require(config && out, "null argument");
    *out = new mf_encoders{load_encoders(config->value)};
  });
}

mf_status mf_encoders_embed_text(const mf_encoders* encoders, const mf_config* config,
                                 const char* caption, float* out, size_t dim) {
  return guarded([&] {
    require(encoders && config && caption && out, "null argument");
    require(encoders->value.text != nullptr, "no text encoder loaded");
    const TextEncoder& enc = *encoders->value.text;
    if (dim != static_cast<size_t>(enc.output_dim())) {
      throw Error(ErrorKind::kShape, "text embeddings are " + std::to_string(enc.output_dim()) +
                                         "-d, buffer holds " + std::to_string(dim));
    }
    const Embedding e =
        enc.encode(prepare_text(enc.tokenizer(), caption, config->value.preprocess.text_max_len));
    std::copy(e.values.begin(), e.values.end(), out);
  });
}

mf_status mf_encoders_embed_image(const mf_encoders* encoders, const mf_config* config,
                                  const char* image_path, float* out, size_t dim) {
  return guarded([&] {
    require(encoders && config && image_path && out, "null argument");
    require(encoders->value.image != nullptr, "no image encoder loaded");
    const ImageEncoder& enc = *encoders->value.image;
    if (dim != static_cast<size_t>(enc.output_dim())) {
      throw Error(ErrorKind::kShape, "image embeddings are " + std::to_string(enc.output_dim()) +
                                         "-d, buffer holds " + std::to_string(dim));
    }
    const Embedding e = enc.encode(prepare_image(image_path, config->value.preprocess));
    std::copy(e.values.begin(), e.values.end(), out);
  });
}

void mf_encoders_free(mf_encoders* encoders) { delete encoders; }

mf_status mf_write_random_text_encoder(const char* dir, uint64_t seed, int text_layers,
                                       int text_intermediate) {
  return guarded([&] {
    require(dir, "null argument");
    require(text_layers >= 0 && text_intermediate >= 0, "sizes must be non-negative");
    const auto vocab = default_random_vocab();
    BertConfig config;
    config.vocab_size = static_cast<int>(vocab.size());
    if (text_layers > 0) config.num_hidden_layers = text_layers;
    if (text_intermediate > 0) config.intermediate_size = text_intermediate;
    write_random_text_encoder(dir, config, vocab, seed);
  });
}

mf_status mf_write_random_image_encoder(const char* dir, uint64_t seed) {
  return guarded([&] {
    require(dir, "null argument");
    write_random_image_encoder(dir, seed);
  });
}

// ---- training and runs -------------------------------------------------------

mf_status mf_train(const mf_split* train, const mf_split* val, const mf_config* config,
                   mf_encoders* encoders, const char* cache_dir, mf_run** out) {
  return guarded([&] {
    require(train && config && encoders && out, "null argument");
    TrainResult result = memefusion::train(train->value, config->value, encoders->value,
                                           cache_options(cache_dir),
                                           val ? &val->value : nullptr);
    *out = new mf_run{std::move(result.model), std::move(result.history)};
  });
}

mf_status mf_run_save(const mf_run* run, const char* dir) {
  return guarded([&] {
    require(run && dir, "null argument");
    write_run_directory(dir, TrainResult{run->model, run->history});
  });
}

mf_status mf_run_load(const char* dir, const mf_config* expected, mf_run** out) {
  return guarded([&] {
    require(dir && out, "null argument");
    *out = new mf_run{load_run_directory(dir, expected ? &expected->value : nullptr), {}};
  });
}

mf_status mf_run_config(const mf_run* run, mf_config** out) {
  return guarded([&] {
    require(run && out, "null argument");
    *out = new mf_config{run->model.config};
  });
}

mf_status mf_run_history_json(const mf_run* run, char** out) {
  return guarded([&] {
    require(run && out, "null argument");
    nlohmann::json j = nlohmann::json::array();
    for (const auto& record : run->history) j.push_back(to_json(record));
    *out = copy_string(j.dump());
  });
}

mf_status mf_run_describe_json(const mf_run* run, char** out) {
  return guarded([&] {
    require(run && out, "null argument");
    const Classifier& c = run->model.classifier;
    nlohmann::json j{{"kind", to_string(c.spec().kind)},
                     {"input_width", c.input_width()},
                     {"hidden_widths", c.hidden_widths()},
                     {"dropout", c.dropout_rates()},
                     {"fusion_taps", to_string(c.spec().fusion_taps)},
                     {"threshold", c.spec().threshold},
                     {"fingerprint", run->model.fingerprint},
                     {"finetuned_encoders", run->model.finetuned()}};
    *out = copy_string(j.dump());
  });
}

mf_status mf_run_restore_encoders(const mf_run* run, mf_encoders* encoders) {
  return guarded([&] {
    require(run && encoders, "null argument");
    restore_encoders(run->model, encoders->value);
  });
}

void mf_run_free(mf_run* run) { delete run; }

// ---- evaluation -----------------------------------------------------------------

mf_status mf_evaluate(const mf_run* run, const mf_split* split, const mf_encoders* encoders,
                      const char* cache_dir, mf_report** out) {
  return guarded([&] {
    require(run && split && encoders && out, "null argument");
    *out = new mf_report{
        evaluate(run->model, split->value, encoders->value, cache_options(cache_dir))};
  });
}

mf_status mf_report_from_counts(const char* model, uint64_t troll_troll,
                                uint64_t troll_not_troll, uint64_t not_troll_troll,
                                uint64_t not_troll_not_troll, mf_report** out) {
  return guarded([&] {
    require(model && out, "null argument");
    ConfusionMatrix cm{troll_troll, troll_not_troll, not_troll_troll, not_troll_not_troll};
    *out = new mf_report{make_report(model, cm)};
  });
}

mf_status mf_report_metrics(const mf_report* report, mf_metrics* out) {
  return guarded([&] {
    require(report && out, "null argument");
    const EvalReport& r = report->value;
    *out = mf_metrics{r.accuracy,
                      r.f1_troll,
                      r.weighted.precision,
                      r.weighted.recall,
                      r.weighted.f1,
                      r.confusion.troll_troll,
                      r.confusion.troll_not_troll,
                      r.confusion.not_troll_troll,
                      r.confusion.not_troll_not_troll};
  });
}

mf_status mf_report_set_model(mf_report* report, const char* model) {
  return guarded([&] {
    require(report && model, "null argument");
    report->value.model = model;
  });
}

mf_status mf_report_to_json(const mf_report* report, char** out) {
  return guarded([&] {
    require(report && out, "null argument");
    *out = copy_string(to_json(report->value).dump(2));
  });
}

mf_status mf_report_from_json(const char* json, mf_report** out) {
  return guarded([&] {
    require(json && out, "null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, std::string("invalid report JSON: ") + e.what());
    }
    *out = new mf_report{report_from_json(j)};
  });
}

mf_status mf_report_write(const mf_report* report, const char* path) {
  return guarded([&] {
    require(report && path, "null argument");
    write_report(path, report->value);
  });
}

mf_status mf_report_read(const char* path, mf_report** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new mf_report{read_report(path)};
  });
}

void mf_report_free(mf_report* report) { delete report; }

mf_status mf_render_comparison(const mf_report* const* reports, size_t count,
                               mf_table_format format, char** out) {
  return guarded([&] {
    require(out && reports, "null argument");
    require(count > 0, "comparison needs at least one report");
    std::vector<EvalReport> rows;
    for (size_t i = 0; i < count; ++i) {
      require(reports[i], "null report");
      rows.push_back(reports[i]->value);
    }
    *out = copy_string(format == MF_TABLE_CSV ? render_comparison_csv(rows)
                                              : render_comparison_markdown(rows));
  });
}

mf_status mf_render_confusion_csv(const mf_report* report, char** out) {
  return guarded([&] {
    require(report && out, "null argument");
    *out = copy_string(render_confusion_csv(report->value.confusion));
  });
}

mf_status mf_write_confusion_heatmap(const mf_report* report, const char* png_path) {
  return guarded([&] {
    require(report && png_path, "null argument");
    write_confusion_heatmap(report->value.confusion, report->value.model, png_path);
  });
}

// ---- prediction ------------------------------------------------------------------

mf_status mf_predict(const mf_run* run, const mf_split* split, const mf_encoders* encoders,
                     const char* cache_dir, mf_predictions** out) {
  return guarded([&] {
    require(run && split && encoders && out, "null argument");
    *out = new mf_predictions{
        predict(run->model, split->value, encoders->value, cache_options(cache_dir))};
  });
}

size_t mf_predictions_size(const mf_predictions* predictions) {
  return predictions ? predictions->value.size() : 0;
}

mf_status mf_predictions_get(const mf_predictions* predictions, size_t index, const char** id,
                             int* is_troll, double* probability) {
  return guarded([&] {
    require(predictions, "null argument");
    if (index >= predictions->value.size()) {
      throw Error(ErrorKind::kInvalidArgument, "prediction index out of range");
    }
    const Prediction& p = predictions->value[index];
    if (id) *id = p.id.c_str();
    if (is_troll) *is_troll = p.label == Label::kTroll ? 1 : 0;
    if (probability) *probability = p.probability;
  });
}

mf_status mf_predictions_write_csv(const mf_predictions* predictions, const char* path) {
  return guarded([&] {
    require(predictions && path, "null argument");
    write_predictions_csv(path, predictions->value);
  });
}

void mf_predictions_free(mf_predictions* predictions) { delete predictions; }

}  // extern "C"
