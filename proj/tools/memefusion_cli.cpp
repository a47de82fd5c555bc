// memefusion command-line front end. Talks to the library only through the
// C interface in memefusion/memefusion.h.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "memefusion/memefusion.h"

namespace fs = std::filesystem;

namespace {

// Thrown to unwind with a library status; main() turns it into the exit
// code and a one-line JSON error on stderr.
struct Failure {
  mf_status status;
  std::string message;
};

void check(mf_status status) {
  if (status != MF_OK) throw Failure{status, mf_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};

using Config = std::unique_ptr<mf_config, Deleter<mf_config, mf_config_free>>;
using Split = std::unique_ptr<mf_split, Deleter<mf_split, mf_split_free>>;
using Encoders = std::unique_ptr<mf_encoders, Deleter<mf_encoders, mf_encoders_free>>;
using Run = std::unique_ptr<mf_run, Deleter<mf_run, mf_run_free>>;
using Report = std::unique_ptr<mf_report, Deleter<mf_report, mf_report_free>>;
using Predictions =
    std::unique_ptr<mf_predictions, Deleter<mf_predictions, mf_predictions_free>>;

std::string take_string(char* s) {
  std::string out(s ? s : "");
  mf_string_free(s);
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw Failure{MF_ERR_IO, "cannot write " + path.string()};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{MF_ERR_IO, "cannot create directory " + dir.string()};
}

// ---- shared option groups ------------------------------------------------------

struct DataOptions {
  std::string manifest;
  std::string images;
  std::string delimiter = "comma";

  void add(CLI::App* app, bool required = true) {
    auto* m = app->add_option("--manifest", manifest, "Manifest file (id,image_file,caption[,label])");
    auto* i = app->add_option("--images", images, "Directory image_file paths resolve against");
    if (required) {
      m->required();
      i->required();
    }
    app->add_option("--delimiter", delimiter, "Manifest field delimiter")
        ->check(CLI::IsMember({"comma", "tab"}));
  }

  char delimiter_char() const { return delimiter == "tab" ? '\t' : ','; }

  Split load(mf_split_role role) const {
    mf_split* split = nullptr;
    check(mf_split_load(manifest.c_str(), images.c_str(), role, delimiter_char(), &split));
    return Split(split);
  }
};

struct CacheFlags {
  bool no_cache = false;
  std::string cache_dir;

  void add(CLI::App* app) {
    app->add_flag("--no-cache", no_cache, "Recompute embeddings instead of using the cache");
    app->add_option("--cache-dir", cache_dir,
                    "Embedding cache root (default $MEMEFUSION_CACHE or ~/.cache/memefusion)");
  }

  std::optional<std::string> resolve() const {
    if (no_cache) return std::nullopt;
    if (!cache_dir.empty()) return cache_dir;
    if (const char* env = std::getenv("MEMEFUSION_CACHE"); env && *env) return std::string(env);
    if (const char* home = std::getenv("HOME"); home && *home) {
      return (fs::path(home) / ".cache" / "memefusion").string();
    }
    return std::nullopt;
  }
};

// Settings that may come from --config and individual flags. Only flags
// actually given override the layers below.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, CLI::Option*> options;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, image_size = 0, text_max_len = 0;
  double learning_rate = 0, encoder_learning_rate = 0, pos_weight = 0, threshold = 0,
         val_fraction = 0;
  std::string fusion_taps, text_encoder, image_encoder, text_pooling;
  bool finetune = false, strict = false, flip = false;
  std::uint64_t projection_seed = 0;

  void add(CLI::App* app, bool training) {
    app->add_option("--config", config_file, "Flat JSON config file")->check(CLI::ExistingFile);
    options["image_size"] = app->add_option("--image-size", image_size, "Square input side");
    options["text_max_len"] = app->add_option("--text-max-len", text_max_len, "Token budget");
    options["text_encoder"] = app->add_option("--text-encoder", text_encoder, "Text weights id or directory");
    options["image_encoder"] = app->add_option("--image-encoder", image_encoder, "Image weights id or directory");
    options["text_pooling"] = app->add_option("--text-pooling", text_pooling, "cls or mean")
                                  ->check(CLI::IsMember({"cls", "mean"}));
    options["projection_seed"] = app->add_option("--projection-seed", projection_seed,
                                                 "Seed of the 512->256 image projection");
    options["threshold"] = app->add_option("--threshold", threshold, "Decision threshold on P(troll)");
    if (!training) return;
    options["seed"] = app->add_option("--seed", seed, "Run seed; every random stream derives from it");
    options["epochs"] = app->add_option("--epochs", epochs, "Training epochs");
    options["batch_size"] = app->add_option("--batch-size", batch_size, "Mini-batch size");
    options["learning_rate"] = app->add_option("--lr", learning_rate, "Head learning rate");
    options["encoder_learning_rate"] =
        app->add_option("--encoder-lr", encoder_learning_rate, "Encoder learning rate when fine-tuning");
    options["pos_weight"] = app->add_option("--pos-weight", pos_weight, "Weight of the troll loss term");
    options["val_fraction"] =
        app->add_option("--val-fraction", val_fraction, "Stratified validation holdout fraction");
    options["fusion_taps"] = app->add_option("--fusion-taps", fusion_taps, "encoder or hidden")
                                 ->check(CLI::IsMember({"encoder", "hidden"}));
    options["finetune"] = app->add_flag("--finetune", finetune, "Unfreeze and train the encoders");
    options["strict_determinism"] =
        app->add_flag("--strict-determinism", strict, "Single-threaded numeric kernels");
    options["augment_flip"] = app->add_flag("--augment-flip", flip, "Random horizontal flips");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    auto given = [&](const char* key) {
      auto it = options.find(key);
      return it != options.end() && it->second->count() > 0;
    };
    if (given("image_size")) j["image_size"] = image_size;
    if (given("text_max_len")) j["text_max_len"] = text_max_len;
    if (given("text_encoder")) j["text_encoder"] = text_encoder;
    if (given("image_encoder")) j["image_encoder"] = image_encoder;
    if (given("text_pooling")) j["text_pooling"] = text_pooling;
    if (given("projection_seed")) j["projection_seed"] = projection_seed;
    if (given("threshold")) j["threshold"] = threshold;
    if (given("seed")) j["seed"] = seed;
    if (given("epochs")) j["epochs"] = epochs;
    if (given("batch_size")) j["batch_size"] = batch_size;
    if (given("learning_rate")) j["learning_rate"] = learning_rate;
    if (given("encoder_learning_rate")) j["encoder_learning_rate"] = encoder_learning_rate;
    if (given("pos_weight")) j["pos_weight"] = pos_weight;
    if (given("val_fraction")) j["val_fraction"] = val_fraction;
    if (given("fusion_taps")) j["fusion_taps"] = fusion_taps;
    if (given("finetune")) j["finetune"] = finetune;
    if (given("strict_determinism")) j["strict_determinism"] = strict;
    if (given("augment_flip")) j["augment_flip"] = flip;
    return j;
  }

  // Layers the config file and flags over `config`.
  void apply(mf_config* config) const {
    if (!config_file.empty()) check(mf_config_merge_file(config, config_file.c_str()));
    const nlohmann::json j = overrides();
    if (!j.empty()) check(mf_config_merge_json(config, j.dump().c_str()));
  }
};

Encoders load_encoders(const mf_config* config) {
  mf_encoders* enc = nullptr;
  check(mf_encoders_load(config, &enc));
  return Encoders(enc);
}

// Loads a run and checks it against its own config with the invocation's
// overrides layered on top.
struct LoadedRun {
  Run run;
  Config config;
};

LoadedRun load_run(const std::string& dir, const ConfigFlags& flags) {
  mf_run* raw = nullptr;
  check(mf_run_load(dir.c_str(), nullptr, &raw));
  Run stored(raw);
  mf_config* cfg = nullptr;
  check(mf_run_config(stored.get(), &cfg));
  Config config(cfg);
  flags.apply(config.get());
  check(mf_run_load(dir.c_str(), config.get(), &raw));
  return {Run(raw), std::move(config)};
}

std::string run_model_name(const mf_run* run) {
  char* json = nullptr;
  check(mf_run_describe_json(run, &json));
  return nlohmann::json::parse(take_string(json)).at("kind").get<std::string>();
}

// ---- subcommands ---------------------------------------------------------------

struct StatsCommand {
  DataOptions data;
  std::string role = "train";

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("stats", "Class counts of a manifest");
    data.add(sub);
    sub->add_option("--role", role, "Split role")->check(CLI::IsMember({"train", "val", "test"}));
    sub->final_callback([this] { run(); });
  }

  void run() {
    const mf_split_role r = role == "train" ? MF_SPLIT_TRAIN
                            : role == "val" ? MF_SPLIT_VAL
                                            : MF_SPLIT_TEST;
    Split split = data.load(r);
    char* json = nullptr;
    check(mf_split_stats_json(split.get(), &json));
    std::cout << take_string(json) << '\n';
  }
};

struct TrainCommand {
  DataOptions data;
  DataOptions val;
  ConfigFlags flags;
  CacheFlags cache;
  std::string model;
  std::string out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train one classifier and write a run directory");
    sub->add_option("--model", model, "text, image or fusion")
        ->required()
        ->check(CLI::IsMember({"text", "image", "fusion"}));
    data.add(sub);
    sub->add_option("--val-manifest", val.manifest, "Optional labeled validation manifest");
    sub->add_option("--val-images", val.images, "Image root for --val-manifest");
    flags.add(sub, true);
    cache.add(sub);
    sub->add_option("--out", out, "Run directory to create")->required();
    sub->final_callback([this] { run(); });
  }

  void run() {
    mf_config* raw = nullptr;
    check(mf_config_create(&raw));
    Config config(raw);
    flags.apply(config.get());
    const nlohmann::json kind{{"model", model}};
    check(mf_config_merge_json(config.get(), kind.dump().c_str()));

    Split train = data.load(MF_SPLIT_TRAIN);
    Split val_split;
    if (!val.manifest.empty()) {
      DataOptions v = val;
      if (v.images.empty()) v.images = data.images;
      v.delimiter = data.delimiter;
      val_split = v.load(MF_SPLIT_VAL);
    }
    Encoders encoders = load_encoders(config.get());
    const auto cache_dir = cache.resolve();
    mf_run* run = nullptr;
    check(mf_train(train.get(), val_split.get(), config.get(), encoders.get(),
                   cache_dir ? cache_dir->c_str() : nullptr, &run));
    Run trained(run);
    check(mf_run_save(trained.get(), out.c_str()));
    char* history = nullptr;
    check(mf_run_history_json(trained.get(), &history));
    const auto records = nlohmann::json::parse(take_string(history));
    if (!records.empty()) {
      const auto& last = records.back();
      std::cout << "trained " << model << " for " << records.size() << " epochs: loss "
                << last.at("train_loss").get<double>() << ", train accuracy "
                << last.at("train_accuracy").get<double>() << "\nrun directory: " << out
                << '\n';
    }
  }
};

struct EvaluateCommand {
  std::vector<std::string> runs;
  DataOptions data;
  ConfigFlags flags;
  CacheFlags cache;
  std::string out;
  bool compare = false;
  bool plots = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("evaluate", "Score trained runs on a labeled manifest");
    sub->add_option("--run", runs, "Run directory (repeatable)")->required();
    data.add(sub);
    flags.add(sub, false);
    cache.add(sub);
    sub->add_option("--out", out, "Directory for reports and tables")->required();
    sub->add_flag("--compare", compare, "Render one comparison table over all runs");
    sub->add_flag("--plots", plots, "Also write confusion-matrix heatmaps (PNG)");
    sub->final_callback([this] { run(); });
  }

  void run() {
    ensure_dir(out);
    Split split = data.load(MF_SPLIT_TEST);
    std::vector<Report> reports;
    std::set<std::string> names;
    for (const auto& dir : runs) {
      LoadedRun loaded = load_run(dir, flags);
      Encoders encoders = load_encoders(loaded.config.get());
      check(mf_run_restore_encoders(loaded.run.get(), encoders.get()));
      const auto cache_dir = cache.resolve();
      mf_report* raw = nullptr;
      check(mf_evaluate(loaded.run.get(), split.get(), encoders.get(),
                        cache_dir ? cache_dir->c_str() : nullptr, &raw));
      Report report(raw);
      std::string name = run_model_name(loaded.run.get());
      if (!names.insert(name).second) {
        name += "-" + fs::path(dir).lexically_normal().filename().string();
        names.insert(name);
      }
      check(mf_report_set_model(report.get(), name.c_str()));
      const fs::path base = fs::path(out) / name;
      check(mf_report_write(report.get(), (base.string() + ".report.json").c_str()));
      char* csv = nullptr;
      check(mf_render_confusion_csv(report.get(), &csv));
      write_file(base.string() + ".confusion.csv", take_string(csv));
      if (plots) {
        check(mf_write_confusion_heatmap(report.get(), (base.string() + ".confusion.png").c_str()));
      }
      reports.push_back(std::move(report));
    }
    if (compare || reports.size() == 1) {
      std::vector<const mf_report*> rows;
      for (const auto& r : reports) rows.push_back(r.get());
      char* md = nullptr;
      check(mf_render_comparison(rows.data(), rows.size(), MF_TABLE_MARKDOWN, &md));
      const std::string table = take_string(md);
      write_file(fs::path(out) / "comparison.md", table);
      char* csv = nullptr;
      check(mf_render_comparison(rows.data(), rows.size(), MF_TABLE_CSV, &csv));
      write_file(fs::path(out) / "comparison.csv", take_string(csv));
      std::cout << table;
    }
  }
};

struct PredictCommand {
  std::string run_dir;
  DataOptions data;
  ConfigFlags flags;
  CacheFlags cache;
  std::string out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("predict", "Label a manifest with a trained run");
    sub->add_option("--run", run_dir, "Run directory")->required();
    data.add(sub);
    flags.add(sub, false);
    cache.add(sub);
    sub->add_option("--out", out, "Directory to write predictions.csv into")->required();
    sub->final_callback([this] { run(); });
  }

  void run() {
    Split split = data.load(MF_SPLIT_TEST);
    LoadedRun loaded = load_run(run_dir, flags);
    Encoders encoders = load_encoders(loaded.config.get());
    check(mf_run_restore_encoders(loaded.run.get(), encoders.get()));
    const auto cache_dir = cache.resolve();
    mf_predictions* raw = nullptr;
    check(mf_predict(loaded.run.get(), split.get(), encoders.get(),
                     cache_dir ? cache_dir->c_str() : nullptr, &raw));
    Predictions predictions(raw);
    ensure_dir(out);
    const fs::path path = fs::path(out) / "predictions.csv";
    check(mf_predictions_write_csv(predictions.get(), path.string().c_str()));
    std::cout << "wrote " << mf_predictions_size(predictions.get()) << " predictions to "
              << path.string() << '\n';
  }
};

struct ReportCommand {
  std::vector<std::string> inputs;
  std::string out;
  bool plots = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("report", "Render evaluation reports as comparison tables");
    sub->add_option("reports", inputs, "Evaluation report JSON files")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Directory for comparison.md/.csv and confusion files");
    sub->add_flag("--plots", plots, "Also write confusion-matrix heatmaps (PNG)");
    sub->final_callback([this] { run(); });
  }

  void run() {
    std::vector<Report> reports;
    for (const auto& path : inputs) {
      mf_report* raw = nullptr;
      check(mf_report_read(path.c_str(), &raw));
      reports.emplace_back(raw);
    }
    std::vector<const mf_report*> rows;
    for (const auto& r : reports) rows.push_back(r.get());
    char* md = nullptr;
    check(mf_render_comparison(rows.data(), rows.size(), MF_TABLE_MARKDOWN, &md));
    const std::string table = take_string(md);
    if (!out.empty()) {
      ensure_dir(out);
      write_file(fs::path(out) / "comparison.md", table);
      char* csv = nullptr;
      check(mf_render_comparison(rows.data(), rows.size(), MF_TABLE_CSV, &csv));
      write_file(fs::path(out) / "comparison.csv", take_string(csv));
      for (const auto& r : reports) {
        char* json = nullptr;
        check(mf_report_to_json(r.get(), &json));
        const std::string name =
            nlohmann::json::parse(take_string(json)).at("model").get<std::string>();
        char* cm = nullptr;
        check(mf_render_confusion_csv(r.get(), &cm));
        write_file(fs::path(out) / (name + ".confusion.csv"), take_string(cm));
        if (plots) {
          const fs::path png = fs::path(out) / (name + ".confusion.png");
          check(mf_write_confusion_heatmap(r.get(), png.string().c_str()));
        }
      }
    }
    std::cout << table;
  }
};

struct InitEncodersCommand {
  std::string out;
  std::uint64_t seed = 0;
  int text_layers = 0;
  int text_intermediate = 0;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "init-encoders", "Write seeded random encoder weights for offline smoke runs");
    sub->add_option("--out", out, "Directory; receives text/ and image/")->required();
    sub->add_option("--seed", seed, "Weight seed");
    sub->add_option("--text-layers", text_layers, "Transformer layers (default 12)");
    sub->add_option("--text-intermediate", text_intermediate, "Feed-forward width (default 3072)");
    sub->final_callback([this] { run(); });
  }

  void run() {
    const fs::path text = fs::path(out) / "text";
    const fs::path image = fs::path(out) / "image";
    check(mf_write_random_text_encoder(text.string().c_str(), seed, text_layers,
                                       text_intermediate));
    check(mf_write_random_image_encoder(image.string().c_str(), seed));
    std::cout << "{\"text_encoder\": \"" << text.string() << "\", \"image_encoder\": \""
              << image.string() << "\"}\n";
  }
};

int report_failure(const Failure& f) {
  const nlohmann::json j{{"status", mf_status_name(f.status)},
                         {"exit_code", mf_status_exit_code(f.status)},
                         {"message", f.message}};
  std::cerr << "error: " << j.dump() << '\n';
  return mf_status_exit_code(f.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Troll meme classification from caption and image embeddings", "memefusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mf_version());
  StatsCommand stats;
  TrainCommand train;
  EvaluateCommand evaluate;
  PredictCommand predict;
  ReportCommand report;
  InitEncodersCommand init;
  stats.add(app);
  train.add(app);
  evaluate.add(app);
  predict.add(app);
  report.add(app);
  init.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mf_status_exit_code(MF_ERR_INVALID_ARGUMENT);
  } catch (const Failure& f) {
    return report_failure(f);
  } catch (const nlohmann::json::exception& e) {
    return report_failure(Failure{MF_ERR_INTERNAL, e.what()});
  }
  return 0;
}
