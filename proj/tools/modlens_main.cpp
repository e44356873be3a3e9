#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "modlens/analyzer.hpp"
#include "modlens/errors.hpp"
#include "modlens/influence.hpp"
#include "modlens/raster.hpp"
#include "modlens/segnet.hpp"
#include "modlens/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace modlens;

namespace {

void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("config: unknown key '" + (ctx.empty() ? key : ctx + "." + key) + "'");
  }
}

int get_int(const json& j, const std::string& key, int def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number_integer())
    throw ConfigError("config: key '" + key + "' must be an integer");
  return j.at(key).get<int>();
}

double get_num(const json& j, const std::string& key, double def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number()) throw ConfigError("config: key '" + key + "' must be a number");
  return j.at(key).get<double>();
}

std::string get_str(const json& j, const std::string& key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) throw ConfigError("config: key '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::uint64_t get_u64(const json& j, const std::string& key, std::uint64_t def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number_integer())
    throw ConfigError("config: key '" + key + "' must be an integer");
  return j.at(key).get<std::uint64_t>();
}

// Everything a command needs, after merging config file and flags.
struct Effective {
  std::string command;
  fs::path data_dir, out_dir, checkpoint;
  std::uint64_t seed = 0;
  float occlusion_value = 0.0f;
  std::string mode = "framework";
  std::string split = "val";
  int benchmark_epochs = 2;
  NetConfig net;  // base_width/depth only; rest filled by train()
  TrainConfig train;
  SynthConfig synth;
};

NetConfig parse_net(const json& j) {
  check_keys(j, "net", {"base_width", "depth"});
  NetConfig n;
  n.base_width = get_int(j, "base_width", n.base_width);
  n.depth = get_int(j, "depth", n.depth);
  return n;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train",
             {"batch_size", "crop", "max_lr", "min_lr", "initial_lr", "cycle_steps",
              "adam_eps", "adam_beta1", "adam_beta2", "patience_epochs",
              "influence_loss_weight", "early_stop_metric", "max_epochs", "lr_preset"});
  TrainConfig t;
  const std::string preset = get_str(j, "lr_preset", "paper");
  if (preset == "practical") t = t.practical();
  else if (preset != "paper")
    throw ConfigError("config: key 'lr_preset' must be 'paper' or 'practical'");
  t.batch_size = get_int(j, "batch_size", t.batch_size);
  t.crop = get_int(j, "crop", t.crop);
  t.max_lr = get_num(j, "max_lr", t.max_lr);
  t.min_lr = get_num(j, "min_lr", t.min_lr);
  t.initial_lr = get_num(j, "initial_lr", t.initial_lr);
  t.cycle_steps = get_int(j, "cycle_steps", t.cycle_steps);
  t.adam_eps = get_num(j, "adam_eps", t.adam_eps);
  t.adam_beta1 = get_num(j, "adam_beta1", t.adam_beta1);
  t.adam_beta2 = get_num(j, "adam_beta2", t.adam_beta2);
  t.patience_epochs = get_int(j, "patience_epochs", t.patience_epochs);
  t.influence_loss_weight = get_num(j, "influence_loss_weight", t.influence_loss_weight);
  t.early_stop_metric = get_str(j, "early_stop_metric", t.early_stop_metric);
  t.max_epochs = get_int(j, "max_epochs", t.max_epochs);
  return t;
}

SynthConfig parse_synth(const json& j) {
  check_keys(j, "synth",
             {"num_samples", "num_val", "num_test", "height", "width", "informative_groups",
              "noise_groups", "area_min", "area_max", "distortion", "dropout_prob"});
  SynthConfig s;
  s.num_samples = get_int(j, "num_samples", s.num_samples);
  s.num_val = get_int(j, "num_val", s.num_val);
  s.num_test = get_int(j, "num_test", s.num_test);
  s.height = get_int(j, "height", s.height);
  s.width = get_int(j, "width", s.width);
  if (j.contains("informative_groups")) {
    if (!j.at("informative_groups").is_object())
      throw ConfigError("config: key 'informative_groups' must be an object of name -> strength");
    s.informative_groups.clear();
    for (const auto& [name, v] : j.at("informative_groups").items()) {
      if (!v.is_number())
        throw ConfigError("config: strength for group '" + name + "' must be a number");
      s.informative_groups[name] = v.get<float>();
    }
  }
  if (j.contains("noise_groups")) {
    if (!j.at("noise_groups").is_array())
      throw ConfigError("config: key 'noise_groups' must be an array of group names");
    s.noise_groups.clear();
    for (const auto& v : j.at("noise_groups")) {
      if (!v.is_string()) throw ConfigError("config: 'noise_groups' entries must be strings");
      s.noise_groups.push_back(v.get<std::string>());
    }
  }
  s.area_min = static_cast<float>(get_num(j, "area_min", s.area_min));
  s.area_max = static_cast<float>(get_num(j, "area_max", s.area_max));
  s.distortion = static_cast<float>(get_num(j, "distortion", s.distortion));
  s.dropout_prob = static_cast<float>(get_num(j, "dropout_prob", s.dropout_prob));
  return s;
}

Effective resolve(const json& merged, const std::string& command) {
  check_keys(merged, "",
             {"data_dir", "out_dir", "seed", "occlusion_value", "mode", "split", "checkpoint",
              "net", "train", "synth", "benchmark_epochs"});
  Effective e;
  e.command = command;
  e.data_dir = get_str(merged, "data_dir", "");
  e.out_dir = get_str(merged, "out_dir", "");
  e.checkpoint = get_str(merged, "checkpoint", "");
  e.seed = get_u64(merged, "seed", 0);
  e.occlusion_value = static_cast<float>(get_num(merged, "occlusion_value", 0.0));
  e.mode = get_str(merged, "mode", "framework");
  e.split = get_str(merged, "split", "val");
  e.benchmark_epochs = get_int(merged, "benchmark_epochs", 2);
  if (merged.contains("net")) e.net = parse_net(merged.at("net"));
  if (merged.contains("train")) e.train = parse_train(merged.at("train"));
  else e.train = TrainConfig{};
  if (merged.contains("synth")) e.synth = parse_synth(merged.at("synth"));
  e.train.seed = e.seed;
  e.train.occlusion_value = e.occlusion_value;
  e.synth.seed = e.seed;
  return e;
}

json synth_to_json(const SynthConfig& s) {
  json groups = json::object();
  for (const auto& [name, v] : s.informative_groups) groups[name] = v;
  return {{"num_samples", s.num_samples}, {"num_val", s.num_val},   {"num_test", s.num_test},
          {"height", s.height},           {"width", s.width},       {"informative_groups", groups},
          {"noise_groups", s.noise_groups}, {"area_min", s.area_min}, {"area_max", s.area_max},
          {"distortion", s.distortion},     {"dropout_prob", s.dropout_prob}};
}

json train_to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"crop", t.crop},
          {"max_lr", t.max_lr},
          {"min_lr", t.min_lr},
          {"initial_lr", t.initial_lr},
          {"cycle_steps", t.cycle_steps},
          {"adam_eps", t.adam_eps},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"patience_epochs", t.patience_epochs},
          {"influence_loss_weight", t.influence_loss_weight},
          {"early_stop_metric", t.early_stop_metric},
          {"max_epochs", t.max_epochs}};
}

void write_effective_config(const Effective& e) {
  fs::create_directories(e.out_dir);
  json j = {{"command", e.command},
            {"data_dir", e.data_dir.string()},
            {"out_dir", e.out_dir.string()},
            {"seed", e.seed},
            {"occlusion_value", e.occlusion_value}};
  if (e.command == "train" || e.command == "benchmark") {
    if (e.command == "train") j["mode"] = e.mode;
    j["net"] = {{"base_width", e.net.base_width}, {"depth", e.net.depth}};
    j["train"] = train_to_json(e.train);
    if (e.command == "benchmark") j["benchmark_epochs"] = e.benchmark_epochs;
  }
  if (e.command == "eval" || e.command == "analyze") {
    j["checkpoint"] = e.checkpoint.string();
    j["split"] = e.split;
  }
  if (e.command == "synth") j["synth"] = synth_to_json(e.synth);
  std::ofstream f(e.out_dir / "effective_config.json");
  f << j.dump(2) << "\n";
  if (!f) throw RuntimeFailure("write failed for effective_config.json");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

int cmd_synth(const Effective& e) {
  require(!e.out_dir.empty(), "synth: --out (or out_dir) is required");
  write_effective_config(e);
  const DatasetManifest m = generate_synthetic(e.synth, e.out_dir);
  std::printf("wrote %zu samples (%zu train / %zu val / %zu test) to %s\n", m.samples.size(),
              m.ids(Split::kTrain).size(), m.ids(Split::kVal).size(),
              m.ids(Split::kTest).size(), e.out_dir.string().c_str());
  return 0;
}

int cmd_train(const Effective& e) {
  require(!e.data_dir.empty(), "train: --data (or data_dir) is required");
  require(!e.out_dir.empty(), "train: --out (or out_dir) is required");
  require(fs::exists(e.data_dir), "train: data dir '" + e.data_dir.string() + "' does not exist");
  const ModelKind kind = model_kind_from_name(e.mode);
  const DatasetManifest manifest = load_manifest(e.data_dir);
  write_effective_config(e);
  TrainOutput out = train(kind, e.net, e.train, manifest);
  save_checkpoint(*out.model, out.meta, e.out_dir / "checkpoint.bin");
  write_history_csv(e.out_dir / "history.csv", out.history);
  const EpochStats& last = out.history.back();
  const EpochStats& best = out.history[out.best_epoch - 1];
  std::printf("%s: %d epochs, best epoch %d (val_iou %.4f, val_f1 %.4f); checkpoint: %s\n",
              e.mode.c_str(), last.epoch, out.best_epoch, best.val_iou, best.val_f1,
              (e.out_dir / "checkpoint.bin").string().c_str());
  return 0;
}

std::string format_metrics_json(const MetricsRecord& m, const std::string& split) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\n"
                "  \"split\": \"%s\",\n"
                "  \"iou\": %.2f,\n"
                "  \"accuracy\": %.2f,\n"
                "  \"f1\": %.2f,\n"
                "  \"confusion\": {\"tp\": %lld, \"fp\": %lld, \"fn\": %lld, \"tn\": %lld}\n"
                "}\n",
                split.c_str(), 100.0 * m.iou, 100.0 * m.accuracy, 100.0 * m.f1, m.tp, m.fp,
                m.fn, m.tn);
  return buf;
}

int cmd_eval(const Effective& e) {
  require(!e.checkpoint.empty(), "eval: --checkpoint is required");
  require(!e.data_dir.empty(), "eval: --data (or data_dir) is required");
  require(!e.out_dir.empty(), "eval: --out (or out_dir) is required");
  require(fs::exists(e.checkpoint), "eval: checkpoint '" + e.checkpoint.string() + "' does not exist");
  LoadedCheckpoint ck = load_checkpoint(e.checkpoint);
  const DatasetManifest manifest = load_manifest(e.data_dir);
  write_effective_config(e);
  const MetricsRecord m = evaluate(*ck.model, ck.meta, manifest, split_from_name(e.split));
  const std::string text = format_metrics_json(m, e.split);
  std::ofstream f(e.out_dir / "metrics.json");
  f << text;
  if (!f) throw RuntimeFailure("write failed for metrics.json");
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_analyze(const Effective& e) {
  require(!e.checkpoint.empty(), "analyze: --checkpoint is required");
  require(!e.data_dir.empty(), "analyze: --data (or data_dir) is required");
  require(!e.out_dir.empty(), "analyze: --out (or out_dir) is required");
  require(fs::exists(e.checkpoint),
          "analyze: checkpoint '" + e.checkpoint.string() + "' does not exist");
  LoadedCheckpoint ck = load_checkpoint(e.checkpoint);
  const DatasetManifest manifest = load_manifest(e.data_dir);
  const InfluenceTable table =
      collect_scores(*ck.model, ck.meta, manifest, split_from_name(e.split));
  write_effective_config(e);
  export_violin_data(table, e.out_dir);
  std::printf("wrote %zu score rows to %s (influence_scores.csv, kde.csv, summary.csv)\n",
              table.size(), e.out_dir.string().c_str());
  return 0;
}

int cmd_benchmark(const Effective& e) {
  require(!e.data_dir.empty(), "benchmark: --data (or data_dir) is required");
  require(!e.out_dir.empty(), "benchmark: --out (or out_dir) is required");
  const DatasetManifest manifest = load_manifest(e.data_dir);
  write_effective_config(e);
  const TimingRecord plain =
      benchmark_timing(ModelKind::kPlain, e.net, e.train, manifest, e.benchmark_epochs);
  const TimingRecord fw =
      benchmark_timing(ModelKind::kFramework, e.net, e.train, manifest, e.benchmark_epochs);
  json j = {{"epochs_measured", e.benchmark_epochs},
            {"plain",
             {{"epoch_s", plain.epoch_s},
              {"batch_s", plain.batch_s},
              {"optimizer_step_s", plain.optimizer_step_s}}},
            {"framework",
             {{"epoch_s", fw.epoch_s},
              {"batch_s", fw.batch_s},
              {"optimizer_step_s", fw.optimizer_step_s}}},
            {"overhead_epoch_s", fw.epoch_s - plain.epoch_s},
            {"batch_ratio", plain.batch_s > 0 ? fw.batch_s / plain.batch_s : 0.0}};
  std::ofstream f(e.out_dir / "timing.json");
  f << j.dump(2) << "\n";
  if (!f) throw RuntimeFailure("write failed for timing.json");
  std::printf("%-10s %12s %12s %18s\n", "mode", "epoch_s", "batch_s", "optimizer_step_s");
  std::printf("%-10s %12.5f %12.5f %18.6f\n", "plain", plain.epoch_s, plain.batch_s,
              plain.optimizer_step_s);
  std::printf("%-10s %12.5f %12.5f %18.6f\n", "framework", fw.epoch_s, fw.batch_s,
              fw.optimizer_step_s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-level occlusion sensitivity for multimodal semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint, split, mode;
  long long seed = 0;
  double occlusion = 0.0;
  int samples = 0, epochs = 0;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config file");
    c->add_option("--out", out_dir, "output directory");
    c->add_option("--seed", seed, "seed for all randomness");
    c->add_option("--occlusion-value", occlusion, "fill value for occluded channels (default 0)");
  };

  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic multimodal dataset");
  add_common(c_synth);
  c_synth->add_option("--samples", samples, "total number of samples");

  CLI::App* c_train = app.add_subcommand("train", "train a segmentation model");
  add_common(c_train);
  c_train->add_option("--data", data_dir, "dataset directory (with manifest.json)");
  c_train->add_option("--mode", mode, "plain or framework")
      ->check(CLI::IsMember({"plain", "framework"}));

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(c_eval);
  c_eval->add_option("--data", data_dir, "dataset directory");
  c_eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  c_eval->add_option("--split", split, "train, val or test");

  CLI::App* c_analyze = app.add_subcommand("analyze", "export per-modality influence scores");
  add_common(c_analyze);
  c_analyze->add_option("--data", data_dir, "dataset directory");
  c_analyze->add_option("--checkpoint", checkpoint, "checkpoint file");
  c_analyze->add_option("--split", split, "train, val or test");

  CLI::App* c_bench = app.add_subcommand("benchmark", "time plain vs framework training");
  add_common(c_bench);
  c_bench->add_option("--data", data_dir, "dataset directory");
  c_bench->add_option("--epochs", epochs, "measured epochs after warm-up (default 2)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    auto given = [&](const char* name) {
      const CLI::Option* opt = sub->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    json merged = json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot open config file '" + config_path + "'");
      try {
        f >> merged;
      } catch (const json::exception& ex) {
        throw ConfigError("config file '" + config_path + "': " + ex.what());
      }
      if (!merged.is_object()) throw ConfigError("config file must hold a JSON object");
    }
    if (given("--out")) merged["out_dir"] = out_dir;
    if (given("--seed")) merged["seed"] = seed;
    if (given("--occlusion-value")) merged["occlusion_value"] = occlusion;
    if (given("--data")) merged["data_dir"] = data_dir;
    if (given("--mode")) merged["mode"] = mode;
    if (given("--checkpoint")) merged["checkpoint"] = checkpoint;
    if (given("--split")) merged["split"] = split;
    if (given("--samples")) merged["synth"]["num_samples"] = samples;
    if (given("--epochs")) merged["benchmark_epochs"] = epochs;

    const Effective e = resolve(merged, sub->get_name());
    if (e.command == "synth") return cmd_synth(e);
    if (e.command == "train") return cmd_train(e);
    if (e.command == "eval") return cmd_eval(e);
    if (e.command == "analyze") return cmd_analyze(e);
    return cmd_benchmark(e);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const RuntimeFailure& err) {
    std::cerr << "runtime error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
}
