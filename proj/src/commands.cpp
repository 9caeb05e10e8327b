#include "vtfuse/commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vtfuse/checkpoint.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/gan.hpp"
#include "vtfuse/training.hpp"

namespace vtfuse {

namespace {

std::vector<KeySpec> join(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<KeySpec>& data_keys() {
  static const std::vector<KeySpec> keys{
      {"threshold_min", "11", "lowest lifting force threshold, N"},
      {"threshold_max", "25", "highest lifting force threshold, N"},
      {"offset_max", "4", "largest grasp offset, px"},
      {"margin", "3.6", "offset beyond which a grasp always slips, px"},
      {"visual_noise", "0.02", "pixel noise std of the camera image"},
      {"tactile_noise", "0.02", "pixel noise std of the tactile image"},
  };
  return keys;
}

const std::vector<KeySpec>& train_keys() {
  static const std::vector<KeySpec> keys{
      {"epochs", "40", "training epochs"},
      {"lr", "5e-4", "Adam learning rate"},
      {"batch", "32", "mini-batch size"},
      {"resize", "20", "side after bilinear resize"},
      {"crop", "16", "side of the random training crop and the network input"},
      {"layers", "4", "stacked fusion layers"},
      {"heads", "4", "attention heads"},
  };
  return keys;
}

DataConfig data_config(const RunConfig& c) {
  DataConfig d;
  d.threshold_min = c.get_double("threshold_min");
  d.threshold_max = c.get_double("threshold_max");
  d.offset_max = c.get_double("offset_max");
  d.margin = c.get_double("margin");
  d.visual_noise = c.get_double("visual_noise");
  d.tactile_noise = c.get_double("tactile_noise");
  d.validate();
  return d;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.adam.learning_rate = c.get_double("lr");
  t.epochs = c.get_size("epochs");
  t.batch_size = c.get_size("batch");
  t.resize = c.get_size("resize");
  t.crop = c.get_size("crop");
  t.seed = c.get_u64("seed");
  t.validate();
  return t;
}

FusionConfig fusion_config(const RunConfig& c, Variant v) {
  FusionConfig f = FusionConfig::toy(v);
  f.image_size = c.get_size("crop");
  f.layers = c.get_size("layers");
  f.heads = c.get_size("heads");
  f.validate();
  return f;
}

// Evaluation uses the checkpoint's input side as the centre crop.
TrainConfig eval_config(const RunConfig& c, const FusionModel& m) {
  TrainConfig t;
  t.resize = c.get_size("resize");
  t.crop = m.cfg.image_size;
  t.validate();
  return t;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::vector<Sample> load_data(const RunConfig& c, const std::string& key) {
  std::vector<Sample> data = read_dataset(c.require(key));
  if (data.empty()) throw ContractError("dataset " + c.get(key) + " is empty");
  return data;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

void print_metrics(std::ostream& out, const Metrics& m) {
  const auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("null"); };
  out << "accuracy = " << format_number(m.accuracy) << '\n'
      << "precision = " << opt(m.precision) << '\n'
      << "recall = " << opt(m.recall) << '\n'
      << "loss = " << format_number(m.loss) << '\n';
}

void gen_data(const RunConfig& c, std::ostream& out) {
  const std::size_t n = c.get_size("n");
  if (n == 0) throw ConfigError("n must be positive");
  const std::vector<Sample> data = generate_dataset(data_config(c), n, c.get_u64("seed"));
  write_dataset(c.require("out"), data);
  const double pos = positive_fraction(data);
  out << "wrote " << n << " samples to " << c.get("out") << '\n'
      << "positive fraction = " << format_number(pos) << " (ratio " << percent(pos) << ':' << percent(1.0 - pos)
      << ")\n";
}

void gen_pairs(const RunConfig& c, std::ostream& out) {
  const std::size_t n = c.get_size("n");
  if (n == 0) throw ConfigError("n must be positive");
  PairConfig pc;
  pc.size = c.get_size("size");
  if (pc.size == 0 || pc.size % 4 != 0) throw ConfigError("size must be a positive multiple of 4");
  std::vector<GanPair> pairs = generate_paired_toy(n, c.get_u64("seed"), pc);
  if (c.get_bool("identical"))
    for (GanPair& p : pairs) p.real = p.sim.clone();
  write_pairs(c.require("out"), pairs);
  out << "wrote " << n << " pairs to " << c.get("out") << '\n';
}

void train_cmd(const RunConfig& c, std::ostream& out) {
  const std::vector<Sample> data = load_data(c, "data");
  const Variant variant = parse_variant(c.require("variant"));
  const TrainConfig tc = train_config(c);
  FusionModel model = FusionModel::init(fusion_config(c, variant), c.get_u64("seed"));
  const std::string run(variant_name(variant));

  std::optional<std::ofstream> history;
  if (c.has("history")) {
    history = open_output(c.get("history"));
    write_metrics_header(*history);
  }
  const TrainResult result = train(model, data, tc, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " loss " << format_number(r.loss) << " accuracy " << format_number(r.metrics.accuracy)
        << '\n';
    if (history) write_epoch_row(*history, run, 0, r);
  });
  if (history) write_final_row(*history, run, 0, result.final_train);
  save_model(c.require("out"), model);
  out << "final training metrics\n";
  print_metrics(out, result.final_train);
  out << "saved " << c.get("out") << '\n';
}

void eval_cmd(const RunConfig& c, std::ostream& out) {
  const FusionModel model = load_model(c.require("model"));
  const std::vector<Sample> data = load_data(c, "data");
  const Metrics m = evaluate(model, data, eval_config(c, model), c.get_double("threshold"));
  print_metrics(out, m);
  if (c.has("out")) {
    std::ofstream csv = open_output(c.get("out"));
    write_metrics_header(csv);
    write_final_row(csv, std::string(variant_name(model.cfg.variant)), 0, m);
  }
}

void ablate_cmd(const RunConfig& c, std::ostream& out) {
  const std::vector<Sample> data = load_data(c, "data");
  std::optional<std::vector<Sample>> test;
  if (c.has("test")) test = load_data(c, "test");
  const TrainConfig tc = train_config(c);
  const std::size_t folds = c.get_size("folds");
  std::optional<std::ofstream> metrics;
  if (c.has("out")) {
    metrics = open_output(c.get("out"));
    write_metrics_header(*metrics);
  }
  const auto rows = ablation_suite(data, folds, fusion_config(c, Variant::Full), tc, test ? &*test : nullptr,
                                   [&](Variant v, std::size_t fold, const EpochRecord& r) {
                                     if (metrics) write_epoch_row(*metrics, std::string(variant_name(v)), fold, r);
                                   });
  std::ostringstream table;
  table << "variant,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std\n";
  for (const AblationRow& row : rows) {
    const std::string name(variant_name(row.variant));
    if (metrics)
      for (const FoldResult& f : row.result.folds) write_final_row(*metrics, name, f.fold, f.test ? *f.test : f.validation);
    const CrossValidation& r = row.result;
    table << name << ',' << format_number(r.accuracy.mean) << ',' << format_number(r.accuracy.std) << ','
          << format_number(r.precision.mean) << ',' << format_number(r.precision.std) << ','
          << format_number(r.recall.mean) << ',' << format_number(r.recall.std) << '\n';
  }
  out << table.str();
  if (c.has("table")) open_output(c.get("table")) << table.str();
}

std::pair<std::vector<GanPair>, std::vector<GanPair>> load_pairs(const RunConfig& c) {
  const std::vector<GanPair> pairs = read_pairs(c.require("data"));
  if (pairs.empty()) throw ContractError("pair file " + c.get("data") + " is empty");
  return split_pairs(pairs, c.get_double("split"));
}

void train_gan_cmd(const RunConfig& c, std::ostream& out) {
  const auto [train_set, test_set] = load_pairs(c);
  GanTrainConfig cfg;
  cfg.lambda = c.get_double("lambda");
  cfg.learning_rate = c.get_double("lr");
  cfg.batch_size = c.get_size("batch");
  cfg.epochs = c.get_size("epochs");
  cfg.seed = c.get_u64("seed");
  cfg.validate();
  GanModel model = GanModel::init(c.get_u64("seed"), train_set.front().real.dim(0), c.get_size("width"));
  if (!test_set.empty()) out << "untrained mean ssim = " << format_number(mean_ssim(model.generator, test_set)) << '\n';

  std::optional<std::ofstream> history;
  if (c.has("history")) {
    history = open_output(c.get("history"));
    *history << "epoch,d_loss,g_loss\n";
  }
  train_gan(model, train_set, cfg, [&](const GanEpoch& e) {
    out << "epoch " << e.epoch << " d_loss " << format_number(e.d_loss) << " g_loss " << format_number(e.g_loss)
        << '\n';
    if (history) *history << e.epoch << ',' << format_number(e.d_loss) << ',' << format_number(e.g_loss) << '\n';
  });
  save_gan(c.require("out"), model);
  if (!test_set.empty()) out << "held-out mean ssim = " << format_number(mean_ssim(model.generator, test_set)) << '\n';
  out << "saved " << c.get("out") << '\n';
}

void eval_gan_cmd(const RunConfig& c, std::ostream& out) {
  const auto [train_set, test_set] = load_pairs(c);
  const std::string& subset = c.require("subset");
  std::vector<GanPair> pairs;
  if (subset == "test") {
    pairs = test_set;
  } else if (subset == "all") {
    pairs = train_set;
    pairs.insert(pairs.end(), test_set.begin(), test_set.end());
  } else {
    throw ConfigError("subset must be 'test' or 'all', got '" + subset + "'");
  }
  if (pairs.empty()) throw ConfigError("no pairs in the '" + subset + "' subset");

  GeneratorFn g = [](const Tensor& x) { return x; };
  std::optional<GanModel> model;
  if (c.require("model") != "identity") {
    model = load_gan(c.get("model"));
    g = [&model](const Tensor& x) { return translate(model->generator, x); };
  }
  std::optional<std::ofstream> csv;
  if (c.has("out")) {
    csv = open_output(c.get("out"));
    *csv << "pair,ssim\n";
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double s = ssim(g(pairs[i].real), pairs[i].sim);
    total += s;
    out << "pair " << i << " ssim " << format_number(s) << '\n';
    if (csv) *csv << i << ',' << format_number(s) << '\n';
  }
  out << "mean ssim = " << format_number(total / static_cast<double>(pairs.size())) << '\n';
}

void policy_cmd(const RunConfig& c, std::ostream& out) {
  const DataConfig dc = data_config(c);
  const std::size_t grasps = c.get_size("grasps");
  if (grasps == 0) throw ConfigError("grasps must be positive");
  const double f_min = c.get_double("f_min"), f_max = c.get_double("f_max"), step = c.get_double("step");
  const std::uint64_t seed = c.get_u64("seed");
  const double threshold = c.get_double("threshold");

  std::optional<FusionModel> model;
  std::optional<TrainConfig> tc;
  if (c.require("model") != "oracle") {
    model = load_model(c.get("model"));
    tc = eval_config(c, *model);
  }
  const auto make = [&](std::size_t g, const SceneParams& scene) -> std::function<bool(double)> {
    if (!model) return [t = scene.force_threshold](double f) { return f >= t; };
    return scene_predictor(*model, scene, dc, *tc, Rng::derive(seed + 1, g).next_u64(), threshold);
  };
  const PolicySummary s = run_policy(make, dc, grasps, seed, f_min, f_max, step);

  std::ofstream csv = open_output(c.require("out"));
  csv << "grasp,chosen_force,predicted,actual\n";
  for (const PolicyTrial& t : s.trials) {
    csv << t.grasp << ',' << format_number(t.result.force) << ',' << (t.result.predicted_success ? 1 : 0) << ','
        << t.actual << '\n';
  }
  out << "policy,mean_force,success_rate\n"
      << "minimum-force," << format_number(s.mean_force) << ',' << format_number(s.success_rate) << '\n'
      << "fixed-" << format_number(f_min) << "N," << format_number(f_min) << ',' << format_number(s.fixed_min_success)
      << '\n'
      << "fixed-" << format_number(f_max) << "N," << format_number(f_max) << ',' << format_number(s.fixed_max_success)
      << '\n';
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (char& ch : f)
    if (ch == '_') ch = '-';
  return f;
}

}  // namespace

const std::vector<Command>& commands() {
  static const std::vector<Command> all{
      {"gen-data", "generate a planted grasp dataset (VTG1)",
       join({{"n", "2000", "number of samples"}, {"out", "", "output dataset path"}}, data_keys()), gen_data},
      {"gen-pairs", "generate aligned real/sim tactile image pairs (VTP1)",
       {{"n", "500", "number of pairs"},
        {"size", "32", "image side, a multiple of 4"},
        {"identical", "false", "make the real image a copy of the sim image"},
        {"out", "", "output pair file path"}},
       gen_pairs},
      {"train", "train one model variant and save a checkpoint",
       join({{"data", "", "training dataset"},
             {"variant", "ours", "visual-only, tactile-only, concat, ours-m or ours"},
             {"out", "", "checkpoint path"},
             {"history", "", "optional per-epoch metrics CSV"}},
            train_keys()),
       train_cmd},
      {"eval", "evaluate a checkpoint on a dataset",
       {{"data", "", "dataset"},
        {"model", "", "checkpoint path"},
        {"threshold", "0.5", "decision threshold on the stability probability"},
        {"resize", "20", "side after bilinear resize"},
        {"out", "", "optional metrics CSV"}},
       eval_cmd},
      {"ablate", "cross-validate all five variants",
       join({{"data", "", "training dataset"},
             {"test", "", "optional held-out test dataset"},
             {"folds", "3", "cross-validation folds"},
             {"out", "", "optional per-epoch metrics CSV"},
             {"table", "", "optional summary table CSV"}},
            train_keys()),
       ablate_cmd},
      {"train-gan", "train the real-to-sim image translator",
       {{"data", "", "pair file"},
        {"out", "", "checkpoint path"},
        {"history", "", "optional per-epoch loss CSV"},
        {"split", "0.8", "training fraction; the rest is held out"},
        {"epochs", "20", "training epochs"},
        {"lr", "2e-4", "Adam learning rate for both networks"},
        {"batch", "10", "mini-batch size"},
        {"lambda", "10", "weight of the reconstruction term"},
        {"width", "16", "generator and discriminator base width"}},
       train_gan_cmd},
      {"eval-gan", "report SSIM of translated images against their sim twins",
       {{"data", "", "pair file"},
        {"model", "", "checkpoint path, or 'identity'"},
        {"split", "0.8", "training fraction used at training time"},
        {"subset", "test", "'test' for the held-out pairs or 'all'"},
        {"out", "", "optional per-pair CSV"}},
       eval_gan_cmd},
      {"policy-demo", "run the minimum-force grasp policy on sampled scenes",
       join({{"model", "", "checkpoint path, or 'oracle'"},
             {"grasps", "100", "number of scenes"},
             {"out", "", "per-grasp CSV path"},
             {"f_min", "10", "first force tried, N"},
             {"f_max", "30", "force cap, N"},
             {"step", "1", "force increment, N"},
             {"threshold", "0.5", "decision threshold on the stability probability"},
             {"resize", "20", "side after bilinear resize"}},
            data_keys()),
       policy_cmd},
  };
  return all;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Visual-tactile grasp stability toolkit", "vtfuse");
  app.require_subcommand(1);
  struct Parsed {
    const Command* command;
    CLI::App* app;
    std::string config;
    std::map<std::string, std::string> flags;
  };
  std::vector<Parsed> parsed;
  parsed.reserve(commands().size());
  for (const Command& cmd : commands()) {
    Parsed& p = parsed.emplace_back(Parsed{&cmd, app.add_subcommand(cmd.name, cmd.summary), {}, {}});
    p.app->add_option("--config", p.config, "plain-text 'key = value' file; flags override it");
    RunConfig defaults(cmd.keys);
    for (const KeySpec& k : defaults.schema()) {
      std::string help = k.help;
      if (!k.default_value.empty()) help += " (default " + k.default_value + ")";
      p.app->add_option(flag_name(k.name), p.flags[k.name], help);
    }
  }

  std::vector<const char*> argv{"vtfuse"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run 'vtfuse --help' for usage\n";
    return kExitUsage;
  }

  for (const Parsed& p : parsed) {
    if (!p.app->parsed()) continue;
    try {
      RunConfig cfg(p.command->keys);
      if (!p.config.empty()) cfg.load_file(p.config);
      for (const auto& [key, value] : p.flags)
        if (p.app->count(flag_name(key)) > 0) cfg.set(key, value);
      out << "# " << p.command->name << '\n';
      cfg.echo(out);
      out << "#\n";
      p.command->run(cfg, out);
      return kExitOk;
    } catch (const FormatError& e) {
      err << "error: " << e.what() << '\n';
      return kExitIo;
    } catch (const IoError& e) {
      err << "error: " << e.what() << '\n';
      return kExitIo;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    }
  }
  return kExitUsage;
}

}  // namespace vtfuse
