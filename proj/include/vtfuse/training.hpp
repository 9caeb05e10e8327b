#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vtfuse/fusion.hpp"
#include "vtfuse/synthetic.hpp"

namespace vtfuse {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  static AdamState for_params(std::span<const Tensor> params);
};

// One bias-corrected Adam update of every tensor in `params` from `grads`.
void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, const AdamConfig& cfg);
// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<const Tensor> params, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  std::size_t resize = 20;  // square side after bilinear resize
  std::size_t crop = 16;    // square side of the network input
  bool random_crop = true;

  void validate() const;
};

// Bilinear resize with aligned corners (corner pixels map to corner pixels).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t size);
// Resize, then a uniformly random crop.
Tensor augment(const Tensor& image, const TrainConfig& cfg, Rng& rng);
// Resize, then the centre crop used at evaluation.
Tensor center_view(const Tensor& image, const TrainConfig& cfg);

struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;  // absent when nothing was predicted positive
  std::optional<double> recall;     // absent when there are no positives
  double loss = 0.0;                // mean BCE, when computed from probabilities

  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
  static Metrics from_predictions(std::span<const double> probabilities, std::span<const int> labels,
                                  double threshold = 0.5);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training BCE over the epoch
  Metrics metrics;    // from the augmented training batches
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Metrics final_train;  // evaluate() on the training set after the last epoch
};

using EpochObserver = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on mean BCE. Parameters are rounded to float32 at the end so
// a saved checkpoint reproduces every later evaluation exactly.
TrainResult train(FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochObserver& observer = {});

std::vector<double> predict_probabilities(const FusionModel& model, const std::vector<Sample>& data,
                                          const TrainConfig& cfg);
Metrics evaluate(const FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                 double threshold = 0.5);

// Label-stratified folds: positives then negatives, each shuffled, dealt
// round-robin, so sizes differ by at most one and the first folds get the
// remainder.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k,
                                                       std::uint64_t seed);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
  std::size_t missing = 0;  // folds where the value was undefined
};

Summary summarize(std::span<const std::optional<double>> values);

struct FoldResult {
  std::size_t fold = 0;
  TrainResult training;
  Metrics validation;              // on the held-out fold
  std::optional<Metrics> test;     // on the external test set, if given
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  // Over test metrics when a test set was supplied, else over validation metrics.
  Summary accuracy, precision, recall;
};

// Fresh model per fold; fold f draws its initial weights and training stream
// from Rng::derive(cfg.seed, f).
CrossValidation kfold_cross_validate(const std::vector<Sample>& data, std::size_t k,
                                     const FusionConfig& model_cfg, const TrainConfig& cfg,
                                     const std::vector<Sample>* test = nullptr,
                                     const std::function<void(std::size_t, const EpochRecord&)>& observer = {});

struct AblationRow {
  Variant variant;
  CrossValidation result;
};

// The five variants, each cross-validated with identical settings.
std::vector<AblationRow> ablation_suite(const std::vector<Sample>& data, std::size_t k,
                                        const FusionConfig& base, const TrainConfig& cfg,
                                        const std::vector<Sample>* test = nullptr,
                                        const std::function<void(Variant, std::size_t, const EpochRecord&)>& observer = {});

struct PolicyResult {
  double force = 0.0;
  bool predicted_success = false;
  std::size_t attempts = 0;
};

// Sweep f = f_min, f_min + step, ... up to f_max; stop at the first force the
// predictor accepts, else report f_max with a failure flag.
PolicyResult minimum_force_policy(const std::function<bool(double)>& predictor, double f_min = 10.0,
                                  double f_max = 30.0, double step = 1.0);

// Predictor for one scene: renders the scene's visual image once and a fresh
// tactile image at every queried force.
std::function<bool(double)> scene_predictor(const FusionModel& model, const SceneParams& scene,
                                            const DataConfig& data_cfg, const TrainConfig& cfg,
                                            std::uint64_t seed, double threshold = 0.5);

struct PolicyTrial {
  std::size_t grasp = 0;
  SceneParams scene;
  PolicyResult result;
  int actual = 0;  // ground-truth label at the chosen force
};

struct PolicySummary {
  std::vector<PolicyTrial> trials;
  double mean_force = 0.0;
  double success_rate = 0.0;
  double fixed_min_success = 0.0;  // always grip at f_min
  double fixed_max_success = 0.0;  // always grip at f_max
};

PolicySummary run_policy(const std::function<std::function<bool(double)>(std::size_t, const SceneParams&)>& make_predictor,
                         const DataConfig& data_cfg, std::size_t grasps, std::uint64_t seed,
                         double f_min = 10.0, double f_max = 30.0, double step = 1.0);

// CSV with header run,fold,epoch,loss,accuracy,precision,recall. One row per
// epoch and a `final` row per fold; undefined values are written as null.
void write_metrics_header(std::ostream& out);
void write_epoch_row(std::ostream& out, const std::string& run, std::size_t fold, const EpochRecord& r);
void write_final_row(std::ostream& out, const std::string& run, std::size_t fold, const Metrics& m);
std::string format_number(double v);

}  // namespace vtfuse
