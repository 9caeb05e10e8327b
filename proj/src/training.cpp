#include "vtfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include "vtfuse/checkpoint.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/ops.hpp"

namespace vtfuse {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<Tensor> tensors_of(const FusionModel& model) {
  std::vector<Tensor> out;
  for (const NamedTensor& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<Sample> pick(const std::vector<Sample>& data, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : "null"; }

}  // namespace

AdamState AdamState::for_params(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                         " moment slots");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].size() || state.m[k].size() != params[k].size()) {
      throw DimensionError("adam_step: gradient " + std::to_string(k) + " has " +
                           std::to_string(grads[k].size()) + " entries for parameter " +
                           shape_str(params[k].shape()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto theta = p.values_mut();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[k][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      theta[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

void adam_step(std::span<const Tensor> params, AdamState& state, const AdamConfig& cfg) {
  std::vector<std::vector<double>> zeros;
  zeros.reserve(params.size());  // spans below point into it
  std::vector<std::span<const double>> grads;
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      grads.push_back(p.grad());
    } else {
      grads.emplace_back(zeros.emplace_back(p.size(), 0.0));
    }
  }
  adam_step(params, grads, state, cfg);
}

void TrainConfig::validate() const {
  if (!(adam.learning_rate > 0.0) || batch_size == 0 || epochs == 0 || crop == 0 || resize == 0) {
    throw ContractError("learning rate, batch size, epochs and image sizes must be positive");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0)) {
    throw ContractError("Adam betas must lie in [0, 1) and eps must be positive");
  }
  if (crop > resize) {
    throw ContractError("crop " + std::to_string(crop) + " larger than resize " + std::to_string(resize));
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear: cannot resize " + shape_str(image.shape()) + " to " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image.detach().clone();
  auto axis = [](std::size_t in, std::size_t out, std::size_t i) {
    const double pos = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    return std::tuple<std::size_t, std::size_t, double>{lo, hi, pos - static_cast<double>(lo)};
  };
  const auto src = image.values();
  std::vector<double> out(ch * out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(h, out_h, y);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(w, out_w, x);
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = src.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
        const double bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
        out[(c * out_h + y) * out_w + x] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return Tensor({ch, out_h, out_w}, std::move(out));
}

Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t size) {
  if (image.rank() != 3 || top + size > image.dim(1) || left + size > image.dim(2)) {
    throw ContractError("crop of " + std::to_string(size) + " at (" + std::to_string(top) + ", " +
                        std::to_string(left) + ") exceeds image " + shape_str(image.shape()));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<double> out(ch * size * size);
  const auto src = image.values();
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < size; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((c * h + top + y) * w + left), size,
                  out.begin() + static_cast<std::ptrdiff_t>((c * size + y) * size));
  return Tensor({ch, size, size}, std::move(out));
}

Tensor augment(const Tensor& image, const TrainConfig& cfg, Rng& rng) {
  if (cfg.crop > cfg.resize) throw ContractError("crop larger than resized image");
  const Tensor r = resize_bilinear(image, cfg.resize, cfg.resize);
  const std::size_t slack = cfg.resize - cfg.crop + 1;
  const std::size_t top = rng.below(slack);
  const std::size_t left = rng.below(slack);
  return crop(r, top, left, cfg.crop);
}

Tensor center_view(const Tensor& image, const TrainConfig& cfg) {
  if (cfg.crop > cfg.resize) throw ContractError("crop larger than resized image");
  const std::size_t off = (cfg.resize - cfg.crop) / 2;
  return crop(resize_bilinear(image, cfg.resize, cfg.resize), off, off, cfg.crop);
}

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const std::size_t n = tp + fp + tn + fn;
  if (n == 0) throw ContractError("metrics of an empty set");
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  return m;
}

Metrics Metrics::from_predictions(std::span<const double> probabilities, std::span<const int> labels,
                                  double threshold) {
  if (probabilities.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(probabilities.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (predicted) {
      (labels[i] == 1 ? tp : fp)++;
    } else {
      (labels[i] == 1 ? fn : tn)++;
    }
  }
  return from_counts(tp, fp, tn, fn);
}

TrainResult train(FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochObserver& observer) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  if (cfg.batch_size > data.size()) {
    throw ContractError("train: batch size " + std::to_string(cfg.batch_size) + " exceeds " +
                        std::to_string(data.size()) + " samples");
  }
  if (model.cfg.image_size != cfg.crop) {
    throw ContractError("train: model expects " + std::to_string(model.cfg.image_size) +
                        "px inputs but crop is " + std::to_string(cfg.crop));
  }
  const std::vector<Tensor> params = tensors_of(model);
  AdamState state = AdamState::for_params(params);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_total = 0.0;
    std::vector<double> probs;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> vis, tac;
      std::vector<double> y;
      for (std::size_t j = start; j < end; ++j) {
        const Sample& s = data[order[j]];
        if (model.cfg.uses_visual()) vis.push_back(cfg.random_crop ? augment(s.visual, cfg, rng) : center_view(s.visual, cfg));
        if (model.cfg.uses_tactile()) tac.push_back(cfg.random_crop ? augment(s.tactile, cfg, rng) : center_view(s.tactile, cfg));
        y.push_back(s.label);
        labels.push_back(s.label);
      }
      const Tensor p = model_forward(model, vis, tac);
      Tensor loss = bce_loss(p, y);
      loss.backward();
      adam_step(params, state, cfg.adam);
      for (const Tensor& t : params) {
        Tensor handle = t;
        handle.zero_grad();
      }
      loss_total += loss.item() * static_cast<double>(end - start);
      probs.insert(probs.end(), p.values().begin(), p.values().end());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_total / static_cast<double>(data.size());
    rec.metrics = Metrics::from_predictions(probs, labels);
    rec.metrics.loss = rec.loss;
    result.history.push_back(rec);
    if (observer) observer(rec);
  }
  round_to_float(model.parameters());
  result.final_train = evaluate(model, data, cfg);
  return result;
}

std::vector<double> predict_probabilities(const FusionModel& model, const std::vector<Sample>& data,
                                          const TrainConfig& cfg) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t end = std::min(data.size(), start + kEvalBatch);
    std::vector<Tensor> vis, tac;
    for (std::size_t j = start; j < end; ++j) {
      if (model.cfg.uses_visual()) vis.push_back(center_view(data[j].visual, cfg));
      if (model.cfg.uses_tactile()) tac.push_back(center_view(data[j].tactile, cfg));
    }
    const Tensor p = model_forward(model, vis, tac);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

Metrics evaluate(const FusionModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                 double threshold) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  const std::vector<double> probs = predict_probabilities(model, data, cfg);
  std::vector<int> labels;
  std::vector<double> y;
  for (const Sample& s : data) {
    labels.push_back(s.label);
    y.push_back(s.label);
  }
  Metrics m = Metrics::from_predictions(probs, labels, threshold);
  NoGradGuard no_grad;
  m.loss = bce_loss(Tensor({probs.size()}, probs), y).item();
  return m;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k,
                                                       std::uint64_t seed) {
  if (k < 2) throw ContractError("cross-validation needs k >= 2, got " + std::to_string(k));
  if (labels.size() < k) {
    throw ContractError("cannot split " + std::to_string(labels.size()) + " samples into " +
                        std::to_string(k) + " folds");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t turn = 0;
  for (const auto* group : {&pos, &neg})
    for (std::size_t i : *group) folds[turn++ % k].push_back(i);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Summary summarize(std::span<const std::optional<double>> values) {
  Summary s;
  double total = 0.0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++s.count;
    } else {
      ++s.missing;
    }
  }
  if (s.count == 0) return s;
  s.mean = total / static_cast<double>(s.count);
  double sq = 0.0;
  for (const auto& v : values)
    if (v) sq += (*v - s.mean) * (*v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.count));
  return s;
}

CrossValidation kfold_cross_validate(const std::vector<Sample>& data, std::size_t k,
                                     const FusionConfig& model_cfg, const TrainConfig& cfg,
                                     const std::vector<Sample>* test,
                                     const std::function<void(std::size_t, const EpochRecord&)>& observer) {
  std::vector<int> labels;
  for (const Sample& s : data) labels.push_back(s.label);
  const auto folds = stratified_folds(labels, k, cfg.seed);

  CrossValidation cv;
  std::vector<std::optional<double>> acc, prec, rec;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());

    Rng fold_rng = Rng::derive(cfg.seed, f);
    FusionModel model = FusionModel::init(model_cfg, fold_rng.next_u64());
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_rng.next_u64();

    FoldResult r;
    r.fold = f;
    r.training = train(model, pick(data, train_idx), fold_cfg,
                       [&](const EpochRecord& e) { if (observer) observer(f, e); });
    r.validation = evaluate(model, pick(data, folds[f]), fold_cfg);
    if (test) r.test = evaluate(model, *test, fold_cfg);
    const Metrics& m = r.test ? *r.test : r.validation;
    acc.emplace_back(m.accuracy);
    prec.push_back(m.precision);
    rec.push_back(m.recall);
    cv.folds.push_back(std::move(r));
  }
  cv.accuracy = summarize(acc);
  cv.precision = summarize(prec);
  cv.recall = summarize(rec);
  return cv;
}

std::vector<AblationRow> ablation_suite(const std::vector<Sample>& data, std::size_t k,
                                        const FusionConfig& base, const TrainConfig& cfg,
                                        const std::vector<Sample>* test,
                                        const std::function<void(Variant, std::size_t, const EpochRecord&)>& observer) {
  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    FusionConfig c = base;
    c.variant = v;
    rows.push_back({v, kfold_cross_validate(data, k, c, cfg, test, [&](std::size_t f, const EpochRecord& e) {
                      if (observer) observer(v, f, e);
                    })});
  }
  return rows;
}

PolicyResult minimum_force_policy(const std::function<bool(double)>& predictor, double f_min, double f_max,
                                  double step) {
  if (!(step > 0.0) || !(f_min <= f_max)) {
    throw ContractError("force sweep needs f_min <= f_max and a positive step");
  }
  PolicyResult r;
  for (std::size_t i = 0;; ++i) {
    const double f = f_min + static_cast<double>(i) * step;
    if (f > f_max + 1e-9 * step) break;
    ++r.attempts;
    if (predictor(f)) {
      r.force = f;
      r.predicted_success = true;
      return r;
    }
  }
  r.force = f_max;
  return r;
}

std::function<bool(double)> scene_predictor(const FusionModel& model, const SceneParams& scene,
                                            const DataConfig& data_cfg, const TrainConfig& cfg,
                                            std::uint64_t seed, double threshold) {
  Rng vis_rng = Rng::derive(seed, 0);
  const Tensor visual = center_view(render_visual(scene, data_cfg, vis_rng), cfg);
  const PreprocessConfig pre = data_cfg.preprocess();
  return [&model, scene, data_cfg, cfg, seed, threshold, visual, pre](double force) {
    Rng rng = Rng::derive(seed, 1 + static_cast<std::uint64_t>(std::llround(force * 1000.0)));
    const Tensor tactile = center_view(render_tactile(scene, force, data_cfg, pre, rng), cfg);
    NoGradGuard no_grad;
    std::vector<Tensor> vis, tac;
    if (model.cfg.uses_visual()) vis.push_back(visual);
    if (model.cfg.uses_tactile()) tac.push_back(tactile);
    return model_forward(model, vis, tac).at(0) >= threshold;
  };
}

PolicySummary run_policy(const std::function<std::function<bool(double)>(std::size_t, const SceneParams&)>& make_predictor,
                         const DataConfig& data_cfg, std::size_t grasps, std::uint64_t seed, double f_min,
                         double f_max, double step) {
  if (grasps == 0) throw ContractError("policy run needs at least one grasp");
  PolicySummary s;
  double force_total = 0.0;
  std::size_t ok = 0, ok_min = 0, ok_max = 0;
  for (std::size_t g = 0; g < grasps; ++g) {
    Rng rng = Rng::derive(seed, g);
    PolicyTrial t;
    t.grasp = g;
    t.scene = sample_scene(data_cfg, rng);
    t.result = minimum_force_policy(make_predictor(g, t.scene), f_min, f_max, step);
    t.actual = label_rule(t.scene, t.result.force, data_cfg.margin);
    force_total += t.result.force;
    ok += static_cast<std::size_t>(t.actual);
    ok_min += static_cast<std::size_t>(label_rule(t.scene, f_min, data_cfg.margin));
    ok_max += static_cast<std::size_t>(label_rule(t.scene, f_max, data_cfg.margin));
    s.trials.push_back(t);
  }
  const auto n = static_cast<double>(grasps);
  s.mean_force = force_total / n;
  s.success_rate = static_cast<double>(ok) / n;
  s.fixed_min_success = static_cast<double>(ok_min) / n;
  s.fixed_max_success = static_cast<double>(ok_max) / n;
  return s;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_header(std::ostream& out) { out << "run,fold,epoch,loss,accuracy,precision,recall\n"; }

void write_epoch_row(std::ostream& out, const std::string& run, std::size_t fold, const EpochRecord& r) {
  out << run << ',' << fold << ',' << r.epoch << ',' << format_number(r.loss) << ','
      << format_number(r.metrics.accuracy) << ',' << optional_number(r.metrics.precision) << ','
      << optional_number(r.metrics.recall) << '\n';
}

void write_final_row(std::ostream& out, const std::string& run, std::size_t fold, const Metrics& m) {
  out << run << ',' << fold << ",final," << format_number(m.loss) << ',' << format_number(m.accuracy) << ','
      << optional_number(m.precision) << ',' << optional_number(m.recall) << '\n';
}

}  // namespace vtfuse
