#pragma once

// Epoch loop: minibatches, upstream augmentation, and one of three update
// rules (train batch only, naive augmentation, refined augmentation).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "saflex/augment.hpp"
#include "saflex/data.hpp"
#include "saflex/errors.hpp"
#include "saflex/losses.hpp"
#include "saflex/nn.hpp"
#include "saflex/random.hpp"
#include "saflex/saflex.hpp"

namespace saflex {

enum class TrainMode { kNone, kNaive, kSaflex };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
  case TrainMode::kNone: return "none";
  case TrainMode::kNaive: return "naive";
  case TrainMode::kSaflex: return "saflex";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  for (TrainMode m : {TrainMode::kNone, TrainMode::kNaive, TrainMode::kSaflex})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected none, naive or saflex)");
}

enum class OptimizerKind { kSgd, kMomentum, kAdam };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
  case OptimizerKind::kSgd: return "sgd";
  case OptimizerKind::kMomentum: return "momentum";
  case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  for (OptimizerKind k : {OptimizerKind::kSgd, OptimizerKind::kMomentum, OptimizerKind::kAdam})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd, momentum or adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.1;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// How often the upstream augmenter is re-run.
enum class AugmentRefresh {
  kPerBatch, // fresh augmented copies every iteration
  kOnce,     // one augmented copy per training sample for the whole run
};

inline std::string_view to_string(AugmentRefresh r) {
  return r == AugmentRefresh::kPerBatch ? "per_batch" : "once";
}

inline AugmentRefresh parse_augment_refresh(std::string_view s) {
  if (s == "per_batch") return AugmentRefresh::kPerBatch;
  if (s == "once") return AugmentRefresh::kOnce;
  throw ConfigError("unknown augment refresh '" + std::string(s) + "' (expected per_batch or once)");
}

struct RunConfig {
  std::vector<std::size_t> hidden{256, 256};
  OptimizerConfig optimizer;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  AugmentPipeline augment;
  AugmentRefresh refresh = AugmentRefresh::kPerBatch;
  TrainMode mode = TrainMode::kSaflex;
  SaflexConfig saflex;
  std::uint64_t seed = 0;
  bool record_timing = false; // wall-clock column; off keeps reruns bitwise identical

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    for (std::size_t h : hidden)
      if (h == 0) throw ConfigError("hidden layer widths must be positive");
    for (const auto& s : augment.stages) s.validate();
    try {
      saflex.validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
};

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double test_acc = 0.0;
  double mean_w = 0.0;      // mean pre-normalization weight of augmented samples
  double frac_zero_w = 0.0;
  double frac_label_changed = 0.0;
  double sec_per_epoch = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "epoch,train_loss,val_loss,test_acc,mean_w,frac_zero_w,frac_label_changed,sec_per_epoch";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << kMetricsHeader << '\n';
  char buf[512];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.val_loss, r.test_acc, r.mean_w, r.frac_zero_w, r.frac_label_changed, r.sec_per_epoch);
    os << buf;
  }
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean CE and top-1 accuracy (ties to the lowest class index).
inline Evaluation evaluate(const ModelParams& params, const Dataset& ds) {
  if (ds.size() == 0) return {};
  ForwardCache c = mlp_forward(params, ds.X);
  std::vector<double> w(ds.size(), 1.0 / static_cast<double>(ds.size()));
  Evaluation e;
  e.loss = weighted_soft_ce_logits(c.logits(), w, ds.as_batch().targets(params.shape().output_dim()));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hit += argmax(c.logits().row(i)) == ds.labels[i] ? 1 : 0;
  e.accuracy = static_cast<double>(hit) / static_cast<double>(ds.size());
  return e;
}

class Optimizer {
public:
  Optimizer(const OptimizerConfig& cfg, const MlpShape& shape) : cfg_(cfg), m_(shape), v_(shape) {}

  void apply(ModelParams& params, const ParamGrad& g) {
    switch (cfg_.kind) {
    case OptimizerKind::kSgd: params.axpy(-cfg_.lr, g); break;
    case OptimizerKind::kMomentum:
      m_.scale(cfg_.momentum).axpy(1.0, g);
      params.axpy(-cfg_.lr, m_);
      break;
    case OptimizerKind::kAdam: {
      ++t_;
      auto p = params.values();
      auto gv = g.values();
      auto m = m_.values();
      auto v = v_.values();
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gv[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gv[j] * gv[j];
        p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      }
      break;
    }
    }
  }

private:
  OptimizerConfig cfg_;
  ParamVector m_, v_;
  std::uint64_t t_ = 0;
};

/// Label-change bookkeeping against the augmenter's corruption mask.
struct RelabelStats {
  std::size_t augmented = 0;
  std::size_t corrupted = 0;
  std::size_t changed = 0;
  std::size_t changed_and_corrupted = 0;
  std::size_t corrupted_and_restored = 0; // relabelled back to the clean label

  double precision() const { return changed ? static_cast<double>(changed_and_corrupted) / changed : 0.0; }
  double recall() const { return corrupted ? static_cast<double>(changed_and_corrupted) / corrupted : 0.0; }
};

struct TrainResult {
  std::vector<MetricsRow> history;
  ModelParams params;
  RelabelStats relabel;
};

/// Cycles through a shuffled index set, reshuffling at the end of each pass.
class ValidationSampler {
public:
  ValidationSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t count) {
    count = std::min(count, n_);
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Engine eng = make_engine(seed_, {stream_tag::kValSample, cycle_++});
    std::shuffle(order_.begin(), order_.end(), eng);
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t cycle_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Full training run. Deterministic given run.seed: every random stream is
/// keyed by (seed, purpose, epoch, batch).
inline TrainResult train(const RunConfig& run, const Splits& data) {
  run.validate();
  const Dataset& tr = data.train;
  if (tr.size() == 0) throw ConfigError("training split is empty");
  if (run.mode == TrainMode::kSaflex && data.val.size() == 0) throw ConfigError("validation split is empty");
  const std::size_t K = tr.K;
  MlpShape shape;
  shape.dims.push_back(tr.X.cols());
  for (std::size_t h : run.hidden) shape.dims.push_back(h);
  shape.dims.push_back(K);

  TrainResult res;
  res.params = init_params(shape, run.seed);
  Optimizer opt(run.optimizer, shape);
  SaflexConfig scfg = run.saflex;
  scfg.seed = derive_key(run.seed, {stream_tag::kGumbel, scfg.seed});
  const std::size_t val_bs = scfg.val_batch_size ? scfg.val_batch_size : run.batch_size;
  ValidationSampler vsampler(data.val.size(), run.seed);

  AugmentPipeline pipeline = run.augment;
  if (pipeline.groups.empty()) pipeline.groups = tr.feature_groups();
  const bool use_aug = run.mode != TrainMode::kNone;
  NoisyBatch fixed_aug;
  if (use_aug && run.refresh == AugmentRefresh::kOnce) {
    Engine eng = make_engine(run.seed, {stream_tag::kAugment, ~0ULL});
    fixed_aug = apply_pipeline(pipeline, tr.as_batch(), K, eng);
  }

  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Engine shuf = make_engine(run.seed, {stream_tag::kShuffle, epoch});
    std::shuffle(order.begin(), order.end(), shuf);
    double loss_sum = 0.0, w_sum = 0.0;
    std::size_t nbatches = 0, aug_n = 0, zero_n = 0, changed_n = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += run.batch_size, ++b) {
      std::span<const std::size_t> idx(order.data() + start, std::min(run.batch_size, order.size() - start));
      Batch train_b = tr.batch(idx);
      ParamGrad g(shape);
      double batch_loss = 0.0;
      if (!use_aug) {
        ForwardCache tc = mlp_forward(res.params, train_b.X);
        std::vector<double> wt(train_b.size(), 1.0 / static_cast<double>(train_b.size()));
        Matrix yt = train_b.targets(K);
        batch_loss = weighted_soft_ce_logits(tc.logits(), wt, yt);
        g = combined_gradient(res.params, train_b, tc, nullptr, {}, Matrix());
      } else {
        NoisyBatch aug;
        if (run.refresh == AugmentRefresh::kOnce) {
          aug.batch = fixed_aug.batch.subset(idx);
          for (std::size_t i : idx) aug.corrupted.push_back(fixed_aug.corrupted[i]);
        } else {
          Engine eng = make_engine(run.seed, {stream_tag::kAugment, epoch, b});
          aug = apply_pipeline(pipeline, train_b, K, eng);
        }
        aug_n += aug.batch.size();
        if (run.mode == TrainMode::kNaive) {
          ForwardCache tc = mlp_forward(res.params, train_b.X);
          ForwardCache ac = mlp_forward(res.params, aug.batch.X);
          std::vector<double> wt(train_b.size(), 1.0 / static_cast<double>(train_b.size()));
          batch_loss = weighted_soft_ce_logits(tc.logits(), wt, train_b.targets(K));
          std::vector<double> wa(aug.batch.size(), 1.0 / static_cast<double>(aug.batch.size()));
          g = combined_gradient(res.params, train_b, tc, &ac, wa, aug.batch.targets(K));
          w_sum += static_cast<double>(aug.batch.size());
        } else {
          Batch val_b = data.val.batch(vsampler.next(val_bs));
          SaflexGradient sg = saflex_gradient(res.params, train_b, aug.batch, val_b, scfg, {epoch, b});
          batch_loss = sg.metrics.train_loss;
          g = std::move(sg.grad);
          for (std::size_t i = 0; i < aug.batch.size(); ++i) {
            const double w = sg.output.raw_weights[i];
            w_sum += w;
            zero_n += w == 0.0 ? 1 : 0;
            const bool changed = sg.output.hard_labels[i] != aug.batch.labels[i];
            changed_n += changed ? 1 : 0;
            RelabelStats& rs = res.relabel;
            ++rs.augmented;
            rs.corrupted += aug.corrupted[i];
            rs.changed += changed ? 1 : 0;
            rs.changed_and_corrupted += changed && aug.corrupted[i] ? 1 : 0;
            rs.corrupted_and_restored += aug.corrupted[i] && sg.output.hard_labels[i] == train_b.labels[i] ? 1 : 0;
          }
        }
      }
      if (!std::isfinite(batch_loss) || !g.all_finite())
        throw NumericalError("divergence: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b));
      opt.apply(res.params, g);
      loss_sum += batch_loss;
      ++nbatches;
    }
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(nbatches);
    row.val_loss = data.val.size() ? evaluate(res.params, data.val).loss : 0.0;
    row.test_acc = data.test.size() ? evaluate(res.params, data.test).accuracy : 0.0;
    if (aug_n > 0) {
      const double n = static_cast<double>(aug_n);
      row.mean_w = w_sum / n;
      row.frac_zero_w = static_cast<double>(zero_n) / n;
      row.frac_label_changed = static_cast<double>(changed_n) / n;
    }
    if (!std::isfinite(row.val_loss) || !res.params.all_finite())
      throw NumericalError("divergence: non-finite validation loss at epoch " + std::to_string(epoch));
    if (run.record_timing)
      row.sec_per_epoch = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(row);
  }
  return res;
}

} // namespace saflex
