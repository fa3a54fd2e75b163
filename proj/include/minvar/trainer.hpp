#pragma once

#include <atomic>
#include <functional>
#include <thread>

#include "minvar/adam.hpp"
#include "minvar/checkpoint.hpp"
#include "minvar/panel.hpp"
#include "minvar/pipeline.hpp"
#include "minvar/rng.hpp"

namespace minvar {

struct TrainConfig {
  int dt_in = 1200;
  int dt_out = 5;
  int n_min = 50;
  int n_max = 350;
  int epochs = 100;
  int steps_per_epoch = 500;
  int batch_size = 32;
  double base_lr = 1e-4;
  double lr_decay = 0.99;        // per 500 batches: lr_b = base * decay^(b/500)
  double lr_decay_batches = 500;
  double grad_clip = 1.0;        // <= 0 disables clipping
  int omega = 64;
  std::uint64_t seed = 1;
  // Calibration span as panel ROW indices [start, end); end = -1 means all.
  int calibration_start = 0;
  int calibration_end = -1;
  int validation_samples = 16;
  int validation_tail = 252;  // validation dates drawn from this final stretch
  int threads = 1;

  /// Small-budget profile for laptop-scale runs and the acceptance suite.
  static TrainConfig desk_scale() {
    TrainConfig c;
    c.dt_in = 120;
    c.n_min = 20;
    c.n_max = 60;
    c.epochs = 2;
    c.steps_per_epoch = 50;
    c.omega = 64;
    return c;
  }

  double learning_rate_at(long long batch) const {
    return base_lr * std::pow(lr_decay, static_cast<double>(batch) / lr_decay_batches);
  }

  std::string hash() const {
    std::ostringstream os;
    os << dt_in << '|' << dt_out << '|' << n_min << '|' << n_max << '|' << epochs << '|'
       << steps_per_epoch << '|' << batch_size << '|' << base_lr << '|' << lr_decay << '|'
       << grad_clip << '|' << omega << '|' << seed << '|' << calibration_start << '|'
       << calibration_end;
    const std::string s = os.str();
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

struct TrainSample {
  Eigen::MatrixXd input_lagged;  // dt_in x n, row 0 most recent
  Eigen::MatrixXd oos;           // dt_out x n, chronological
  std::vector<int> asset_columns;
  int t_index = 0;  // panel row of the skipped (shifted) day
  double q = 0.0;
};

/// Provider of the investable asset set at a decision row; defaults to all
/// panel columns.
using UniverseProvider = std::function<std::vector<int>(int t_index)>;

struct SampleSpan {
  int lo = 0;  // smallest feasible t
  int hi = 0;  // largest feasible t
};

inline SampleSpan feasible_span(const ReturnPanel& panel, const TrainConfig& cfg) {
  const int cal_start = cfg.calibration_start;
  const int cal_end = cfg.calibration_end < 0 ? panel.days() : cfg.calibration_end;
  SampleSpan s;
  s.lo = cal_start + cfg.dt_in;
  s.hi = cal_end - 1 - cfg.dt_out;
  if (s.hi < s.lo)
    throw std::invalid_argument(
        "trainer: calibration span too short for dt_in + dt_out + 1 rows");
  return s;
}

/// Draw one training sample: uniform feasible date, uniform n, assets without
/// replacement from the universe at t-1. The input window covers rows
/// [t-dt_in, t-1], the OOS window rows [t+1, t+dt_out]; row t is skipped (the
/// one-day shift).
inline TrainSample draw_sample(const ReturnPanel& panel, const TrainConfig& cfg, Rng& rng,
                               const UniverseProvider& universe = nullptr) {
  const SampleSpan span = feasible_span(panel, cfg);
  TrainSample s;
  s.t_index = static_cast<int>(rng.uniform_int(span.lo, span.hi));

  std::vector<int> pool;
  if (universe)
    pool = universe(s.t_index);
  else {
    pool.resize(static_cast<std::size_t>(panel.n_assets()));
    std::iota(pool.begin(), pool.end(), 0);
  }
  const int n_max = std::min<int>(cfg.n_max, static_cast<int>(pool.size()));
  const int n_min = std::min(cfg.n_min, n_max);
  const int n = static_cast<int>(rng.uniform_int(n_min, n_max));
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<long long>(pool.size()) - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  s.asset_columns.assign(pool.begin(), pool.begin() + n);

  // No-leakage assertion: every consumed row lies inside the calibration span.
  const int cal_start = cfg.calibration_start;
  const int cal_end = cfg.calibration_end < 0 ? panel.days() : cfg.calibration_end;
  if (s.t_index - cfg.dt_in < cal_start || s.t_index + cfg.dt_out > cal_end - 1)
    throw std::logic_error("draw_sample: window escapes the calibration span");

  s.input_lagged.resize(cfg.dt_in, n);
  s.oos.resize(cfg.dt_out, n);
  for (int j = 0; j < n; ++j) {
    const int col = s.asset_columns[static_cast<std::size_t>(j)];
    for (int r = 0; r < cfg.dt_in; ++r)
      s.input_lagged(r, j) = panel.returns(s.t_index - 1 - r, col);
    for (int r = 0; r < cfg.dt_out; ++r)
      s.oos(r, j) = panel.returns(s.t_index + 1 + r, col);
  }
  s.q = static_cast<double>(n) / static_cast<double>(cfg.dt_in);
  return s;
}

struct EpochStats {
  double train_loss = 0.0;
  double validation_loss = 0.0;
  int skipped_samples = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
  long long batches_run = 0;
};

namespace detail {

struct SampleGrad {
  double loss = 0.0;
  bool ok = false;
  std::vector<ad::Tensor> grads;
};

inline SampleGrad eval_sample(ModelParams& params, const TrainSample& sample) {
  SampleGrad out;
  ad::Tape tape;
  ModelVars vars = bind_model(tape, params, true);
  auto [graph, loss] = forward_pipeline_loss(tape, vars, sample.input_lagged, sample.oos);
  out.loss = tape.val(loss).scalar_value();
  if (!std::isfinite(out.loss)) return out;
  tape.backward(loss);
  for (ad::Var v : model_vars_in_order(vars)) out.grads.push_back(tape.grad(v));
  out.ok = true;
  return out;
}

}  // namespace detail

/// End-to-end training loop. Per batch: mean loss over freshly drawn samples,
/// per-sample tapes with summed gradients, optional global-norm clipping,
/// Adam with the decayed learning rate. Deterministic given (panel, config):
/// gradients are reduced in sample order regardless of thread count.
inline TrainResult train(const ReturnPanel& panel, const TrainConfig& cfg,
                         const UniverseProvider& universe = nullptr) {
  Rng root(cfg.seed);
  ModelParams params = init_model(cfg.dt_in, cfg.omega, root.split("init"));
  Rng sample_rng = root.split("samples");
  Rng val_rng = root.split("validation");

  // Fixed held-out validation set from the final stretch of the span.
  const SampleSpan span = feasible_span(panel, cfg);
  std::vector<TrainSample> validation;
  {
    TrainConfig vcfg = cfg;
    vcfg.calibration_start = std::max(cfg.calibration_start,
                                      span.hi + cfg.dt_out + 1 - cfg.validation_tail -
                                          cfg.dt_in);
    validation.reserve(static_cast<std::size_t>(cfg.validation_samples));
    for (int i = 0; i < cfg.validation_samples; ++i)
      validation.push_back(draw_sample(panel, vcfg, val_rng, universe));
  }

  auto named = named_parameters(params);
  std::vector<ad::Tensor*> param_ptrs;
  std::vector<ad::AdamState> adam_state;
  for (auto& [name, tensor] : named) {
    param_ptrs.push_back(tensor);
    adam_state.push_back(ad::AdamState::like(*tensor));
  }

  TrainResult result;
  long long batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    double epoch_loss = 0.0;
    long long epoch_count = 0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step, ++batch_index) {
      std::vector<TrainSample> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b)
        batch.push_back(draw_sample(panel, cfg, sample_rng, universe));

      std::vector<detail::SampleGrad> results(batch.size());
      if (cfg.threads > 1) {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < cfg.threads; ++w)
          pool.emplace_back([&]() {
            for (;;) {
              const std::size_t i = next.fetch_add(1);
              if (i >= batch.size()) return;
              results[i] = detail::eval_sample(params, batch[i]);
            }
          });
        for (auto& th : pool) th.join();
      } else {
        for (std::size_t i = 0; i < batch.size(); ++i)
          results[i] = detail::eval_sample(params, batch[i]);
      }

      std::vector<ad::Tensor> grad_sum;
      for (ad::Tensor* p : param_ptrs) {
        ad::Tensor z = *p;
        z.fill(0.0);
        grad_sum.push_back(std::move(z));
      }
      int used = 0;
      double batch_loss = 0.0;
      for (const auto& r : results) {
        if (!r.ok) {
          ++stats.skipped_samples;
          continue;
        }
        ++used;
        batch_loss += r.loss;
        for (std::size_t g = 0; g < grad_sum.size(); ++g)
          grad_sum[g].vec() += r.grads[g].vec();
      }
      if (used == 0) continue;
      const double inv = 1.0 / static_cast<double>(used);
      for (auto& g : grad_sum) g.vec() *= inv;
      batch_loss *= inv;
      epoch_loss += batch_loss;
      ++epoch_count;

      if (cfg.grad_clip > 0.0) ad::clip_global_norm(grad_sum, cfg.grad_clip);
      ad::adam_step(param_ptrs, grad_sum, adam_state, cfg.learning_rate_at(batch_index));
    }
    stats.train_loss = epoch_count > 0 ? epoch_loss / static_cast<double>(epoch_count) : 0.0;

    double val_loss = 0.0;
    int val_used = 0;
    for (const auto& v : validation) {
      try {
        auto eval = run_pipeline<double>(v.input_lagged, params);
        val_loss += gmv_loss_eval(eval.weights, v.oos);
        ++val_used;
      } catch (const std::exception&) {
        // degenerate validation sample; skip
      }
    }
    stats.validation_loss = val_used > 0 ? val_loss / val_used : 0.0;
    result.history.push_back(stats);
  }

  result.batches_run = batch_index;
  result.checkpoint.params = std::move(params);
  result.checkpoint.meta.omega = cfg.omega;
  result.checkpoint.meta.dt_in = cfg.dt_in;
  result.checkpoint.meta.config_hash = cfg.hash();
  result.checkpoint.meta.seed = cfg.seed;
  result.checkpoint.meta.epoch = cfg.epochs;
  const int cal_end = cfg.calibration_end < 0 ? panel.days() : cfg.calibration_end;
  if (cal_end > 0 && cal_end <= panel.days())
    result.checkpoint.meta.calibration_end =
        panel.dates[static_cast<std::size_t>(cal_end - 1)].to_string();
  return result;
}

/// One-batch probe: accumulated |gradient| per parameter group. Used to
/// assert that every block stays on the gradient path.
inline std::vector<std::pair<std::string, double>> gradient_flow_probe(
    const ReturnPanel& panel, const TrainConfig& cfg) {
  Rng root(cfg.seed);
  ModelParams params = init_model(cfg.dt_in, cfg.omega, root.split("init"));
  Rng sample_rng = root.split("samples");
  auto named = named_parameters(params);
  std::vector<double> acc(named.size(), 0.0);
  for (int b = 0; b < cfg.batch_size; ++b) {
    TrainSample s = draw_sample(panel, cfg, sample_rng);
    auto r = detail::eval_sample(params, s);
    if (!r.ok) continue;
    for (std::size_t g = 0; g < acc.size(); ++g)
      acc[g] = std::max(acc[g], r.grads[g].vec().cwiseAbs().maxCoeff());
  }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t g = 0; g < named.size(); ++g) out.emplace_back(named[g].name, acc[g]);
  return out;
}

}  // namespace minvar
