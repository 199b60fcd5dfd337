#pragma once

// Training loop: sample a batch, per-sample forward/backward on its own tape,
// reduce gradients in sample order, Adam step. Samples of one step may run on
// worker threads; the reduction order keeps results bitwise stable.

#include <cmath>
#include <exception>
#include <functional>
#include <ostream>
#include <thread>
#include <utility>
#include <vector>

#include "acacr/data/synth.hpp"
#include "acacr/metrics/metrics.hpp"
#include "acacr/network/network.hpp"
#include "acacr/trainer/config.hpp"
#include "acacr/trainer/optim.hpp"

namespace acacr {

// Stream keys derived from TrainConfig::seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;

template <Real T>
std::vector<Tensor<T>*> parameter_list(NetworkParams<T>& p) {
  std::vector<Tensor<T>*> out;
  p.for_each([&out](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <Real T>
std::vector<const Tensor<T>*> parameter_list(const NetworkParams<T>& p) {
  std::vector<const Tensor<T>*> out;
  p.for_each([&out](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <Real T>
std::vector<std::string> parameter_names(const NetworkParams<T>& p) {
  std::vector<std::string> out;
  p.for_each([&out](const std::string& n, const Tensor<T>&) { out.push_back(n); });
  return out;
}

template <Real T>
struct TrainState {
  NetworkParams<T> params;
  OptimState<T> optim;
  std::uint64_t step = 0;
  RngStream rng;
};

template <Real T>
TrainState<T> init_train_state(const NetworkConfig& net, const TrainConfig& cfg) {
  net.validate();
  cfg.validate();
  const RngStream root(cfg.seed);
  TrainState<T> s{build_network<T>(net, root.split(kInitStream)), {}, 0, root.split(kBatchStream)};
  const auto list = parameter_list(std::as_const(s.params));
  s.optim = make_optim_state<T>(list, cfg.lr);
  return s;
}

struct LossPoint {
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct EvalPoint {
  std::uint64_t step = 0;
  metrics::MetricReport report;
};

template <Real T>
struct TrainHooks {
  std::function<void(const LossPoint&)> on_step;
  std::function<void(const EvalPoint&)> on_eval;
  std::function<void(const TrainState<T>&)> on_checkpoint;
};

struct TrainResult {
  std::vector<LossPoint> losses;
  std::vector<EvalPoint> evals;
};

template <Real T>
struct SampleGradient {
  double loss = 0.0;
  std::vector<Tensor<T>> grads;
};

/// L1 loss of one pair and its gradient with respect to every parameter.
template <Real T>
SampleGradient<T> sample_gradient(const NetworkParams<T>& params, const NetworkConfig& net, const SamplePair<T>& pair) {
  Tape<T> tape;
  const NetworkWeights<Var<T>> w = bind(tape, params, true);
  const Var<T> loss = l1_loss(forward(tape.constant(pair.cloudy), w, net), tape.constant(pair.clear));
  tape.backward(loss);
  SampleGradient<T> out{static_cast<double>(loss.value().item()), {}};
  w.for_each([&](const std::string&, const Var<T>& v) { out.grads.push_back(tape.grad(v)); });
  return out;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers; rethrows the first
/// failure in index order.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += workers) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Draws the batch for the next step from the state's stream.
template <Real T>
std::vector<SamplePair<T>> draw_batch(RngStream& rng, const std::vector<SamplePair<T>>& samples, const NetworkConfig& net,
                                      const TrainConfig& cfg) {
  std::vector<SamplePair<T>> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const SamplePair<T>& pick = samples[rng.below(samples.size())];
    if (cfg.crop == 0) {
      batch.push_back(pick);
    } else {
      batch.push_back(random_crop(pick, cfg.crop, rng, net.required_multiple()));
    }
  }
  return batch;
}

/// One optimisation step; returns the batch-mean L1 before the update.
template <Real T>
double train_step(TrainState<T>& state, const NetworkConfig& net, const TrainConfig& cfg,
                  const std::vector<SamplePair<T>>& samples) {
  if (samples.empty()) throw ConfigError("train: the training split is empty");
  const auto batch = draw_batch(state.rng, samples, net, cfg);
  const std::uint64_t step = state.step + 1;

  std::vector<SampleGradient<T>> parts(batch.size());
  try {
    parallel_for(batch.size(), cfg.threads,
                 [&](std::size_t i) { parts[i] = sample_gradient(state.params, net, batch[i]); });
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
  }

  double loss = 0.0;
  std::vector<Tensor<T>> grads = std::move(parts[0].grads);
  loss += parts[0].loss;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    loss += parts[i].loss;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      T* g = grads[k].data();
      const T* h = parts[i].grads[k].data();
      for (std::size_t e = 0; e < grads[k].size(); ++e) g[e] += h[e];
    }
  }
  loss /= static_cast<double>(parts.size());
  if (!std::isfinite(loss)) throw DivergenceError("training loss is non-finite at step " + std::to_string(step));
  const T inv = T(1) / static_cast<T>(parts.size());
  for (auto& g : grads) {
    for (auto& v : g.storage()) v *= inv;
  }

  auto list = parameter_list(state.params);
  try {
    adam_step<T>(list, grads, state.optim);
  } catch (const NumericError& e) {
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
  }
  state.step = step;
  return loss;
}

/// Predicts every sample at full size and scores it against its clear image.
template <Real T>
metrics::MetricReport evaluate(const NetworkParams<T>& params, const NetworkConfig& net,
                               const std::vector<SamplePair<T>>& samples, const std::vector<std::string>& ids,
                               metrics::SsimMode mode = metrics::SsimMode::global, std::size_t threads = 1) {
  if (samples.empty()) throw ConfigError("evaluate: the split is empty");
  if (ids.size() != samples.size()) throw ConfigError("evaluate: one id per sample required");
  metrics::MetricReport report{mode, std::vector<metrics::MetricRow>(samples.size())};
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    report.rows[i] = metrics::evaluate_pair(ids[i], infer(samples[i].cloudy, params, net), samples[i].clear, mode);
  });
  return report;
}

/// Identity baseline: the cloudy input scored as a prediction.
template <Real T>
metrics::MetricReport evaluate_identity(const std::vector<SamplePair<T>>& samples, const std::vector<std::string>& ids,
                                        metrics::SsimMode mode = metrics::SsimMode::global) {
  metrics::MetricReport report{mode, {}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    report.rows.push_back(metrics::evaluate_pair(ids[i], samples[i].cloudy, samples[i].clear, mode));
  }
  return report;
}

/// Trains until state.step reaches cfg.steps. Resuming from a restored state
/// continues the same trajectory.
template <Real T>
TrainResult train(TrainState<T>& state, const NetworkConfig& net, const TrainConfig& cfg,
                  const std::vector<SamplePair<T>>& train_samples, const std::vector<SamplePair<T>>* eval_samples = nullptr,
                  const std::vector<std::string>* eval_ids = nullptr, const TrainHooks<T>& hooks = {}) {
  net.validate();
  cfg.validate();
  if (train_samples.empty()) throw ConfigError("train: the training split is empty");
  check_params(state.params, net);
  TrainResult result;
  while (state.step < cfg.steps) {
    const double loss = train_step(state, net, cfg, train_samples);
    const LossPoint point{state.step, loss};
    result.losses.push_back(point);
    if (hooks.on_step) hooks.on_step(point);
    if (cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0 && eval_samples && eval_ids &&
        !eval_samples->empty()) {
      EvalPoint ep{state.step, evaluate(state.params, net, *eval_samples, *eval_ids, metrics::SsimMode::global,
                                        cfg.threads)};
      if (hooks.on_eval) hooks.on_eval(ep);
      result.evals.push_back(std::move(ep));
    }
    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(state);
    }
  }
  return result;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossPoint>& losses) {
  os << "step,loss\n";
  for (const auto& p : losses) os << p.step << ',' << metrics::format_number(p.loss) << '\n';
}

}  // namespace acacr
