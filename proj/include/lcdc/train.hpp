#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcdc/autodiff.hpp"
#include "lcdc/network.hpp"
#include "lcdc/rng.hpp"
#include "lcdc/synthdata.hpp"
#include "lcdc/tensor.hpp"
#include "lcdc/threading.hpp"

namespace lcdc {

// Cross-entropy with weight regularization:
//   -log softmax(logits)[label] + (wd/2) * sum ||w||^2 over decaying tensors.
inline double cross_entropy(const Tensor& logits, std::size_t label, const NetParams& params,
                            double weight_decay) {
  if (logits.rank() != 1) throw std::invalid_argument("cross_entropy: logits must be rank 1");
  if (label >= logits.numel()) throw std::invalid_argument("cross_entropy: invalid label");
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) denom += std::exp(logits[i] - mx);
  double loss = -(logits[label] - mx - std::log(denom));
  if (weight_decay != 0.0) {
    double reg = 0.0;
    for (const ParamEntry& e : params.entries) {
      if (!e.decay) continue;
      for (std::size_t i = 0; i < e.value.numel(); ++i) reg += e.value[i] * e.value[i];
    }
    loss += 0.5 * weight_decay * reg;
  }
  return loss;
}

inline double regularization_term(const NetParams& params, double weight_decay) {
  double reg = 0.0;
  for (const ParamEntry& e : params.entries) {
    if (!e.decay) continue;
    for (std::size_t i = 0; i < e.value.numel(); ++i) reg += e.value[i] * e.value[i];
  }
  return 0.5 * weight_decay * reg;
}

struct OptCfg {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double decay_factor = 0.96;
  std::size_t decay_interval = 10;  // epochs
  std::size_t epochs = 30;
  std::size_t batch = 8;
  double stop_at_test_acc = 1e9;  // early stop disabled by default
};

// Momentum optimizer state: v <- m*v + g; theta <- theta - lr*v. The learning
// rate is multiplied by decay_factor every decay_interval epochs.
struct OptimizerState {
  std::vector<Tensor> velocity;  // parallel to params.entries; empty for frozen entries
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double decay_factor = 0.96;
  std::size_t decay_interval = 10;
  std::size_t step_count = 0;
  std::size_t epochs_completed = 0;

  static OptimizerState create(const NetParams& params, const OptCfg& cfg) {
    OptimizerState s;
    s.lr = cfg.lr;
    s.momentum = cfg.momentum;
    s.weight_decay = cfg.weight_decay;
    s.decay_factor = cfg.decay_factor;
    s.decay_interval = cfg.decay_interval;
    s.velocity.resize(params.entries.size());
    for (std::size_t i = 0; i < params.entries.size(); ++i)
      if (params.entries[i].trainable) s.velocity[i] = Tensor(params.entries[i].value.shape());
    return s;
  }

  void end_epoch() {
    ++epochs_completed;
    if (decay_interval > 0 && epochs_completed % decay_interval == 0) lr *= decay_factor;
  }
};

// grads is parallel to params.entries; entries with an empty gradient are
// skipped. Weight decay is the caller's responsibility (folded into grads).
inline void sgd_momentum_step(NetParams& params, const std::vector<Tensor>& grads,
                              OptimizerState& state) {
  if (grads.size() != params.entries.size())
    throw std::invalid_argument("sgd_momentum_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    ParamEntry& e = params.entries[i];
    if (!e.trainable || grads[i].numel() == 0) continue;
    check_same_shape(grads[i], e.value, "sgd_momentum_step(" + e.name + ")");
    Tensor& v = state.velocity[i];
    for (std::size_t k = 0; k < v.numel(); ++k) {
      v[k] = state.momentum * v[k] + grads[i][k];
      e.value[k] -= state.lr * v[k];
    }
    e.value.check_finite("sgd_momentum_step(" + e.name + ")");
  }
  ++state.step_count;
}

// --- toy training loop --------------------------------------------------------

struct DataCfg {
  std::size_t per_class_train = 200;
  std::size_t per_class_test = 50;
  std::vector<MotionClass> classes = {MotionClass::up, MotionClass::down, MotionClass::left,
                                      MotionClass::right};
  SnippetCfg snippet;
};

struct TrainHistoryRow {
  std::size_t epoch = 0;
  double data_loss = 0.0;
  double reg_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainResult {
  std::vector<TrainHistoryRow> history;
  NetParams params;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
};

namespace detail {

struct Dataset {
  std::vector<Tensor> inputs;  // network-ready frame stacks
  std::vector<std::size_t> labels;
};

// Per-sample seeds are hash(seed, class, index); test indices live in a
// disjoint range. The appearance-only baseline sees one uniformly drawn frame
// of the snippet.
inline Dataset build_dataset(const NetConfig& net, const DataCfg& data, std::uint64_t seed,
                             bool test_split, std::size_t threads) {
  Dataset ds;
  const std::size_t per = test_split ? data.per_class_test : data.per_class_train;
  const std::size_t index_base = test_split ? 1000000 : 0;
  const std::size_t n = per * data.classes.size();
  ds.inputs.resize(n);
  ds.labels.resize(n);
  SnippetCfg snip = data.snippet;
  snip.t = net.t;
  snip.h = net.h;
  snip.w = net.w;
  parallel_for(n, threads, [&](std::size_t s) {
    const std::size_t cls_i = s / per;
    const std::size_t idx = index_base + s % per;
    const std::uint64_t sample_seed =
        hash_combine(hash_combine(seed, static_cast<std::uint64_t>(data.classes[cls_i])), idx);
    SnippetSample sample = generate_snippet(data.classes[cls_i], sample_seed, snip);
    if (net.appearance_only) {
      Xorshift64Star frame_rng(hash_combine(sample_seed, 0xF7A3));
      const std::size_t f = frame_rng.below(snip.t);
      const std::size_t elems = snip.h * snip.w;
      std::vector<double> frame(sample.frames.data() + f * elems,
                                sample.frames.data() + (f + 1) * elems);
      ds.inputs[s] = Tensor({1, snip.h, snip.w, 1}, std::move(frame));
    } else {
      ds.inputs[s] = std::move(sample.frames);
    }
    ds.labels[s] = cls_i;
  });
  return ds;
}

struct SampleResult {
  std::vector<Tensor> grads;  // parallel to params.entries
  std::vector<std::pair<std::size_t, Tensor>> batch_stats;
  double data_loss = 0.0;
  bool correct = false;
};

inline std::size_t argmax(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace detail

inline double evaluate_accuracy(const NetParams& params, const NetConfig& cfg,
                                const detail::Dataset& ds, std::size_t threads) {
  std::vector<char> correct(ds.inputs.size(), 0);
  parallel_for(ds.inputs.size(), threads, [&](std::size_t s) {
    ad::Graph g;
    const SnippetForward fwd = forward_snippet(g, ds.inputs[s], params, cfg, false);
    correct[s] = detail::argmax(g.value(fwd.logits)) == ds.labels[s] ? 1 : 0;
  });
  std::size_t hits = 0;
  for (char c : correct) hits += c;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ds.inputs.size());
}

// Deterministic training run: fixed PRNG streams for init, shuffling and data;
// per-sample forward/backward may run in parallel but gradients, batch-norm
// statistics and updates reduce in a fixed order.
inline TrainResult train_toy(const NetConfig& cfg, const DataCfg& data, const OptCfg& opt,
                             std::uint64_t seed, std::size_t threads = 0) {
  validate_config(cfg);
  if (opt.batch == 0 || opt.epochs == 0) throw std::invalid_argument("train_toy: empty schedule");

  const detail::Dataset train = detail::build_dataset(cfg, data, seed, false, threads);
  const detail::Dataset test = detail::build_dataset(cfg, data, seed, true, threads);

  TrainResult result;
  result.params = init_params(cfg, hash_combine(seed, 1));
  OptimizerState state = OptimizerState::create(result.params, opt);
  NetParams& params = result.params;

  const std::size_t n = train.inputs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    // Fisher-Yates with the project PRNG; std::shuffle is not reproducible
    // across standard libraries.
    Xorshift64Star shuffle_rng(hash_combine(hash_combine(seed, 2), epoch));
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += opt.batch) {
      const std::size_t bsz = std::min(opt.batch, n - start);
      std::vector<detail::SampleResult> results(bsz);
      parallel_for(bsz, threads, [&](std::size_t bi) {
        const std::size_t s = order[start + bi];
        ad::Graph g;
        SnippetForward fwd = forward_snippet(g, train.inputs[s], params, cfg, true);
        const ad::Graph::Id loss = g.softmax_cross_entropy(fwd.logits, train.labels[s]);
        detail::SampleResult& r = results[bi];
        r.data_loss = g.value(loss)[0];
        r.correct = detail::argmax(g.value(fwd.logits)) == train.labels[s];
        g.backward(loss, Tensor::scalar(1.0));
        r.grads.resize(params.entries.size());
        for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
          const ad::Graph::Id leaf = fwd.param_leaf[pi];
          if (leaf != SnippetForward::npos && g.has_grad(leaf)) r.grads[pi] = g.grad(leaf);
        }
        r.batch_stats = std::move(fwd.batch_stats);
      });

      // Fixed-order reduction over the batch.
      std::vector<Tensor> grads(params.entries.size());
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (std::size_t bi = 0; bi < bsz; ++bi) {
        detail::SampleResult& r = results[bi];
        loss_sum += r.data_loss;
        if (r.correct) ++correct;
        for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
          if (r.grads[pi].numel() == 0) continue;
          if (grads[pi].numel() == 0) grads[pi] = Tensor(r.grads[pi].shape());
          for (std::size_t k = 0; k < grads[pi].numel(); ++k) grads[pi][k] += r.grads[pi][k];
        }
      }
      for (Tensor& gt : grads)
        for (std::size_t k = 0; k < gt.numel(); ++k) gt[k] *= inv_b;
      for (std::size_t pi = 0; pi < params.entries.size(); ++pi) {
        ParamEntry& e = params.entries[pi];
        if (!e.decay || grads[pi].numel() == 0 || opt.weight_decay == 0.0) continue;
        for (std::size_t k = 0; k < grads[pi].numel(); ++k)
          grads[pi][k] += opt.weight_decay * e.value[k];
      }

      // Running BN statistics: momentum 0.9 on the batch-averaged statistic.
      std::vector<std::pair<std::size_t, Tensor>> stat_sums;
      for (std::size_t bi = 0; bi < bsz; ++bi) {
        for (std::size_t si = 0; si < results[bi].batch_stats.size(); ++si) {
          const auto& [entry_idx, stat] = results[bi].batch_stats[si];
          if (bi == 0) stat_sums.emplace_back(entry_idx, Tensor(stat.shape()));
          Tensor& acc = stat_sums[si].second;
          for (std::size_t k = 0; k < acc.numel(); ++k) acc[k] += stat[k];
        }
      }
      for (auto& [entry_idx, acc] : stat_sums) {
        Tensor& running = params.entries[entry_idx].value;
        for (std::size_t k = 0; k < running.numel(); ++k)
          running[k] = 0.9 * running[k] + 0.1 * acc[k] * inv_b;
      }

      sgd_momentum_step(params, grads, state);
    }

    TrainHistoryRow row;
    row.epoch = epoch + 1;
    row.data_loss = loss_sum / static_cast<double>(n);
    row.reg_loss = regularization_term(params, opt.weight_decay);
    row.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    row.test_acc = evaluate_accuracy(params, cfg, test, threads);
    if (!std::isfinite(row.data_loss))
      throw std::runtime_error("train_toy: non-finite loss at epoch " + std::to_string(row.epoch));
    result.history.push_back(row);
    result.best_test_acc = std::max(result.best_test_acc, row.test_acc);
    state.end_epoch();
    if (row.test_acc >= opt.stop_at_test_acc) break;
  }

  result.final_train_acc = result.history.back().train_acc;
  result.final_test_acc = result.history.back().test_acc;
  return result;
}

// --- JSON ----------------------------------------------------------------------

inline DataCfg data_cfg_from_json(const nlohmann::json& j) {
  DataCfg d;
  d.per_class_train = j.value("per_class_train", d.per_class_train);
  d.per_class_test = j.value("per_class_test", d.per_class_test);
  if (j.contains("classes")) {
    d.classes.clear();
    for (const auto& c : j.at("classes")) d.classes.push_back(parse_motion_class(c.get<std::string>()));
  }
  d.snippet.texture_scale = j.value("texture_scale", d.snippet.texture_scale);
  d.snippet.speed = j.value("speed", d.snippet.speed);
  return d;
}

inline nlohmann::json data_cfg_to_json(const DataCfg& d) {
  nlohmann::json j;
  j["per_class_train"] = d.per_class_train;
  j["per_class_test"] = d.per_class_test;
  j["classes"] = nlohmann::json::array();
  for (MotionClass c : d.classes) j["classes"].push_back(motion_class_name(c));
  j["texture_scale"] = d.snippet.texture_scale;
  j["speed"] = d.snippet.speed;
  return j;
}

inline OptCfg opt_cfg_from_json(const nlohmann::json& j) {
  OptCfg o;
  o.lr = j.value("lr", o.lr);
  o.momentum = j.value("momentum", o.momentum);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.decay_factor = j.value("decay_factor", o.decay_factor);
  o.decay_interval = j.value("decay_interval", o.decay_interval);
  o.epochs = j.value("epochs", o.epochs);
  o.batch = j.value("batch", o.batch);
  o.stop_at_test_acc = j.value("stop_at_test_acc", o.stop_at_test_acc);
  return o;
}

inline nlohmann::json opt_cfg_to_json(const OptCfg& o) {
  nlohmann::json j;
  j["lr"] = o.lr;
  j["momentum"] = o.momentum;
  j["weight_decay"] = o.weight_decay;
  j["decay_factor"] = o.decay_factor;
  j["decay_interval"] = o.decay_interval;
  j["epochs"] = o.epochs;
  j["batch"] = o.batch;
  j["stop_at_test_acc"] = o.stop_at_test_acc;
  return j;
}

}  // namespace lcdc
