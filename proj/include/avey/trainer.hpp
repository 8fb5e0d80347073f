#pragma once
// Training loop: cosine learning-rate decay with a fixed floor, global
// gradient-norm clipping, decoupled-weight-decay Adam, and a non-finite
// halt that leaves the last good parameter state untouched.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/counters.hpp"
#include "avey/model.hpp"
#include "avey/tensor.hpp"

namespace avey {

// Cosine decay from the peak at step 0 down to a 10% floor at the final
// step: lr = 0.1 * peak + 0.45 * peak * (1 + cos(pi * step / (total - 1))).
inline double lr_at(int step, int total_steps, double peak) {
  require(total_steps > 0, "lr_at: total_steps must be positive");
  require(step >= 0 && step < total_steps,
          "lr_at: step " + std::to_string(step) + " outside schedule of " +
              std::to_string(total_steps));
  if (total_steps == 1) return peak;
  double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return 0.1 * peak + 0.45 * peak * (1.0 + std::cos(std::numbers::pi * t));
}

// First and second moments per parameter tensor, in census order.
template <typename Real>
struct AdamState {
  struct Slot {
    std::string name;
    std::vector<Real> m, v;
  };
  std::vector<Slot> slots;
  long step = 0;  // completed optimizer updates

  static AdamState make(ModelParams<Real>& params) {
    AdamState st;
    params.for_each_param([&](const std::string& name, DualTensor<Real>& t) {
      Slot s;
      s.name = name;
      s.m.assign(t.size(), Real(0));
      s.v.assign(t.size(), Real(0));
      st.slots.push_back(std::move(s));
    });
    return st;
  }
};

// Euclidean norm over every gradient entry of every parameter, accumulated
// in double in census order.
template <typename Real>
double global_grad_norm(ModelParams<Real>& params) {
  double ss = 0;
  params.for_each_param([&](const std::string&, DualTensor<Real>& t) {
    if (!t.grad_allocated()) return;
    const Real* g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i)
      ss += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  });
  return std::sqrt(ss);
}

// Scales all gradients down to the ceiling when the global norm exceeds
// it. Returns the pre-clip norm.
template <typename Real>
double clip_gradients(ModelParams<Real>& params, double clip) {
  double norm = global_grad_norm(params);
  if (std::isfinite(norm) && norm > clip) {
    Real f = static_cast<Real>(clip / norm);
    params.for_each_param([&](const std::string&, DualTensor<Real>& t) {
      if (!t.grad_allocated()) return;
      Real* g = t.grad();
      for (std::size_t i = 0; i < t.size(); ++i) g[i] *= f;
    });
  }
  return norm;
}

// Weight decay touches genuinely two-dimensional tensors only; bias rows
// and normalization gains are exempt.
template <typename Real>
inline bool decays(const DualTensor<Real>& t) {
  return t.rows() > 1 && t.cols() > 1;
}

// One bias-corrected Adam update with decoupled weight decay applied
// multiplicatively before the moment step.
template <typename Real>
void adamw_step(ModelParams<Real>& params, AdamState<Real>& st, double lr,
                const TrainConfig& tc) {
  st.step += 1;
  double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
  std::size_t slot = 0;
  params.for_each_param([&](const std::string& name, DualTensor<Real>& t) {
    require(slot < st.slots.size() && st.slots[slot].name == name,
            "adamw_step: optimizer state does not match parameter census at " +
                name);
    auto& s = st.slots[slot++];
    require(s.m.size() == t.size(),
            "adamw_step: moment size mismatch at " + name);
    const Real* g = t.grad();  // zero-filled if never touched
    Real* p = t.data();
    Real decay_factor =
        decays(t) ? static_cast<Real>(1.0 - lr * tc.weight_decay) : Real(1);
    for (std::size_t i = 0; i < t.size(); ++i) {
      s.m[i] = static_cast<Real>(tc.beta1) * s.m[i] +
               static_cast<Real>(1.0 - tc.beta1) * g[i];
      s.v[i] = static_cast<Real>(tc.beta2) * s.v[i] +
               static_cast<Real>(1.0 - tc.beta2) * g[i] * g[i];
      double mh = static_cast<double>(s.m[i]) / bc1;
      double vh = static_cast<double>(s.v[i]) / bc2;
      p[i] = decay_factor * p[i] -
             static_cast<Real>(lr * mh / (std::sqrt(vh) + tc.eps));
    }
  });
}

struct StepMetrics {
  int step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
  double tokens_per_s = 0;
};

struct TrainResult {
  std::vector<StepMetrics> history;
  bool halted_non_finite = false;
  int steps_done = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  FlopCounters counters;
};

// Runs steps [start_step, cfg.steps). Blocks must each hold context + 1
// tokens; step s trains on blocks (s * batch + b) mod |blocks|, so equal
// inputs and a restored optimizer state reproduce the trajectory exactly.
// A non-finite loss or gradient norm stops the loop before the parameters
// are touched.
template <typename Real>
TrainResult train(ModelParams<Real>& params, AdamState<Real>& adam,
                  const std::vector<std::vector<int>>& blocks,
                  const TrainConfig& tc, int start_step = 0,
                  const std::function<void(const StepMetrics&)>& on_log = {}) {
  tc.validate();
  require(!blocks.empty(), "train: no data blocks");
  std::size_t need = static_cast<std::size_t>(params.cfg.context) + 1;
  for (const auto& b : blocks)
    require(b.size() == need, "train: block of " + std::to_string(b.size()) +
                                  " tokens, expected context + 1 = " +
                                  std::to_string(need));
  TrainResult res;
  Tape<Real> tape;
  for (int step = start_step; step < tc.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    tape.clear();
    params.for_each_param(
        [](const std::string&, DualTensor<Real>& t) { t.zero_grad(); });

    DualTensor<Real> loss;
    for (int b = 0; b < tc.batch; ++b) {
      const auto& block =
          blocks[(static_cast<std::size_t>(step) * tc.batch + b) %
                 blocks.size()];
      std::vector<int> inputs(block.begin(), block.end() - 1);
      std::vector<int> targets(block.begin() + 1, block.end());
      DualTensor<Real> logits =
          forward_train(&tape, params, inputs, &res.counters);
      DualTensor<Real> l = softmax_cross_entropy(&tape, logits, targets);
      loss = loss.defined() ? add(&tape, loss, l) : l;
    }
    if (tc.batch > 1)
      loss = scale(&tape, loss, Real(1) / static_cast<Real>(tc.batch));

    double loss_v = static_cast<double>(loss.at(0, 0));
    if (!std::isfinite(loss_v)) {
      res.halted_non_finite = true;
      break;
    }
    tape.backward(loss);
    double norm = clip_gradients(params, tc.clip);
    if (!std::isfinite(norm)) {
      res.halted_non_finite = true;
      break;
    }
    double lr = lr_at(step, tc.steps, tc.peak_lr);
    adamw_step(params, adam, lr, tc);

    auto t1 = std::chrono::steady_clock::now();
    double dt = std::chrono::duration<double>(t1 - t0).count();
    StepMetrics m;
    m.step = step;
    m.lr = lr;
    m.loss = loss_v;
    m.grad_norm = norm;
    m.tokens_per_s =
        dt > 0 ? tc.batch * static_cast<double>(params.cfg.context) / dt : 0;
    res.history.push_back(m);
    res.steps_done = step + 1;
    res.final_loss = loss_v;
    if (on_log && (step % tc.log_every == 0 || step + 1 == tc.steps))
      on_log(m);
  }
  return res;
}

}  // namespace avey
