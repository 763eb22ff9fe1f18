#include "nrs/optim.hpp"

#include <cmath>

#include "nrs/errors.hpp"

namespace nrs {

HingeResult hinge_loss(double s_gold, double s_agent, double delta,
                       bool printed_sign) {
  if (!std::isfinite(s_gold) || !std::isfinite(s_agent))
    throw DataError("hinge_loss: non-finite score");
  if (delta < 0) throw ConfigError("hinge_loss: delta must be >= 0");
  HingeResult r;
  double raw = printed_sign ? delta + s_gold - s_agent
                            : delta - s_gold + s_agent;
  if (raw > 0) {
    r.loss = raw;
    r.d_gold = printed_sign ? 1.0 : -1.0;
    r.d_agent = printed_sign ? -1.0 : 1.0;
  }
  return r;
}

FreezeMask FreezeMask::all_trainable(size_t n_blocks) {
  FreezeMask mask;
  mask.blocks.assign(n_blocks, true);
  mask.head = true;
  return mask;
}

FreezeMask FreezeMask::last_block_and_head(size_t n_blocks) {
  FreezeMask mask;
  mask.blocks.assign(n_blocks, false);
  if (n_blocks > 0) mask.blocks.back() = true;
  mask.head = true;
  return mask;
}

bool FreezeMask::any_trainable() const {
  if (head) return true;
  for (bool b : blocks)
    if (b) return true;
  return false;
}

AdamState AdamState::init(const ScorerParams& params, double lr) {
  if (lr <= 0) throw ConfigError("adam: lr must be positive");
  AdamState state;
  state.lr = lr;
  state.m = zeros_like(params);
  state.v = zeros_like(params);
  return state;
}

namespace {

void adam_update(Vec& params, Vec& m, Vec& v, const Vec& grads, double lr,
                 double beta1, double beta2, double eps, double bc1,
                 double bc2) {
  if (params.size() != grads.size())
    throw DataError("adam: gradient shape mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    double m_hat = m[i] / bc1;
    double v_hat = v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace

void adam_step(AdamState& state, ScorerParams& params, const Gradients& grads,
               const FreezeMask& mask) {
  if (mask.blocks.size() != params.n_blocks())
    throw DataError("adam: mask shape mismatch");
  if (!mask.any_trainable())
    throw ConfigError("adam: freeze mask disables all parameter groups");
  if (grads.blocks.size() != params.n_blocks())
    throw DataError("adam: gradient shape mismatch");

  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

  for (size_t b = 0; b < params.n_blocks(); ++b) {
    if (!mask.blocks[b]) continue;  // frozen: params and moments untouched
    adam_update(params.blocks[b].weights, state.m.blocks[b].weights,
                state.v.blocks[b].weights, grads.blocks[b].weights, state.lr,
                state.beta1, state.beta2, state.eps, bc1, bc2);
    adam_update(params.blocks[b].bias, state.m.blocks[b].bias,
                state.v.blocks[b].bias, grads.blocks[b].bias, state.lr,
                state.beta1, state.beta2, state.eps, bc1, bc2);
  }
  if (mask.head) {
    adam_update(params.head_weights, state.m.head_weights,
                state.v.head_weights, grads.head_weights, state.lr,
                state.beta1, state.beta2, state.eps, bc1, bc2);
    double g = grads.head_bias;
    state.m.head_bias = state.beta1 * state.m.head_bias + (1.0 - state.beta1) * g;
    state.v.head_bias =
        state.beta2 * state.v.head_bias + (1.0 - state.beta2) * g * g;
    params.head_bias -= state.lr * (state.m.head_bias / bc1) /
                        (std::sqrt(state.v.head_bias / bc2) + state.eps);
  }
}

double lr_for(const LrSchedule& schedule, Phase phase, int epoch) {
  if (epoch < 1) throw ConfigError("lr_for: epoch must be >= 1");
  if (phase == Phase::kUtterance) return schedule.utterance_lr;
  return epoch < schedule.drop_epoch ? schedule.conv_early_lr
                                     : schedule.conv_late_lr;
}

}  // namespace nrs
