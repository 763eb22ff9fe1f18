#ifndef NRS_OPTIM_HPP_
#define NRS_OPTIM_HPP_

#include <cstdint>
#include <vector>

#include "nrs/model.hpp"

namespace nrs {

struct HingeResult {
  double loss = 0.0;
  double d_gold = 0.0;
  double d_agent = 0.0;
};

// Margin ranking loss: max(0, delta - s_gold + s_agent). The sign as printed
// in some write-ups (delta + s_gold - s_agent) is kept behind printed_sign
// for A/B inspection; minimizing it would invert the ranking.
HingeResult hinge_loss(double s_gold, double s_agent, double delta = 1.0,
                       bool printed_sign = false);

struct FreezeMask {
  std::vector<bool> blocks;  // per dense block
  bool head = true;

  static FreezeMask all_trainable(size_t n_blocks);
  // Gradual unfreezing: only the last block plus the head.
  static FreezeMask last_block_and_head(size_t n_blocks);
  bool any_trainable() const;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  Gradients m;
  Gradients v;

  static AdamState init(const ScorerParams& params, double lr = 1e-3);
};

void adam_step(AdamState& state, ScorerParams& params, const Gradients& grads,
               const FreezeMask& mask);

enum class Phase { kUtterance, kConversation, kScheduledSampling };

struct LrSchedule {
  double utterance_lr = 1e-3;
  double conv_early_lr = 1e-3;  // combined conversation/SS epochs 1..drop-1
  double conv_late_lr = 1e-4;   // from drop_epoch onward
  int drop_epoch = 4;
};

double lr_for(const LrSchedule& schedule, Phase phase, int epoch);

}  // namespace nrs

#endif  // NRS_OPTIM_HPP_
