#ifndef NRS_MODEL_HPP_
#define NRS_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nrs/embed.hpp"

namespace nrs {

// One affine layer; weights row-major (in x out): y[o] = sum_i x[i]*w[i*out+o].
struct DenseLayer {
  size_t in = 0;
  size_t out = 0;
  Vec weights;
  Vec bias;
};

struct ScorerParams {
  size_t input_dim = 0;
  size_t hidden = 0;
  std::vector<DenseLayer> blocks;  // each followed by ReLU
  Vec head_weights;                // hidden -> scalar
  double head_bias = 0.0;

  size_t n_blocks() const { return blocks.size(); }
};

// Gradients (and ADAM moments) share the parameter layout.
using Gradients = ScorerParams;

Gradients zeros_like(const ScorerParams& params);

struct ForwardTape {
  Vec input;
  std::vector<Vec> pre;  // pre-activation per block
  std::vector<Vec> act;  // post-ReLU per block
};

ScorerParams init_params(size_t input_dim, size_t hidden, size_t n_blocks,
                         uint64_t seed);

std::pair<double, ForwardTape> forward(const ScorerParams& params,
                                       const Vec& x);
double forward_score(const ScorerParams& params, const Vec& x);

// Exact reverse-mode gradients of score * dscore.
Gradients backward(const ScorerParams& params, const ForwardTape& tape,
                   double dscore);
void backward_accumulate(const ScorerParams& params, const ForwardTape& tape,
                         double dscore, Gradients& grads);

void save_checkpoint(const std::string& path, const ScorerParams& params,
                     const nlohmann::json& meta);
std::pair<ScorerParams, nlohmann::json> load_checkpoint(
    const std::string& path);

}  // namespace nrs

#endif  // NRS_MODEL_HPP_
