#include "nrs/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nrs/errors.hpp"
#include "nrs/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace nrs {

using nlohmann::json;

Gradients zeros_like(const ScorerParams& params) {
  Gradients g;
  g.input_dim = params.input_dim;
  g.hidden = params.hidden;
  for (const DenseLayer& layer : params.blocks) {
    DenseLayer z;
    z.in = layer.in;
    z.out = layer.out;
    z.weights.assign(layer.weights.size(), 0.0);
    z.bias.assign(layer.bias.size(), 0.0);
    g.blocks.push_back(std::move(z));
  }
  g.head_weights.assign(params.head_weights.size(), 0.0);
  g.head_bias = 0.0;
  return g;
}

ScorerParams init_params(size_t input_dim, size_t hidden, size_t n_blocks,
                         uint64_t seed) {
  if (input_dim < 1 || hidden < 1 || n_blocks < 1)
    throw ConfigError("init_params: dimensions must be >= 1");
  Rng rng(hash_combine(seed, fnv1a("init_params")));
  ScorerParams params;
  params.input_dim = input_dim;
  params.hidden = hidden;
  for (size_t b = 0; b < n_blocks; ++b) {
    DenseLayer layer;
    layer.in = b == 0 ? input_dim : hidden;
    layer.out = hidden;
    double s = std::sqrt(6.0 / static_cast<double>(layer.in));
    layer.weights.resize(layer.in * layer.out);
    for (double& w : layer.weights) w = rng.uniform(-s, s);
    layer.bias.assign(layer.out, 0.0);
    params.blocks.push_back(std::move(layer));
  }
  double s = std::sqrt(6.0 / static_cast<double>(hidden));
  params.head_weights.resize(hidden);
  for (double& w : params.head_weights) w = rng.uniform(-s, s);
  params.head_bias = 0.0;
  return params;
}

std::pair<double, ForwardTape> forward(const ScorerParams& params,
                                       const Vec& x) {
  if (x.size() != params.input_dim)
    throw DataError("forward: input dimension mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw DataError("forward: non-finite input");

  ForwardTape tape;
  tape.input = x;
  const Vec* cur = &tape.input;
  for (const DenseLayer& layer : params.blocks) {
    Vec z = layer.bias;
    for (size_t i = 0; i < layer.in; ++i) {
      double xi = (*cur)[i];
      if (xi == 0.0) continue;
      const double* w = layer.weights.data() + i * layer.out;
      for (size_t o = 0; o < layer.out; ++o) z[o] += xi * w[o];
    }
    Vec a(z.size());
    for (size_t o = 0; o < z.size(); ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
    tape.pre.push_back(std::move(z));
    tape.act.push_back(std::move(a));
    cur = &tape.act.back();
  }
  double score = params.head_bias;
  for (size_t o = 0; o < params.hidden; ++o)
    score += params.head_weights[o] * (*cur)[o];
  return {score, std::move(tape)};
}

double forward_score(const ScorerParams& params, const Vec& x) {
  return forward(params, x).first;
}

void backward_accumulate(const ScorerParams& params, const ForwardTape& tape,
                         double dscore, Gradients& grads) {
  size_t nb = params.n_blocks();
  if (tape.pre.size() != nb || tape.act.size() != nb ||
      tape.input.size() != params.input_dim)
    throw DataError("backward: tape does not match params");

  const Vec& last_act = tape.act.back();
  for (size_t o = 0; o < params.hidden; ++o)
    grads.head_weights[o] += dscore * last_act[o];
  grads.head_bias += dscore;

  // d(activation of last block)
  Vec d_act(params.hidden);
  for (size_t o = 0; o < params.hidden; ++o)
    d_act[o] = dscore * params.head_weights[o];

  for (size_t b = nb; b-- > 0;) {
    const DenseLayer& layer = params.blocks[b];
    DenseLayer& glayer = grads.blocks[b];
    const Vec& pre = tape.pre[b];
    const Vec& x_in = b == 0 ? tape.input : tape.act[b - 1];

    // ReLU subgradient: 0 at z <= 0.
    Vec dz(layer.out);
    for (size_t o = 0; o < layer.out; ++o)
      dz[o] = pre[o] > 0.0 ? d_act[o] : 0.0;

    for (size_t o = 0; o < layer.out; ++o) glayer.bias[o] += dz[o];
    for (size_t i = 0; i < layer.in; ++i) {
      double xi = x_in[i];
      if (xi != 0.0) {
        double* gw = glayer.weights.data() + i * layer.out;
        for (size_t o = 0; o < layer.out; ++o) gw[o] += xi * dz[o];
      }
    }
    if (b > 0) {
      Vec d_prev(layer.in, 0.0);
      for (size_t i = 0; i < layer.in; ++i) {
        const double* w = layer.weights.data() + i * layer.out;
        double acc = 0;
        for (size_t o = 0; o < layer.out; ++o) acc += w[o] * dz[o];
        d_prev[i] = acc;
      }
      d_act = std::move(d_prev);
    }
  }
}

Gradients backward(const ScorerParams& params, const ForwardTape& tape,
                   double dscore) {
  Gradients grads = zeros_like(params);
  backward_accumulate(params, tape, dscore, grads);
  return grads;
}

namespace {

constexpr char kMagic[8] = {'N', 'R', 'S', 'C', 'K', 'P', 'T', '1'};

void write_doubles(std::ofstream& out, const Vec& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, Vec& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw DataError("checkpoint: truncated payload");
}

}  // namespace

void save_checkpoint(const std::string& path, const ScorerParams& params,
                     const json& meta) {
  json full = meta;
  full["input_dim"] = params.input_dim;
  full["hidden"] = params.hidden;
  full["blocks"] = params.n_blocks();
  std::string header = full.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  uint32_t len = static_cast<uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const DenseLayer& layer : params.blocks) {
    write_doubles(out, layer.weights);
    write_doubles(out, layer.bias);
  }
  write_doubles(out, params.head_weights);
  out.write(reinterpret_cast<const char*>(&params.head_bias), sizeof(double));
  if (!out) throw IoError("write failure: " + path);
}

std::pair<ScorerParams, json> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic/version in " + path);
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw DataError("checkpoint: truncated header length");
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) throw DataError("checkpoint: truncated header");
  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata JSON: ") + e.what());
  }

  ScorerParams params;
  try {
    params.input_dim = meta.at("input_dim").get<size_t>();
    params.hidden = meta.at("hidden").get<size_t>();
    size_t nb = meta.at("blocks").get<size_t>();
    if (params.input_dim < 1 || params.hidden < 1 || nb < 1)
      throw DataError("checkpoint: invalid shape metadata");
    for (size_t b = 0; b < nb; ++b) {
      DenseLayer layer;
      layer.in = b == 0 ? params.input_dim : params.hidden;
      layer.out = params.hidden;
      layer.weights.resize(layer.in * layer.out);
      layer.bias.resize(layer.out);
      params.blocks.push_back(std::move(layer));
    }
    params.head_weights.resize(params.hidden);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: missing shape metadata: ") +
                    e.what());
  }

  for (DenseLayer& layer : params.blocks) {
    read_doubles(in, layer.weights);
    read_doubles(in, layer.bias);
  }
  read_doubles(in, params.head_weights);
  in.read(reinterpret_cast<char*>(&params.head_bias), sizeof(double));
  if (!in) throw DataError("checkpoint: truncated payload");
  char extra;
  if (in.read(&extra, 1))
    throw DataError("checkpoint: payload larger than metadata shapes");
  return {std::move(params), std::move(meta)};
}

}  // namespace nrs
