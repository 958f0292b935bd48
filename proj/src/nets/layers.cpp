#include <cmath>

#include "gridflow/nets.hpp"

namespace gridflow::nets {

using namespace gridflow::diff;

Tensor Linear::operator()(const Tensor& x) const {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = params.add_uniform(name + ".weight", {in, out}, bound, rng);
  if (bias) l.bias = params.add_uniform(name + ".bias", {out}, bound, rng);
  return l;
}

AttentionLayer make_attention(ParameterSet& params, const std::string& name, std::size_t d_model, std::size_t heads,
                              std::mt19937_64& rng) {
  if (heads == 0 || d_model % heads != 0) throw ShapeError("attention: d_model must be divisible by heads");
  AttentionLayer layer;
  layer.query = make_linear(params, name + ".w_q", d_model, d_model, rng, false);
  layer.key = make_linear(params, name + ".w_k", d_model, d_model, rng, false);
  layer.value = make_linear(params, name + ".w_v", d_model, d_model, rng, false);
  layer.output = make_linear(params, name + ".out", d_model, d_model, rng);
  layer.gamma = params.add_constant(name + ".ln.gamma", {d_model}, 1.0);
  layer.beta = params.add_constant(name + ".ln.beta", {d_model}, 0.0);
  layer.heads = heads;
  return layer;
}

Tensor AttentionLayer::operator()(const Tensor& x, const Tensor& mask, std::vector<Tensor>* weights) const {
  const auto d = x.dim(-1);
  const auto head_width = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
  const auto q = query(x);
  const auto k = key(x);
  const auto v = value(x);
  std::vector<Tensor> mixed;
  mixed.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto lo = h * head_width;
    const auto hi = lo + head_width;
    const auto qh = slice(q, lo, hi);
    const auto kh = slice(k, lo, hi);
    const auto vh = slice(v, lo, hi);
    const auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    const auto w = mask.defined() ? masked_softmax(scores, mask) : softmax(scores);
    if (weights) weights->push_back(w);
    mixed.push_back(matmul(w, vh));
  }
  const auto y = heads == 1 ? mixed[0] : concat(mixed);
  return layer_norm(add(x, output(y)), gamma, beta);
}

GruCell make_gru(ParameterSet& params, const std::string& name, std::size_t in, std::size_t width,
                 std::mt19937_64& rng) {
  GruCell cell;
  // PyTorch initializes both GRU matrices with 1/sqrt(hidden)
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  cell.input.weight = params.add_uniform(name + ".w_ih", {in, 3 * width}, bound, rng);
  cell.input.bias = params.add_uniform(name + ".b_ih", {3 * width}, bound, rng);
  cell.hidden.weight = params.add_uniform(name + ".w_hh", {width, 3 * width}, bound, rng);
  cell.hidden.bias = params.add_uniform(name + ".b_hh", {3 * width}, bound, rng);
  cell.width = width;
  return cell;
}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  const auto gi = input(x);
  const auto gh = hidden(h);
  const auto w = width;
  const auto r = sigmoid(add(slice(gi, 0, w), slice(gh, 0, w)));
  const auto z = sigmoid(add(slice(gi, w, 2 * w), slice(gh, w, 2 * w)));
  const auto n = tanh(add(slice(gi, 2 * w, 3 * w), mul(r, slice(gh, 2 * w, 3 * w))));
  // h' = (1 - z) * n + z * h = n + z * (h - n)
  return add(n, mul(z, sub(h, n)));
}

}  // namespace gridflow::nets
