#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gridflow/diff.hpp"

namespace gridflow::diff {

Tensor ParameterSet::add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  auto t = Tensor::leaf(std::move(shape), std::move(values));
  items_.push_back({name, t, std::vector<double>(t.numel(), 0.0)});
  return t;
}

Tensor ParameterSet::add_constant(const std::string& name, Shape shape, double value) {
  auto t = Tensor::leaf(shape, std::vector<double>(numel(shape), value));
  items_.push_back({name, t, std::vector<double>(t.numel(), 0.0)});
  return t;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.items_.size() != items_.size()) throw ShapeError("copy_values_from: parameter count differs");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].tensor.shape() != other.items_[i].tensor.shape())
      throw ShapeError("copy_values_from: shape of '" + items_[i].name + "' differs");
    auto dst = items_[i].tensor.mutable_values();
    auto src = other.items_[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::vector<double> ParameterSet::flat_values() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for (const auto& p : items_) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void rmsprop_step(ParameterSet& params, const RmsPropOptions& options) {
  for (auto& p : params.items()) {
    auto w = p.tensor.mutable_values();
    auto g = p.tensor.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.mean_square[i] = options.decay * p.mean_square[i] + (1.0 - options.decay) * g[i] * g[i];
      w[i] -= options.learning_rate * g[i] / (std::sqrt(p.mean_square[i]) + options.eps);
      g[i] = 0.0;
    }
  }
}

double gradient_l1_norm(const ParameterSet& params) {
  double total = 0.0;
  for (const auto& p : params.items())
    for (double g : p.tensor.grad()) total += std::abs(g);
  return total;
}

double gradient_l1_norm(std::span<ParameterSet* const> sets) {
  double total = 0.0;
  for (const auto* s : sets) total += gradient_l1_norm(*s);
  return total;
}

double clip_gradients_l1(std::span<ParameterSet* const> sets, double bound) {
  const double norm = gradient_l1_norm(sets);
  if (norm > bound) {
    const double factor = bound / norm;
    for (auto* s : sets)
      for (auto& p : s->items())
        for (auto& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

double clip_gradients_l1(ParameterSet& params, double bound) {
  ParameterSet* one[] = {&params};
  return clip_gradients_l1(one, bound);
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path, const std::string& meta_json) {
  using nlohmann::json;
  json doc;
  doc["meta"] = json::parse(meta_json);
  doc["params"] = json::object();
  for (const auto& p : params.items()) {
    json entry;
    entry["shape"] = p.tensor.shape();
    entry["values"] = std::vector<double>(p.tensor.values().begin(), p.tensor.values().end());
    doc["params"][p.name] = std::move(entry);
  }
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

std::string load_parameters(ParameterSet& params, const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError("corrupted checkpoint " + path.string() + ": " + e.what());
  }
  try {
    const auto& stored = doc.at("params");
    if (stored.size() != params.size())
      throw CheckpointError("checkpoint has " + std::to_string(stored.size()) + " parameters, architecture expects " +
                            std::to_string(params.size()));
    // validate everything before touching any value
    for (const auto& p : params.items()) {
      if (!stored.contains(p.name)) throw CheckpointError("checkpoint is missing parameter '" + p.name + "'");
      const auto& e = stored.at(p.name);
      if (e.at("shape").get<Shape>() != p.tensor.shape())
        throw CheckpointError("parameter '" + p.name + "' has shape " + to_string(e.at("shape").get<Shape>()) +
                              ", architecture expects " + to_string(p.tensor.shape()));
      if (e.at("values").size() != p.tensor.numel())
        throw CheckpointError("parameter '" + p.name + "' has the wrong number of values");
    }
    for (auto& p : params.items()) {
      const auto values = stored.at(p.name).at("values").get<std::vector<double>>();
      std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
    }
    return doc.contains("meta") ? doc.at("meta").dump() : "{}";
  } catch (const json::exception& e) {
    throw CheckpointError("corrupted checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace gridflow::diff
