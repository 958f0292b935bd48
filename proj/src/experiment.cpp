#include "gridflow/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace gridflow::experiment {

using nlohmann::json;

namespace {

struct Field {
  std::string key;
  std::function<void(const json&, ExperimentConfig&)> read;
  std::function<json(const ExperimentConfig&)> write;
};

// Binds a key to a member reached through `at`, which must work on both const and mutable configs.
template <typename T, typename Access>
Field plain(std::string key, Access at) {
  return {std::move(key), [at](const json& j, ExperimentConfig& c) { at(c) = j.get<T>(); },
          [at](const ExperimentConfig& c) { return json(at(c)); }};
}

#define GF_AT(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"network", [](const json& j, ExperimentConfig& c) { c.network = j.get<std::string>(); },
                 [](const ExperimentConfig& c) { return json(c.network.generic_string()); }});
    f.push_back({"output_dir", [](const json& j, ExperimentConfig& c) { c.output_dir = j.get<std::string>(); },
                 [](const ExperimentConfig& c) { return json(c.output_dir.generic_string()); }});
    f.push_back({"algorithm",
                 [](const json& j, ExperimentConfig& c) { c.train.algorithm = train::parse_algorithm(j.get<std::string>()); },
                 [](const ExperimentConfig& c) { return json(train::to_string(c.train.algorithm)); }});
    f.push_back({"barrier", [](const json& j, ExperimentConfig& c) { c.env.barrier = parse_barrier(j.get<std::string>()); },
                 [](const ExperimentConfig& c) { return json(to_string(c.env.barrier)); }});
    f.push_back(plain<std::vector<std::uint64_t>>("seeds", GF_AT(seeds)));
    f.push_back(plain<std::uint64_t>("scenario_base_seed", GF_AT(scenario_base_seed)));
    f.push_back(plain<double>("alpha", GF_AT(env.alpha)));
    f.push_back(plain<double>("action_bound", GF_AT(env.action_bound)));
    f.push_back(plain<std::size_t>("episodes", GF_AT(train.episodes)));
    f.push_back(plain<double>("policy_lr", GF_AT(train.policy_lr)));
    f.push_back(plain<double>("value_lr", GF_AT(train.value_lr)));
    f.push_back(plain<double>("aux_lr", GF_AT(train.aux_lr)));
    f.push_back(plain<std::size_t>("policy_epochs", GF_AT(train.policy_epochs)));
    f.push_back(plain<std::size_t>("value_epochs", GF_AT(train.value_epochs)));
    f.push_back(plain<std::size_t>("aux_epochs", GF_AT(train.aux_epochs)));
    f.push_back(plain<double>("tau", GF_AT(train.tau)));
    f.push_back(plain<double>("gamma", GF_AT(train.gamma)));
    f.push_back(plain<std::size_t>("buffer_capacity", GF_AT(train.buffer_capacity)));
    f.push_back(plain<std::size_t>("batch_size", GF_AT(train.batch_size)));
    f.push_back(plain<double>("grad_clip", GF_AT(train.grad_clip)));
    f.push_back(plain<double>("sigma_start", GF_AT(train.exploration.sigma_start)));
    f.push_back(plain<double>("sigma_end", GF_AT(train.exploration.sigma_end)));
    f.push_back(plain<double>("sigma_decay_fraction", GF_AT(train.exploration.decay_fraction)));
    f.push_back(plain<double>("target_noise", GF_AT(train.target_noise)));
    f.push_back(plain<double>("target_noise_clip", GF_AT(train.target_noise_clip)));
    f.push_back(plain<std::size_t>("actor_delay", GF_AT(train.actor_delay)));
    f.push_back(plain<std::size_t>("eval_interval", GF_AT(train.eval_interval)));
    f.push_back(plain<std::size_t>("train_days", GF_AT(train.train_days)));
    f.push_back(plain<std::vector<double>>("train_factors", GF_AT(train.train_factors)));
    f.push_back(plain<std::size_t>("d_model", GF_AT(train.d_model)));
    f.push_back(plain<std::size_t>("gru_width", GF_AT(train.gru_width)));
    f.push_back(plain<std::size_t>("mlp_hidden", GF_AT(train.mlp_hidden)));
    f.push_back(plain<bool>("no_aux", GF_AT(train.no_aux)));
    f.push_back(plain<bool>("no_mask", GF_AT(train.no_mask)));
    f.push_back(plain<bool>("no_ea", GF_AT(train.no_ea)));
    f.push_back(plain<bool>("mlp_critic", GF_AT(train.mlp_critic)));
    return f;
  }();
  return table;
}

#undef GF_AT

json policy_meta(const nets::PolicyConfig& p) {
  return {{"kind", p.kind == nets::PolicyKind::Transformer ? "transformer" : "mlp"},
          {"n_agents", p.n_agents},
          {"max_nodes", p.max_nodes},
          {"d_model", p.d_model},
          {"heads", p.heads},
          {"encoder_layers", p.encoder_layers},
          {"gru_width", p.gru_width},
          {"mlp_hidden", p.mlp_hidden},
          {"use_mask", p.use_mask},
          {"use_aggregation", p.use_aggregation}};
}

nets::PolicyConfig policy_from_meta(const json& m) {
  nets::PolicyConfig p;
  const auto kind = m.at("kind").get<std::string>();
  if (kind != "transformer" && kind != "mlp") throw diff::CheckpointError("unknown policy kind '" + kind + "'");
  p.kind = kind == "transformer" ? nets::PolicyKind::Transformer : nets::PolicyKind::Mlp;
  p.n_agents = m.at("n_agents").get<std::size_t>();
  p.max_nodes = m.at("max_nodes").get<std::size_t>();
  p.d_model = m.at("d_model").get<std::size_t>();
  p.heads = m.at("heads").get<std::size_t>();
  p.encoder_layers = m.at("encoder_layers").get<std::size_t>();
  p.gru_width = m.at("gru_width").get<std::size_t>();
  p.mlp_hidden = m.at("mlp_hidden").get<std::size_t>();
  p.use_mask = m.at("use_mask").get<bool>();
  p.use_aggregation = m.at("use_aggregation").get<bool>();
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ValidationError("seeds must not be empty");
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ValidationError("seeds must be distinct");
  env.validate();
  train.validate();
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  ExperimentConfig config;
  for (const auto& [key, value] : doc.items()) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
    try {
      it->read(value, config);
    } catch (const json::exception& e) {
      throw ValidationError("config key '" + key + "' has the wrong type: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_json(const ExperimentConfig& config) {
  json doc = json::object();
  for (const auto& f : fields()) doc[f.key] = f.write(config);
  return doc.dump(2) + "\n";
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Band band(const std::vector<double>& values) {
  return {quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75)};
}

std::vector<SummaryRow> summarize(const std::vector<std::vector<train::LogRow>>& logs) {
  std::vector<SummaryRow> rows;
  if (logs.empty()) return rows;
  for (const auto& log : logs)
    if (log.size() != logs[0].size()) throw std::invalid_argument("summarize: logs differ in length");
  for (std::size_t k = 0; k < logs[0].size(); ++k) {
    std::vector<double> cr, ql, pl;
    for (const auto& log : logs) {
      if (log[k].episode != logs[0][k].episode) throw std::invalid_argument("summarize: logs differ in episodes");
      cr.push_back(log[k].cr);
      ql.push_back(log[k].ql);
      pl.push_back(log[k].pl);
    }
    rows.push_back({logs[0][k].episode, band(cr), band(ql), band(pl)});
  }
  return rows;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, std::ostream& out) {
  out << "episode,cr_median,cr_q25,cr_q75,ql_median,ql_q25,ql_q75,pl_median,pl_q25,pl_q75\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.episode;
    for (const auto* b : {&r.cr, &r.ql, &r.pl}) out << ',' << b->median << ',' << b->q25 << ',' << b->q75;
    out << '\n';
  }
}

void save_policy(const nets::Policy& policy, const std::filesystem::path& path) {
  const json meta = {{"policy", policy_meta(policy.config())}};
  diff::save_parameters(policy.params(), path, meta.dump());
}

std::unique_ptr<nets::Policy> load_policy(const std::filesystem::path& path, const PowerNetwork& network) {
  std::ifstream in(path);
  if (!in) throw diff::CheckpointError("cannot open checkpoint " + path.string());
  nets::PolicyConfig config;
  try {
    const auto doc = json::parse(in);
    config = policy_from_meta(doc.at("meta").at("policy"));
  } catch (const json::exception& e) {
    throw diff::CheckpointError("corrupted checkpoint " + path.string() + ": " + e.what());
  }
  if (config.n_agents != network.n_agents() || config.max_nodes != network.max_zone_size())
    throw diff::CheckpointError("checkpoint " + path.string() + " was trained for " + std::to_string(config.n_agents) +
                                " agents / " + std::to_string(config.max_nodes) + " zone nodes, network has " +
                                std::to_string(network.n_agents()) + " / " + std::to_string(network.max_zone_size()));
  auto policy = nets::make_policy(config, 0);
  diff::load_parameters(policy->params(), path);
  return policy;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GRIDFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(cap, jobs));
}

RunOutputs run_training(const ExperimentConfig& config, std::ostream* progress) {
  config.validate();
  auto network = std::make_shared<const PowerNetwork>(load_network(config.network));
  const auto validation = eval::default_scenarios(config.scenario_base_seed).validation();

  std::filesystem::create_directories(config.output_dir);
  write_text(config.output_dir / "config.json", to_json(config));

  RunOutputs outputs;
  outputs.logs.resize(config.seeds.size());
  std::vector<std::exception_ptr> errors(config.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex print;

  auto worker = [&] {
    for (std::size_t k = next++; k < config.seeds.size(); k = next++) {
      try {
        const auto seed = config.seeds[k];
        train::TrainSetup setup;
        setup.network = network;
        setup.env = config.env;
        setup.validation = validation;
        setup.seed = seed;
        if (progress)
          setup.on_log = [&, seed](const train::LogRow& row) {
            std::lock_guard lock(print);
            *progress << "seed " << seed << " episode " << row.episode << " cr " << row.cr << " ql " << row.ql
                      << std::endl;
          };
        auto result = train::train_loop(config.train, setup);

        const auto dir = config.output_dir / ("seed-" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        std::ostringstream log;
        train::write_log_csv(result.log, log);
        write_text(dir / "log.csv", log.str());
        save_policy(result.learner->policy(), dir / "policy.json");
        for (std::size_t c = 0; c < result.learner->n_critics(); ++c)
          diff::save_parameters(result.learner->critic(c).params(),
                                dir / (c == 0 ? "critic.json" : "critic-" + std::to_string(c) + ".json"));
        outputs.logs[k] = std::move(result.log);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  const auto workers = worker_count(config.seeds.size());
  for (std::size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  outputs.summary = summarize(outputs.logs);
  std::ostringstream summary;
  write_summary_csv(outputs.summary, summary);
  write_text(config.output_dir / "summary.csv", summary.str());
  return outputs;
}

}  // namespace gridflow::experiment
