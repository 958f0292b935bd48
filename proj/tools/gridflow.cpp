#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

#include <CLI11.hpp>

#include "gridflow/experiment.hpp"
#include "gridflow/powerflow.hpp"

using namespace gridflow;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string network;

  experiment::ExperimentConfig resolve() const {
    auto c = config_path.empty() ? experiment::ExperimentConfig{} : experiment::load_config(config_path);
    if (!seeds.empty()) c.seeds = seeds;
    if (!out.empty()) c.output_dir = out;
    if (!network.empty()) c.network = network;
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seeds, "Comma-separated seeds")->delimiter(',');
  cmd->add_option("--out", common.out, "Output directory");
  cmd->add_option("--network", common.network, "Network JSON (overrides the config)");
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

const eval::Scenario& find_scenario(const eval::ScenarioSet& set, const std::string& id) {
  for (const auto& s : set.scenarios)
    if (s.id == id) return s;
  throw ValidationError("unknown scenario '" + id + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voltage control with transformer multi-agent actor-critic"};
  app.require_subcommand(1);

  // train
  Common train_opts;
  std::string algorithm;
  bool dry_run = false, no_aux = false, no_mask = false, no_ea = false, mlp_critic = false;
  std::optional<std::size_t> episodes;
  auto* train_cmd = app.add_subcommand("train", "Train one run per seed and summarise across seeds");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--algorithm", algorithm, "maddpg, matd3, t-maddpg or t-matd3");
  train_cmd->add_option("--episodes", episodes, "Training episodes per seed");
  train_cmd->add_flag("--dry-run", dry_run, "Validate config and network, write nothing");
  train_cmd->add_flag("--no-aux", no_aux, "Drop the auxiliary voltage-ratio task");
  train_cmd->add_flag("--no-mask", no_mask, "Encoder attends across the whole zone");
  train_cmd->add_flag("--no-ea", no_ea, "Skip the embedding aggregation layer");
  train_cmd->add_flag("--mlp-critic", mlp_critic, "MLP critic in place of the transformer critic");

  // eval
  Common eval_opts;
  std::string checkpoint, baseline;
  bool validation_only = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy checkpoint or a baseline on the scenario set");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint");
  eval_cmd->add_option("--baseline", baseline, "Baseline controller instead of a checkpoint")
      ->check(CLI::IsMember({"random"}));
  eval_cmd->add_flag("--validation-only", validation_only, "Only the validation scenarios");

  // powerflow-check
  std::string pf_network;
  std::size_t pf_samples = 1000;
  std::uint64_t pf_seed = 1;
  double pf_scale = 0.08;
  auto* pf_cmd = app.add_subcommand("powerflow-check", "Compare the sweep solver against the Newton oracle");
  pf_cmd->add_option("network", pf_network, "Network JSON")->required();
  pf_cmd->add_option("--samples", pf_samples, "Random injections");
  pf_cmd->add_option("--seed", pf_seed, "Injection seed");
  pf_cmd->add_option("--scale", pf_scale, "Injection magnitude, p.u.");

  // attention
  Common att_opts;
  std::string att_checkpoint, att_scenario = "f2-0";
  std::size_t att_step = 240, att_agent = 0;
  auto* att_cmd = app.add_subcommand("attention", "Dump attention weights of one agent at one step");
  add_common(att_cmd, att_opts);
  att_cmd->add_option("--checkpoint", att_checkpoint, "Policy checkpoint")->required();
  att_cmd->add_option("--scenario", att_scenario, "Scenario id from the evaluation set");
  att_cmd->add_option("--step", att_step, "Steps to replay before the dump");
  att_cmd->add_option("--agent", att_agent, "Agent index");

  // gen-profiles
  std::string gp_network = "data/feeder14.json", gp_out;
  std::uint64_t gp_seed = 1;
  std::size_t gp_days = 1;
  double gp_factor = 1.5;
  auto* gp_cmd = app.add_subcommand("gen-profiles", "Write synthetic load and PV profiles");
  gp_cmd->add_option("--network", gp_network, "Network JSON");
  gp_cmd->add_option("--seed", gp_seed, "Profile seed");
  gp_cmd->add_option("--days", gp_days, "Days to generate");
  gp_cmd->add_option("--factor", gp_factor, "Midday PV to load ratio");
  gp_cmd->add_option("--out", gp_out, "Output JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto config = train_opts.resolve();
      if (!algorithm.empty()) config.train.algorithm = train::parse_algorithm(algorithm);
      if (episodes) config.train.episodes = *episodes;
      config.train.no_aux |= no_aux;
      config.train.no_mask |= no_mask;
      config.train.no_ea |= no_ea;
      config.train.mlp_critic |= mlp_critic;
      config.validate();
      const auto network = load_network(config.network);
      if (dry_run) {
        std::cout << "config ok: " << train::to_string(config.train.algorithm) << ", " << network.n_bus() << " buses, "
                  << network.n_agents() << " agents, " << config.seeds.size() << " seed(s)\n";
        return 0;
      }
      const auto outputs = experiment::run_training(config, &std::cerr);
      std::cout << "wrote " << config.output_dir.string() << " (" << outputs.summary.size() << " evaluation points)\n";
      if (!outputs.summary.empty()) {
        const auto& last = outputs.summary.back();
        std::cout << "final validation CR median " << last.cr.median << " [" << last.cr.q25 << ", " << last.cr.q75
                  << "], QL median " << last.ql.median << "\n";
      }
      return 0;
    }

    if (*eval_cmd) {
      const auto config = eval_opts.resolve();
      config.env.validate();
      if (checkpoint.empty() == baseline.empty()) throw ValidationError("give exactly one of --checkpoint or --baseline");
      auto network = std::make_shared<const PowerNetwork>(load_network(config.network));
      auto set = eval::default_scenarios(config.scenario_base_seed);
      if (validation_only) set = set.validation();
      eval::Report report;
      if (!baseline.empty()) {
        report = eval::run_random(network, set, config.env, config.seeds.front());
      } else {
        const auto policy = experiment::load_policy(checkpoint, *network);
        report = eval::run_policy(network, *policy, set, config.env);
      }
      if (eval_opts.out.empty()) {
        eval::write_report_csv(report, std::cout);
      } else {
        std::filesystem::create_directories(config.output_dir);
        auto out = open_output(config.output_dir / "report.csv");
        eval::write_report_csv(report, out);
        std::ofstream(config.output_dir / "config.json") << experiment::to_json(config);
        std::cout << "mean CR " << report.mean.cr << " QL " << report.mean.ql << " PL " << report.mean.pl << "\n";
      }
      return 0;
    }

    if (*pf_cmd) {
      const auto network = load_network(pf_network);
      const auto r = compare_solvers(network, pf_samples, pf_seed, pf_scale);
      std::cout << "samples " << r.samples << "\nfailures " << r.failures << "\nmax_voltage_gap " << r.max_voltage_gap
                << "\nmax_balance_residual " << r.max_balance_residual << "\n";
      const bool ok = r.failures == 0 && r.max_voltage_gap < 1e-8 && r.max_balance_residual <= 1e-6;
      std::cout << (ok ? "ok" : "MISMATCH") << "\n";
      return ok ? 0 : 1;
    }

    if (*att_cmd) {
      const auto config = att_opts.resolve();
      auto network = std::make_shared<const PowerNetwork>(load_network(config.network));
      const auto policy = experiment::load_policy(att_checkpoint, *network);
      if (att_agent >= network->n_agents()) throw ValidationError("agent index out of range");
      const auto set = eval::default_scenarios(config.scenario_base_seed);
      const auto& scenario = find_scenario(set, att_scenario);
      if (att_step > scenario.length)
        throw ValidationError("step " + std::to_string(att_step) + " is beyond the episode length " +
                              std::to_string(scenario.length));

      ProfileOptions options;
      options.pv_to_load = scenario.factor;
      const auto days = (scenario.start + scenario.length) / kStepsPerDay + 1;
      auto profile = std::make_shared<const Profile>(generate_profiles(*network, scenario.profile_seed, days, options));
      auto env_cfg = config.env;
      env_cfg.episode_length = scenario.length;
      VoltageControlEnv env(network, profile, env_cfg);
      auto obs = env.reset(scenario.start);
      std::vector<std::vector<double>> hidden(network->n_agents(),
                                              std::vector<double>(policy->config().gru_width, 0.0));
      for (std::size_t k = 0; k < att_step; ++k) {
        auto decision = nets::act(*policy, obs, hidden);
        auto r = env.step(decision.actions);
        if (r.info.crashed) throw std::runtime_error("episode crashed at step " + std::to_string(k + 1));
        obs = std::move(r.observations);
        hidden = std::move(decision.hidden);
      }
      const auto& o = obs[att_agent];
      const auto dump = nets::dump_attention(*policy, o, hidden[att_agent]);
      if (att_opts.out.empty()) {
        nets::write_attention_csv(dump, std::cout);
      } else {
        auto out = open_output(att_opts.out);
        nets::write_attention_csv(dump, out);
      }
      // weight the own-node query of the aggregation layer puts on PV-hosting nodes
      for (const auto& layer : dump.layers) {
        if (layer.name != "aggregation") continue;
        double pv_mass = 0.0, pv_nodes = 0.0;
        for (std::size_t k = 0; k < dump.nodes; ++k) {
          if (o.features[k][feature::kFlagPv] != 1.0) continue;
          pv_nodes += 1.0;
          for (const auto& head : layer.heads) pv_mass += head[o.own_index * dump.nodes + k];
        }
        pv_mass /= static_cast<double>(layer.heads.size());
        std::cerr << "aggregation weight on PV nodes " << pv_mass << " (uniform "
                  << pv_nodes / static_cast<double>(dump.nodes) << ")\n";
      }
      return 0;
    }

    if (*gp_cmd) {
      const auto network = load_network(gp_network);
      ProfileOptions options;
      options.pv_to_load = gp_factor;
      save_profile(generate_profiles(network, gp_seed, gp_days, options), gp_out);
      return 0;
    }
  } catch (const diff::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
