#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridflow/experiment.hpp"

using namespace gridflow;
using namespace gridflow::experiment;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = GRIDFLOW_DATA_DIR;
const std::string kCli = GRIDFLOW_CLI;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("gridflow-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& args) {
  const auto rc = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

ExperimentConfig small(const fs::path& out) {
  ExperimentConfig c;
  c.network = kDataDir + "/feeder14.json";
  c.output_dir = out;
  c.train.episodes = 1;
  c.train.eval_interval = 1;
  c.train.d_model = 8;
  c.train.gru_width = 8;
  c.train.mlp_hidden = 8;
  c.train.batch_size = 8;
  c.train.value_epochs = 1;
  c.train.aux_epochs = 1;
  c.train.train_days = 1;
  return c;
}

}  // namespace

TEST_CASE("config: empty object gives the defaults") {
  const auto c = parse_config("{}");
  const train::TrainConfig t;
  CHECK(c.train.policy_lr == t.policy_lr);
  CHECK(c.train.aux_lr == 1e-5);
  CHECK(c.train.value_epochs == 10);
  CHECK(c.train.buffer_capacity == 5000);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.tau == 0.1);
  CHECK(c.train.gamma == 0.99);
  CHECK(c.train.episodes == 2000);
  CHECK(c.env.alpha == 0.01);
  CHECK(c.env.action_bound == 0.6);
  CHECK(c.env.barrier == Barrier::L2);
  CHECK(c.train.algorithm == train::Algorithm::TMaddpg);
}

TEST_CASE("config: resolved JSON round-trips") {
  auto c = parse_config(R"({"algorithm": "matd3", "barrier": "bowl", "seeds": [3, 4], "tau": 0.05,
                            "train_factors": [1.0], "no_mask": true, "sigma_end": 0.1})");
  CHECK(c.train.algorithm == train::Algorithm::Matd3);
  CHECK(c.env.barrier == Barrier::Bowl);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  const auto text = to_json(c);
  CHECK(to_json(parse_config(text)) == text);
  CHECK(parse_config(text).train.exploration.sigma_end == 0.1);
}

TEST_CASE("config: errors name the key") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"learning_rate": 0.1})").find("'learning_rate'") != std::string::npos);
  CHECK(message(R"({"tau": "fast"})").find("'tau'") != std::string::npos);
  CHECK(message(R"({"algorithm": "ppo"})").find("'algorithm'") != std::string::npos);
  CHECK_FALSE(message("[1, 2]").empty());
  CHECK_FALSE(message("{").empty());
  auto c = parse_config(R"({"seeds": [1, 1]})");
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = parse_config(R"({"seeds": []})");
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("quantiles: linear interpolation between order statistics") {
  const std::vector<double> cr{90.0, 10.0, 20.0};
  const auto b = band(cr);
  CHECK(b.median == 20.0);
  CHECK(b.q25 == 15.0);
  CHECK(b.q75 == 55.0);
  CHECK(quantile({4.0}, 0.25) == 4.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 1.0) == 4.0);
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("summary over seeds") {
  std::vector<std::vector<train::LogRow>> logs(3);
  const double cr[] = {10.0, 20.0, 90.0};
  for (int s = 0; s < 3; ++s) logs[s] = {{20, cr[s], 0.1 * s, 0.01, 0, 0, 0}};
  const auto rows = summarize(logs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].episode == 20);
  CHECK(rows[0].cr.median == 20.0);
  CHECK(rows[0].cr.q25 == 15.0);
  CHECK(rows[0].cr.q75 == 55.0);
  CHECK(rows[0].ql.median == doctest::Approx(0.1));

  // one seed: every band collapses onto the run
  const auto single = summarize({logs[2]});
  CHECK(single[0].cr.median == 90.0);
  CHECK(single[0].cr.q25 == 90.0);
  CHECK(single[0].cr.q75 == 90.0);

  logs[1][0].episode = 40;
  CHECK_THROWS_AS(summarize(logs), std::invalid_argument);
  logs[1].clear();
  CHECK_THROWS_AS(summarize(logs), std::invalid_argument);
}

TEST_CASE("worker count honours GRIDFLOW_THREADS") {
  ::setenv("GRIDFLOW_THREADS", "2", 1);
  CHECK(worker_count(5) == 2);
  CHECK(worker_count(1) == 1);
  ::setenv("GRIDFLOW_THREADS", "0", 1);
  CHECK(worker_count(3) >= 1);
  ::unsetenv("GRIDFLOW_THREADS");
  CHECK(worker_count(0) == 1);
}

TEST_CASE("run_training: zero episodes still writes every artifact") {
  const auto dir = scratch("m0");
  auto c = small(dir);
  c.train.episodes = 0;
  const auto out = run_training(c);
  CHECK(out.logs.size() == 1);
  CHECK(out.logs[0].empty());
  CHECK(out.summary.empty());
  for (const auto* f : {"config.json", "summary.csv", "seed-1/log.csv", "seed-1/policy.json", "seed-1/critic.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  CHECK(to_json(load_config(dir / "config.json")) == to_json(c));
}

TEST_CASE("run_training: outputs are reproducible and the summary matches a single run") {
  const auto a = scratch("rep-a"), b = scratch("rep-b");
  ::setenv("GRIDFLOW_THREADS", "2", 1);
  auto ca = small(a);
  ca.seeds = {4, 7};
  auto cb = small(b);
  cb.seeds = {4, 7};
  const auto ra = run_training(ca);
  ::setenv("GRIDFLOW_THREADS", "1", 1);
  run_training(cb);
  ::unsetenv("GRIDFLOW_THREADS");
  for (const auto* f : {"summary.csv", "seed-4/log.csv", "seed-4/policy.json", "seed-7/critic.json"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);

  const auto single = scratch("rep-single");
  auto cs = small(single);
  cs.seeds = {7};
  const auto rs = run_training(cs);
  CHECK(slurp(single / "seed-7/log.csv") == slurp(a / "seed-7/log.csv"));
  CHECK(rs.summary[0].cr.median == ra.logs[1][0].cr);
}

TEST_CASE("policy checkpoints") {
  const auto dir = scratch("ckpt");
  const auto net14 = load_network(kDataDir + "/feeder14.json");
  const auto net2 = load_network(kDataDir + "/feeder2.json");
  auto cfg = train::policy_config(small(dir).train, net14);
  cfg.use_mask = false;
  const auto policy = nets::make_policy(cfg, 5);
  save_policy(*policy, dir / "p.json");
  const auto back = load_policy(dir / "p.json", net14);
  CHECK(back->config() == cfg);
  CHECK(back->params().flat_values() == policy->params().flat_values());

  CHECK_THROWS_AS(load_policy(dir / "p.json", net2), diff::CheckpointError);
  CHECK_THROWS_AS(load_policy(dir / "missing.json", net14), diff::CheckpointError);
  std::ofstream(dir / "bad.json") << "{\"meta\": {\"policy\": 1}}";
  CHECK_THROWS_AS(load_policy(dir / "bad.json", net14), diff::CheckpointError);
  auto text = slurp(dir / "p.json");
  std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_policy(dir / "cut.json", net14), diff::CheckpointError);
}

TEST_CASE("cli: powerflow-check") {
  CHECK(run("powerflow-check " + kDataDir + "/feeder2.json") == 0);
  CHECK(run("powerflow-check " + kDataDir + "/feeder14.json --samples 200") == 0);
  const auto dir = scratch("cli-pf");
  std::ofstream(dir / "loop.json") << R"({"base": {"s_base_mva": 1.0, "v_base_kv": 12.66}, "buses": 3,
    "branches": [[0, 1, 0.01, 0.01], [1, 2, 0.01, 0.01], [2, 0, 0.01, 0.01]], "loads": [], "pvs": [[1, 0.2, "pv1"]],
    "zones": [[1, 2]]})";
  CHECK(run("powerflow-check " + (dir / "loop.json").string()) == 2);
}

TEST_CASE("cli: train validation happens before any output") {
  const auto dir = scratch("cli-train");
  std::ofstream(dir / "typo.json") << R"({"episodse": 3})";
  CHECK(run("train --config " + (dir / "typo.json").string() + " --out " + (dir / "a").string()) == 2);
  CHECK(run("train --algorithm ppo --out " + (dir / "b").string()) == 2);
  CHECK(run("train --dry-run --network " + kDataDir + "/feeder14.json --out " + (dir / "c").string()) == 0);
  CHECK_FALSE(fs::exists(dir / "a"));
  CHECK_FALSE(fs::exists(dir / "b"));
  CHECK_FALSE(fs::exists(dir / "c"));
}

TEST_CASE("cli: eval and attention on a fresh checkpoint") {
  const auto dir = scratch("cli-eval");
  const auto net = load_network(kDataDir + "/feeder14.json");
  save_policy(*nets::make_policy(train::policy_config(small(dir).train, net), 2), dir / "p.json");
  const auto network = " --network " + kDataDir + "/feeder14.json";
  CHECK(run("eval --validation-only --checkpoint " + (dir / "p.json").string() + network + " --out " +
            (dir / "e").string()) == 0);
  CHECK(slurp(dir / "e/report.csv").rfind("scenario_id,factor,cr,ql,pl,crashed\n", 0) == 0);
  CHECK(fs::exists(dir / "e/config.json"));
  CHECK(run("eval --validation-only --baseline random" + network + " --out " + (dir / "r").string()) == 0);
  CHECK(fs::exists(dir / "r/report.csv"));

  std::ofstream(dir / "junk.json") << "not json";
  CHECK(run("eval --checkpoint " + (dir / "junk.json").string() + network) == 2);

  CHECK(run("attention --checkpoint " + (dir / "p.json").string() + network + " --step 10 --agent 2 --out " +
            (dir / "att.csv").string()) == 0);
  std::istringstream att(slurp(dir / "att.csv"));
  std::string line;
  std::getline(att, line);
  CHECK(line == "layer,head,query,key,weight");
  std::size_t rows = 0;
  while (std::getline(att, line)) ++rows;
  // agent 2 sits in the 4-node zone: 3 layers x 4 heads x 4 x 4
  CHECK(rows == 3 * 4 * 16);
  CHECK(run("attention --checkpoint " + (dir / "p.json").string() + network + " --step 481") == 2);
}

TEST_CASE("cli: gen-profiles is deterministic") {
  const auto dir = scratch("cli-gp");
  const auto net = kDataDir + "/feeder14.json";
  CHECK(run("gen-profiles --network " + net + " --seed 3 --out " + (dir / "a.json").string()) == 0);
  CHECK(run("gen-profiles --network " + net + " --seed 3 --out " + (dir / "b.json").string()) == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  const auto p = load_profile(dir / "a.json");
  CHECK(p.length() == kStepsPerDay + 1);
}
