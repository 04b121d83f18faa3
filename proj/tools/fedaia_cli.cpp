// fedaia: train federated models with taps, run attacks offline, reproduce the
// desk-scale experiments and run the property suites.

#include <fedaia/errors.hpp>
#include <fedaia/experiments.hpp>
#include <fedaia/io.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace fedaia;
namespace fs = std::filesystem;

// Flags that mirror ExperimentConfig. Only flags the user actually passed
// override the config file.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> scenario, dataset, model, csv, schema, output_dir, weights;
  std::optional<int> clients, rounds, epochs, batch_size, attack_start, passive_messages, gumbel_iterations;
  std::optional<Index> samples, dim, hidden, pool_size;
  std::optional<double> noise, lr, participation, stability_fraction, heterogeneity, train_fraction, dp_clip,
      dp_noise;
  std::optional<long> selection_trials;
  std::vector<std::uint64_t> seeds;
  std::vector<int> targets, active_rounds;
  bool no_grad = false, no_passive = false, no_oracle = false, active_grad = false, no_wall_time = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--scenario", scenario);
    app->add_option("--dataset", dataset, "toy | synthetic | hard-instance | income-like | csv");
    app->add_option("--model", model, "linear | mlp");
    app->add_option("--hidden", hidden);
    app->add_option("--csv", csv);
    app->add_option("--schema", schema);
    app->add_option("--clients", clients);
    app->add_option("--samples", samples, "samples per client");
    app->add_option("--dim", dim);
    app->add_option("--noise", noise, "label noise std");
    app->add_option("--pool-size", pool_size);
    app->add_option("--heterogeneity", heterogeneity);
    app->add_option("--train-fraction", train_fraction);
    app->add_option("--rounds", rounds);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--stability-fraction", stability_fraction, "lr as a fraction of the stability bound");
    app->add_option("--participation", participation);
    app->add_option("--weights", weights, "uniform | size");
    app->add_option("--dp-clip", dp_clip);
    app->add_option("--dp-noise", dp_noise);
    app->add_option("--seeds", seeds);
    app->add_option("--targets", targets);
    app->add_option("--active-rounds", active_rounds);
    app->add_option("--attack-start", attack_start);
    app->add_option("--passive-messages", passive_messages);
    app->add_option("--selection-trials", selection_trials);
    app->add_option("--gumbel-iterations", gumbel_iterations);
    app->add_flag("--no-grad", no_grad);
    app->add_flag("--no-passive", no_passive);
    app->add_flag("--no-oracle", no_oracle);
    app->add_flag("--active-grad", active_grad);
    app->add_flag("--no-wall-time", no_wall_time);
    app->add_option("-o,--out", output_dir, "output directory");
  }

  ExperimentConfig resolve(ExperimentConfig base = {}) const {
    ExperimentConfig c = config_path.empty() ? std::move(base) : load_config(config_path, std::move(base));
    nlohmann::json j;
    if (scenario) j["scenario"] = *scenario;
    auto& d = j["dataset"];
    if (dataset) d["kind"] = *dataset;
    if (clients) d["num_clients"] = *clients;
    if (samples) d["samples_per_client"] = *samples;
    if (dim) d["dim"] = *dim;
    if (noise) d["noise_std"] = *noise;
    if (pool_size) d["pool_size"] = *pool_size;
    if (heterogeneity) d["heterogeneity"] = *heterogeneity;
    if (train_fraction) d["train_fraction"] = *train_fraction;
    if (csv) d["csv"] = *csv;
    if (schema) d["schema"] = *schema;
    if (d.is_null()) j.erase("dataset");
    auto& m = j["model"];
    if (model) m["kind"] = *model;
    if (hidden) m["hidden"] = *hidden;
    if (m.is_null()) j.erase("model");
    auto& f = j["fl"];
    if (rounds) f["rounds"] = *rounds;
    if (epochs) f["local_epochs"] = *epochs;
    if (batch_size) f["batch_size"] = *batch_size;
    if (lr) f["learning_rate"] = *lr;
    if (participation) f["participation"] = *participation;
    if (weights) f["weights"] = *weights;
    if (f.is_null()) j.erase("fl");
    if (stability_fraction) j["stability_fraction"] = *stability_fraction;
    if (lr && !stability_fraction) j["stability_fraction"] = 0.0;
    if (dp_clip || dp_noise) {
      j["defense"] = {{"kind", "dp-sgd"}, {"noise_std", dp_noise.value_or(0.0)}};
      if (dp_clip) j["defense"]["clip_norm"] = *dp_clip;
    }
    auto& a = j["attacks"];
    if (!targets.empty()) a["targets"] = targets;
    if (!active_rounds.empty()) a["active_rounds"] = active_rounds;
    if (attack_start) a["attack_start"] = *attack_start;
    if (passive_messages) a["passive_messages"] = *passive_messages;
    if (selection_trials) a["selection_trials"] = *selection_trials;
    if (gumbel_iterations) a["gumbel"]["iterations"] = *gumbel_iterations;
    if (no_grad) a["grad"] = false;
    if (no_passive) a["ours_passive"] = false;
    if (no_oracle) a["model_oracle"] = false;
    if (active_grad) a["active_grad"] = true;
    if (a.is_null()) j.erase("attacks");
    if (!seeds.empty()) j["seeds"] = seeds;
    if (output_dir) j["output_dir"] = *output_dir;
    if (no_wall_time) j["record_wall_time"] = false;
    return config_from_json(j, std::move(c));
  }
};

fs::path client_file(const fs::path& dir, const char* stem, int client) {
  return dir / (std::string(stem) + "_" + std::to_string(client) + ".jsonl");
}

// Trains one seed and writes what an eavesdropper and the evaluator need.
int cmd_train(const ExperimentConfig& cfg) {
  if (cfg.output_dir.empty()) throw ConfigError("train needs --out");
  cfg.validate();
  const std::uint64_t seed = cfg.seeds.front();
  const PreparedRun run = prepare_run(cfg, seed);
  std::set<int> taps(cfg.attacks.targets.begin(), cfg.attacks.targets.end());
  if (taps.empty()) {
    for (int c = 0; c < static_cast<int>(run.clients.size()); ++c) taps.insert(c);
  }
  const TrainingResult trained = run_training(run.clients, run.initial, run.fl, cfg.defense, taps);

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  for (int c = 0; c < static_cast<int>(run.clients.size()); ++c) {
    write_dataset(client_file(dir, "client", c), run.clients[static_cast<std::size_t>(c)]);
  }
  for (const auto& [c, log] : trained.logs) write_message_log(client_file(dir, "log", c), log);
  nlohmann::json model{{"shape", shape_to_json(trained.global.shape())},
                       {"learning_rate", run.fl.learning_rate},
                       {"seed", seed}};
  model["params"] = nlohmann::json::parse(format_vector(trained.global.values()));
  std::ofstream(dir / "model.json") << model.dump() << '\n';
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
  std::cout << "trained " << run.fl.num_rounds << " rounds (lr " << format_double(run.fl.learning_rate)
            << "), wrote " << trained.logs.size() << " logs to " << dir << '\n';
  return 0;
}

struct AttackArgs {
  std::string dir;
  int client = 0;
  std::string method = "passive";
  int messages = 0;
  long selection_trials = 10000;
  std::uint64_t seed = 0;
  int budget = 2000;
  int iterations = 500;
  std::string out;
};

// Re-runs an attack from persisted files. Streams match run_experiment, so a
// given (seed, client) reproduces the in-memory outcome.
int cmd_attack(const AttackArgs& args) {
  const fs::path dir = args.dir;
  const ClientDataset data = read_dataset(client_file(dir, "client", args.client));
  const MessageLog log = read_message_log(client_file(dir, "log", args.client));
  if (log.empty()) throw ProtocolError("log for client " + std::to_string(args.client) + " is empty");
  const ModelParams& last = log.entries().back().theta_out;

  AttackOutcome outcome;
  if (args.method == "passive") {
    ModelParams estimate = last;
    if (last.shape().is_linear()) {
      const int wanted = args.messages > 0 ? args.messages : static_cast<int>(last.size()) + 1;
      const int count = std::min<int>(wanted, static_cast<int>(log.size()));
      std::vector<int> rounds;
      if (args.selection_trials > 0) {
        Rng rng = derive_stream(args.seed, StreamPurpose::kSelection, static_cast<std::uint64_t>(args.client));
        rounds = select_message_rounds(log, count, args.selection_trials, rng);
      } else {
        rounds = evenly_spaced_rounds(log, count);
      }
      const ReconstructionReport report = passive_reconstruct_linear(log, rounds);
      std::cerr << "condition number " << format_double(report.condition_number) << '\n';
      estimate = report.estimate;
    }
    outcome = model_based_aia(estimate, data);
    outcome.method = kOursPassive;
  } else if (args.method == "oracle") {
    outcome = model_based_aia(oracle_local_model(data, last, args.budget), data);
    outcome.method = kModelOracle;
  } else if (args.method == "grad" || args.method == "grad-oracle") {
    GumbelAiaConfig g;
    g.iterations = args.iterations;
    g.criterion = args.method == "grad" ? SelectionCriterion::kHighestCosSim : SelectionCriterion::kOracleAccuracy;
    Rng rng = derive_stream(args.seed, StreamPurpose::kAttack, static_cast<std::uint64_t>(args.client));
    outcome = gradient_based_aia(log, data, g, rng);
  } else {
    throw ConfigError("unknown attack method '" + args.method + "'");
  }

  const std::string text = to_json(outcome).dump();
  if (args.out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream(args.out) << text << '\n';
    std::cout << outcome.method << " accuracy " << format_double(outcome.accuracy) << '\n';
  }
  return 0;
}

int run_and_report(const std::vector<ExperimentConfig>& configs, const std::string& out_dir) {
  std::vector<ResultRow> all;
  for (ExperimentConfig cfg : configs) {
    if (!out_dir.empty()) cfg.output_dir = (fs::path(out_dir) / cfg.scenario).string();
    std::cerr << "running " << cfg.scenario << " (" << cfg.seeds.size() << " seeds)\n";
    const ExperimentResult r = run_experiment(cfg);
    all.insert(all.end(), r.summary.begin(), r.summary.end());
  }
  std::cout << format_table(all);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "summary.csv");
    emit_report(csv, all);
  }
  return 0;
}

int cmd_verify() {
  const std::vector<SuiteReport> suites{verify_accuracy_bound(0, 200), verify_full_batch_exactness(0, 5),
                                        verify_hard_instance(8)};
  bool ok = true;
  for (const auto& s : suites) {
    std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << '\n';
    for (const auto& d : s.details) std::cout << "  " << d << '\n';
    ok = ok && s.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute inference against federated learning clients"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train with taps and write datasets, message logs and the model");
  train_flags.attach(train);

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "run every planned attack over all seeds and write reports");
  run_flags.attach(run);

  AttackArgs attack_args;
  auto* attack = app.add_subcommand("attack", "attack one client offline from a train directory");
  attack->add_option("dir", attack_args.dir, "directory written by train")->required()->check(CLI::ExistingDirectory);
  attack->add_option("--client", attack_args.client);
  attack->add_option("--method", attack_args.method, "passive | oracle | grad | grad-oracle");
  attack->add_option("--messages", attack_args.messages, "messages for passive reconstruction (default d + 1)");
  attack->add_option("--selection-trials", attack_args.selection_trials, "0 picks evenly spaced rounds");
  attack->add_option("--seed", attack_args.seed);
  attack->add_option("--budget", attack_args.budget, "oracle iterations for Mlp models");
  attack->add_option("--iterations", attack_args.iterations, "Gumbel-softmax iterations");
  attack->add_option("-o,--out", attack_args.out, "outcome JSON path");

  std::string preset;
  std::string reproduce_out;
  std::vector<std::uint64_t> reproduce_seeds;
  auto* reproduce = app.add_subcommand("reproduce", "run a preset scenario");
  reproduce->add_option("preset", preset, "toy-linear | batch-sweep | hetero-sweep")
      ->required()
      ->check(CLI::IsMember({"toy-linear", "batch-sweep", "hetero-sweep"}));
  reproduce->add_option("-o,--out", reproduce_out);
  reproduce->add_option("--seeds", reproduce_seeds);

  std::string suite;
  auto* verify = app.add_subcommand("verify", "run property suites; exit code 0 iff all pass");
  verify->add_option("suite", suite)->required()->check(CLI::IsMember({"props"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_flags.resolve());
    if (*run) {
      const ExperimentConfig cfg = run_flags.resolve();
      const ExperimentResult r = run_experiment(cfg);
      std::cout << format_table(r.summary);
      if (cfg.output_dir.empty()) emit_report(std::cout, r.summary);
      return 0;
    }
    if (*attack) return cmd_attack(attack_args);
    if (*reproduce) {
      std::vector<ExperimentConfig> configs;
      if (preset == "toy-linear") {
        configs = {toy_linear_preset()};
      } else if (preset == "batch-sweep") {
        configs = batch_size_presets();
      } else {
        configs = hetero_sweep_presets();
      }
      if (!reproduce_seeds.empty()) {
        for (auto& c : configs) c.seeds = reproduce_seeds;
      }
      return run_and_report(configs, reproduce_out);
    }
    if (*verify) return cmd_verify();
  } catch (const fedaia::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
