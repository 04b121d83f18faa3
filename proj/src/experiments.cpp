#include <fedaia/csv.hpp>
#include <fedaia/errors.hpp>
#include <fedaia/experiments.hpp>
#include <fedaia/io.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace fedaia {

namespace {

const std::map<DatasetKind, std::string>& dataset_names() {
  static const std::map<DatasetKind, std::string> names{{DatasetKind::kToy, "toy"},
                                                        {DatasetKind::kSynthetic, "synthetic"},
                                                        {DatasetKind::kHard, "hard-instance"},
                                                        {DatasetKind::kIncomeLike, "income-like"},
                                                        {DatasetKind::kCsv, "csv"}};
  return names;
}

DatasetKind dataset_kind_from(const std::string& name) {
  for (const auto& [kind, n] : dataset_names()) {
    if (n == name) return kind;
  }
  throw ConfigError("unknown dataset kind '" + name + "'");
}

int effective_attack_rounds(int n, int local_epochs) { return (n + local_epochs - 1) / local_epochs; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Correct predictions pooled over clients.
struct Tally {
  double correct = 0.0;
  double total = 0.0;
  double l2_sum = 0.0;
  int l2_count = 0;

  void add(const AttackOutcome& outcome) {
    correct += outcome.accuracy * static_cast<double>(outcome.predictions.size());
    total += static_cast<double>(outcome.predictions.size());
  }
  void add_l2(double d) {
    l2_sum += d;
    ++l2_count;
  }
  double accuracy() const { return total > 0.0 ? correct / total : std::numeric_limits<double>::quiet_NaN(); }
  double l2() const { return l2_count > 0 ? l2_sum / l2_count : std::numeric_limits<double>::quiet_NaN(); }
};

double distance(const ModelParams& a, const ModelParams& b) { return (a.values() - b.values()).norm(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(double v) { return std::isnan(v) ? std::string{} : format_double(v); }

// Routes intercepts to one ActiveReconstruction per target.
class ActiveDispatch : public Adversary {
 public:
  void add(int target, std::set<int> rounds, const AdamConfig& adam) {
    attackers_.emplace(target, ActiveReconstruction(target, std::move(rounds), adam));
  }
  std::optional<ModelParams> intercept(int round, const ModelParams& broadcast, int client) override {
    auto it = attackers_.find(client);
    return it == attackers_.end() ? std::nullopt : it->second.intercept(round, broadcast, client);
  }
  void observe_reply(int round, int client, const ModelParams& reply) override {
    if (auto it = attackers_.find(client); it != attackers_.end()) it->second.observe_reply(round, client, reply);
  }
  const ActiveReconstruction& at(int target) const { return attackers_.at(target); }

 private:
  std::map<int, ActiveReconstruction> attackers_;
};

std::vector<int> resolve_targets(const ExperimentConfig& cfg, const std::vector<ClientDataset>& clients) {
  std::vector<int> targets = cfg.attacks.targets;
  if (targets.empty()) {
    for (int c = 0; c < static_cast<int>(clients.size()); ++c) {
      if (clients[static_cast<std::size_t>(c)].has_sensitive() || cfg.data.kind == DatasetKind::kHard) {
        targets.push_back(c);
      }
    }
    // The hard instance only makes sense for its first client.
    if (cfg.data.kind == DatasetKind::kHard) targets = {0};
  }
  for (int t : targets) {
    if (t < 0 || t >= static_cast<int>(clients.size())) {
      throw ConfigError("target client " + std::to_string(t) + " does not exist");
    }
  }
  return targets;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  FLConfig probe = fl;
  if (stability_fraction > 0.0) probe.learning_rate = 1.0;
  probe.validate();
  validate_defense(defense);
  if (!(stability_fraction >= 0.0) || !std::isfinite(stability_fraction)) {
    throw ConfigError("stability_fraction must be finite and non-negative");
  }
  if (stability_fraction > 0.0 && model != ModelKind::kLinear) {
    throw ConfigError("stability_fraction applies to linear models only");
  }
  if (model == ModelKind::kMlp && hidden < 1) throw ConfigError("hidden width must be positive");
  if (data.num_clients < 1) throw ConfigError("num_clients must be positive");
  if (data.kind == DatasetKind::kHard && model != ModelKind::kLinear) {
    throw ConfigError("the hard instance is a linear construction");
  }
  if (data.kind == DatasetKind::kCsv && (data.csv_path.empty() || data.schema_path.empty())) {
    throw ConfigError("csv datasets need both a csv path and a schema path");
  }
  if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1]");
  }
  if (attacks.attack_start > fl.num_rounds) throw ConfigError("attack start round exceeds the number of rounds");
  if (attacks.attack_start == 0) throw ConfigError("active attacks need at least one genuine round first");
  for (int n : attacks.active_rounds) {
    if (n < 1) throw ConfigError("active round counts must be positive");
  }
  if (attacks.passive_messages < 0) throw ConfigError("passive_messages must be non-negative");
  if (attacks.selection_trials < 0) throw ConfigError("selection_trials must be non-negative");
  if (attacks.adam_lrs.empty() || attacks.adam_beta1s.empty() || attacks.adam_beta2s.empty()) {
    throw ConfigError("the Adam grid must be non-empty");
  }
  if (attacks.oracle_budget < 1) throw ConfigError("oracle_budget must be positive");
  attacks.gumbel.validate();
}

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base) {
  ExperimentConfig c = std::move(base);
  try {
    c.scenario = j.value("scenario", c.scenario);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("kind")) c.data.kind = dataset_kind_from(d.at("kind").get<std::string>());
      c.data.num_clients = d.value("num_clients", c.data.num_clients);
      c.data.samples_per_client = d.value("samples_per_client", c.data.samples_per_client);
      c.data.dim = d.value("dim", c.data.dim);
      c.data.noise_std = d.value("noise_std", c.data.noise_std);
      c.data.public_scale = d.value("public_scale", c.data.public_scale);
      c.data.sensitive_coef = d.value("sensitive_coef", c.data.sensitive_coef);
      c.data.pool_size = d.value("pool_size", c.data.pool_size);
      c.data.heterogeneity = d.value("heterogeneity", c.data.heterogeneity);
      c.data.csv_path = d.value("csv", c.data.csv_path);
      c.data.schema_path = d.value("schema", c.data.schema_path);
      c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.contains("kind")) {
        const auto kind = m.at("kind").get<std::string>();
        if (kind == "linear") {
          c.model = ModelKind::kLinear;
        } else if (kind == "mlp") {
          c.model = ModelKind::kMlp;
        } else {
          throw ConfigError("unknown model kind '" + kind + "'");
        }
      }
      c.hidden = m.value("hidden", c.hidden);
    }
    if (j.contains("fl")) {
      const auto& f = j.at("fl");
      c.fl.num_rounds = f.value("rounds", c.fl.num_rounds);
      c.fl.local_epochs = f.value("local_epochs", c.fl.local_epochs);
      c.fl.batch_size = f.value("batch_size", c.fl.batch_size);
      c.fl.learning_rate = f.value("learning_rate", c.fl.learning_rate);
      c.fl.participation = f.value("participation", c.fl.participation);
      if (f.contains("weights")) {
        const auto w = f.at("weights").get<std::string>();
        if (w == "uniform") {
          c.fl.weights = WeightScheme::kUniform;
        } else if (w == "size") {
          c.fl.weights = WeightScheme::kSizeProportional;
        } else {
          throw ConfigError("unknown weight scheme '" + w + "'");
        }
      }
    }
    c.stability_fraction = j.value("stability_fraction", c.stability_fraction);
    if (j.contains("defense")) {
      const auto& d = j.at("defense");
      const auto kind = d.value("kind", std::string("none"));
      if (kind == "none") {
        c.defense = NoDefense{};
      } else if (kind == "dp-sgd") {
        DpSgd dp;
        if (d.contains("clip_norm") && !d.at("clip_norm").is_null()) dp.clip_norm = d.at("clip_norm").get<double>();
        dp.noise_std = d.value("noise_std", 0.0);
        c.defense = dp;
      } else {
        throw ConfigError("unknown defense '" + kind + "'");
      }
    }
    if (j.contains("attacks")) {
      const auto& a = j.at("attacks");
      auto& p = c.attacks;
      p.targets = a.value("targets", p.targets);
      p.grad = a.value("grad", p.grad);
      p.ours_passive = a.value("ours_passive", p.ours_passive);
      p.model_oracle = a.value("model_oracle", p.model_oracle);
      p.active_rounds = a.value("active_rounds", p.active_rounds);
      p.active_grad = a.value("active_grad", p.active_grad);
      p.attack_start = a.value("attack_start", p.attack_start);
      p.passive_messages = a.value("passive_messages", p.passive_messages);
      p.selection_trials = a.value("selection_trials", p.selection_trials);
      p.adam_lrs = a.value("adam_lrs", p.adam_lrs);
      p.adam_beta1s = a.value("adam_beta1s", p.adam_beta1s);
      p.adam_beta2s = a.value("adam_beta2s", p.adam_beta2s);
      p.oracle_budget = a.value("oracle_budget", p.oracle_budget);
      if (a.contains("gumbel")) {
        const auto& g = a.at("gumbel");
        p.gumbel.temperature = g.value("temperature", p.gumbel.temperature);
        p.gumbel.learning_rates = g.value("learning_rates", p.gumbel.learning_rates);
        p.gumbel.iterations = g.value("iterations", p.gumbel.iterations);
        p.gumbel.fractions = g.value("fractions", p.gumbel.fractions);
        p.gumbel.fd_step = g.value("fd_step", p.gumbel.fd_step);
      }
    }
    c.seeds = j.value("seeds", c.seeds);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario;
  j["dataset"] = {{"kind", dataset_names().at(c.data.kind)},
                  {"num_clients", c.data.num_clients},
                  {"samples_per_client", c.data.samples_per_client},
                  {"dim", c.data.dim},
                  {"noise_std", c.data.noise_std},
                  {"public_scale", c.data.public_scale},
                  {"sensitive_coef", c.data.sensitive_coef},
                  {"pool_size", c.data.pool_size},
                  {"heterogeneity", c.data.heterogeneity},
                  {"csv", c.data.csv_path},
                  {"schema", c.data.schema_path},
                  {"train_fraction", c.data.train_fraction}};
  j["model"] = {{"kind", c.model == ModelKind::kLinear ? "linear" : "mlp"}, {"hidden", c.hidden}};
  j["fl"] = {{"rounds", c.fl.num_rounds},
             {"local_epochs", c.fl.local_epochs},
             {"batch_size", c.fl.batch_size},
             {"learning_rate", c.fl.learning_rate},
             {"participation", c.fl.participation},
             {"weights", c.fl.weights == WeightScheme::kUniform ? "uniform" : "size"}};
  j["stability_fraction"] = c.stability_fraction;
  if (const auto* dp = std::get_if<DpSgd>(&c.defense)) {
    j["defense"] = {{"kind", "dp-sgd"}, {"noise_std", dp->noise_std}};
    // JSON has no infinity; null stands for "no clipping".
    j["defense"]["clip_norm"] = std::isinf(dp->clip_norm) ? nlohmann::json(nullptr) : nlohmann::json(dp->clip_norm);
  } else {
    j["defense"] = {{"kind", "none"}};
  }
  const auto& p = c.attacks;
  j["attacks"] = {{"targets", p.targets},
                  {"grad", p.grad},
                  {"ours_passive", p.ours_passive},
                  {"model_oracle", p.model_oracle},
                  {"active_rounds", p.active_rounds},
                  {"active_grad", p.active_grad},
                  {"attack_start", p.attack_start},
                  {"passive_messages", p.passive_messages},
                  {"selection_trials", p.selection_trials},
                  {"adam_lrs", p.adam_lrs},
                  {"adam_beta1s", p.adam_beta1s},
                  {"adam_beta2s", p.adam_beta2s},
                  {"oracle_budget", p.oracle_budget},
                  {"gumbel",
                   {{"temperature", p.gumbel.temperature},
                    {"learning_rates", p.gumbel.learning_rates},
                    {"iterations", p.gumbel.iterations},
                    {"fractions", p.gumbel.fractions},
                    {"fd_step", p.gumbel.fd_step}}}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["record_wall_time"] = c.record_wall_time;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng data_rng = derive_stream(seed, StreamPurpose::kData);
  const DatasetSpec& d = cfg.data;
  PreparedRun run;
  switch (d.kind) {
    case DatasetKind::kToy:
      run.clients = generate_toy(d.num_clients, d.samples_per_client, d.dim, d.noise_std, data_rng).clients;
      break;
    case DatasetKind::kSynthetic: {
      SyntheticRegression recipe;
      recipe.num_clients = d.num_clients;
      recipe.samples_per_client = d.samples_per_client;
      recipe.dim = d.dim;
      recipe.public_scale = d.public_scale;
      recipe.sensitive_coef = d.sensitive_coef;
      recipe.noise_std = d.noise_std;
      run.clients = generate_synthetic_regression(recipe, data_rng).clients;
      break;
    }
    case DatasetKind::kHard:
      run.clients = generate_hard_instance(d.dim, d.num_clients - 1);
      break;
    case DatasetKind::kIncomeLike:
    case DatasetKind::kCsv: {
      ClientDataset pool;
      if (d.kind == DatasetKind::kIncomeLike) {
        pool = generate_income_like(d.pool_size, data_rng);
      } else {
        pool = ingest_csv(d.csv_path, load_schema(d.schema_path), data_rng).data;
      }
      SplitConfig split;
      split.heterogeneity = d.heterogeneity;
      split.num_clients = d.num_clients;
      split.train_fraction = d.train_fraction;
      run.clients = split_heterogeneous(pool, split, data_rng);
      break;
    }
  }
  if (d.train_fraction < 1.0) {
    for (auto& c : run.clients) c = train_validation_split(c, d.train_fraction, data_rng).train;
  }

  const Index width = run.clients.front().width();
  if (cfg.model == ModelKind::kLinear) {
    run.initial = ModelParams::zeros(ModelShape::linear(width));
  } else {
    Rng init_rng = derive_stream(seed, StreamPurpose::kModelInit);
    run.initial = init_mlp(MlpShape{width, cfg.hidden}, init_rng);
  }

  run.fl = cfg.fl;
  run.fl.seed = seed;
  if (cfg.stability_fraction > 0.0) {
    double bound = std::numeric_limits<double>::infinity();
    for (const auto& c : run.clients) bound = std::min(bound, linear_stability_bound(c));
    run.fl.learning_rate = cfg.stability_fraction * bound;
  }
  return run;
}

ActiveAttackResult tuned_active_attack(const PreparedRun& run, const DefenseConfig& defense,
                                       const std::vector<int>& targets, int attack_start, int attack_rounds,
                                       const AttackPlan& plan) {
  if (targets.empty()) throw ArgumentError("active attack needs at least one target");
  if (attack_start < 1 || attack_rounds < 1) throw ArgumentError("active attack needs a start >= 1 and rounds >= 1");
  std::set<int> schedule;
  for (int r = attack_start; r < attack_start + attack_rounds; ++r) schedule.insert(r);
  FLConfig fl = run.fl;
  fl.num_rounds = attack_start + attack_rounds;
  const std::set<int> taps(targets.begin(), targets.end());

  struct Best {
    double loss = std::numeric_limits<double>::infinity();
    ModelParams estimate;
    AdamConfig adam;
    MessageLog log;
  };
  std::map<int, Best> best;
  for (double lr : plan.adam_lrs) {
    for (double b1 : plan.adam_beta1s) {
      for (double b2 : plan.adam_beta2s) {
        const AdamConfig adam{lr, b1, b2, 1e-8};
        ActiveDispatch dispatch;
        for (int t : targets) dispatch.add(t, schedule, adam);
        TrainingResult trained = run_training(run.clients, run.initial, fl, defense, taps, &dispatch);
        for (int t : targets) {
          const ActiveReconstruction& attacker = dispatch.at(t);
          if (attacker.completed_rounds() == 0) continue;
          const ClientDataset& data = run.clients[static_cast<std::size_t>(t)];
          const double loss = mean_loss(attacker.estimate(), data.x, data.y);
          Best& b = best[t];
          // Diverged estimates can overflow to inf/nan; they never win.
          if (std::isfinite(loss) && loss < b.loss) {
            b.loss = loss;
            b.estimate = attacker.estimate();
            b.adam = adam;
            b.log = std::move(trained.logs.at(t));
          }
        }
      }
    }
  }

  ActiveAttackResult out;
  for (int t : targets) {
    auto it = best.find(t);
    if (it == best.end() || !std::isfinite(it->second.loss)) {
      throw ProtocolError("active attack on client " + std::to_string(t) +
                          " produced no usable estimate (client never sampled in attack rounds?)");
    }
    out.estimates.emplace(t, std::move(it->second.estimate));
    out.chosen.emplace(t, it->second.adam);
    out.logs.emplace(t, std::move(it->second.log));
  }
  return out;
}

namespace {

std::vector<RawResult> run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  const PreparedRun run = prepare_run(cfg, seed);
  const std::vector<int> targets = resolve_targets(cfg, run.clients);
  const std::set<int> taps(targets.begin(), targets.end());
  const AttackPlan& plan = cfg.attacks;
  const bool has_attribute =
      std::all_of(targets.begin(), targets.end(),
                  [&](int t) { return run.clients[static_cast<std::size_t>(t)].has_sensitive(); });

  auto train_start = Clock::now();
  const TrainingResult trained = run_training(run.clients, run.initial, run.fl, cfg.defense, taps);
  const double train_seconds = seconds_since(train_start);

  std::map<int, ModelParams> oracles;
  for (int t : targets) {
    oracles.emplace(t, oracle_local_model(run.clients[static_cast<std::size_t>(t)], trained.global, plan.oracle_budget));
  }

  std::vector<RawResult> rows;
  auto emit = [&](const std::string& method, const std::string& adversary, int active, const Tally& tally,
                  double seconds) {
    RawResult r;
    r.scenario = cfg.scenario;
    r.method = method;
    r.adversary = adversary;
    r.active_rounds = active;
    r.seed = seed;
    r.accuracy = tally.accuracy();
    r.recon_l2 = tally.l2();
    r.seconds = cfg.record_wall_time ? seconds : 0.0;
    rows.push_back(r);
  };
  auto model_attack = [&](Tally& tally, int t, const ModelParams& estimate) {
    const ClientDataset& data = run.clients[static_cast<std::size_t>(t)];
    if (has_attribute) tally.add(model_based_aia(estimate, data));
    tally.add_l2(distance(estimate, oracles.at(t)));
  };

  if (plan.grad && has_attribute) {
    for (const auto criterion : {SelectionCriterion::kHighestCosSim, SelectionCriterion::kOracleAccuracy}) {
      auto start = Clock::now();
      GumbelAiaConfig g = plan.gumbel;
      g.criterion = criterion;
      Tally tally;
      for (int t : targets) {
        // Same stream for both criteria: they pick among identical runs.
        Rng rng = derive_stream(seed, StreamPurpose::kAttack, static_cast<std::uint64_t>(t));
        tally.add(gradient_based_aia(trained.logs.at(t), run.clients[static_cast<std::size_t>(t)], g, rng));
      }
      emit(criterion == SelectionCriterion::kHighestCosSim ? kGrad : kGradOracle, "passive", 0, tally,
           train_seconds + seconds_since(start));
    }
  }

  if (plan.ours_passive) {
    auto start = Clock::now();
    Tally tally;
    for (int t : targets) {
      const MessageLog& log = trained.logs.at(t);
      if (log.empty()) throw ProtocolError("client " + std::to_string(t) + " never took part in training");
      if (run.initial.shape().is_linear()) {
        const int wanted = plan.passive_messages > 0 ? plan.passive_messages
                                                      : static_cast<int>(run.initial.size()) + 1;
        const int count = std::min<int>(wanted, static_cast<int>(log.size()));
        std::vector<int> rounds;
        if (plan.selection_trials > 0) {
          Rng rng = derive_stream(seed, StreamPurpose::kSelection, static_cast<std::uint64_t>(t));
          rounds = select_message_rounds(log, count, plan.selection_trials, rng);
        } else {
          rounds = evenly_spaced_rounds(log, count);
        }
        model_attack(tally, t, passive_reconstruct_linear(log, rounds).estimate);
      } else {
        // Non-linear models: the last local model the client returned.
        model_attack(tally, t, log.entries().back().theta_out);
      }
    }
    emit(kOursPassive, "passive", 0, tally, train_seconds + seconds_since(start));
  }

  if (plan.model_oracle) {
    auto start = Clock::now();
    Tally tally;
    for (int t : targets) model_attack(tally, t, oracles.at(t));
    emit(kModelOracle, "passive", 0, tally, seconds_since(start));
  }

  const int attack_start = plan.attack_start < 0 ? run.fl.num_rounds : plan.attack_start;
  for (int n : plan.active_rounds) {
    const int rounds = effective_attack_rounds(n, run.fl.local_epochs);
    auto start = Clock::now();
    const ActiveAttackResult active = tuned_active_attack(run, cfg.defense, targets, attack_start, rounds, plan);
    Tally tally;
    for (int t : targets) model_attack(tally, t, active.estimates.at(t));
    const double active_seconds = seconds_since(start);
    emit(kOursActive, "active", n, tally, active_seconds);

    if (plan.active_grad && has_attribute) {
      auto grad_start = Clock::now();
      GumbelAiaConfig g = plan.gumbel;
      Tally grad_tally;
      for (int t : targets) {
        Rng rng = derive_stream(seed, StreamPurpose::kAttack, static_cast<std::uint64_t>(t));
        grad_tally.add(gradient_based_aia(active.logs.at(t), run.clients[static_cast<std::size_t>(t)], g, rng));
      }
      emit(kGrad, "active", n, grad_tally, active_seconds + seconds_since(grad_start));
    }
  }
  return rows;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  for (std::uint64_t seed : cfg.seeds) {
    try {
      auto rows = run_seed(cfg, seed);
      result.raw.insert(result.raw.end(), rows.begin(), rows.end());
    } catch (const Error& e) {
      throw ProtocolError("scenario '" + cfg.scenario + "', seed " + std::to_string(seed) + ": " + e.what());
    }
  }
  result.summary = summarize(result.raw);
  if (!cfg.output_dir.empty()) write_outputs(cfg.output_dir, cfg, result);
  return result;
}

std::vector<ResultRow> summarize(const std::vector<RawResult>& raw) {
  std::vector<ResultRow> rows;
  std::vector<std::vector<const RawResult*>> groups;
  for (const auto& r : raw) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const ResultRow& row) {
      return row.scenario == r.scenario && row.method == r.method && row.adversary == r.adversary &&
             row.active_rounds == r.active_rounds;
    });
    if (it == rows.end()) {
      ResultRow row;
      row.scenario = r.scenario;
      row.method = r.method;
      row.adversary = r.adversary;
      row.active_rounds = r.active_rounds;
      rows.push_back(row);
      groups.emplace_back();
      it = rows.end() - 1;
    }
    groups[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& g = groups[i];
    const double n = static_cast<double>(g.size());
    double acc = 0.0;
    double l2 = 0.0;
    double secs = 0.0;
    for (const auto* r : g) {
      acc += r->accuracy;
      l2 += r->recon_l2;
      secs += r->seconds;
    }
    const double mean = acc / n;
    double var = 0.0;
    for (const auto* r : g) var += (r->accuracy - mean) * (r->accuracy - mean);
    rows[i].accuracy_mean = mean;
    rows[i].accuracy_std = std::sqrt(var / n);
    rows[i].recon_l2 = l2 / n;
    rows[i].seconds = secs / n;
  }
  return rows;
}

void emit_report(std::ostream& csv, const std::vector<ResultRow>& rows) {
  csv << "scenario,method,adversary,active_rounds,accuracy_mean,accuracy_std,recon_l2,seconds\n";
  for (const auto& r : rows) {
    csv << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << csv_field(r.adversary) << ','
        << r.active_rounds << ',' << csv_number(r.accuracy_mean) << ',' << csv_number(r.accuracy_std) << ','
        << csv_number(r.recon_l2) << ',' << csv_number(r.seconds) << '\n';
  }
  if (!csv) throw IoError("failed to write report");
}

void write_raw_csv(std::ostream& csv, const std::vector<RawResult>& raw) {
  csv << "scenario,method,adversary,active_rounds,seed,accuracy,recon_l2,seconds\n";
  for (const auto& r : raw) {
    csv << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << csv_field(r.adversary) << ','
        << r.active_rounds << ',' << r.seed << ',' << csv_number(r.accuracy) << ',' << csv_number(r.recon_l2)
        << ',' << csv_number(r.seconds) << '\n';
  }
  if (!csv) throw IoError("failed to write raw results");
}

std::string format_table(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "scenario" << std::setw(14) << "method" << std::setw(9) << "adv"
      << std::right << std::setw(7) << "rounds" << std::setw(20) << "accuracy" << std::setw(12) << "recon_l2"
      << std::setw(10) << "seconds" << '\n';
  for (const auto& r : rows) {
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << 100.0 * r.accuracy_mean << " +- " << 100.0 * r.accuracy_std;
    std::ostringstream l2;
    if (std::isnan(r.recon_l2)) {
      l2 << "-";
    } else {
      l2 << std::scientific << std::setprecision(2) << r.recon_l2;
    }
    out << std::left << std::setw(18) << r.scenario << std::setw(14) << r.method << std::setw(9) << r.adversary
        << std::right << std::setw(7) << (r.active_rounds > 0 ? std::to_string(r.active_rounds) : "-")
        << std::setw(20) << acc.str() << std::setw(12) << l2.str() << std::setw(10) << std::fixed
        << std::setprecision(2) << r.seconds << '\n';
  }
  return out.str();
}

void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "summary.csv");
    if (!out) throw IoError("cannot write " + (dir / "summary.csv").string());
    emit_report(out, result.summary);
  }
  {
    std::ofstream out(dir / "raw.csv");
    if (!out) throw IoError("cannot write " + (dir / "raw.csv").string());
    write_raw_csv(out, result.raw);
  }
  {
    std::ofstream out(dir / "config.json");
    if (!out) throw IoError("cannot write " + (dir / "config.json").string());
    out << to_json(cfg).dump(2) << '\n';
  }
}

std::vector<GridPoint> cartesian_grid(const std::map<std::string, std::vector<double>>& axes) {
  std::vector<GridPoint> grid{GridPoint{}};
  for (const auto& [name, values] : axes) {
    if (values.empty()) throw ArgumentError("grid axis '" + name + "' is empty");
    std::vector<GridPoint> next;
    for (const auto& point : grid) {
      for (double v : values) {
        GridPoint p = point;
        p[name] = v;
        next.push_back(std::move(p));
      }
    }
    grid = std::move(next);
  }
  return grid;
}

SweepResult sweep(const std::vector<GridPoint>& grid, const std::function<double(const GridPoint&)>& score,
                  SweepGoal goal) {
  if (grid.empty()) throw ArgumentError("sweep over an empty grid");
  SweepResult r;
  r.points = grid;
  bool found = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = score(grid[i]);
    r.scores.push_back(s);
    if (std::isnan(s)) continue;
    const bool better = !found || (goal == SweepGoal::kMinimize ? s < r.scores[r.best] : s > r.scores[r.best]);
    if (better) {
      r.best = i;
      found = true;
    }
  }
  if (!found) throw NumericError("every grid point scored NaN");
  return r;
}

SuiteReport verify_accuracy_bound(std::uint64_t seed, int instances) {
  SuiteReport report{"accuracy-bound", true, {}};
  Rng rng = derive_stream(seed, StreamPurpose::kData, 101);
  std::uniform_real_distribution<double> log_noise(-2.0, 1.0);
  std::uniform_real_distribution<double> log_coef(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  int violations = 0;
  int degenerate = 0;
  for (int i = 0; i < instances; ++i) {
    ToyData toy = generate_toy(1, 256, 6, std::pow(10.0, log_noise(rng)), rng);
    ClientDataset& data = toy.clients.front();
    // Rescale the sensitive effect and refit so residual and theta_s both vary.
    const double coef = std::pow(10.0, log_coef(rng)) * (normal(rng) < 0 ? -1.0 : 1.0);
    data.y += (coef - toy.theta_star(data.sensitive_col)) * data.x.col(data.sensitive_col);
    Vector theta = solve_least_squares(data.x, data.y).values();
    theta += 0.1 * std::pow(10.0, log_noise(rng)) * Vector::NullaryExpr(theta.size(), [&] { return normal(rng); });
    const ModelParams params(ModelShape::linear(theta.size()), theta);
    const AccuracyBound bound = residual_accuracy_bound(params, data);
    if (bound.degenerate) {
      ++degenerate;
      continue;
    }
    const double acc = model_based_aia_linear_closed_form(params, data).accuracy;
    if (acc < bound.value) {
      ++violations;
      report.details.push_back("instance " + std::to_string(i) + ": accuracy " + format_double(acc) + " < bound " +
                               format_double(bound.value));
    }
  }
  report.passed = violations == 0;
  report.details.push_back(std::to_string(instances) + " instances, " + std::to_string(violations) +
                           " violations, " + std::to_string(degenerate) + " degenerate");
  return report;
}

SuiteReport verify_full_batch_exactness(std::uint64_t seed, int seeds) {
  SuiteReport report{"full-batch-exactness", true, {}};
  ExperimentConfig cfg = toy_linear_preset();
  cfg.fl.batch_size = static_cast<int>(cfg.data.samples_per_client);
  for (int k = 0; k < seeds; ++k) {
    const PreparedRun run = prepare_run(cfg, seed + static_cast<std::uint64_t>(k));
    const TrainingResult trained = run_training(run.clients, run.initial, run.fl, NoDefense{}, {0});
    const MessageLog& log = trained.logs.at(0);
    Rng rng = derive_stream(run.fl.seed, StreamPurpose::kSelection, 0);
    const auto rounds = select_message_rounds(log, static_cast<int>(run.initial.size()) + 1,
                                              cfg.attacks.selection_trials, rng);
    const ReconstructionReport r = passive_reconstruct_linear(log, rounds);
    const Vector optimum = solve_least_squares(run.clients[0].x, run.clients[0].y).values();
    const double rel = (r.estimate.values() - optimum).norm() / (1.0 + optimum.norm());
    const bool ok = rel <= 1e-6;
    report.passed = report.passed && ok;
    report.details.push_back("seed " + std::to_string(run.fl.seed) + ": relative error " + format_double(rel) +
                             ", cond " + format_double(r.condition_number) + (ok ? "" : "  FAIL"));
  }
  return report;
}

SuiteReport verify_hard_instance(Index dim) {
  SuiteReport report{"hard-instance-stall", true, {}};
  const auto clients = generate_hard_instance(dim, 1);
  FLConfig fl;
  fl.num_rounds = static_cast<int>(dim);
  fl.local_epochs = 1;
  fl.batch_size = static_cast<int>(clients[0].size());
  fl.learning_rate = 0.5 * linear_stability_bound(clients[0]);
  const TrainingResult trained =
      run_training(clients, ModelParams::zeros(ModelShape::linear(dim)), fl, NoDefense{}, {0});
  const MessageLog& log = trained.logs.at(0);
  for (int t = 0; t + 1 < static_cast<int>(dim); ++t) {
    const Vector& out = log.at_round(t).theta_out.values();
    // After round t (0-based), only the first t + 1 coordinates may move.
    const bool zeros = (out.tail(dim - t - 1).array() == 0.0).all();
    if (!zeros) {
      report.passed = false;
      report.details.push_back("round " + std::to_string(t) + ": trailing coordinates are not exactly zero");
    }
  }
  const Vector optimum = solve_least_squares(clients[0].x, clients[0].y).values();
  const double gap = (optimum - hard_instance_optimum(dim)).cwiseAbs().maxCoeff();
  if (gap > 1e-10) report.passed = false;
  report.details.push_back("closed-form optimum gap " + format_double(gap));
  return report;
}

ExperimentConfig toy_linear_preset() {
  ExperimentConfig cfg;
  cfg.scenario = "toy-linear";
  cfg.data.kind = DatasetKind::kToy;
  cfg.data.num_clients = 2;
  cfg.data.samples_per_client = 1024;
  cfg.data.dim = 11;
  cfg.data.noise_std = 0.1;
  cfg.fl.num_rounds = 300;
  cfg.fl.local_epochs = 1;
  cfg.fl.batch_size = 64;
  cfg.fl.participation = 0.5;
  cfg.stability_fraction = 1.0;
  cfg.seeds = {0, 1, 2, 3, 4};
  return cfg;
}

std::vector<ExperimentConfig> batch_size_presets() {
  std::vector<ExperimentConfig> out;
  for (int b : {64, 256, 1024}) {
    ExperimentConfig cfg = toy_linear_preset();
    cfg.scenario = "batch-B" + std::to_string(b);
    cfg.fl.batch_size = b;
    cfg.attacks.grad = false;
    cfg.attacks.active_rounds.clear();
    out.push_back(cfg);
  }
  return out;
}

std::vector<ExperimentConfig> hetero_sweep_presets() {
  std::vector<ExperimentConfig> out;
  for (double h : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
    ExperimentConfig cfg;
    std::ostringstream name;
    name << "hetero-h" << h;
    cfg.scenario = name.str();
    cfg.data.kind = DatasetKind::kIncomeLike;
    cfg.data.num_clients = 10;
    cfg.data.pool_size = 4000;
    cfg.data.heterogeneity = h;
    cfg.data.train_fraction = 0.9;
    cfg.fl.num_rounds = 100;
    cfg.fl.local_epochs = 1;
    cfg.fl.batch_size = 32;
    cfg.stability_fraction = 0.5;
    cfg.attacks.active_rounds = {10};
    cfg.attacks.gumbel.iterations = 200;
    cfg.attacks.gumbel.learning_rates = {1e2, 1e4};
    out.push_back(cfg);
  }
  return out;
}

}  // namespace fedaia
