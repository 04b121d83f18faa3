#pragma once

#include <fedaia/aia.hpp>
#include <fedaia/data.hpp>
#include <fedaia/reconstruction.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace fedaia {

// kHard: the stalling construction (no sensitive attribute, reconstruction only).
enum class DatasetKind { kToy, kSynthetic, kHard, kIncomeLike, kCsv };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kToy;
  int num_clients = 2;
  Index samples_per_client = 1024;
  Index dim = 11;
  double noise_std = 0.1;
  // kSynthetic
  double public_scale = 5.0;
  double sensitive_coef = 1.0;
  // kIncomeLike and kCsv: pooled data split across clients
  Index pool_size = 16000;
  double heterogeneity = 0.4;
  std::string csv_path;
  std::string schema_path;
  // Fraction of each client's rows kept for training.
  double train_fraction = 1.0;
};

enum class ModelKind { kLinear, kMlp };

struct AttackPlan {
  // Targeted clients; empty means all.
  std::vector<int> targets;
  bool grad = true;
  bool ours_passive = true;
  bool model_oracle = true;
  // Attack lengths n; the schedule uses ceil(n / E) rounds.
  std::vector<int> active_rounds{10, 50};
  // Gradient-based attack on logs that include echoed active rounds.
  bool active_grad = false;
  // Round at which active attacks start; negative means after training (T).
  int attack_start = -1;
  // Linear passive reconstruction: d + 1 messages when 0.
  int passive_messages = 0;
  // Condition-number subset search; 0 uses evenly spaced rounds.
  long selection_trials = 10000;
  std::vector<double> adam_lrs{1e-3, 3e-3, 1e-2, 3e-2, 0.1, 1.0, 10.0, 50.0};
  std::vector<double> adam_beta1s{0.9, 0.99};
  std::vector<double> adam_beta2s{0.9, 0.99};
  GumbelAiaConfig gumbel;
  // Full-batch Adam iterations for the Mlp oracle model.
  int oracle_budget = 2000;
};

struct ExperimentConfig {
  std::string scenario = "toy";
  DatasetSpec data;
  ModelKind model = ModelKind::kLinear;
  Index hidden = 128;
  FLConfig fl;
  // When positive (linear models only), the learning rate becomes this
  // fraction of the smallest client stability bound S_c / (2 lambda_max).
  double stability_fraction = 0.0;
  DefenseConfig defense = NoDefense{};
  AttackPlan attacks;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir;
  bool record_wall_time = true;

  void validate() const;
};

// Missing keys keep the value from `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

// Methods, as they appear in result tables.
inline constexpr const char* kGrad = "Grad";
inline constexpr const char* kGradOracle = "Grad-w-O";
inline constexpr const char* kOursPassive = "Ours-passive";
inline constexpr const char* kOursActive = "Ours-active";
inline constexpr const char* kModelOracle = "Model-w-O";

struct RawResult {
  std::string scenario;
  std::string method;
  std::string adversary;  // "passive" or "active"
  int active_rounds = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  // Mean L2 distance between reconstructed and optimal local models over
  // targets; NaN when the method reconstructs nothing.
  double recon_l2 = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct ResultRow {
  std::string scenario;
  std::string method;
  std::string adversary;
  int active_rounds = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double recon_l2 = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct ExperimentResult {
  std::vector<RawResult> raw;
  std::vector<ResultRow> summary;
};

// Everything the attacks see for one seed: clients and the federated setup.
struct PreparedRun {
  std::vector<ClientDataset> clients;
  ModelParams initial;
  FLConfig fl;
};

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Mean and population standard deviation of accuracy per (scenario, method,
// adversary, active_rounds) in first-seen order.
std::vector<ResultRow> summarize(const std::vector<RawResult>& raw);

// CSV with columns scenario, method, adversary, active_rounds, accuracy_mean,
// accuracy_std, recon_l2, seconds. Floats carry 17 significant digits and an
// unavailable recon_l2 is an empty cell.
void emit_report(std::ostream& csv, const std::vector<ResultRow>& rows);
std::string format_table(const std::vector<ResultRow>& rows);
void write_raw_csv(std::ostream& csv, const std::vector<RawResult>& raw);
// summary.csv, raw.csv and config.json under `dir`.
void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result);

enum class SweepGoal { kMinimize, kMaximize };

using GridPoint = std::map<std::string, double>;

struct SweepResult {
  std::vector<GridPoint> points;
  std::vector<double> scores;
  std::size_t best = 0;  // first best on ties

  const GridPoint& best_point() const { return points.at(best); }
};

// Every combination of the named axes, last axis varying fastest.
std::vector<GridPoint> cartesian_grid(const std::map<std::string, std::vector<double>>& axes);

SweepResult sweep(const std::vector<GridPoint>& grid, const std::function<double(const GridPoint&)>& score,
                  SweepGoal goal);

// Runs the active attack on `targets` for each Adam grid point and keeps,
// per target, the estimate with the lowest training loss on that target's data.
struct ActiveAttackResult {
  std::map<int, ModelParams> estimates;
  std::map<int, AdamConfig> chosen;
  // Logs with the active rounds, from the run of the chosen grid point of the first target.
  std::map<int, MessageLog> logs;
};

ActiveAttackResult tuned_active_attack(const PreparedRun& run, const DefenseConfig& defense,
                                       const std::vector<int>& targets, int attack_start, int attack_rounds,
                                       const AttackPlan& plan);

// Property suites behind `verify props`.
struct SuiteReport {
  std::string name;
  bool passed = false;
  std::vector<std::string> details;
};

SuiteReport verify_accuracy_bound(std::uint64_t seed, int instances);
SuiteReport verify_full_batch_exactness(std::uint64_t seed, int seeds);
SuiteReport verify_hard_instance(Index dim);

// Preset scenarios behind `reproduce`.
ExperimentConfig toy_linear_preset();
std::vector<ExperimentConfig> batch_size_presets();
std::vector<ExperimentConfig> hetero_sweep_presets();

}  // namespace fedaia
