#include <fedaia/data.hpp>
#include <fedaia/errors.hpp>
#include <fedaia/federated.hpp>

#include <gtest/gtest.h>

using namespace fedaia;

namespace {

ClientDataset small_client() {
  ClientDataset d;
  d.x.resize(2, 2);
  d.x << 1, 0, 2, 1;
  d.y.resize(2);
  d.y << 1, 3;
  d.sensitive_col = 1;
  return d;
}

ModelParams linear(const Vector& v) { return ModelParams(ModelShape::linear(v.size()), v); }

FLConfig full_batch(Index samples, double lr, int rounds = 1) {
  FLConfig cfg;
  cfg.num_rounds = rounds;
  cfg.local_epochs = 1;
  cfg.batch_size = static_cast<int>(samples);
  cfg.learning_rate = lr;
  return cfg;
}

}  // namespace

TEST(ClientDataset, ValidateRejectsNonBinarySensitive) {
  ClientDataset d = small_client();
  d.x(0, 1) = 0.5;
  EXPECT_THROW(d.validate(), DataError);
}

TEST(ClientDataset, ValidateRejectsNonFinite) {
  ClientDataset d = small_client();
  d.y(0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(d.validate(), DataError);
}

TEST(ClientDataset, PublicColumnsExcludeSensitive) {
  const ClientDataset d = small_client();
  EXPECT_EQ(d.public_cols(), std::vector<Index>{0});
  EXPECT_EQ(d.sensitive(), (std::vector<int>{0, 1}));
}

TEST(FLConfig, LocalSteps) {
  FLConfig cfg;
  cfg.local_epochs = 3;
  cfg.batch_size = 32;
  EXPECT_EQ(cfg.local_steps(100), 3 * 4);
  EXPECT_EQ(cfg.local_steps(64), 3 * 2);
}

TEST(FLConfig, ValidateRejectsBadValues) {
  FLConfig cfg;
  cfg.num_rounds = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FLConfig{};
  cfg.participation = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LocalUpdate, OneFullBatchStepClosedForm) {
  const ClientDataset d = small_client();
  Vector theta(2);
  theta << 0.5, -1.0;
  const double lr = 0.1;
  Rng rng(0);
  const ModelParams out = local_update_fedavg(linear(theta), d, full_batch(2, lr), rng);
  // X theta - y = [0.5 - 1, 1 - 1 - 3] = [-0.5, -3]
  // (2/2) X^T r = [-0.5 - 6, -3] = [-6.5, -3]
  Vector expected(2);
  expected << 0.5 + 0.1 * 6.5, -1.0 + 0.1 * 3.0;
  EXPECT_LE((out.values() - expected).norm(), 1e-15);
}

TEST(LocalUpdate, OptimumIsFixedPoint) {
  Rng data_rng(1);
  const auto toy = generate_toy(1, 64, 5, 0.1, data_rng);
  const ClientDataset& d = toy.clients[0];
  const ModelParams opt = solve_least_squares(d.x, d.y);
  Rng rng(2);
  FLConfig cfg = full_batch(d.size(), 0.05);
  cfg.local_epochs = 4;
  const ModelParams out = local_update_fedavg(opt, d, cfg, rng);
  EXPECT_LE((out.values() - opt.values()).norm(), 1e-12);
}

TEST(LocalUpdate, ZeroLearningRateIsIdentity) {
  Rng data_rng(3);
  const auto toy = generate_toy(1, 50, 4, 0.1, data_rng);
  Rng rng(4);
  FLConfig cfg;
  cfg.local_epochs = 3;
  cfg.batch_size = 7;
  cfg.learning_rate = 0.0;
  const ModelParams start = linear(Vector::LinSpaced(4, -1, 1));
  EXPECT_EQ(local_update_fedavg(start, toy.clients[0], cfg, rng), start);
}

TEST(LocalUpdate, LastBatchAveragedOverActualSize) {
  // Three samples, B = 2: one step on a pair, one on a singleton. With one
  // parameter and x = 1 we can replay the shuffled order from the same stream.
  ClientDataset d;
  d.x = Matrix::Ones(3, 2);
  d.x.col(1) << 0, 1, 0;
  d.y.resize(3);
  d.y << 1, 2, 4;
  d.sensitive_col = 1;
  FLConfig cfg;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.1;
  const ModelParams start = linear(Vector::Zero(2));
  Rng a(9);
  const ModelParams out = local_update_fedavg(start, d, cfg, a);
  // Replay: recover the permutation used by the implementation.
  Rng b(9);
  std::vector<Index> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), b);
  Vector theta = Vector::Zero(2);
  for (std::size_t begin = 0; begin < 3; begin += 2) {
    const std::size_t end = std::min<std::size_t>(begin + 2, 3);
    Vector g = Vector::Zero(2);
    for (std::size_t i = begin; i < end; ++i) {
      const Index r = order[i];
      g += 2.0 * d.x.row(r).transpose() * (d.x.row(r).dot(theta) - d.y(r));
    }
    theta -= 0.1 * g / static_cast<double>(end - begin);
  }
  EXPECT_LE((out.values() - theta).norm(), 1e-15);
}

TEST(DpSgd, DisabledDefenseEqualsFedAvgBitwise) {
  Rng data_rng(5);
  const auto toy = generate_toy(1, 40, 5, 0.1, data_rng);
  FLConfig cfg;
  cfg.batch_size = 8;
  cfg.local_epochs = 2;
  cfg.learning_rate = 0.05;
  const ModelParams start = linear(Vector::Zero(5));
  Rng r1(7), r2(7), noise(8);
  const ModelParams plain = local_update_fedavg(start, toy.clients[0], cfg, r1);
  const ModelParams dp = local_update_dpsgd(start, toy.clients[0], cfg, DpSgd{}, r2, noise);
  EXPECT_EQ(plain, dp);
}

TEST(DpSgd, ClippedNormsAreBounded) {
  Rng data_rng(6);
  const auto toy = generate_toy(1, 100, 6, 1.0, data_rng);
  const ModelParams p = linear(Vector::Constant(6, 3.0));
  std::vector<Index> rows(100);
  std::iota(rows.begin(), rows.end(), Index{0});
  std::vector<double> norms;
  Rng noise(1);
  dp_batch_gradient(p, toy.clients[0], rows, DpSgd{0.5, 0.0}, noise, &norms);
  ASSERT_EQ(norms.size(), 100u);
  for (double n : norms) EXPECT_LE(n, 0.5 + 1e-12);
}

TEST(DpSgd, NoisyRunsAreSeedDeterministic) {
  Rng data_rng(7);
  const auto toy = generate_toy(2, 32, 4, 0.1, data_rng);
  FLConfig cfg = full_batch(32, 0.05, 5);
  const DefenseConfig dp = DpSgd{1.0, 0.5};
  const ModelParams start = linear(Vector::Zero(4));
  cfg.seed = 11;
  const auto a = run_training(toy.clients, start, cfg, dp, {0});
  const auto b = run_training(toy.clients, start, cfg, dp, {0});
  cfg.seed = 12;
  const auto c = run_training(toy.clients, start, cfg, dp, {0});
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.logs.at(0), b.logs.at(0));
  EXPECT_NE(a.global, c.global);
}

TEST(DpSgd, InvalidDefenseRejected) {
  EXPECT_THROW(validate_defense(DpSgd{0.0, 1.0}), ConfigError);
  EXPECT_THROW(validate_defense(DpSgd{1.0, -1.0}), ConfigError);
}

TEST(Aggregate, Examples) {
  Vector zero(1), four(1);
  zero << 0;
  four << 4;
  std::vector<std::pair<double, ModelParams>> single{{1.0, linear(four)}};
  EXPECT_EQ(aggregate(single), linear(four));
  std::vector<std::pair<double, ModelParams>> same{{0.3, linear(four)}, {0.7, linear(four)}};
  EXPECT_DOUBLE_EQ(aggregate(same).values()(0), 4.0);
  std::vector<std::pair<double, ModelParams>> weighted{{1.0, linear(zero)}, {3.0, linear(four)}};
  EXPECT_DOUBLE_EQ(aggregate(weighted).values()(0), 3.0);
}

TEST(Aggregate, InvariantToWeightScaling) {
  Rng rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::pair<double, ModelParams>> a, b;
  for (int i = 0; i < 4; ++i) {
    const Vector v = Vector::NullaryExpr(3, [&] { return n(rng); });
    const double w = 0.5 + i;
    a.emplace_back(w, linear(v));
    b.emplace_back(8.0 * w, linear(v));
  }
  EXPECT_LE((aggregate(a).values() - aggregate(b).values()).norm(), 1e-14);
}

TEST(Aggregate, ShapeMismatchThrows) {
  std::vector<std::pair<double, ModelParams>> u{{1.0, linear(Vector::Zero(2))}, {1.0, linear(Vector::Zero(3))}};
  EXPECT_THROW(aggregate(u), ShapeError);
}

TEST(RunTraining, EmptyClientSetIsConfigError) {
  EXPECT_THROW(run_training({}, linear(Vector::Zero(2)), FLConfig{}, NoDefense{}, {}), ConfigError);
}

TEST(RunTraining, SingleClientSingleRoundEqualsLocalUpdate) {
  Rng data_rng(8);
  const auto toy = generate_toy(1, 40, 4, 0.1, data_rng);
  FLConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  const ModelParams start = linear(Vector::Zero(4));
  const auto trained = run_training(toy.clients, start, cfg, NoDefense{}, {});
  Rng batches = derive_stream(3, StreamPurpose::kClientBatches, 0);
  EXPECT_EQ(trained.global, local_update_fedavg(start, toy.clients[0], cfg, batches));
}

TEST(RunTraining, TwoIdenticalClientsMatchOne) {
  Rng data_rng(9);
  const auto toy = generate_toy(1, 64, 5, 0.1, data_rng);
  FLConfig cfg = full_batch(64, 0.1, 20);
  const ModelParams start = linear(Vector::Zero(5));
  const auto one = run_training(toy.clients, start, cfg, NoDefense{}, {});
  const auto two = run_training({toy.clients[0], toy.clients[0]}, start, cfg, NoDefense{}, {});
  EXPECT_LE((one.global.values() - two.global.values()).norm(), 1e-12);
}

TEST(RunTraining, ToyConvergesNearPooledOptimum) {
  Rng data_rng(10);
  const auto toy = generate_toy(2, 1024, 11, 0.1, data_rng);
  double bound = std::numeric_limits<double>::infinity();
  for (const auto& c : toy.clients) bound = std::min(bound, linear_stability_bound(c));
  FLConfig cfg = full_batch(1024, bound, 300);
  const auto trained = run_training(toy.clients, linear(Vector::Zero(11)), cfg, NoDefense{}, {});
  Matrix x(2048, 11);
  Vector y(2048);
  x << toy.clients[0].x, toy.clients[1].x;
  y << toy.clients[0].y, toy.clients[1].y;
  const double best = mean_loss(solve_least_squares(x, y), x, y);
  const double reached = mean_loss(trained.global, x, y);
  EXPECT_LE(reached, 1.05 * best);
}

TEST(RunTraining, DeterministicAndTapsDoNotPerturb) {
  Rng data_rng(11);
  const auto toy = generate_toy(3, 50, 4, 0.1, data_rng);
  FLConfig cfg;
  cfg.num_rounds = 10;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  cfg.participation = 0.67;
  cfg.seed = 5;
  const ModelParams start = linear(Vector::Zero(4));
  const auto a = run_training(toy.clients, start, cfg, NoDefense{}, {0, 1, 2});
  const auto b = run_training(toy.clients, start, cfg, NoDefense{}, {0, 1, 2});
  const auto c = run_training(toy.clients, start, cfg, NoDefense{}, {});
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.logs, b.logs);
  EXPECT_EQ(a.global, c.global);
}

TEST(RunTraining, LogRoundsAreParticipationRounds) {
  Rng data_rng(12);
  const auto toy = generate_toy(4, 30, 4, 0.1, data_rng);
  FLConfig cfg;
  cfg.num_rounds = 25;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.05;
  cfg.participation = 0.5;
  const auto trained = run_training(toy.clients, linear(Vector::Zero(4)), cfg, NoDefense{}, {0, 1, 2, 3});
  for (const auto& [c, log] : trained.logs) {
    for (int r : log.rounds()) {
      const auto& who = trained.participants[static_cast<std::size_t>(r)];
      EXPECT_TRUE(std::find(who.begin(), who.end(), c) != who.end());
    }
  }
  for (const auto& who : trained.participants) EXPECT_EQ(who.size(), 2u);
}

TEST(RunTraining, StableFullBatchLossIsNonIncreasing) {
  Rng data_rng(13);
  const auto toy = generate_toy(1, 200, 6, 0.3, data_rng);
  FLConfig cfg = full_batch(200, linear_stability_bound(toy.clients[0]), 50);
  cfg.track_loss = true;
  const auto trained = run_training(toy.clients, linear(Vector::Zero(6)), cfg, NoDefense{}, {});
  for (std::size_t i = 1; i < trained.loss_history.size(); ++i) {
    EXPECT_LE(trained.loss_history[i], trained.loss_history[i - 1] + 1e-15);
  }
}

TEST(RunTraining, AdversaryReplacesBroadcastAndIsLogged) {
  struct Zeroing : Adversary {
    std::optional<ModelParams> intercept(int round, const ModelParams& b, int client) override {
      if (client == 0 && round == 2) return ModelParams::zeros(b.shape());
      return std::nullopt;
    }
  } zeroing;
  Rng data_rng(14);
  const auto toy = generate_toy(2, 20, 3, 0.1, data_rng);
  FLConfig cfg = full_batch(20, 0.05, 4);
  const auto trained = run_training(toy.clients, linear(Vector::Ones(3)), cfg, NoDefense{}, {0}, &zeroing);
  const MessageLog& log = trained.logs.at(0);
  EXPECT_EQ(log.active_rounds(), std::vector<int>{2});
  EXPECT_EQ(log.inspected_rounds(), (std::vector<int>{0, 1, 3}));
  EXPECT_TRUE(log.at_round(2).theta_in.values().isZero(0.0));
}

TEST(ClientWeights, SchemesSumToOne) {
  Rng rng(15);
  auto toy = generate_toy(2, 20, 3, 0.1, rng);
  toy.clients.push_back(generate_toy(1, 60, 3, 0.1, rng).clients[0]);
  const auto uniform = client_weights(toy.clients, WeightScheme::kUniform);
  const auto sized = client_weights(toy.clients, WeightScheme::kSizeProportional);
  EXPECT_DOUBLE_EQ(uniform[2], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(sized[2], 0.6);
  EXPECT_NEAR(std::accumulate(sized.begin(), sized.end(), 0.0), 1.0, 1e-15);
}
