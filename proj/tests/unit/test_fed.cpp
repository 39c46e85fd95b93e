#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedlith/fed/aggregate.hpp"
#include "fedlith/fed/client.hpp"
#include "fedlith/fed/simulation.hpp"
#include "test_util.hpp"

using namespace fedlith;
using namespace fedlith::fed;
using fedlith::testing::constant_quadratic;
using fedlith::testing::QuadraticObjective;

namespace {

ClientUpload up(int k, std::size_t n, std::vector<double> w, double latency = 0.0) {
  return ClientUpload{k, n, std::move(w), latency};
}

RoundPlan sgd_plan(int el, int eg, double eta, std::size_t batch = 4) {
  RoundPlan p;
  p.e_local = el;
  p.e_global = eg;
  p.eta = eta;
  p.batch = batch;
  p.optimizer = Optimizer::Sgd;
  return p;
}

ClientState client_with(std::vector<double> local, std::uint64_t seed = 1, int id = 0) {
  ClientState c;
  c.id = id;
  c.local = std::move(local);
  c.rng = RngStream(seed, "client", {static_cast<std::uint64_t>(id)});
  return c;
}

// Two coordinates: index 0 global, index 1 local.
nn::BlockPartition split2() {
  const std::vector<std::size_t> g{0}, l{1};
  return nn::BlockPartition::from_indices(2, g, l);
}

// Quadratic clients with per-sample targets around `centre`.
std::vector<QuadraticObjective> noisy_clients(int n, std::size_t dim, nn::BlockPartition part, std::uint64_t seed) {
  std::vector<QuadraticObjective> out;
  for (int k = 0; k < n; ++k) {
    RngStream rng(seed, "targets", {static_cast<std::uint64_t>(k)});
    std::vector<std::vector<double>> t(20, std::vector<double>(dim));
    for (auto& row : t)
      for (auto& v : row) v = static_cast<double>(k) + rng.normal();
    out.emplace_back(std::move(t), part);
  }
  return out;
}

}  // namespace

// ---- client updates

TEST(HflLaUpdate, ZeroStepsIsNoOp) {
  const auto obj = constant_quadratic({1.0, 2.0}, split2());
  auto c = client_with({5.0});
  const std::vector<double> wg{3.0};
  const auto out = client_update_hflla(c, obj, wg, sgd_plan(0, 0, 0.1), 0);
  EXPECT_EQ(out, wg);
  EXPECT_EQ(c.local, std::vector<double>{5.0});
}

TEST(HflLaUpdate, TwoPhaseHandTrace) {
  // F = 0.5 (w_g - a)^2 + 0.5 (w_l - b)^2, full batch, E_l = E = 1
  const double a = 1.0, b = -2.0, eta = 0.25;
  const auto obj = constant_quadratic({a, b}, split2());
  double wg = 3.0, wl = 5.0;
  auto c = client_with({wl});
  const auto out = client_update_hflla(c, obj, std::vector<double>{wg}, sgd_plan(1, 1, eta), 0);
  const double wl1 = wl - eta * (wl - b);
  const double wl2 = wl1 - eta * (wl1 - b);
  const double wg1 = wg - eta * (wg - a);
  EXPECT_DOUBLE_EQ(out[0], wg1);
  EXPECT_DOUBLE_EQ(c.local[0], wl2);
}

TEST(HflLaUpdate, IdenticalShardsAndSeedsAgree) {
  auto objs = noisy_clients(1, 2, split2(), 4);
  auto c1 = client_with({0.5}, 9), c2 = client_with({0.5}, 9);
  const auto p = sgd_plan(3, 5, 0.1, 3);
  const std::vector<double> wg{0.0};
  EXPECT_EQ(client_update_hflla(c1, objs[0], wg, p, 2), client_update_hflla(c2, objs[0], wg, p, 2));
  EXPECT_EQ(c1.local, c2.local);
}

TEST(HflLaUpdate, RejectsWrongBlockSizes) {
  const auto obj = constant_quadratic({1.0, 2.0}, split2());
  auto c = client_with({5.0});
  EXPECT_THROW(client_update_hflla(c, obj, std::vector<double>{1.0, 2.0}, sgd_plan(1, 1, 0.1), 0), ConfigError);
  auto bad = client_with({});
  EXPECT_THROW(client_update_hflla(bad, obj, std::vector<double>{1.0}, sgd_plan(1, 1, 0.1), 0), ConfigError);
}

TEST(FedAvgUpdate, ZeroStepsIsIdentity) {
  const auto obj = constant_quadratic({1.0, 2.0}, nn::BlockPartition::all_global(2));
  const std::vector<double> w{4.0, -1.0};
  EXPECT_EQ(client_update_fedavg(client_with({}), obj, w, sgd_plan(0, 0, 0.1), 0), w);
}

TEST(FedAvgUpdate, FullBatchIsGradientDescent) {
  const auto obj = constant_quadratic({1.0}, nn::BlockPartition::all_global(1));
  const auto out = client_update_fedavg(client_with({}), obj, std::vector<double>{3.0}, sgd_plan(0, 7, 0.2), 0);
  double w = 3.0;
  for (int i = 0; i < 7; ++i) w -= 0.2 * (w - 1.0);
  EXPECT_DOUBLE_EQ(out[0], w);
}

TEST(FedAvgUpdate, SameSeedBitIdentical) {
  auto objs = noisy_clients(1, 3, nn::BlockPartition::all_global(3), 5);
  const std::vector<double> w{0.1, 0.2, 0.3};
  const auto p = sgd_plan(0, 9, 0.05, 4);
  EXPECT_EQ(client_update_fedavg(client_with({}, 3), objs[0], w, p, 1),
            client_update_fedavg(client_with({}, 3), objs[0], w, p, 1));
  EXPECT_NE(client_update_fedavg(client_with({}, 3), objs[0], w, p, 1),
            client_update_fedavg(client_with({}, 3), objs[0], w, p, 2));
}

TEST(FedProxUpdate, ZeroMuEqualsFedAvg) {
  auto objs = noisy_clients(1, 3, nn::BlockPartition::all_global(3), 6);
  const std::vector<double> w{0.1, 0.2, 0.3};
  for (auto opt : {Optimizer::Sgd, Optimizer::Adam}) {
    auto p = sgd_plan(0, 9, 0.05, 4);
    p.optimizer = opt;
    p.mu_prox = 0.0;
    EXPECT_EQ(client_update_fedprox(client_with({}, 3), objs[0], w, p, 1),
              client_update_fedavg(client_with({}, 3), objs[0], w, p, 1));
  }
}

TEST(FedProxUpdate, NoPullAtTheAnchor) {
  // One step from the anchor: the proximal term contributes nothing.
  const auto obj = constant_quadratic({1.0}, nn::BlockPartition::all_global(1));
  auto p = sgd_plan(0, 1, 0.1);
  p.mu_prox = 0.0;
  const auto plain = client_update_fedavg(client_with({}), obj, std::vector<double>{3.0}, p, 0);
  p.optimizer = Optimizer::Adam;
  p.mu_prox = 0.0;
  const auto adam0 = client_update_fedprox(client_with({}), obj, std::vector<double>{3.0}, p, 0);
  p.mu_prox = 5.0;
  const auto adam5 = client_update_fedprox(client_with({}), obj, std::vector<double>{3.0}, p, 0);
  EXPECT_EQ(adam0, adam5);
  EXPECT_DOUBLE_EQ(plain[0], 3.0 - 0.1 * 2.0);
}

TEST(FedProxUpdate, HugeMuStaysAtAnchor) {
  auto objs = noisy_clients(1, 4, nn::BlockPartition::all_global(4), 7);
  const std::vector<double> w{0.5, -0.5, 1.0, 2.0};
  auto p = sgd_plan(0, 50, 1e-3, 4);
  p.mu_prox = 1e6;
  const auto out = client_update_fedprox(client_with({}), objs[0], w, p, 0);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(out[i], w[i], 1e-3);
  p.mu_prox = -1.0;
  EXPECT_THROW(client_update_fedprox(client_with({}), objs[0], w, p, 0), ConfigError);
}

TEST(BatchSampler, PassesCoverShard) {
  BatchSampler s(10, 4, RngStream(1, "b"));
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 3; ++i)
    for (auto j : s.next()) seen[j]++;
  for (int v : seen) EXPECT_EQ(v, 1);
  EXPECT_THROW(BatchSampler(0, 4, RngStream(1)), ConfigError);
}

// ---- aggregation

TEST(AggregateSync, WeightedArithmetic) {
  const std::vector<ClientUpload> u{up(0, 1, {1, 1}), up(1, 3, {5, 5})};
  EXPECT_EQ(aggregate_sync(u, 2), (std::vector<double>{4, 4}));
  const std::vector<ClientUpload> v{up(0, 2, {0}), up(1, 3, {10}), up(2, 5, {20})};
  EXPECT_EQ(aggregate_sync(v, 3), std::vector<double>{13});
}

TEST(AggregateSync, IdenticalInputsAreFixed) {
  const std::vector<double> w{0.1, -0.3, 1e-17, 7.25};
  const std::vector<ClientUpload> u{up(0, 3, w), up(1, 7, w), up(2, 11, w)};
  EXPECT_EQ(aggregate_sync(u, 3), w);
}

TEST(AggregateSync, OrderIndependent) {
  const std::vector<ClientUpload> u{up(0, 3, {0.1, 0.7}), up(1, 5, {0.2, 1e-3}), up(2, 9, {0.3, -4.0})};
  const std::vector<ClientUpload> r{u[2], u[0], u[1]};
  EXPECT_EQ(aggregate_sync(u, 3), aggregate_sync(r, 3));
}

TEST(AggregateSync, MissingOrDuplicateClientIsProtocolError) {
  const std::vector<ClientUpload> miss{up(0, 1, {1})};
  EXPECT_THROW(aggregate_sync(miss, 2), ProtocolError);
  const std::vector<ClientUpload> dup{up(0, 1, {1}), up(0, 1, {1})};
  EXPECT_THROW(aggregate_sync(dup, 2), ProtocolError);
  const std::vector<ClientUpload> ragged{up(0, 1, {1}), up(1, 1, {1, 2})};
  EXPECT_THROW(aggregate_sync(ragged, 2), ProtocolError);
}

TEST(AggregateAsync, KEqualsNMatchesSync) {
  const std::vector<ClientUpload> u{up(0, 2, {0.5}), up(1, 3, {1.5}), up(2, 4, {-2.0})};
  EXPECT_EQ(aggregate_async_firstK(u, 3, 3), aggregate_sync(u, 3));
}

TEST(AggregateAsync, RenormalizedOverResponders) {
  // N = 3, n = (1, 1, 2), S = {client 0, client 2}
  const std::vector<ClientUpload> s{up(0, 1, {3.0, 0.0}), up(2, 2, {6.0, 3.0})};
  const auto w = aggregate_async_firstK(s, 2, 3);
  EXPECT_DOUBLE_EQ(w[0], (3.0 + 2 * 6.0) / 3.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
  const std::vector<std::size_t> n{1, 2};
  const auto wt = firstk_weights(n);
  EXPECT_DOUBLE_EQ(wt[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(wt[1], 2.0 / 3.0);
}

TEST(AggregateAsync, WeightsSumToOne) {
  RngStream rng(8, "w");
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> n(1 + rng.below(12));
    for (auto& v : n) v = 1 + rng.below(5000);
    const auto w = firstk_weights(n);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(AggregateAsync, FirstKTakesEarliestArrivals) {
  const std::vector<ClientUpload> r{up(0, 1, {0.0}, 3.0), up(1, 1, {1.0}, 1.0), up(2, 1, {2.0}, 2.0)};
  const auto s = first_k(r, 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].client, 1);
  EXPECT_EQ(s[1].client, 2);
  EXPECT_THROW(aggregate_async_firstK(std::vector<ClientUpload>{r[0]}, 2, 3), ProtocolError);
  EXPECT_THROW(aggregate_async_firstK(r, 4, 3), ConfigError);
}

TEST(AggregateAsync, SingleUploadReturnedUnchanged) {
  const std::vector<double> w{0.1, 0.2, 0.30000000000000004};
  const std::vector<ClientUpload> r{up(1, 7, w)};
  EXPECT_EQ(aggregate_async_firstK(r, 1, 3), w);
}

// ---- simulation

namespace {

SimulationOptions sim_opts(AlgorithmKind a, RoundPlan p, std::uint64_t seed = 1) {
  SimulationOptions o;
  o.algorithm = a;
  o.plan = p;
  o.seed = seed;
  o.latency.sigma = 0.5;
  return o;
}

}  // namespace

TEST(Simulation, ZeroRoundsKeepsInitialWeights) {
  auto objs = noisy_clients(3, 2, split2(), 1);
  const std::vector<double> w0{0.3, -0.3};
  Simulation<QuadraticObjective> sim(sim_opts(AlgorithmKind::HflLa, sgd_plan(2, 3, 0.1)), objs, w0);
  EXPECT_TRUE(sim.run(0).empty());
  for (int k = 0; k < 3; ++k) EXPECT_EQ(sim.client_params(k), w0);
  EXPECT_EQ(sim.initial_weights(), w0);
}

TEST(Simulation, HflLaSingleClientEqualsCentralized) {
  auto objs = noisy_clients(1, 3, nn::BlockPartition::all_global(3), 2);
  const std::vector<double> w0{1.0, 2.0, 3.0};
  const auto p = sgd_plan(4, 6, 0.05, 5);
  Simulation<QuadraticObjective> a(sim_opts(AlgorithmKind::HflLa, p), objs, w0);
  Simulation<QuadraticObjective> c(sim_opts(AlgorithmKind::Centralized, p), objs, w0);
  for (int t = 0; t < 5; ++t) {
    a.run_round();
    c.run_round();
    EXPECT_EQ(a.client_params(0), c.client_params(0)) << "round " << t;
  }
}

TEST(Simulation, IdenticalShardsMatchSingleClient) {
  const auto part = nn::BlockPartition::all_global(2);
  const auto obj = constant_quadratic({1.0, -1.0}, part, 6);
  const std::vector<double> w0{4.0, 4.0};
  auto p = sgd_plan(0, 5, 0.1, 6);  // full batch
  Simulation<QuadraticObjective> two(sim_opts(AlgorithmKind::FedAvg, p), {obj, obj}, w0);
  Simulation<QuadraticObjective> one(sim_opts(AlgorithmKind::Centralized, p), {obj}, w0);
  for (int t = 0; t < 4; ++t) {
    two.run_round();
    one.run_round();
    EXPECT_EQ(two.server().w_g, one.server().w_g);
  }
}

TEST(Simulation, EmptyLocalBlockHflLaEqualsFedAvg) {
  auto objs = noisy_clients(3, 3, nn::BlockPartition::all_global(3), 3);
  const std::vector<double> w0{0.0, 0.5, 1.0};
  auto p = sgd_plan(0, 4, 0.05, 3);
  Simulation<QuadraticObjective> h(sim_opts(AlgorithmKind::HflLa, p), objs, w0);
  Simulation<QuadraticObjective> f(sim_opts(AlgorithmKind::FedAvg, p), objs, w0);
  for (int t = 0; t < 5; ++t) {
    h.run_round();
    f.run_round();
  }
  EXPECT_EQ(h.server().w_g, f.server().w_g);
}

TEST(Simulation, LocalBlocksStayOnClients) {
  auto objs = noisy_clients(3, 2, split2(), 4);
  Simulation<QuadraticObjective> sim(sim_opts(AlgorithmKind::HflLa, sgd_plan(3, 3, 0.2, 5)), objs, {0.0, 0.0});
  sim.run(10);
  // global coordinate is shared, local coordinate tracks each client's own centre
  EXPECT_EQ(sim.client_params(0)[0], sim.client_params(2)[0]);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(sim.client_params(k)[1], k, 0.6);
  EXPECT_EQ(sim.server().w_g.size(), 1u);
}

TEST(Simulation, LocalOnlyNeverShares) {
  auto objs = noisy_clients(3, 2, split2(), 5);
  Simulation<QuadraticObjective> sim(sim_opts(AlgorithmKind::LocalOnly, sgd_plan(3, 3, 0.2, 5)), objs, {0.0, 0.0});
  const auto logs = sim.run(10);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(sim.client_params(k)[0], k, 0.6);
  for (const auto& l : logs) {
    EXPECT_FALSE(l.aggregation);
    EXPECT_TRUE(l.aggregated.empty());
  }
}

TEST(Simulation, AsyncFullKZeroVarianceEqualsSync) {
  auto objs = noisy_clients(4, 2, split2(), 6);
  auto p = sgd_plan(2, 3, 0.1, 4);
  auto so = sim_opts(AlgorithmKind::HflLa, p);
  so.latency.sigma = 0.0;
  auto ao = so;
  ao.plan.mode = Mode::Async;
  ao.plan.k_responders = 4;
  Simulation<QuadraticObjective> s(so, objs, {0.2, 0.2}), a(ao, objs, {0.2, 0.2});
  for (int t = 0; t < 5; ++t) {
    s.run_round();
    a.run_round();
  }
  for (int k = 0; k < 4; ++k) EXPECT_EQ(s.client_params(k), a.client_params(k));
}

TEST(Simulation, AsyncFirstKAggregatesKFastest) {
  auto objs = noisy_clients(6, 2, split2(), 7);
  auto o = sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 2, 0.1, 4));
  o.plan.mode = Mode::Async;
  o.plan.k_responders = 3;
  Simulation<QuadraticObjective> sim(o, objs, {0.0, 0.0});
  for (int t = 0; t < 4; ++t) {
    const auto log = sim.run_round();
    ASSERT_EQ(log.aggregated.size(), 3u);
    double slowest_in = 0.0, fastest_out = 1e300;
    for (const auto& c : log.clients) {
      if (c.aggregated)
        slowest_in = std::max(slowest_in, c.latency);
      else
        fastest_out = std::min(fastest_out, c.latency);
    }
    EXPECT_LE(slowest_in, fastest_out);
  }
}

TEST(Simulation, AsyncRandomKSelectsHalf) {
  auto objs = noisy_clients(6, 2, split2(), 8);
  auto o = sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 2, 0.1, 4));
  o.plan.mode = Mode::Async;
  o.plan.selection = Selection::RandomK;
  o.plan.k_responders = 3;
  Simulation<QuadraticObjective> sim(o, objs, {0.0, 0.0});
  std::set<std::vector<int>> distinct;
  for (int t = 0; t < 6; ++t) {
    const auto log = sim.run_round();
    EXPECT_EQ(log.participants.size(), 3u);
    EXPECT_EQ(log.aggregated, log.participants);
    distinct.insert(log.participants);
    for (const auto& c : log.clients)
      EXPECT_EQ(c.computed, std::find(log.participants.begin(), log.participants.end(), c.client) != log.participants.end());
  }
  EXPECT_GT(distinct.size(), 1u);
}

TEST(Simulation, AsyncTimeoutAbortsRoundAndKeepsModel) {
  auto objs = noisy_clients(4, 2, split2(), 9);
  auto o = sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 2, 0.1, 4));
  o.plan.mode = Mode::Async;
  o.plan.k_responders = 4;
  o.latency.timeout = 1e-9;  // nobody arrives
  Simulation<QuadraticObjective> sim(o, objs, {0.5, 0.0});
  const auto log = sim.run_round();
  EXPECT_TRUE(log.aborted);
  EXPECT_FALSE(log.abort_reason.empty());
  EXPECT_EQ(sim.server().w_g, std::vector<double>{0.5});
}

TEST(Simulation, SyncTimeoutIsProtocolError) {
  auto objs = noisy_clients(2, 2, split2(), 10);
  auto o = sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 2, 0.1, 4));
  o.latency.timeout = 1e-9;
  Simulation<QuadraticObjective> sim(o, objs, {0.5, 0.0});
  EXPECT_THROW(sim.run_round(), ProtocolError);
}

TEST(Simulation, DivergenceIsNumericError) {
  auto objs = noisy_clients(2, 2, split2(), 11);
  Simulation<QuadraticObjective> sim(sim_opts(AlgorithmKind::FedAvg, sgd_plan(0, 2000, 3.0, 4)), objs, {0.5, 0.0});
  EXPECT_THROW(sim.run(3), NumericError);
}

TEST(Simulation, ThreadCountDoesNotChangeResults) {
  auto objs = noisy_clients(5, 3, nn::BlockPartition::all_global(3), 12);
  auto o = sim_opts(AlgorithmKind::FedProx, sgd_plan(0, 6, 0.05, 3));
  auto o4 = o;
  o4.threads = 4;
  Simulation<QuadraticObjective> a(o, objs, {0.0, 0.0, 0.0}), b(o4, objs, {0.0, 0.0, 0.0});
  for (int t = 0; t < 4; ++t) {
    const auto la = a.run_round(), lb = b.run_round();
    ASSERT_TRUE(la.bounds && lb.bounds);
    EXPECT_EQ(la.bounds->consensus_max, lb.bounds->consensus_max);
  }
  EXPECT_EQ(a.server().w_g, b.server().w_g);
}

TEST(Simulation, RejectsBadSetups) {
  auto objs = noisy_clients(2, 2, split2(), 13);
  EXPECT_THROW(Simulation<QuadraticObjective>(sim_opts(AlgorithmKind::Centralized, sgd_plan(1, 1, 0.1)), objs, {0, 0}),
               ConfigError);
  EXPECT_THROW(Simulation<QuadraticObjective>(sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 1, 0.1)), objs, {0}),
               ConfigError);
  auto o = sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 1, 0.1));
  o.plan.mode = Mode::Async;
  o.plan.k_responders = 3;
  EXPECT_THROW(Simulation<QuadraticObjective>(o, objs, {0, 0}), ConfigError);
  EXPECT_THROW(Simulation<QuadraticObjective>(sim_opts(AlgorithmKind::HflLa, sgd_plan(1, 1, 0.1)), objs,
                                              {std::nan(""), 0.0}),
               NumericError);
}

TEST(Simulation, AdamDisablesBoundMonitors) {
  auto objs = noisy_clients(2, 2, split2(), 14);
  auto p = sgd_plan(1, 2, 0.01, 4);
  p.optimizer = Optimizer::Adam;
  Simulation<QuadraticObjective> sim(sim_opts(AlgorithmKind::HflLa, p), objs, {0.0, 0.0});
  const auto log = sim.run_round();
  EXPECT_FALSE(log.bounds.has_value());
  EXPECT_EQ(log.bounds_status, "not_applicable: bound monitors require the sgd optimizer");
}
