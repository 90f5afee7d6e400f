#include <benchmark/benchmark.h>

#include "feddah/amr.hpp"
#include "feddah/client.hpp"
#include "feddah/hypernet.hpp"

namespace {

using namespace feddah;

const ModelSpec kSpec = ModelSpec::mlp(2, {32, 32}, 1);

ServerState server(std::size_t n_z, std::size_t d, std::size_t tasks) {
  ServerState s = make_server_state(kSpec, AmrConfig{}, IdentityOptions{n_z, 2.0, 0.5, 1}, d, 1);
  for (std::size_t t = 0; t < tasks; ++t) {
    const TaskIdentity& id = s.identities.register_task("t" + std::to_string(t));
    s.registry.emplace(id.task_id, BasicModelEntry{generate_model(s.hp, id), 0, 0, 0, {0}});
  }
  return s;
}

void BM_GenerateModel(benchmark::State& state) {
  const auto n_z = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const ServerState s = server(n_z, d, 1);
  const TaskIdentity& id = s.identities.at("t0");
  for (auto _ : state) benchmark::DoNotOptimize(generate_model(s.hp, id));
  state.counters["hyper_params"] = static_cast<double>(s.hp.param_count());
}
BENCHMARK(BM_GenerateModel)->Args({8, 16})->Args({16, 32})->Args({32, 64});

// One upload of a new task with `range(0)` earlier tasks in L_R.
void BM_ServerUpdate(benchmark::State& state) {
  const auto previous = static_cast<std::size_t>(state.range(0));
  const ServerState base = server(16, 32, previous);
  ServerState start = base;
  (void)start.identities.register_task("new");
  Rng rng(3);
  const ClientUpdate upload{0, "new", random_init(kSpec, rng), 0, 0.0};
  for (auto _ : state) {
    ServerState s = start;
    benchmark::DoNotOptimize(server_update(s, std::span<const ClientUpdate>(&upload, 1), 1));
  }
}
BENCHMARK(BM_ServerUpdate)->Arg(0)->Arg(4)->Arg(14)->Unit(benchmark::kMillisecond);

void BM_LocalTrain(benchmark::State& state) {
  const SyntheticTask task = make_task(TaskFamily::kSineMixture, 1);
  Rng rng(1);
  const ModelWeights init = random_init(kSpec, rng);
  for (auto _ : state) benchmark::DoNotOptimize(local_train(kSpec, init, task, TrainOptions{5, 1e-3, 0}));
}
BENCHMARK(BM_LocalTrain)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
