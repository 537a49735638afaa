#include <benchmark/benchmark.h>

#include "cpf/evaluation.hpp"
#include "cpf/synth.hpp"
#include "cpf/tape.hpp"
#include "cpf/training.hpp"

namespace {

using namespace cpf;

SynthData bench_data(std::size_t dim) {
  SynthConfig sc;
  sc.dim = dim;
  sc.text_dim = dim / 2;
  sc.samples_per_composition = 4;
  return synth_generate(sc);
}

// One forward/backward over a 64-image batch.
void BM_TrainStep(benchmark::State& state) {
  const SynthData data = bench_data(static_cast<std::size_t>(state.range(0)));
  TrainConfig tc;
  CpfParams params = initial_params(data.train.front(), data.text, tc);
  TextEmbeddings text = data.text;
  const CandidateList cands = training_candidates(data.space, false);
  const std::size_t batch = std::min<std::size_t>(64, data.train.size());
  const std::span<const FeatureBundle> samples(data.train.data(), batch);
  for (auto _ : state) {
    Tape tape;
    const ParamVars pv = bind_params(tape, params);
    const TextVars tv = bind_text(tape, text);
    const LossVars loss = forward_losses(tape, samples, pv, tv, params, cands);
    benchmark::DoNotOptimize(tape.value(loss.total)[0]);
    tape.backward(loss.total);
    for (Tensor* t : params.tensors()) t->zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_CalibrationSweep(benchmark::State& state) {
  const std::size_t images = static_cast<std::size_t>(state.range(0));
  const SynthData data = bench_data(32);
  TrainConfig tc;
  const CpfParams params = initial_params(data.train.front(), data.text, tc);
  std::vector<FeatureBundle> test;
  for (std::size_t i = 0; i < images; ++i) test.push_back(data.test[i % data.test.size()]);
  const ScoreTable table =
      build_score_table(test, params, data.text, data.space, Setting::kOpenWorld, 1);
  for (auto _ : state) {
    const Sweep sweep = calibration_sweep(table);
    benchmark::DoNotOptimize(auc(sweep.curve));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(images));
}
BENCHMARK(BM_CalibrationSweep)->Arg(256)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
