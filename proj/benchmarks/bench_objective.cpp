#include <random>

#include <benchmark/benchmark.h>

#include "macd/data.hpp"
#include "macd/evaluator.hpp"
#include "macd/objective.hpp"
#include "macd/trainer.hpp"

using namespace macd;

namespace {

DenseMatrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseMatrix m(r, c);
  for (double& x : m.values()) x = n(rng);
  return m;
}

struct Features {
  std::vector<TextFeatures> texts, teachers;
  std::vector<ImageFeatures> images;
};

// Batch of N pairs with L words, 4 patches and shared dimension 32.
Features features(std::size_t n, std::size_t L = 8) {
  std::mt19937_64 rng(n);
  Features f;
  for (std::size_t i = 0; i < n; ++i) {
    f.texts.push_back({gaussian(rng, 32, L), gaussian(rng, 32, 1)});
    f.teachers.push_back({gaussian(rng, 32, L), gaussian(rng, 32, 1)});
    f.images.push_back({gaussian(rng, 32, 4), gaussian(rng, 32, 1)});
  }
  return f;
}

void BM_GlobalNce(benchmark::State& state) {
  const Features f = features(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(global_nce(f.texts, f.images, LossWeights{}));
}
BENCHMARK(BM_GlobalNce)->Arg(8)->Arg(64);

void BM_LocalNce(benchmark::State& state) {
  const Features f = features(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(local_nce(f.texts, f.images, LossWeights{}));
}
BENCHMARK(BM_LocalNce)->Arg(8)->Arg(64);

void BM_TotalLoss(benchmark::State& state) {
  const Features f = features(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(f.texts, f.images, f.teachers, LossWeights{}));
}
BENCHMARK(BM_TotalLoss)->Arg(8)->Arg(64);

// Forward and backward through both encoders and the full objective for one batch.
void BM_BatchGradient(benchmark::State& state) {
  SynthConfig sc;
  const Corpus corpus = gen_synthetic(sc);
  EncoderConfig ec;
  const EncoderParams params = init_encoders(ec, 0);
  const TeacherSnapshot teacher = take_snapshot(params);
  std::vector<TextFeatures> teacher_features;
  for (const auto& s : corpus.samples) teacher_features.push_back(teacher_encode(s.text, teacher));
  const Batch batch = make_batches(corpus, static_cast<std::size_t>(state.range(0)), 0).front();
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_gradient(corpus, batch, params, teacher_features, LossWeights{}));
}
BENCHMARK(BM_BatchGradient)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SentenceSimilarity(benchmark::State& state) {
  const EncoderParams params = init_encoders(EncoderConfig{}, 0);
  const TokenSequence a{1, 5, 9, 13, 2, 6, 10, 14}, b{3, 7, 11, 15, 4, 8, 12, 16};
  for (auto _ : state) benchmark::DoNotOptimize(sentence_similarity(a, b, params.text));
}
BENCHMARK(BM_SentenceSimilarity);

}  // namespace
BENCHMARK_MAIN();
