#include <benchmark/benchmark.h>

#include <cstdint>

#include "hpt/encoder.hpp"
#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace {

hpt::Tensor2 random_matrix(int rows, int cols, uint64_t seed) {
    hpt::Rng rng(seed);
    return hpt::random_gaussian(rng, rows, cols, 1.0);
}

void bm_matmul_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 1);
    const hpt::Tensor2 b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::matmul(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_ref(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 1);
    const hpt::Tensor2 b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::ref::matmul(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_nt_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 3);
    const hpt::Tensor2 b = random_matrix(n, n, 4);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::matmul_nt(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_nt_ref(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 3);
    const hpt::Tensor2 b = random_matrix(n, n, 4);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::ref::matmul_nt(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_tn_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 5);
    const hpt::Tensor2 b = random_matrix(n, n, 6);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::matmul_tn(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_tn_ref(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 a = random_matrix(n, n, 5);
    const hpt::Tensor2 b = random_matrix(n, n, 6);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::ref::matmul_tn(a, b));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_softmax_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 x = random_matrix(n, n, 7);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::softmax_rows(x));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n);
}

void bm_softmax_ref(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const hpt::Tensor2 x = random_matrix(n, n, 7);
    for (auto _ : state) benchmark::DoNotOptimize(hpt::ref::softmax_rows(x));
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n);
}

// Whole frozen text stack on one sequence, the unit the training loop pays
// for most often.
void bm_encode_frozen(benchmark::State& state) {
    const hpt::EncoderConfig cfg;
    const hpt::TextEncoder enc(cfg);
    const hpt::Tokenizer tok{cfg.vocab_size};
    const hpt::TokenSequence seq = hpt::build_plain_sequence(
        tok, cfg, "the pine and the reed appear rust and tan");
    for (auto _ : state) benchmark::DoNotOptimize(enc.encode_frozen(seq));
}

}  // namespace

BENCHMARK(bm_matmul_omp)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_ref)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_nt_omp)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_nt_ref)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_tn_omp)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_tn_ref)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(bm_softmax_omp)->Arg(256)->Arg(1024);
BENCHMARK(bm_softmax_ref)->Arg(256)->Arg(1024);
BENCHMARK(bm_encode_frozen);

BENCHMARK_MAIN();
