#include "afb/design.hpp"
#include "afb/dsp.hpp"
#include "afb/frontend.hpp"
#include "afb/response.hpp"
#include "afb/rng.hpp"

#include <benchmark/benchmark.h>

using namespace afb;

namespace {

RealSignal noise(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    RealSignal x;
    x.samples.resize(n);
    for (double& v : x.samples)
        v = rng.uniform() * 2.0 - 1.0;
    return x;
}

FilterbankSpec desk_spec(Variant v)
{
    FilterbankSpec s;
    s.f_min = 98.0;
    s.n_bins = 72;
    s.n_bpo = 24;
    s.variant = v;
    return s;
}

FilterbankSpec full_spec(Variant v)
{
    FilterbankSpec s;
    s.f_min = 32.7;
    s.n_bins = 252;
    s.n_bpo = 36;
    s.gamma.reset();
    s.variant = v;
    return s;
}

void BM_Fft(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const RealSignal x = noise(n, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(fft(std::span<const double>(x.samples)));
}
BENCHMARK(BM_Fft)->Arg(1024)->Arg(1531)->Arg(16384)->Arg(25150);

void BM_HilbertRows(benchmark::State& state)
{
    const Filterbank fb = design_filterbank(desk_spec(Variant::hilbert));
    for (auto _ : state)
        benchmark::DoNotOptimize(hilbert_rows(fb.real));
}
BENCHMARK(BM_HilbertRows)->Unit(benchmark::kMillisecond);

void BM_StridedResponse(benchmark::State& state)
{
    const Filterbank fb = design_filterbank(desk_spec(Variant::classic));
    const RealSignal x = noise(32000, 2);
    const auto support = fb.supports();
    for (auto _ : state)
        benchmark::DoNotOptimize(strided_response(x.samples, fb.real, fb.spec.hop, support));
}
BENCHMARK(BM_StridedResponse)->Unit(benchmark::kMillisecond);

void BM_FullBankMagnitude(benchmark::State& state)
{
    const Filterbank fb = design_filterbank(full_spec(Variant::hilbert));
    const RealSignal x = noise(16000, 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(hilbert_magnitude(x, fb));
}
BENCHMARK(BM_FullBankMagnitude)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state)
{
    const Filterbank fb = design_filterbank(desk_spec(Variant::hilbert));
    const BatchNormState bn = BatchNormState::identity(fb.spec.n_bins);
    std::vector<RealSignal> batch{noise(32000, 4), noise(32000, 5), noise(32000, 6), noise(32000, 7)};
    for (auto _ : state) {
        ForwardResult f = frontend_forward(batch, fb, bn, DropoutSettings{}, Mode::train);
        std::vector<Matrix> d;
        for (const auto& m : f.features)
            d.push_back(m.values);
        benchmark::DoNotOptimize(frontend_backward(f.tape, d));
    }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
