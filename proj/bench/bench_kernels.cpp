// Wall-clock comparison of the OpenMP kernels against their serial reference
// versions on inputs sized like an 8 h recording.
//
//   sleeprad_bench [--hours H] [--repeats R]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include <CLI11.hpp>

#include "sleeprad/kernels.hpp"

using namespace sleeprad;

namespace {

double best_of(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void row(const char* name, double serial_s, double parallel_s, double diff) {
  std::printf("%-22s %10.4f %10.4f %8.2fx %12.3g\n", name, serial_s, parallel_s, serial_s / parallel_s, diff);
}

}  // namespace

int main(int argc, char** argv) {
  double hours = 8.0;
  int repeats = 3;
  CLI::App app{"kernel benchmark"};
  app.add_option("--hours", hours, "simulated record length")->check(CLI::PositiveNumber);
  app.add_option("--repeats", repeats, "timed runs per kernel, best is reported")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double duration_s = hours * 3600.0;

  std::printf("threads: %d, record: %.1f h\n", omp_get_max_threads(), hours);
  std::printf("%-22s %10s %10s %9s %12s\n", "kernel", "serial s", "omp s", "speedup", "max |diff|");

  {
    kernels::SpectrumSpec spec;
    std::vector<double> x(static_cast<std::size_t>(duration_s * spec.fs));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * M_PI * 0.3 * i / spec.fs) + 0.1 * noise(rng);
    const auto framing = make_framing(duration_s);
    std::vector<double> centers(framing.n_frames);
    for (std::size_t k = 0; k < centers.size(); ++k) centers[k] = framing.center(k);
    Matrix a, b;
    const double ts = best_of(repeats, [&] { a = kernels::reference::short_time_spectrum(x, centers, spec); });
    const double tp = best_of(repeats, [&] { b = kernels::short_time_spectrum(x, centers, spec); });
    row("short_time_spectrum", ts, tp, max_abs_diff(a.data, b.data));
  }

  {
    const double fs = 50.0;
    std::vector<double> x(static_cast<std::size_t>(duration_s * fs));
    for (auto& v : x) v = noise(rng);
    const auto framing = make_framing(duration_s);
    std::vector<double> a, b;
    const double ts = best_of(repeats, [&] { a = kernels::reference::frame_mean(x, fs, framing); });
    const double tp = best_of(repeats, [&] { b = kernels::frame_mean(x, fs, framing); });
    row("frame_mean", ts, tp, max_abs_diff(a, b));
  }

  {
    const std::size_t steps = static_cast<std::size_t>(duration_s / 2.0), cin = 112, cout = 24, kernel = 5;
    Matrix in(steps, cin);
    for (auto& v : in.data) v = noise(rng);
    std::vector<double> w(cout * cin * kernel), bias(cout);
    for (auto& v : w) v = 0.05 * noise(rng);
    for (auto& v : bias) v = 0.01 * noise(rng);
    Matrix a, b;
    const double ts = best_of(repeats, [&] { a = kernels::reference::conv1d_same(in, w, bias, cout, kernel); });
    const double tp = best_of(repeats, [&] { b = kernels::conv1d_same(in, w, bias, cout, kernel); });
    row("conv1d_same", ts, tp, max_abs_diff(a.data, b.data));
  }
  return 0;
}
