#pragma once

// Wall-clock micro-benchmarks for the inference schemes.

#include <chrono>
#include <string>
#include <vector>

#include "certsmooth/bytes.hpp"
#include "certsmooth/classifier.hpp"
#include "certsmooth/smoothing.hpp"

namespace certsmooth {

// Best-of-`repeats` seconds for one invocation of fn.
template <typename F>
double measure_seconds(F&& fn, std::size_t repeats = 3) {
    double best = 1e300;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

struct BenchRow {
    std::string scheme;
    double seconds_per_example;
    std::size_t n_files;
};

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "scheme,seconds_per_example,n_files\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.9f,%zu\n", r.scheme.c_str(), r.seconds_per_example,
                      r.n_files);
        out += buf;
    }
    return out;
}

inline double bench_ns(const TrainedModel& ns, const std::vector<Bytes>& files,
                       std::size_t repeats = 3) {
    volatile double sink = 0.0;
    const double t = measure_seconds(
        [&] {
            for (const auto& f : files) sink = sink + score_prefix(ns, f);
        },
        repeats);
    return t / static_cast<double>(files.size());
}

inline double bench_randomized(const TrainedModel& ns, const std::vector<Bytes>& files,
                               const RandomizedScheme& scheme, std::size_t repeats = 3) {
    volatile double sink = 0.0;
    const double t = measure_seconds(
        [&] {
            for (const auto& f : files) sink = sink + predict_randomized(ns, f, scheme).prob_malicious;
        },
        repeats);
    return t / static_cast<double>(files.size());
}

inline double bench_smoothed(const TrainedModel& cs, const std::vector<Bytes>& files, std::size_t z,
                             std::size_t repeats = 3) {
    volatile double sink = 0.0;
    const double t = measure_seconds(
        [&] {
            for (const auto& f : files) sink = sink + predict_smoothed(cs, f, z).prob_malicious;
        },
        repeats);
    return t / static_cast<double>(files.size());
}

} // namespace certsmooth
