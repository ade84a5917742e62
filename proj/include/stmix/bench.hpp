#pragma once

#include <string>
#include <vector>

#include "stmix/reparam.hpp"

namespace stmix {

enum class BenchModule { Conv, Attn, FFN, ConvFFN };

const char* module_name(BenchModule m);
BenchModule parse_module(const std::string& name);

struct BenchSpec {
    BenchModule module = BenchModule::Conv;
    int t = 8, h = 14, w = 14;
    int c = 512;
    int layers = 1;
    int warmup = 10;
    int timed = 100;
    std::uint64_t seed = 0;

    void validate() const;
    std::string describe() const;
};

struct LatencyRecord {
    BenchSpec spec;
    std::vector<double> samples_ms;  // raw per-iteration wall times
    double mean_ms = 0.0, median_ms = 0.0, p5_ms = 0.0, p95_ms = 0.0;
    std::string host;
    bool ok = true;
    std::string error;
};

// Builds a stack of `layers` identical fused blocks with seeded random
// parameters and times forward passes on a fixed random input.
LatencyRecord run_bench(const BenchSpec& spec);

// Runs every spec; per-row failures are recorded and the grid continues.
std::vector<LatencyRecord> run_grid(const std::vector<BenchSpec>& grid);

// The standard grid: 3 spatiotemporal sizes x 7 channel dims x {Conv, Attn,
// ConvFFN} single-layer, plus a {1,10,20,30}-layer sweep over all four
// modules at dim 512, 8x14x14.
std::vector<BenchSpec> default_grid(int warmup = 10, int timed = 100, std::uint64_t seed = 0);

// CSV schema: module,t,h,w,c,layers,iters,mean_ms,median_ms,p5_ms,p95_ms,host
void write_report_csv(const std::vector<LatencyRecord>& report, const std::string& path);
std::string report_csv_string(const std::vector<LatencyRecord>& report);
std::vector<LatencyRecord> parse_report_csv(const std::string& text);
std::vector<LatencyRecord> read_report_csv(const std::string& path);

struct TrendThresholds {
    double attn_layer_ratio_min = 20.0;
    double conv_layer_ratio_max = 5.0;
    int max_channel_inversions = 1;
    double token_superlinear_exponent = 1.0;

    static TrendThresholds parse(const std::string& text);
    static TrendThresholds load_file(const std::string& path);
};

enum class TrendStatus { Pass, Fail, NotRun };

struct TrendResult {
    std::string name;
    TrendStatus status = TrendStatus::NotRun;
    std::string detail;
};

std::vector<TrendResult> trend_check(const std::vector<LatencyRecord>& report,
                                     const TrendThresholds& th);

std::string host_descriptor();

}  // namespace stmix
