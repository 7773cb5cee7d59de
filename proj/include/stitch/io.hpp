#ifndef STITCH_IO_HPP
#define STITCH_IO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stitch/lds.hpp"
#include "stitch/observation.hpp"
#include "stitch/s3id.hpp"
#include "stitch/sem.hpp"

namespace stitch {

// On-disk dataset: data.json header, data.bin raw little-endian f64 payload
// in time-major layout with unobserved entries as quiet NaN, scheme.json
// sidecar and optional truth.json.
struct Dataset {
  MaskedTimeSeries data;
  std::optional<LdsParams> truth;
};

void write_dataset(const std::string& dir, const MaskedTimeSeries& data,
                   const LdsParams* truth);
Dataset read_dataset(const std::string& dir);

// Fitted parameters. C is stored in a binary sidecar above p = 10000.
struct FittedModel {
  std::string method;
  LatentMode mode = LatentMode::kLinear;
  LdsParams params;                      // linear-mode parameters
  std::optional<LatentMoments> moments;  // nonlinear mode
};

void write_params(const std::string& path, const FittedModel& model);
FittedModel read_params(const std::string& path);

void write_loss_trace_csv(const std::string& path,
                          const std::vector<LossTracePoint>& trace);
void write_loglik_trace_csv(const std::string& path,
                            const std::vector<double>& loglik,
                            const std::vector<double>& wall_time_s);

// Full run configuration with strict key checking.
struct SchemeConfig {
  std::string kind;  // "two_subset" | "multi_subset"
  double overlap_fraction = 0.1;  // two_subset
  int k_subsets = 2;              // multi_subset
  int overlap = 0;                // multi_subset, variable count
  long T1 = 0, T2 = 0, T_each = 0;
};

struct EvalConfig {
  int max_lag = 1;
  long pair_sample = 1000000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  SimConfig sim;
  SchemeConfig scheme;
  S3idConfig s3id;
  SemConfig sem;
  EvalConfig eval;
};

RunConfig parse_run_config(const std::string& path);

ObservationScheme build_scheme(const SchemeConfig& cfg, int p, long T);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace stitch

#endif
