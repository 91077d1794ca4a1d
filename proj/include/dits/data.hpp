#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dits/common.hpp"

namespace dits {

enum class CovariateKind { KnownFuture, PastOnly };

/// One ingested dataset: a single endogenous target plus C exogenous columns,
/// all of equal length, timestamps strictly increasing, values finite.
/// Panels are immutable after load.
struct SeriesPanel {
  std::string target_name;
  std::vector<std::string> timestamps;
  std::vector<double> target;
  std::vector<std::string> covariate_names;
  std::vector<CovariateKind> covariate_kinds;
  std::vector<std::vector<double>> covariates;  // [C][T]

  std::size_t length() const { return target.size(); }
  std::size_t n_covariates() const { return covariates.size(); }
};

struct CsvSchema {
  std::string timestamp_column;
  std::string target_column;
  std::vector<std::pair<std::string, CovariateKind>> covariates;
};

/// Comma-separated input with a header row and RFC-4180 quoting. Parse
/// failures carry the data row index and column name.
SeriesPanel load_csv(const std::string& path, const CsvSchema& schema);
SeriesPanel parse_csv(std::string_view text, const CsvSchema& schema,
                      const std::string& origin = "<memory>");

/// Contiguous, disjoint, ordered index ranges.
struct SplitSpec {
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;

  std::size_t train_len() const { return train_end - train_begin; }
  std::size_t val_len() const { return val_end - val_begin; }
  std::size_t test_len() const { return test_end - test_begin; }
};

/// 70/10/20 split with integer truncation: num_train = floor(f_train * T),
/// num_test = floor(f_test * T), validation takes the remainder.
SplitSpec fraction_split(std::size_t t_total, double train_frac = 0.7,
                         double test_frac = 0.2);

enum class FutureMode { WithFuture, WithoutFuture };

/// Strict: every window (history included) lies inside its range.
/// WarmStart: forecast origins lie inside the range, history may extend into
/// the preceding range — the usual rolling-origin evaluation protocol.
enum class HistoryMode { Strict, WarmStart };

struct WindowingConfig {
  std::size_t input_len = 168;
  std::size_t horizon = 24;
  std::size_t patch_len = 24;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 0;  // 0 -> horizon (non-overlapping forecasts)
  FutureMode future_mode = FutureMode::WithFuture;
  HistoryMode history_mode = HistoryMode::Strict;
  bool normalize = true;

  std::size_t padded_input() const {
    return (input_len + patch_len - 1) / patch_len * patch_len;
  }
  std::size_t effective_eval_stride() const {
    return eval_stride == 0 ? horizon : eval_stride;
  }
};

struct RenormStats {
  double mu = 0.0;
  double sigma = 1.0;
  std::vector<double> cov_mu, cov_sigma;
};

/// One training/inference sample. The history is left-padded by edge
/// replication to a multiple of the patch length; the horizon must be a
/// multiple of the patch length by config validation.
struct SeriesWindow {
  std::vector<double> x_hist;  // padded_input values
  std::vector<double> y_pred;  // horizon values
  std::vector<double> cov;     // (padded_input + horizon) x C, row-major
  std::size_t hist_pad = 0;
  std::size_t origin = 0;  // panel index of the first horizon step
  bool normalized = false;
  RenormStats stats;

  std::size_t input_len() const { return x_hist.size(); }
  std::size_t horizon() const { return y_pred.size(); }
  std::size_t total_len() const { return x_hist.size() + y_pred.size(); }
  std::size_t n_cov() const {
    return total_len() == 0 ? 0 : cov.size() / total_len();
  }
};

/// Extracts windows whose forecast origins step through [begin, end) by
/// `stride`. warm_start permits history to reach before `begin`.
std::vector<SeriesWindow> make_windows(const SeriesPanel& panel,
                                       std::size_t begin, std::size_t end,
                                       const WindowingConfig& cfg,
                                       std::size_t stride,
                                       bool warm_start = false);

std::size_t window_count(std::size_t range_len, std::size_t input_len,
                         std::size_t horizon, std::size_t stride,
                         bool warm_start);

/// Per-window standardization by the endogenous history's own statistics
/// (mean and population std, sigma floored at 1e-8). Covariates use their own
/// per-column history statistics. The same (mu, sigma) is applied to the
/// prediction target so forecasts can be mapped back with denormalize().
SeriesWindow renormalize(const SeriesWindow& w);
std::vector<double> denormalize(std::span<const double> values,
                                const RenormStats& stats);

// --- synthetic datasets (the analytic oracles for acceptance tests) ---

struct SynthCovariateConfig {
  std::uint64_t seed = 1;
  std::size_t t_total = 6000;
  std::size_t n_cov = 2;
  std::vector<double> weights = {0.8, -0.5};
  double noise_sigma = 0.2;
  double min_period = 50.0;
  double max_period = 500.0;
};

struct SynthPanel {
  SeriesPanel panel;
  /// Bayes-optimal horizon MSE in normalized units: noise variance over the
  /// (empirical) target variance. Zero for datasets without a closed form.
  double oracle_floor = 0.0;
  double target_variance = 0.0;
};

/// Smooth random-phase sinusoidal covariates; target is their weighted sum
/// plus Gaussian noise, so the reachable forecast error has a closed form.
SynthPanel synth_covariate_regression(const SynthCovariateConfig& cfg);

struct SynthEndoConfig {
  std::uint64_t seed = 1;
  std::size_t t_total = 6000;
  std::vector<double> periods = {24.0, 168.0};
  std::vector<double> amplitudes = {1.0, 0.5};
  double ar_coeff = 0.8;
  double ar_sigma = 0.1;
  bool random_phases = true;
};

/// Multi-scale sinusoid plus AR(1) noise, no covariates.
SeriesPanel synth_endogenous(const SynthEndoConfig& cfg);

// --- dataset manifest ---

/// Key-value document declaring where data comes from: a CSV with column
/// roles and covariate kinds, or one of the synthetic generators.
struct DatasetManifest {
  enum class Type { Csv, SynthCovariate, SynthEndogenous };
  Type type = Type::Csv;
  std::string csv_path;
  CsvSchema schema;
  SynthCovariateConfig synth_cov;
  SynthEndoConfig synth_endo;
};

DatasetManifest load_manifest(const std::string& path);
DatasetManifest parse_manifest(const std::string& text,
                               const std::string& base_dir);
SynthPanel load_dataset(const DatasetManifest& manifest);

}  // namespace dits
