#include "dits/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dits/rng.hpp"
#include "json.hpp"

namespace dits {

namespace {

constexpr double kSigmaFloor = 1e-8;

struct CsvTable {
  std::vector<std::vector<std::string>> records;
};

// RFC-4180: quoted fields may contain commas, CRLF and doubled quotes.
CsvTable parse_records(std::string_view text, const std::string& origin) {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  std::size_t i = 0;
  auto end_field = [&]() {
    record.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
  };
  auto end_record = [&]() {
    end_field();
    table.records.push_back(std::move(record));
    record.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_was_quoted)
          throw Error(origin + ": stray quote in record " +
                      std::to_string(table.records.size()));
        in_quotes = true;
        field_was_quoted = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n':
        end_record();
        ++i;
        break;
      default:
        field += c;
        ++i;
        break;
    }
  }
  if (in_quotes)
    throw Error(origin + ": unterminated quoted field at end of input");
  if (!field.empty() || !record.empty()) end_record();
  return table;
}

double parse_number(const std::string& s, const std::string& origin,
                    std::size_t row, const std::string& column) {
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e)
    throw Error(origin + ": unparseable number '" + s + "' at row " +
                std::to_string(row) + ", column '" + column + "'");
  return v;
}

bool parse_number_opt(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

}  // namespace

SeriesPanel parse_csv(std::string_view text, const CsvSchema& schema,
                      const std::string& origin) {
  CsvTable table = parse_records(text, origin);
  if (table.records.empty()) throw Error(origin + ": empty file");
  const auto& header = table.records.front();

  auto column_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(origin + ": header has no column '" + name + "'");
  };

  const std::size_t ts_col = column_index(schema.timestamp_column);
  const std::size_t target_col = column_index(schema.target_column);
  std::vector<std::size_t> cov_cols;
  SeriesPanel panel;
  panel.target_name = schema.target_column;
  for (const auto& [name, kind] : schema.covariates) {
    cov_cols.push_back(column_index(name));
    panel.covariate_names.push_back(name);
    panel.covariate_kinds.push_back(kind);
    panel.covariates.emplace_back();
  }

  const std::size_t n_rows = table.records.size() - 1;
  panel.timestamps.reserve(n_rows);
  panel.target.reserve(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& rec = table.records[r + 1];
    if (rec.size() != header.size())
      throw Error(origin + ": ragged row " + std::to_string(r) + " has " +
                  std::to_string(rec.size()) + " fields, header has " +
                  std::to_string(header.size()));
    panel.timestamps.push_back(rec[ts_col]);
    const double y =
        parse_number(rec[target_col], origin, r, schema.target_column);
    if (!std::isfinite(y))
      throw Error(origin + ": non-finite target at row " + std::to_string(r));
    panel.target.push_back(y);
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const double v = parse_number(rec[cov_cols[c]], origin, r,
                                    panel.covariate_names[c]);
      if (!std::isfinite(v))
        throw Error(origin + ": non-finite covariate '" +
                    panel.covariate_names[c] + "' at row " +
                    std::to_string(r));
      panel.covariates[c].push_back(v);
    }
  }

  // strictly increasing timestamps; numeric comparison when both sides parse
  for (std::size_t r = 1; r < panel.timestamps.size(); ++r) {
    const auto& prev = panel.timestamps[r - 1];
    const auto& cur = panel.timestamps[r];
    double a = 0, b = 0;
    const bool numeric = parse_number_opt(prev, a) && parse_number_opt(cur, b);
    const bool increasing = numeric ? (b > a) : (cur > prev);
    if (!increasing)
      throw Error(origin + ": timestamps not strictly increasing at row " +
                  std::to_string(r) + " ('" + prev + "' then '" + cur + "')");
  }
  return panel;
}

SeriesPanel load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_csv: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema, path);
}

SplitSpec fraction_split(std::size_t t_total, double train_frac,
                         double test_frac) {
  if (train_frac <= 0 || test_frac < 0 || train_frac + test_frac >= 1.0)
    throw Error("fraction_split: invalid fractions");
  const auto num_train =
      static_cast<std::size_t>(train_frac * static_cast<double>(t_total));
  const auto num_test =
      static_cast<std::size_t>(test_frac * static_cast<double>(t_total));
  if (num_train + num_test > t_total)
    throw Error("fraction_split: series too short");
  SplitSpec s;
  s.train_begin = 0;
  s.train_end = num_train;
  s.val_begin = num_train;
  s.val_end = t_total - num_test;
  s.test_begin = t_total - num_test;
  s.test_end = t_total;
  return s;
}

std::size_t window_count(std::size_t range_len, std::size_t input_len,
                         std::size_t horizon, std::size_t stride,
                         bool warm_start) {
  if (stride == 0) throw Error("window_count: stride must be positive");
  if (warm_start) {
    if (range_len < horizon) return 0;
    return (range_len - horizon) / stride + 1;
  }
  if (range_len < input_len + horizon)
    throw Error("window_count: range of length " + std::to_string(range_len) +
                " shorter than input_len + horizon = " +
                std::to_string(input_len + horizon));
  return (range_len - input_len - horizon) / stride + 1;
}

std::vector<SeriesWindow> make_windows(const SeriesPanel& panel,
                                       std::size_t begin, std::size_t end,
                                       const WindowingConfig& cfg,
                                       std::size_t stride, bool warm_start) {
  if (end > panel.length() || begin > end)
    throw Error("make_windows: range [" + std::to_string(begin) + ", " +
                std::to_string(end) + ") outside panel of length " +
                std::to_string(panel.length()));
  if (cfg.horizon == 0 || cfg.input_len == 0)
    throw Error("make_windows: input_len and horizon must be positive");
  if (cfg.horizon % cfg.patch_len != 0)
    throw Error("make_windows: horizon " + std::to_string(cfg.horizon) +
                " is not a multiple of patch_len " +
                std::to_string(cfg.patch_len));

  const std::size_t L = cfg.input_len;
  const std::size_t H = cfg.horizon;
  const std::size_t Lp = cfg.padded_input();
  const std::size_t pad = Lp - L;
  const std::size_t C = panel.n_covariates();
  const std::size_t total = Lp + H;

  // count validates the range; warm-start additionally needs full history
  // before the first origin
  (void)window_count(end - begin, L, H, stride, warm_start);

  std::vector<SeriesWindow> out;
  const std::size_t first_origin = warm_start ? std::max(begin, L) : begin + L;
  for (std::size_t origin = first_origin; origin + H <= end;
       origin += stride) {
    const std::size_t start = origin - L;
    SeriesWindow w;
    w.origin = origin;
    w.hist_pad = pad;
    w.x_hist.resize(Lp);
    for (std::size_t i = 0; i < Lp; ++i)
      w.x_hist[i] = panel.target[start + (i < pad ? 0 : i - pad)];
    w.y_pred.assign(panel.target.begin() + static_cast<std::ptrdiff_t>(origin),
                    panel.target.begin() +
                        static_cast<std::ptrdiff_t>(origin + H));
    w.cov.resize(total * C);
    for (std::size_t c = 0; c < C; ++c) {
      const auto& col = panel.covariates[c];
      const bool keep_future =
          cfg.future_mode == FutureMode::WithFuture &&
          panel.covariate_kinds[c] == CovariateKind::KnownFuture;
      for (std::size_t t = 0; t < total; ++t) {
        double v;
        if (t < Lp) {
          v = col[start + (t < pad ? 0 : t - pad)];
        } else {
          v = keep_future ? col[origin + (t - Lp)] : 0.0;
        }
        w.cov[t * C + c] = v;
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

std::pair<double, double> history_stats(std::span<const double> values) {
  double mu = 0;
  for (double v : values) mu += v;
  mu /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mu) * (v - mu);
  var /= static_cast<double>(values.size());
  return {mu, std::max(std::sqrt(var), kSigmaFloor)};
}

}  // namespace

SeriesWindow renormalize(const SeriesWindow& w) {
  if (w.normalized) throw Error("renormalize: window already normalized");
  SeriesWindow out = w;
  const std::size_t Lp = w.input_len();
  const std::size_t C = w.n_cov();
  auto [mu, sigma] = history_stats(
      std::span<const double>(w.x_hist).subspan(w.hist_pad));
  out.stats.mu = mu;
  out.stats.sigma = sigma;
  for (auto& v : out.x_hist) v = (v - mu) / sigma;
  for (auto& v : out.y_pred) v = (v - mu) / sigma;
  out.stats.cov_mu.resize(C);
  out.stats.cov_sigma.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> hist;
    hist.reserve(Lp - w.hist_pad);
    for (std::size_t t = w.hist_pad; t < Lp; ++t)
      hist.push_back(w.cov[t * C + c]);
    auto [cmu, csigma] = history_stats(hist);
    out.stats.cov_mu[c] = cmu;
    out.stats.cov_sigma[c] = csigma;
    for (std::size_t t = 0; t < w.total_len(); ++t)
      out.cov[t * C + c] = (w.cov[t * C + c] - cmu) / csigma;
  }
  out.normalized = true;
  return out;
}

std::vector<double> denormalize(std::span<const double> values,
                                const RenormStats& stats) {
  std::vector<double> out(values.begin(), values.end());
  for (auto& v : out) v = v * stats.sigma + stats.mu;
  return out;
}

SynthPanel synth_covariate_regression(const SynthCovariateConfig& cfg) {
  if (cfg.n_cov == 0 && !cfg.weights.empty()) {
    for (double w : cfg.weights)
      if (w != 0.0)
        throw Error(
            "synth_covariate_regression: nonzero weights with no covariates");
  }
  if (cfg.weights.size() != cfg.n_cov)
    throw Error("synth_covariate_regression: " +
                std::to_string(cfg.weights.size()) + " weights for " +
                std::to_string(cfg.n_cov) + " covariates");

  Rng rng(cfg.seed);
  SynthPanel out;
  SeriesPanel& panel = out.panel;
  panel.target_name = "target";
  panel.timestamps.reserve(cfg.t_total);
  for (std::size_t t = 0; t < cfg.t_total; ++t)
    panel.timestamps.push_back(std::to_string(t));

  constexpr double kTwoPi = 6.283185307179586476925287;
  panel.covariates.assign(cfg.n_cov, std::vector<double>(cfg.t_total));
  for (std::size_t c = 0; c < cfg.n_cov; ++c) {
    const double p1 = rng.uniform(cfg.min_period, cfg.max_period);
    const double p2 = rng.uniform(cfg.min_period, cfg.max_period);
    const double ph1 = rng.uniform(0.0, kTwoPi);
    const double ph2 = rng.uniform(0.0, kTwoPi);
    for (std::size_t t = 0; t < cfg.t_total; ++t) {
      const double x = static_cast<double>(t);
      panel.covariates[c][t] = std::sin(kTwoPi * x / p1 + ph1) +
                               0.5 * std::sin(kTwoPi * x / p2 + ph2);
    }
    panel.covariate_names.push_back("cov" + std::to_string(c));
    panel.covariate_kinds.push_back(CovariateKind::KnownFuture);
  }

  panel.target.resize(cfg.t_total);
  for (std::size_t t = 0; t < cfg.t_total; ++t) {
    double v = 0;
    for (std::size_t c = 0; c < cfg.n_cov; ++c)
      v += cfg.weights[c] * panel.covariates[c][t];
    panel.target[t] = v + cfg.noise_sigma * rng.normal();
  }

  double mu = 0;
  for (double v : panel.target) mu += v;
  mu /= static_cast<double>(cfg.t_total);
  double var = 0;
  for (double v : panel.target) var += (v - mu) * (v - mu);
  var /= static_cast<double>(cfg.t_total);
  out.target_variance = var;
  out.oracle_floor =
      var > 0 ? cfg.noise_sigma * cfg.noise_sigma / var : 0.0;
  return out;
}

SeriesPanel synth_endogenous(const SynthEndoConfig& cfg) {
  if (cfg.periods.size() != cfg.amplitudes.size())
    throw Error("synth_endogenous: periods/amplitudes size mismatch");
  Rng rng(cfg.seed);
  SeriesPanel panel;
  panel.target_name = "target";
  panel.timestamps.reserve(cfg.t_total);
  for (std::size_t t = 0; t < cfg.t_total; ++t)
    panel.timestamps.push_back(std::to_string(t));

  constexpr double kTwoPi = 6.283185307179586476925287;
  std::vector<double> phases(cfg.periods.size(), 0.0);
  if (cfg.random_phases)
    for (auto& p : phases) p = rng.uniform(0.0, kTwoPi);

  panel.target.resize(cfg.t_total);
  double noise = 0.0;
  for (std::size_t t = 0; t < cfg.t_total; ++t) {
    noise = cfg.ar_coeff * noise + cfg.ar_sigma * rng.normal();
    double v = noise;
    for (std::size_t k = 0; k < cfg.periods.size(); ++k)
      v += cfg.amplitudes[k] *
           std::sin(kTwoPi * static_cast<double>(t) / cfg.periods[k] +
                    phases[k]);
    panel.target[t] = v;
  }
  return panel;
}

// --- manifest ---

namespace {

using Json = nlohmann::json;

void check_keys(const Json& obj, std::initializer_list<const char*> allowed,
                const std::string& context) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok)
      throw Error(context + ": unknown key '" + it.key() + "'");
  }
}

CovariateKind parse_kind(const std::string& s, const std::string& context) {
  if (s == "known_future" || s == "known-future") return CovariateKind::KnownFuture;
  if (s == "past_only" || s == "past-only") return CovariateKind::PastOnly;
  throw Error(context + ": unknown covariate kind '" + s + "'");
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text,
                               const std::string& base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw Error(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("manifest: top level must be an object");
  const std::string type = j.value("type", "csv");
  DatasetManifest m;
  if (type == "csv") {
    m.type = DatasetManifest::Type::Csv;
    check_keys(j, {"type", "path", "timestamp_column", "target_column",
                   "covariates"},
               "manifest");
    m.csv_path = j.at("path").get<std::string>();
    if (!m.csv_path.empty() && m.csv_path.front() != '/' && !base_dir.empty())
      m.csv_path = base_dir + "/" + m.csv_path;
    m.schema.timestamp_column = j.at("timestamp_column").get<std::string>();
    m.schema.target_column = j.at("target_column").get<std::string>();
    for (const auto& c : j.value("covariates", Json::array())) {
      check_keys(c, {"column", "kind"}, "manifest.covariates");
      m.schema.covariates.emplace_back(
          c.at("column").get<std::string>(),
          parse_kind(c.at("kind").get<std::string>(), "manifest.covariates"));
    }
  } else if (type == "synth_covariate") {
    m.type = DatasetManifest::Type::SynthCovariate;
    check_keys(j, {"type", "seed", "t_total", "n_cov", "weights",
                   "noise_sigma", "min_period", "max_period"},
               "manifest");
    auto& c = m.synth_cov;
    c.seed = j.value("seed", c.seed);
    c.t_total = j.value("t_total", c.t_total);
    c.n_cov = j.value("n_cov", c.n_cov);
    if (j.contains("weights")) c.weights = j.at("weights").get<std::vector<double>>();
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.min_period = j.value("min_period", c.min_period);
    c.max_period = j.value("max_period", c.max_period);
  } else if (type == "synth_endogenous") {
    m.type = DatasetManifest::Type::SynthEndogenous;
    check_keys(j, {"type", "seed", "t_total", "periods", "amplitudes",
                   "ar_coeff", "ar_sigma", "random_phases"},
               "manifest");
    auto& c = m.synth_endo;
    c.seed = j.value("seed", c.seed);
    c.t_total = j.value("t_total", c.t_total);
    if (j.contains("periods")) c.periods = j.at("periods").get<std::vector<double>>();
    if (j.contains("amplitudes"))
      c.amplitudes = j.at("amplitudes").get<std::vector<double>>();
    c.ar_coeff = j.value("ar_coeff", c.ar_coeff);
    c.ar_sigma = j.value("ar_sigma", c.ar_sigma);
    c.random_phases = j.value("random_phases", c.random_phases);
  } else {
    throw Error("manifest: unknown type '" + type + "'");
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_manifest: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(),
                        std::filesystem::path(path).parent_path().string());
}

SynthPanel load_dataset(const DatasetManifest& manifest) {
  switch (manifest.type) {
    case DatasetManifest::Type::Csv: {
      SynthPanel out;
      out.panel = load_csv(manifest.csv_path, manifest.schema);
      return out;
    }
    case DatasetManifest::Type::SynthCovariate:
      return synth_covariate_regression(manifest.synth_cov);
    case DatasetManifest::Type::SynthEndogenous: {
      SynthPanel out;
      out.panel = synth_endogenous(manifest.synth_endo);
      return out;
    }
  }
  throw Error("load_dataset: unreachable");
}

}  // namespace dits
