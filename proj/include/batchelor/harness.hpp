#ifndef BATCHELOR_HARNESS_HPP
#define BATCHELOR_HARNESS_HPP

// Experiment configuration and the staged pipeline:
//   calibrate -> simulate -> contours -> fractal / pdf / loewner -> report.
// Every stage has an in-memory core and a file wrapper that reads and writes
// only its own files under the output directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batchelor/contour.hpp"
#include "batchelor/flow.hpp"
#include "batchelor/fractal.hpp"
#include "batchelor/io.hpp"
#include "batchelor/loewner.hpp"
#include "batchelor/random.hpp"
#include "batchelor/scalar.hpp"
#include "batchelor/stats.hpp"

namespace batchelor {

struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;

  // flow; kappa_d is set from lambda after calibration
  double D = 1.0;
  double dt = 0.01;
  double kappa_d_over_lambda = 1e-4;
  std::size_t calibration_steps = 20000;
  std::size_t calibration_samples = 32;

  // pumping (nu per unit time per unit area, in units of lambda)
  double nu_over_lambda = 0.01;
  double amp_sigma = 1.0;
  double spawn_margin = 3.0;

  // window and snapshot lattice
  double window_width = 150.0, window_height = 150.0;
  double pixel_size = 150.0 / 4096.0;
  double smoothing_pixels = 1.0;  // std of the Gaussian resolution filter, in pixels
  double T_lambda = 20.0;

  double cull_threshold = 1e-3;
  double support_sigma = 6.0;
  double chunk_lambda = 1.0;
  bool checkpoint = true;

  // contours
  double level = 0.0;
  double min_perimeter_pixels = 4.0;

  // fractal
  double fractal_min_R = 3.0;
  std::vector<double> fractal_q{0.0, 2.0, 4.0};
  double fractal_ratio = std::sqrt(2.0);
  double fractal_small_lo_pixels = 2.0;
  double fractal_small_hi = 0.5;
  Range fractal_large{2.0, 150.0 / 8.0};
  std::size_t fractal_max_contours = 400;
  double fractal_large_cap = 0.5;  // largest box, in units of each contour's R_gyr

  // pdf
  std::size_t pdf_bins = 40;
  Range pdf_R_range{0.01, 200.0};
  Range pdf_P_range{0.05, 5000.0};
  double pdf_left_lo_pixels = 5.0;  // left size tail fitted over [lo * pixel, hi]
  double pdf_left_hi = 1.0 / 3.0;
  Range pdf_right_P{15.0, 300.0};
  Range pdf_right_R{1.5, 12.0};
  double pdf_mode_min_pixels = 5.0;  // masks the pixel-scale peak

  // loewner
  double loewner_min_perimeter = 10.0;
  double loewner_drop_fraction = 0.05;
  double loewner_resample_pixels = 1.0;
  std::size_t loewner_max_points = 20000;
  std::size_t loewner_max_contours = 0;  // 0: all
  double loewner_contraction = 1.0;      // along the stretching axis; 0 means L / pixel_size
  Range loewner_t{0.0, 0.0};             // t.hi = 0: median capacity of the ensemble
  DiffusivityMethod loewner_method = DiffusivityMethod::TimeAveraged;

  std::filesystem::path out = "out";

  void validate() const;
  json to_json() const;
  static ExperimentConfig from_json(const json& j);
};

namespace detail {

// Walks a JSON object, reading known keys and rejecting unknown ones with
// their dotted path.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(where() + "expected an object");
  }
  ~ConfigReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw config_error(where() + "unknown key '" + it.key() + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw config_error(path_ + key + ": wrong type");
    }
  }
  void get(const char* key, Range& r) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw config_error(path_ + key + ": expected [lo, hi]");
    r = {v[0].get<double>(), v[1].get<double>()};
  }
  void get(const char* key, std::filesystem::path& p) {
    std::string s = p.string();
    get(key, s);
    p = s;
  }
  ConfigReader sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, path_ + key + ".");
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_.substr(0, path_.size() - 1) + ": "; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw config_error(what);
}

inline bool range_ok(Range r) { return r.lo > 0.0 && r.hi > r.lo && std::isfinite(r.hi); }

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  {
    detail::ConfigReader r(j, "");
    r.get("seed", c.seed);
    r.get("T_lambda", c.T_lambda);
    r.get("out", c.out);
    {
      auto f = r.sub("flow");
      f.get("D", c.D);
      f.get("dt", c.dt);
      f.get("kappa_d_over_lambda", c.kappa_d_over_lambda);
      f.get("calibration_steps", c.calibration_steps);
      f.get("calibration_samples", c.calibration_samples);
    }
    {
      auto p = r.sub("pumping");
      p.get("nu_over_lambda", c.nu_over_lambda);
      p.get("amp_sigma", c.amp_sigma);
      p.get("spawn_margin", c.spawn_margin);
    }
    {
      auto w = r.sub("window");
      w.get("width", c.window_width);
      w.get("height", c.window_height);
    }
    {
      auto g = r.sub("grid");
      std::size_t nx = 0;
      g.get("nx", nx);
      g.get("pixel_size", c.pixel_size);
      g.get("smoothing_pixels", c.smoothing_pixels);
      if (nx > 0) c.pixel_size = c.window_width / static_cast<double>(nx);
    }
    {
      auto s = r.sub("scalar");
      s.get("cull_threshold", c.cull_threshold);
      s.get("support_sigma", c.support_sigma);
      s.get("chunk_lambda", c.chunk_lambda);
      s.get("checkpoint", c.checkpoint);
    }
    {
      auto a = r.sub("contours");
      a.get("level", c.level);
      a.get("min_perimeter_pixels", c.min_perimeter_pixels);
    }
    {
      auto f = r.sub("fractal");
      f.get("min_R", c.fractal_min_R);
      f.get("q", c.fractal_q);
      f.get("ratio", c.fractal_ratio);
      f.get("small_lo_pixels", c.fractal_small_lo_pixels);
      f.get("small_hi", c.fractal_small_hi);
      f.get("large", c.fractal_large);
      f.get("max_contours", c.fractal_max_contours);
      f.get("large_cap", c.fractal_large_cap);
    }
    {
      auto p = r.sub("pdf");
      p.get("bins", c.pdf_bins);
      p.get("R_range", c.pdf_R_range);
      p.get("P_range", c.pdf_P_range);
      p.get("left_lo_pixels", c.pdf_left_lo_pixels);
      p.get("left_hi", c.pdf_left_hi);
      p.get("right_P", c.pdf_right_P);
      p.get("right_R", c.pdf_right_R);
      p.get("mode_min_pixels", c.pdf_mode_min_pixels);
    }
    {
      auto l = r.sub("loewner");
      l.get("min_perimeter", c.loewner_min_perimeter);
      l.get("drop_fraction", c.loewner_drop_fraction);
      l.get("resample_pixels", c.loewner_resample_pixels);
      l.get("max_points", c.loewner_max_points);
      l.get("max_contours", c.loewner_max_contours);
      l.get("contraction", c.loewner_contraction);
      l.get("t_window", c.loewner_t);
      std::string m = c.loewner_method == DiffusivityMethod::Ensemble ? "ensemble" : "time_averaged";
      l.get("method", m);
      if (m == "ensemble") c.loewner_method = DiffusivityMethod::Ensemble;
      else if (m == "time_averaged") c.loewner_method = DiffusivityMethod::TimeAveraged;
      else throw config_error("loewner.method: expected 'time_averaged' or 'ensemble'");
    }
  }
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  using detail::require;
  require(D >= 0.0 && std::isfinite(D), "flow.D must be >= 0");
  require(D > 0.0, "flow.D must be > 0 (lambda sets the units)");
  require(dt > 0.0 && std::isfinite(dt), "flow.dt must be > 0");
  require(kappa_d_over_lambda >= 0.0, "flow.kappa_d_over_lambda must be >= 0");
  require(calibration_steps > 0 && calibration_samples >= 2, "flow.calibration_* too small");
  require(nu_over_lambda >= 0.0 && std::isfinite(nu_over_lambda), "pumping.nu_over_lambda must be >= 0");
  require(amp_sigma > 0.0, "pumping.amp_sigma must be > 0");
  require(spawn_margin >= 0.0, "pumping.spawn_margin must be >= 0");
  require(window_width > 0.0 && window_height > 0.0, "window: width and height must be > 0");
  require(pixel_size > 0.0 && pixel_size < std::min(window_width, window_height), "grid.pixel_size out of range");
  require(smoothing_pixels >= 0.0 && std::isfinite(smoothing_pixels), "grid.smoothing_pixels must be >= 0");
  require(T_lambda >= 0.0 && std::isfinite(T_lambda), "T_lambda must be >= 0");
  require(cull_threshold >= 0.0, "scalar.cull_threshold must be >= 0");
  require(support_sigma > 0.0, "scalar.support_sigma must be > 0");
  require(chunk_lambda > 0.0, "scalar.chunk_lambda must be > 0");
  require(min_perimeter_pixels >= 0.0, "contours.min_perimeter_pixels must be >= 0");
  require(fractal_min_R >= 0.0, "fractal.min_R must be >= 0");
  require(!fractal_q.empty(), "fractal.q must not be empty");
  require(fractal_ratio > 1.0, "fractal.ratio must be > 1");
  require(fractal_small_lo_pixels > 0.0 && fractal_small_hi > fractal_small_lo_pixels * pixel_size,
          "fractal: small-scale window is empty");
  require(detail::range_ok(fractal_large), "fractal.large must be 0 < lo < hi");
  require(fractal_large_cap > 0.0, "fractal.large_cap must be > 0");
  require(pdf_bins >= 4, "pdf.bins must be >= 4");
  for (auto [name, r] : {std::pair{"pdf.R_range", pdf_R_range}, {"pdf.P_range", pdf_P_range},
                         {"pdf.right_P", pdf_right_P}, {"pdf.right_R", pdf_right_R}})
    require(detail::range_ok(r), std::string(name) + " must be 0 < lo < hi");
  require(pdf_left_lo_pixels > 0.0 && pdf_left_hi > 0.0, "pdf: left tail window must be positive");
  require(pdf_mode_min_pixels >= 0.0, "pdf.mode_min_pixels must be >= 0");
  require(loewner_drop_fraction >= 0.0 && loewner_drop_fraction < 1.0, "loewner.drop_fraction must be in [0, 1)");
  require(loewner_resample_pixels >= 0.0, "loewner.resample_pixels must be >= 0");
  require(loewner_max_points >= 2, "loewner.max_points must be >= 2");
  require(loewner_contraction >= 0.0, "loewner.contraction must be >= 0");
  require(loewner_t.lo >= 0.0 && (loewner_t.hi == 0.0 || loewner_t.hi > loewner_t.lo), "loewner.t_window invalid");
}

inline json ExperimentConfig::to_json() const {
  auto pair = [](Range r) { return json::array({r.lo, r.hi}); };
  return {
      {"seed", seed},
      {"T_lambda", T_lambda},
      {"out", out.string()},
      {"flow",
       {{"D", D},
        {"dt", dt},
        {"kappa_d_over_lambda", kappa_d_over_lambda},
        {"calibration_steps", calibration_steps},
        {"calibration_samples", calibration_samples}}},
      {"pumping", {{"nu_over_lambda", nu_over_lambda}, {"amp_sigma", amp_sigma}, {"spawn_margin", spawn_margin}}},
      {"window", {{"width", window_width}, {"height", window_height}}},
      {"grid", {{"pixel_size", pixel_size}, {"smoothing_pixels", smoothing_pixels}}},
      {"scalar",
       {{"cull_threshold", cull_threshold},
        {"support_sigma", support_sigma},
        {"chunk_lambda", chunk_lambda},
        {"checkpoint", checkpoint}}},
      {"contours", {{"level", level}, {"min_perimeter_pixels", min_perimeter_pixels}}},
      {"fractal",
       {{"min_R", fractal_min_R},
        {"q", fractal_q},
        {"ratio", fractal_ratio},
        {"small_lo_pixels", fractal_small_lo_pixels},
        {"small_hi", fractal_small_hi},
        {"large", pair(fractal_large)},
        {"max_contours", fractal_max_contours},
        {"large_cap", fractal_large_cap}}},
      {"pdf",
       {{"bins", pdf_bins},
        {"R_range", pair(pdf_R_range)},
        {"P_range", pair(pdf_P_range)},
        {"left_lo_pixels", pdf_left_lo_pixels},
        {"left_hi", pdf_left_hi},
        {"right_P", pair(pdf_right_P)},
        {"right_R", pair(pdf_right_R)},
        {"mode_min_pixels", pdf_mode_min_pixels}}},
      {"loewner",
       {{"min_perimeter", loewner_min_perimeter},
        {"drop_fraction", loewner_drop_fraction},
        {"resample_pixels", loewner_resample_pixels},
        {"max_points", loewner_max_points},
        {"max_contours", loewner_max_contours},
        {"contraction", loewner_contraction},
        {"t_window", pair(loewner_t)},
        {"method", loewner_method == DiffusivityMethod::Ensemble ? "ensemble" : "time_averaged"}}},
  };
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  json j;
  try {
    j = read_json(p);
  } catch (const io_error& e) {
    throw config_error(e.what());
  }
  try {
    return ExperimentConfig::from_json(j);
  } catch (const config_error& e) {
    throw config_error(p.string() + ": " + e.what());
  }
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- calibration ---------------------------------------------------------------

struct Calibration {
  double lambda = 0.0;
  double lambda_stderr = 0.0;
  bool noisy = false;

  json to_json() const { return {{"lambda", lambda}, {"lambda_stderr", lambda_stderr}, {"noisy", noisy}}; }
  static Calibration from_json(const json& j) {
    return {j.at("lambda").get<double>(), j.at("lambda_stderr").get<double>(), j.value("noisy", false)};
  }
};

inline Calibration calibrate(const ExperimentConfig& cfg) {
  const FlowParams p{cfg.D, 0.0, cfg.dt, derive_seed(cfg.seed, 0xCA11B)};
  const LyapunovEstimate e = estimate_lyapunov(p, cfg.calibration_steps, cfg.calibration_samples);
  if (!(e.lambda > 0.0)) throw std::runtime_error("calibration produced a non-positive Lyapunov exponent");
  return {e.lambda, e.std_error, e.noisy};
}

/// Absolute flow parameters of the main run.
inline FlowParams flow_params(const ExperimentConfig& cfg, const Calibration& cal) {
  return {cfg.D, cfg.kappa_d_over_lambda * cal.lambda, cfg.dt, derive_seed(cfg.seed, 1)};
}

// ---- simulation ----------------------------------------------------------------

struct SimulateOptions {
  unsigned workers = 1;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  bool resume = false;
  std::optional<double> halt_at_lambda;   // stop after the chunk reaching this time, no render
};

struct SimulationResult {
  FieldGrid grid;
  BlobDatabase db;  // at T, after the final cull
  json meta;
  bool halted = false;
};

inline std::uint64_t simulation_hash(const ExperimentConfig& cfg, const Calibration& cal) {
  json j = cfg.to_json();
  json h = {{"seed", j["seed"]},     {"T_lambda", j["T_lambda"]}, {"flow", j["flow"]}, {"pumping", j["pumping"]},
            {"window", j["window"]}, {"scalar", j["scalar"]},     {"lambda", cal.lambda}};
  h["scalar"].erase("checkpoint");
  return fnv1a(h.dump());
}

/// Pumps only blobs that can reach the window at T = T_lambda / lambda, in
/// chunks of chunk_lambda / lambda: spawn, evolve, drop faint blobs.  The
/// geometric cull runs once, at T.
inline SimulationResult simulate(const ExperimentConfig& cfg, const Calibration& cal,
                                 const SimulateOptions& opt = {}) {
  cfg.validate();
  const FlowParams fp = flow_params(cfg, cal);
  FlowRealization flow(fp);
  const double T = cfg.T_lambda / cal.lambda;
  PumpingConfig pumping{cfg.nu_over_lambda * cal.lambda, cfg.amp_sigma, cfg.spawn_margin};
  pumping.validate();
  const std::uint64_t hash = simulation_hash(cfg, cal);

  BlobDatabase db;
  db.window = Rect::centered(cfg.window_width, cfg.window_height);
  db.spawn_margin = cfg.spawn_margin;
  db.cull_threshold = cfg.cull_threshold * cfg.amp_sigma;
  db.support_sigma = cfg.support_sigma;

  const SnapshotForecast forecast(flow, T, 6.0 * cfg.amp_sigma, db.cull_threshold);
  const double start = forecast.earliest();
  const double chunk = cfg.chunk_lambda / cal.lambda;
  const auto n_chunks = T > start ? static_cast<std::uint64_t>(std::ceil((T - start) / chunk - 1e-12)) : 0;
  db.t_now = start;
  std::uint64_t first = 0;
  if (opt.resume && !opt.checkpoint_path.empty() && std::filesystem::exists(opt.checkpoint_path)) {
    Checkpoint c = read_checkpoint(opt.checkpoint_path);
    if (c.config_hash != hash) throw std::runtime_error("checkpoint belongs to a different configuration");
    db = std::move(c.db);
    first = c.next_chunk;
  }
  for (std::uint64_t k = first; k < n_chunks; ++k) {
    const double t0 = start + chunk * static_cast<double>(k);
    const double t1 = k + 1 == n_chunks ? T : start + chunk * static_cast<double>(k + 1);
    spawn_blobs_for_snapshot(db, pumping, flow, forecast, t0, t1, derive_seed(cfg.seed, 0x5000 + k));
    evolve_to(db, flow, t1, opt.workers);
    cull_faint(db);
    if (!opt.checkpoint_path.empty()) write_checkpoint(opt.checkpoint_path, {db, k + 1, T, hash});
    if (opt.halt_at_lambda && t1 * cal.lambda >= *opt.halt_at_lambda - 1e-12 && k + 1 < n_chunks)
      return {FieldGrid{}, BlobDatabase{}, json{{"halted_at", t1}}, true};
  }
  if (db.t_now < T) evolve_to(db, flow, T, opt.workers);
  cull(db);

  SimulationResult r;
  r.grid = render(db, GridShape::covering(db.window, cfg.pixel_size), opt.workers,
                  cfg.smoothing_pixels * cfg.pixel_size);
  const Vec2 stretch = forecast.nodes().back().state.I.major_axis();
  r.meta = {{"t_now", T},
            {"T_lambda", cfg.T_lambda},
            {"lambda", cal.lambda},
            {"lambda_stderr", cal.lambda_stderr},
            {"seed", cfg.seed},
            {"flow", {{"D", fp.D}, {"kappa_d", fp.kappa_d}, {"dt", fp.dt}, {"seed", fp.seed}}},
            {"pumping", {{"nu", pumping.nu}, {"amp_sigma", pumping.amp_sigma}, {"spawn_margin", pumping.spawn_margin}}},
            {"window", {db.window.x0, db.window.y0, db.window.x1, db.window.y1}},
            {"cull_threshold", db.cull_threshold},
            {"smoothing", cfg.smoothing_pixels * cfg.pixel_size},
            {"n_blobs", db.blobs.size()},
            {"pumping_start", start},
            {"stretch_angle", std::atan2(stretch.y, stretch.x)},
            {"config_hash", hash}};
  r.db = std::move(db);
  return r;
}

// ---- contours ------------------------------------------------------------------

struct ContourSet {
  std::vector<ContourRecord> records;  // closed interior loops above the size cut
  std::size_t n_total = 0, n_open = 0, n_small = 0;
  FieldMoments moments;
  double pixel_size = 0.0;
};

inline json moments_json(const FieldMoments& m) {
  json j = {{"n", m.n}, {"mean", m.mean}, {"variance", m.variance}};
  j["skewness"] = m.skewness ? json(*m.skewness) : json(nullptr);
  j["excess_kurtosis"] = m.excess_kurtosis ? json(*m.excess_kurtosis) : json(nullptr);
  return j;
}

inline ContourSet extract_contours(const FieldGrid& grid, const ExperimentConfig& cfg, unsigned workers = 1) {
  ContourSet s;
  s.pixel_size = grid.pixel_size;
  s.moments = field_moments(grid);
  const auto all = extract_isolines(grid, cfg.level, workers);
  s.n_total = all.size();
  std::size_t id = 0;
  for (const Contour& c : all) {
    if (!c.closed || c.touches_boundary) {
      ++s.n_open;
      continue;
    }
    if (perimeter(c) < cfg.min_perimeter_pixels * grid.pixel_size) {
      ++s.n_small;
      continue;
    }
    s.records.push_back(make_record(id++, c));
  }
  return s;
}

// ---- fractal -------------------------------------------------------------------

struct FractalSummary {
  std::size_t n_candidates = 0;
  std::size_t n_used = 0;
  std::optional<EnsembleDimension> small_D0;
  std::vector<EnsembleDimension> large;  // one per q
  std::vector<std::vector<double>> rows;  // id, R, q, D_small, err_small, D_large, err_large
  std::vector<std::vector<double>> local;  // eps, mean local D0, contours
  std::vector<std::string> notes;
};

inline FractalSummary analyze_fractal(const std::vector<ContourRecord>& recs, const ExperimentConfig& cfg,
                                      double pixel_size, unsigned workers = 1) {
  FractalSummary f;
  std::vector<const ContourRecord*> use;
  for (const auto& r : recs)
    if (r.R > cfg.fractal_min_R) use.push_back(&r);
  f.n_candidates = use.size();
  std::sort(use.begin(), use.end(), [](auto* a, auto* b) { return a->R > b->R || (a->R == b->R && a->id < b->id); });
  if (cfg.fractal_max_contours > 0 && use.size() > cfg.fractal_max_contours) use.resize(cfg.fractal_max_contours);
  if (use.empty()) {
    f.notes.push_back("no contours above the size cut");
    return f;
  }
  const double eps_lo = cfg.fractal_small_lo_pixels * pixel_size;
  const double small_hi = cfg.fractal_small_hi;
  struct Per {
    std::optional<DimensionEstimate> small;
    std::vector<std::optional<DimensionEstimate>> large;
    std::vector<std::pair<double, double>> local;
  };
  std::vector<Per> per(use.size());
  // Shared lattice origin off the pixel lattice, so box edges never sit on grid lines.
  const Vec2 origin{0.1234567 * pixel_size, 0.7654321 * pixel_size};
  parallel_chunks(use.size(), 1, workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const ContourRecord& r = *use[i];
      const double hi = std::max(cfg.fractal_large.hi, small_hi);
      const auto eps = epsilon_ladder(eps_lo, hi, cfg.fractal_ratio);
      const BoxCountCurve curve = box_counts(r.contour, eps, origin);
      try {
        per[i].small = generalized_dimension(curve, 0.0, eps_lo, small_hi);
      } catch (const std::invalid_argument&) {
      }
      const double large_hi = std::min(cfg.fractal_large.hi, cfg.fractal_large_cap * r.R_gyr);
      for (double q : cfg.fractal_q) {
        std::optional<DimensionEstimate> d;
        try {
          if (large_hi > cfg.fractal_large.lo) d = generalized_dimension(curve, q, cfg.fractal_large.lo, large_hi);
        } catch (const std::invalid_argument&) {
        }
        per[i].large.push_back(d);
      }
      per[i].local = local_slope(curve, 0.0);
    }
  });
  std::vector<DimensionEstimate> small;
  std::vector<std::vector<DimensionEstimate>> large(cfg.fractal_q.size());
  std::map<double, std::pair<double, std::size_t>> local;
  for (std::size_t i = 0; i < use.size(); ++i) {
    bool any = false;
    if (per[i].small) small.push_back(*per[i].small);
    for (std::size_t k = 0; k < cfg.fractal_q.size(); ++k) {
      const auto& d = per[i].large[k];
      if (d) {
        large[k].push_back(*d);
        any = true;
      }
      f.rows.push_back({static_cast<double>(use[i]->id), use[i]->R, cfg.fractal_q[k],
                        per[i].small ? per[i].small->D_q : NAN, per[i].small ? per[i].small->stderr_fit : NAN,
                        d ? d->D_q : NAN, d ? d->stderr_fit : NAN});
    }
    f.n_used += any;
    for (auto [eps, slope] : per[i].local) {
      auto& acc = local[eps];
      acc.first += slope;
      ++acc.second;
    }
  }
  if (!small.empty()) f.small_D0 = ensemble_dimension(small);
  for (std::size_t k = 0; k < large.size(); ++k) {
    if (large[k].empty()) {
      f.notes.push_back("no contour spans the large-scale window for q = " + std::to_string(cfg.fractal_q[k]));
      continue;
    }
    f.large.push_back(ensemble_dimension(large[k]));
  }
  for (auto& [eps, acc] : local)
    f.local.push_back({eps, acc.first / static_cast<double>(acc.second), static_cast<double>(acc.second)});
  return f;
}

inline json ensemble_json(const EnsembleDimension& e) {
  return {{"q", e.q}, {"D", e.mean}, {"stderr", e.spread}, {"fit_error", e.fit_error}, {"n", e.n}};
}

inline json fractal_json(const FractalSummary& f) {
  json j = {{"n_candidates", f.n_candidates}, {"n_used", f.n_used}, {"notes", f.notes}};
  j["small_D0"] = f.small_D0 ? ensemble_json(*f.small_D0) : json(nullptr);
  j["large"] = json::array();
  for (const auto& e : f.large) j["large"].push_back(ensemble_json(e));
  return j;
}

// ---- PDFs ----------------------------------------------------------------------

struct PdfSummary {
  LogHistogram hR, hP;
  std::optional<ModeEstimate> mode_R, mode_P;
  std::optional<TailFit> left_R, right_P, right_R_lognormal, right_R_poisson;
  std::vector<std::string> notes;
};

inline PdfSummary analyze_pdf(const std::vector<double>& R, const std::vector<double>& P,
                              const ExperimentConfig& cfg) {
  PdfSummary s;
  s.hR = histogram_log(R, cfg.pdf_bins, std::log(cfg.pdf_R_range.lo), std::log(cfg.pdf_R_range.hi));
  s.hP = histogram_log(P, cfg.pdf_bins, std::log(cfg.pdf_P_range.lo), std::log(cfg.pdf_P_range.hi));
  auto attempt = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      s.notes.push_back(std::string(what) + ": " + e.what());
    }
  };
  const double floor_R = cfg.pdf_mode_min_pixels * cfg.pixel_size;
  attempt("mode_R", [&] { s.mode_R = mode_location(s.hR, floor_R); });
  attempt("mode_P", [&] { s.mode_P = mode_location(s.hP, 2.0 * M_PI * floor_R); });
  attempt("left_R", [&] { s.left_R = fit_left_tail(s.hR, cfg.pdf_left_lo_pixels * cfg.pixel_size, cfg.pdf_left_hi); });
  attempt("right_P", [&] {
    s.right_P = fit_right_tail(s.hP, cfg.pdf_right_P.lo, cfg.pdf_right_P.hi, TailKind::PowerLawRight);
  });
  attempt("right_R", [&] {
    s.right_R_lognormal = fit_right_tail(s.hR, cfg.pdf_right_R.lo, cfg.pdf_right_R.hi, TailKind::LogNormalRight);
  });
  attempt("poisson_R", [&] {
    s.right_R_poisson = fit_poisson_overlay(s.hR, cfg.nu_over_lambda, cfg.pdf_right_R.lo, cfg.pdf_right_R.hi);
  });
  return s;
}

inline json tail_json(const std::optional<TailFit>& t) {
  if (!t) return nullptr;
  return {{"kind", to_string(t->kind)}, {"exponent", t->exponent}, {"mu", t->mu},
          {"sigma", t->sigma},          {"x_lo", t->x_lo},         {"x_hi", t->x_hi},
          {"stderr", t->stderr_fit},    {"residual", t->residual}, {"n_counts", t->n_counts},
          {"n_bins", t->n_bins}};
}

inline json mode_json(const std::optional<ModeEstimate>& m) {
  if (!m) return nullptr;
  json j = {{"x", m->x}, {"multimodal", m->multimodal}};
  j["secondary_x"] = m->secondary_x ? json(*m->secondary_x) : json(nullptr);
  return j;
}

inline json pdf_json(const PdfSummary& s) {
  return {{"n_contours", s.hR.n_total},
          {"mode_R", mode_json(s.mode_R)},
          {"mode_P", mode_json(s.mode_P)},
          {"left_R", tail_json(s.left_R)},
          {"right_P", tail_json(s.right_P)},
          {"right_R_lognormal", tail_json(s.right_R_lognormal)},
          {"right_R_poisson", tail_json(s.right_R_poisson)},
          {"notes", s.notes}};
}

// ---- Loewner -------------------------------------------------------------------

struct LoewnerSummary {
  std::size_t n_candidates = 0;
  std::vector<std::size_t> ids;
  std::vector<DrivingFunction> drivings;
  std::vector<std::string> skipped;
  double contraction = 1.0;
  std::optional<DiffusivityEstimate> kappa;
  std::string reason;
};

/// Maps x -> R(a) diag(1/f, 1) R(-a) x: contraction by f along the axis at angle a.
inline Contour contract_along(const Contour& c, double angle, double f) {
  if (f == 1.0) return c;
  Contour out = c;
  const double cs = std::cos(angle), sn = std::sin(angle);
  for (Vec2& v : out.vertices) {
    const double p = (cs * v.x + sn * v.y) / f, q = -sn * v.x + cs * v.y;
    v = {cs * p - sn * q, sn * p + cs * q};
  }
  return out;
}

inline LoewnerSummary analyze_loewner(const std::vector<ContourRecord>& recs, const ExperimentConfig& cfg,
                                      double pixel_size, double stretch_angle, unsigned workers = 1) {
  LoewnerSummary s;
  s.contraction = cfg.loewner_contraction == 0.0 ? 1.0 / pixel_size : cfg.loewner_contraction;
  std::vector<const ContourRecord*> use;
  for (const auto& r : recs)
    if (r.P > cfg.loewner_min_perimeter) use.push_back(&r);
  s.n_candidates = use.size();
  std::sort(use.begin(), use.end(), [](auto* a, auto* b) { return a->P > b->P || (a->P == b->P && a->id < b->id); });
  if (cfg.loewner_max_contours > 0 && use.size() > cfg.loewner_max_contours) use.resize(cfg.loewner_max_contours);
  ChordalOptions opt;
  opt.min_perimeter = 0.0;
  opt.drop_fraction = cfg.loewner_drop_fraction;
  opt.resample_step = cfg.loewner_resample_pixels * pixel_size;
  opt.max_points = cfg.loewner_max_points;
  std::vector<std::optional<DrivingFunction>> out(use.size());
  std::vector<std::string> err(use.size());
  parallel_chunks(use.size(), 1, workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        const Contour c = contract_along(use[i]->contour, stretch_angle, s.contraction);
        out[i] = unzip(prepare_chordal(c, opt));
      } catch (const std::exception& ex) {
        err[i] = ex.what();
      }
    }
  });
  for (std::size_t i = 0; i < use.size(); ++i) {
    if (out[i]) {
      s.ids.push_back(use[i]->id);
      s.drivings.push_back(std::move(*out[i]));
    } else {
      s.skipped.push_back("contour " + std::to_string(use[i]->id) + ": " + err[i]);
    }
  }
  if (s.drivings.size() < 2) {
    s.reason = s.n_candidates == 0 ? "no contour longer than the perimeter cut" : "fewer than 2 usable contours";
    return s;
  }
  double t_hi = cfg.loewner_t.hi;
  if (t_hi == 0.0) {
    std::vector<double> tm;
    for (const auto& d : s.drivings) tm.push_back(d.t_max());
    std::nth_element(tm.begin(), tm.begin() + tm.size() / 2, tm.end());
    t_hi = tm[tm.size() / 2];
  }
  try {
    s.kappa = effective_diffusivity(s.drivings, cfg.loewner_t.lo, t_hi, cfg.loewner_method);
  } catch (const std::exception& e) {
    s.reason = e.what();
  }
  return s;
}

inline json loewner_json(const LoewnerSummary& s) {
  json j = {{"n_candidates", s.n_candidates},
            {"n_used", s.drivings.size()},
            {"contraction", s.contraction},
            {"skipped", s.skipped}};
  if (!s.reason.empty()) j["reason"] = s.reason;
  if (s.kappa) {
    j["kappa"] = s.kappa->kappa;
    j["kappa_error"] = s.kappa->kappa_error;
    j["method"] = s.kappa->method == DiffusivityMethod::Ensemble ? "ensemble" : "time_averaged";
    j["t_window"] = {s.kappa->t_lo, s.kappa->t_hi};
    j["n_in_window"] = s.kappa->n_contours;
    const auto& r = s.kappa->curve_xi2_over_t;
    j["xi2_over_t_end"] = r.empty() ? json(nullptr) : json(r.back());
  } else {
    j["kappa"] = nullptr;
  }
  return j;
}

// ---- file stages -----------------------------------------------------------------

struct Paths {
  std::filesystem::path dir;
  std::filesystem::path calibration() const { return dir / "calibration.json"; }
  std::filesystem::path snapshot() const { return dir / "snapshot"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  std::filesystem::path contours_bin() const { return dir / "contours.bin"; }
  std::filesystem::path contours_txt() const { return dir / "contours.txt"; }
  std::filesystem::path contours_json() const { return dir / "contours.json"; }
  std::filesystem::path fractal_json() const { return dir / "fractal.json"; }
  std::filesystem::path pdf_json() const { return dir / "pdf.json"; }
  std::filesystem::path loewner_json() const { return dir / "loewner.json"; }
  std::filesystem::path report() const { return dir / "report.json"; }
};

inline Calibration stage_calibrate(const ExperimentConfig& cfg) {
  const Calibration c = calibrate(cfg);
  json j = c.to_json();
  j["D"] = cfg.D;
  j["dt"] = cfg.dt;
  j["steps"] = cfg.calibration_steps;
  j["samples"] = cfg.calibration_samples;
  write_json(Paths{cfg.out}.calibration(), j);
  return c;
}

/// Reuses calibration.json when it matches (D, dt, sample sizes); recomputes otherwise.
inline Calibration load_or_calibrate(const ExperimentConfig& cfg) {
  const auto p = Paths{cfg.out}.calibration();
  if (std::filesystem::exists(p)) {
    const json j = read_json(p);
    if (j.value("D", -1.0) == cfg.D && j.value("dt", -1.0) == cfg.dt &&
        j.value("steps", std::size_t{0}) == cfg.calibration_steps &&
        j.value("samples", std::size_t{0}) == cfg.calibration_samples)
      return Calibration::from_json(j);
  }
  return stage_calibrate(cfg);
}

inline json stage_simulate(const ExperimentConfig& cfg, unsigned workers, bool resume) {
  const Paths paths{cfg.out};
  const Calibration cal = load_or_calibrate(cfg);
  SimulateOptions opt;
  opt.workers = workers;
  opt.resume = resume;
  if (cfg.checkpoint) opt.checkpoint_path = paths.checkpoint();
  SimulationResult r = simulate(cfg, cal, opt);
  write_snapshot(paths.snapshot(), r.grid, r.meta);
  return r.meta;
}

inline json stage_contours(const ExperimentConfig& cfg, unsigned workers) {
  const Paths paths{cfg.out};
  json meta;
  const FieldGrid g = read_snapshot(paths.snapshot(), &meta);
  const ContourSet s = extract_contours(g, cfg, workers);
  write_contours_binary(paths.contours_bin(), s.records);
  write_contours_text(paths.contours_txt(), s.records);
  std::vector<std::vector<double>> rows;
  for (const auto& r : s.records)
    rows.push_back({static_cast<double>(r.id), static_cast<double>(r.contour.vertices.size()), r.P, r.R, r.R_gyr});
  write_csv(cfg.out / "contours.csv", {"id", "n", "P", "R", "R_gyr"}, rows);
  json j = {{"pixel_size", g.pixel_size},
            {"level", cfg.level},
            {"n_isolines", s.n_total},
            {"n_open", s.n_open},
            {"n_small", s.n_small},
            {"n_closed", s.records.size()},
            {"moments", moments_json(s.moments)},
            {"stretch_angle", meta.value("stretch_angle", 0.0)}};
  write_json(paths.contours_json(), j);
  return j;
}

inline json stage_fractal(const ExperimentConfig& cfg, unsigned workers) {
  const Paths paths{cfg.out};
  const json cj = read_json(paths.contours_json());
  const auto recs = read_contours_binary(paths.contours_bin());
  const FractalSummary f = analyze_fractal(recs, cfg, cj.at("pixel_size").get<double>(), workers);
  write_csv(cfg.out / "fractal_dq.csv", {"id", "R", "q", "D_small", "err_small", "D_large", "err_large"}, f.rows);
  write_csv(cfg.out / "fractal_local.csv", {"eps", "local_D0", "n"}, f.local);
  PlotSeries s{"mean local D0", {}, {}, true, "#1f77b4"};
  for (const auto& row : f.local) {
    s.x.push_back(row[0]);
    s.y.push_back(row[1]);
  }
  write_svg_plot(cfg.out / "fractal_local.svg", "Local box-counting slope", "eps / L", "D0(eps)", {s}, true, false);
  const json j = fractal_json(f);
  write_json(paths.fractal_json(), j);
  return j;
}

inline std::vector<std::vector<double>> histogram_rows(const LogHistogram& h) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < h.n_bins(); ++k)
    rows.push_back({h.center(k), std::exp(h.center(k)), h.counts[k], h.densities[k], h.density_error(k)});
  return rows;
}

inline PlotSeries histogram_series(const LogHistogram& h, const std::string& label, const std::string& color) {
  PlotSeries s{label, {}, {}, false, color};
  for (std::size_t k = 0; k < h.n_bins(); ++k) {
    s.x.push_back(std::exp(h.center(k)));
    s.y.push_back(h.densities[k]);
  }
  return s;
}

/// Model curve of a tail fit evaluated at the histogram's bin centers inside the window.
inline PlotSeries tail_series(const LogHistogram& h, const TailFit& t, double amplitude_at,
                              const std::string& color) {
  PlotSeries s{to_string(t.kind), {}, {}, true, color};
  // Anchor the curve to the histogram at the window's geometric middle.
  auto model = [&](double u) {
    if (t.kind == TailKind::LogNormalRight) return -(u - t.mu) * (u - t.mu) / (2 * t.sigma * t.sigma);
    return (t.exponent + 1.0) * u;
  };
  const double ua = std::log(amplitude_at);
  std::size_t ka = 0;
  for (std::size_t k = 0; k < h.n_bins(); ++k)
    if (std::abs(h.center(k) - ua) < std::abs(h.center(ka) - ua)) ka = k;
  if (!(h.densities[ka] > 0)) return s;
  const double shift = std::log(h.densities[ka]) - model(h.center(ka));
  for (std::size_t k = 0; k < h.n_bins(); ++k) {
    const double x = std::exp(h.center(k));
    if (x < t.x_lo || x > t.x_hi) continue;
    s.x.push_back(x);
    s.y.push_back(std::exp(model(h.center(k)) + shift));
  }
  return s;
}

inline json stage_pdf(const ExperimentConfig& cfg) {
  const Paths paths{cfg.out};
  const auto recs = read_contours_binary(paths.contours_bin());
  std::vector<double> R, P;
  for (const auto& r : recs) {
    R.push_back(r.R);
    P.push_back(r.P);
  }
  const PdfSummary s = analyze_pdf(R, P, cfg);
  const std::vector<std::string> hdr{"ln_x", "x", "count", "density", "density_err"};
  write_csv(cfg.out / "pdf_R.csv", hdr, histogram_rows(s.hR));
  write_csv(cfg.out / "pdf_P.csv", hdr, histogram_rows(s.hP));
  std::vector<PlotSeries> sr{histogram_series(s.hR, "PDF of ln R", "#1f77b4")};
  auto mid = [](const TailFit& t) { return std::sqrt(t.x_lo * t.x_hi); };
  if (s.left_R) sr.push_back(tail_series(s.hR, *s.left_R, mid(*s.left_R), "#2ca02c"));
  if (s.right_R_lognormal) sr.push_back(tail_series(s.hR, *s.right_R_lognormal, mid(*s.right_R_lognormal), "#d62728"));
  if (s.right_R_poisson) sr.push_back(tail_series(s.hR, *s.right_R_poisson, mid(*s.right_R_poisson), "#9467bd"));
  write_svg_plot(cfg.out / "pdf_R.svg", "Contour size PDF", "R / L", "PDF of ln R", sr);
  std::vector<PlotSeries> sp{histogram_series(s.hP, "PDF of ln P", "#1f77b4")};
  if (s.right_P) sp.push_back(tail_series(s.hP, *s.right_P, mid(*s.right_P), "#d62728"));
  write_svg_plot(cfg.out / "pdf_P.svg", "Contour perimeter PDF", "P / L", "PDF of ln P", sp);
  const json j = pdf_json(s);
  write_json(paths.pdf_json(), j);
  return j;
}

inline json stage_loewner(const ExperimentConfig& cfg, unsigned workers) {
  const Paths paths{cfg.out};
  const json cj = read_json(paths.contours_json());
  const auto recs = read_contours_binary(paths.contours_bin());
  const LoewnerSummary s = analyze_loewner(recs, cfg, cj.at("pixel_size").get<double>(),
                                           cj.value("stretch_angle", 0.0), workers);
  const auto ddir = cfg.out / "drivings";
  std::filesystem::create_directories(ddir);
  for (std::size_t i = 0; i < s.drivings.size(); ++i) {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < s.drivings[i].size(); ++k) rows.push_back({s.drivings[i].t[k], s.drivings[i].xi[k]});
    write_csv(ddir / ("driving_" + std::to_string(s.ids[i]) + ".csv"), {"t", "xi"}, rows);
  }
  if (s.kappa) {
    std::vector<std::vector<double>> rows;
    PlotSeries ps{"<xi^2>/t", {}, {}, true, "#1f77b4"};
    for (std::size_t k = 0; k < s.kappa->curve_t.size(); ++k) {
      rows.push_back({s.kappa->curve_t[k], s.kappa->curve_xi2[k], s.kappa->curve_xi2_over_t[k],
                      static_cast<double>(s.kappa->curve_n[k])});
      ps.x.push_back(s.kappa->curve_t[k]);
      ps.y.push_back(s.kappa->curve_xi2_over_t[k]);
    }
    write_csv(cfg.out / "loewner_xi2.csv", {"t", "xi2", "xi2_over_t", "n"}, rows);
    PlotSeries fit{"kappa fit", {ps.x.front(), ps.x.back()}, {s.kappa->kappa, s.kappa->kappa}, true, "#d62728"};
    write_svg_plot(cfg.out / "loewner.svg", "Effective diffusivity", "t", "<xi^2>/t", {ps, fit}, false, false);
  }
  const json j = loewner_json(s);
  write_json(paths.loewner_json(), j);
  return j;
}

// ---- report ----------------------------------------------------------------------

struct Check {
  std::string name;
  std::optional<bool> pass;  // empty: not evaluable
  std::string detail;
};

inline std::vector<Check> evaluate_checks(const json& report) {
  std::vector<Check> out;
  auto num = [&](const json& j, const char* k) -> std::optional<double> {
    if (!j.is_object() || !j.contains(k) || !j.at(k).is_number()) return std::nullopt;
    return j.at(k).get<double>();
  };
  auto add = [&](std::string name, std::optional<double> v, std::function<bool(double)> ok, std::string want) {
    Check c{std::move(name), std::nullopt, want};
    if (v) {
      c.pass = ok(*v);
      c.detail = std::to_string(*v) + " (want " + want + ")";
    } else {
      c.detail = "unavailable (want " + want + ")";
    }
    out.push_back(std::move(c));
  };
  const json& mom = report.value("contours", json::object()).value("moments", json::object());
  add("excess_kurtosis", num(mom, "excess_kurtosis"), [](double k) { return std::abs(k) < 0.2; }, "|K| < 0.2");
  const json& fr = report.value("fractal", json::object());
  const json small = fr.value("small_D0", json());
  add("D0_small_scales", num(small, "D"), [](double d) { return std::abs(d - 1.0) <= 0.05; }, "1.00 +- 0.05");
  std::optional<double> d0;
  for (const auto& e : fr.value("large", json::array()))
    if (e.value("q", -1.0) == 0.0) d0 = e.value("D", NAN);
  add("D0_large_scales", d0, [](double d) { return d >= 1.5 && d <= 1.75; }, "[1.50, 1.75]");
  const json& pdf = report.value("pdf", json::object());
  add("mode_R", num(pdf.value("mode_R", json()), "x"), [](double x) { return x >= 1 / 1.5 && x <= 1.5; },
      "[0.667, 1.5]");
  add("mode_P", num(pdf.value("mode_P", json()), "x"),
      [](double x) { return x >= 2 * M_PI / 1.5 && x <= 1.5 * 2 * M_PI; }, "[4.19, 9.42]");
  add("left_tail_R", num(pdf.value("left_R", json()), "exponent"), [](double e) { return std::abs(e - 1.5) <= 0.3; },
      "1.5 +- 0.3");
  add("right_tail_P", num(pdf.value("right_P", json()), "exponent"),
      [](double e) { return std::abs(e + 2.0) <= 0.3; }, "-2 +- 0.3");
  std::optional<double> margin;
  const auto ln = num(pdf.value("right_R_lognormal", json()), "residual");
  const auto po = num(pdf.value("right_R_poisson", json()), "residual");
  if (ln && po) margin = *po - *ln;
  add("poisson_tail_rejected", margin, [](double m) { return m > 0.0; }, "residual(naive) - residual(log-normal) > 0");
  return out;
}

inline json stage_report(const ExperimentConfig& cfg) {
  const Paths paths{cfg.out};
  json r = {{"config", cfg.to_json()}};
  auto load = [&](const char* key, const std::filesystem::path& p) {
    if (std::filesystem::exists(p)) r[key] = read_json(p);
  };
  load("calibration", paths.calibration());
  if (std::filesystem::exists(paths.snapshot().string() + ".json")) r["simulation"] = read_json(paths.snapshot().string() + ".json");
  load("contours", paths.contours_json());
  load("fractal", paths.fractal_json());
  load("pdf", paths.pdf_json());
  load("loewner", paths.loewner_json());
  json flags = json::array();
  if (r.contains("contours") && r["contours"].value("n_isolines", 0) == 0) flags.push_back("no nodal lines");
  if (r.contains("pdf")) {
    if (r["pdf"]["mode_R"].is_null()) flags.push_back("size PDF mode undefined");
    if (r["pdf"]["mode_P"].is_null()) flags.push_back("perimeter PDF mode undefined");
  }
  if (r.contains("loewner") && r["loewner"]["kappa"].is_null()) flags.push_back("kappa undefined");
  r["flags"] = flags;
  json checks = json::array();
  for (const auto& c : evaluate_checks(r))
    checks.push_back({{"name", c.name}, {"pass", c.pass ? json(*c.pass) : json(nullptr)}, {"detail", c.detail}});
  r["checks"] = checks;
  write_json(paths.report(), r);
  return r;
}

}  // namespace batchelor

#endif
