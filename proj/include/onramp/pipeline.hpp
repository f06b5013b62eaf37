#pragma once

#include <atomic>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "onramp/artifacts.hpp"
#include "onramp/merge_extractor.hpp"
#include "onramp/nhmm/selection.hpp"
#include "onramp/segmenter.hpp"
#include "onramp/synthetic.hpp"
#include "onramp/trajectory_store.hpp"
#include "onramp/tskm/kmeans.hpp"

namespace onramp::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kConfigVersion = 1;

struct PipelineConfig {
  fs::path tracks_path;    ///< empty: use the synthetic scene under output_dir/scene
  fs::path geometry_path;
  int sampling_hz = 10;
  ExtractionConfig extraction;

  nhmm::FitConfig fit;
  int k_min = 1;
  int k_max = 6;
  std::optional<int> fixed_k;
  bool pooled = false;

  std::size_t min_frames = 10;

  std::optional<int> tskm_k;
  int tskm_k_min = 1;
  int tskm_k_max = 10;
  tskm::TskmOptions tskm;
  double change_rate_threshold = 0.05;

  synth::SceneLayout layout;
  synth::SceneSpec scene_spec{50, 0, 0.0};

  std::uint64_t seed = 1;
  fs::path output_dir = "out";
  int jobs = 1;
};

namespace detail {

// Reads keys from one JSON object and rejects any key it was not asked about.
class Keys {
 public:
  Keys(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw SchemaError("config: '" + label() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw SchemaError("config: '" + path(key) + "' has the wrong type");
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw SchemaError("config: unknown key '" + path(k) + "'");
  }

 private:
  std::string label() const { return where_.empty() ? "<root>" : where_; }
  const json& j_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw SchemaError("config: " + what);
}

}  // namespace detail

inline void check_bounds(const PipelineConfig& c) {
  using detail::require;
  require(c.sampling_hz >= 1 && c.sampling_hz <= 1000, "sampling_hz must be in 1..1000");
  require(c.extraction.peak_floor >= 0.0, "extraction.peak_floor must be >= 0");
  require(c.extraction.lane_half_width > 0.0, "extraction.lane_half_width must be > 0");
  require(c.extraction.min_event_frames >= 2, "extraction.min_event_frames must be >= 2");
  require(c.extraction.smoothing_window >= 1 && c.extraction.smoothing_window % 2 == 1,
          "extraction.smoothing_window must be a positive odd integer");
  require(c.fit.iterations >= 1 && c.fit.burn_in < c.fit.iterations, "nhmm.burn_in must be < nhmm.iterations");
  require(c.fit.thinning >= 1, "nhmm.thinning must be >= 1");
  require(c.fit.credible_level > 0.0 && c.fit.credible_level < 1.0, "nhmm.credible_level must be in (0, 1)");
  require(c.fit.mean_prior_scale > 0.0, "nhmm.mean_prior_scale must be > 0");
  require(c.fit.sigma_prior_dof > 5.0, "nhmm.sigma_prior_dof must be > 5");
  require(c.fit.coef_prior_sd > 0.0, "nhmm.coef_prior_sd must be > 0");
  require(c.k_min >= 1 && c.k_max >= c.k_min && c.k_max <= 20, "nhmm.k_min/k_max must satisfy 1 <= k_min <= k_max <= 20");
  require(!c.fixed_k || (*c.fixed_k >= 1 && *c.fixed_k <= 20), "nhmm.fixed_k must be in 1..20");
  require(!c.tskm_k || *c.tskm_k >= 1, "tskm.k must be >= 1");
  require(c.tskm_k_min >= 1 && c.tskm_k_max >= c.tskm_k_min, "tskm.k_min/k_max must satisfy 1 <= k_min <= k_max");
  require(c.tskm.restarts >= 1, "tskm.restarts must be >= 1");
  require(c.tskm.max_iter >= 1, "tskm.max_iter must be >= 1");
  require(c.change_rate_threshold > 0.0 && c.change_rate_threshold < 1.0, "tskm.change_rate_threshold must be in (0, 1)");
  require(c.scene_spec.invalid_fraction >= 0.0 && c.scene_spec.invalid_fraction <= 1.0,
          "synth.invalid_fraction must be in [0, 1]");
  require(c.jobs >= 1 && c.jobs <= 256, "jobs must be in 1..256");
}

/// Parses a config object. Relative input paths resolve against `base_dir`.
inline PipelineConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  PipelineConfig c;
  detail::Keys root(j, "");
  int version = 0;
  const json* v = root.section("config_version");
  if (!v) throw SchemaError("config: missing 'config_version'");
  root.get("config_version", version);
  if (version != kConfigVersion)
    throw SchemaError("config: unsupported config_version " + std::to_string(version) + " (expected " +
                      std::to_string(kConfigVersion) + ")");

  if (const json* s = root.section("input")) {
    detail::Keys k(*s, "input");
    std::string tracks, geometry;
    k.get("tracks", tracks);
    k.get("geometry", geometry);
    k.finish();
    if (!tracks.empty()) c.tracks_path = fs::path(tracks).is_absolute() ? fs::path(tracks) : base_dir / tracks;
    if (!geometry.empty()) c.geometry_path = fs::path(geometry).is_absolute() ? fs::path(geometry) : base_dir / geometry;
  }
  root.get("sampling_hz", c.sampling_hz);
  if (const json* s = root.section("extraction")) {
    detail::Keys k(*s, "extraction");
    k.get("peak_floor", c.extraction.peak_floor);
    k.get("lane_half_width", c.extraction.lane_half_width);
    k.get("min_event_frames", c.extraction.min_event_frames);
    k.get("smoothing_window", c.extraction.smoothing_window);
    k.finish();
  }
  if (const json* s = root.section("nhmm")) {
    detail::Keys k(*s, "nhmm");
    k.get("iterations", c.fit.iterations);
    k.get("burn_in", c.fit.burn_in);
    k.get("thinning", c.fit.thinning);
    k.get("credible_level", c.fit.credible_level);
    k.get("mean_prior_scale", c.fit.mean_prior_scale);
    k.get("sigma_prior_dof", c.fit.sigma_prior_dof);
    k.get("coef_prior_sd", c.fit.coef_prior_sd);
    k.get("standardize_covariates", c.fit.standardize_covariates);
    k.get("k_min", c.k_min);
    k.get("k_max", c.k_max);
    k.get("fixed_k", c.fixed_k);
    k.get("pooled", c.pooled);
    k.finish();
  }
  if (const json* s = root.section("segmentation")) {
    detail::Keys k(*s, "segmentation");
    k.get("min_frames", c.min_frames);
    k.finish();
  }
  if (const json* s = root.section("tskm")) {
    detail::Keys k(*s, "tskm");
    k.get("k", c.tskm_k);
    k.get("k_min", c.tskm_k_min);
    k.get("k_max", c.tskm_k_max);
    k.get("restarts", c.tskm.restarts);
    k.get("max_iter", c.tskm.max_iter);
    k.get("dba_iterations", c.tskm.dba_iterations);
    std::optional<std::size_t> band;
    k.get("band", band);
    c.tskm.dtw.band = band;
    k.get("change_rate_threshold", c.change_rate_threshold);
    k.finish();
  }
  if (const json* s = root.section("synth")) {
    detail::Keys k(*s, "synth");
    k.get("n_merges", c.scene_spec.n_merges);
    k.get("max_vehicles", c.scene_spec.max_vehicles);
    k.get("invalid_fraction", c.scene_spec.invalid_fraction);
    k.get("arc", c.layout.arc);
    k.get("arc_radius_m", c.layout.arc_radius_m);
    k.finish();
  }
  root.get("seed", c.seed);
  std::string out;
  root.get("output_dir", out);
  if (!out.empty()) c.output_dir = out;
  root.get("jobs", c.jobs);
  root.finish();
  c.layout.sampling_hz = c.sampling_hz;
  check_bounds(c);
  return c;
}

inline PipelineConfig load_config(const fs::path& p) {
  return parse_config(io::read_json_file(p), p.has_parent_path() ? p.parent_path() : fs::path{});
}

/// Runs f(i) for i in [0, n) on up to `jobs` threads. f must not throw.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------- commands

struct Paths {
  fs::path root;
  fs::path scene_dir() const { return root / "scene"; }
  fs::path scene_tracks() const { return scene_dir() / "tracks.csv"; }
  fs::path scene_geometry() const { return scene_dir() / "geometry.json"; }
  fs::path scene_ledger() const { return scene_dir() / "ledger.json"; }
  fs::path events() const { return root / "events.jsonl"; }
  fs::path discards() const { return root / "discards.csv"; }
  fs::path models() const { return root / "models"; }
  fs::path model(const std::string& id) const { return models() / (id + ".model.json"); }
  fs::path pooled_model() const { return model("pooled"); }
  fs::path states() const { return root / "states.csv"; }
  fs::path bic_table() const { return root / "bic_table.csv"; }
  fs::path fit_failures() const { return root / "fit_failures.csv"; }
  fs::path primitives() const { return root / "primitives.jsonl"; }
  fs::path clusters() const { return root / "clusters.json"; }
  fs::path inertia_curve() const { return root / "inertia_curve.csv"; }
  fs::path pattern_frequency() const { return root / "pattern_frequency.csv"; }
  fs::path significance_counts() const { return root / "significance_counts.csv"; }
  fs::path transition_series() const { return root / "transition_series.csv"; }
  fs::path transition_mean() const { return root / "transition_mean.csv"; }
  fs::path pattern_chains() const { return root / "pattern_chains.csv"; }
};

inline int cmd_synth(const PipelineConfig& c, std::ostream& log = std::cerr) {
  try {
    const Paths p{c.output_dir};
    const synth::SyntheticScene s = synth::gen_merging_scene(c.layout, c.scene_spec, c.seed);
    {
      auto out = io::open_out(p.scene_tracks());
      write_tracks(out, s.scene);
    }
    {
      auto out = io::open_out(p.scene_geometry());
      write_geometry(out, s.scene.geometry);
    }
    {
      auto out = io::open_out(p.scene_ledger());
      out << s.ledger.to_json().dump(1) << '\n';
    }
    log << "synth: " << s.scene.tracks.size() << " tracks, " << s.ledger.merges.size() << " scripted merges ("
        << s.ledger.expected_events() << " valid)\n";
    return 0;
  } catch (const Error& e) {
    log << "synth: " << e.what() << '\n';
    return 1;
  }
}

inline int cmd_extract(const PipelineConfig& c, std::ostream& log = std::cerr) {
  const Paths p{c.output_dir};
  try {
    const fs::path tracks = c.tracks_path.empty() ? p.scene_tracks() : c.tracks_path;
    const fs::path geometry = c.geometry_path.empty() ? p.scene_geometry() : c.geometry_path;
    if (!fs::exists(tracks)) throw InputError("track table not found: " + tracks.string());
    if (!fs::exists(geometry)) throw InputError("geometry file not found: " + geometry.string());
    LoadOptions lo;
    lo.sampling_hz = c.sampling_hz;
    const SceneLoad loaded = load_scene(tracks.string(), geometry.string(), lo);
    for (const auto& r : loaded.rejected) log << "extract: rejected track " << r.track_id << ": " << r.reason << '\n';
    const ExtractionResult res = extract_events(loaded.scene, c.extraction);
    io::write_events(p.events(), res.events);
    io::write_discards(p.discards(), res.discards);
    log << "extract: " << res.events.size() << " events, " << res.discards.size() << " discards\n";
    if (res.events.empty()) {
      log << "extract: no merging events found\n";
      return 2;
    }
    return 0;
  } catch (const Error& e) {
    log << "extract: " << e.what() << '\n';
    return 1;
  }
}

struct EventFit {
  bool ok = false;
  std::string error;
  io::ModelRecord model;
  std::vector<std::vector<int>> states;
};

inline EventFit fit_sequences(std::span<const nhmm::ObservedSequence> seqs, const std::string& id, const PipelineConfig& c) {
  EventFit r;
  try {
    nhmm::FitConfig fc = c.fit;
    fc.seed = derive_seed(c.seed, id);
    nhmm::PosteriorSamples samples;
    std::vector<nhmm::BicRow> table;
    if (c.fixed_k) {
      samples = nhmm::gibbs_fit(seqs, *c.fixed_k, fc);
      if (samples.chain.degenerate_state) throw ModelStateError("degenerate state at fixed K");
    } else {
      nhmm::Selection sel = nhmm::select_K(seqs, fc, c.k_min, c.k_max);
      table = std::move(sel.table);
      samples = std::move(sel.best);
    }
    r.model.event_id = id;
    r.model.K = samples.K;
    r.model.params = samples.posterior_mean();
    r.model.scaler = samples.scaler;
    r.model.bic = std::move(table);
    r.model.chain = samples.chain;
    r.model.draws = samples.draws.size();
    if (samples.K > 1 && samples.draws.size() >= nhmm::kMinDrawsForIntervals)
      r.model.significance = nhmm::covariate_significance(samples, fc.credible_level);
    else if (samples.K > 1)
      r.model.chain.warnings.push_back("too few retained draws for credible intervals");
    r.states = nhmm::decode_states(samples);
    r.ok = true;
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

inline int cmd_fit(const PipelineConfig& c, std::ostream& log = std::cerr) {
  const Paths p{c.output_dir};
  std::vector<MergeEvent> events;
  try {
    events = io::read_events(p.events());
  } catch (const Error& e) {
    log << "fit: " << e.what() << '\n';
    return 1;
  }
  if (events.empty()) {
    log << "fit: events.jsonl holds no events\n";
    return 1;
  }
  std::error_code ec;
  fs::remove_all(p.models(), ec);
  fs::create_directories(p.models());

  std::vector<EventFit> fits;
  if (c.pooled) {
    std::vector<nhmm::ObservedSequence> seqs;
    for (const auto& e : events) seqs.push_back(nhmm::observed(e));
    fits.push_back(fit_sequences(seqs, "pooled", c));
  } else {
    fits.resize(events.size());
    parallel_for(events.size(), c.jobs, [&](std::size_t i) {
      const nhmm::ObservedSequence s = nhmm::observed(events[i]);
      fits[i] = fit_sequences(std::span<const nhmm::ObservedSequence>(&s, 1), events[i].event_id, c);
    });
  }

  auto states = io::open_out(p.states());
  auto bic = io::open_out(p.bic_table());
  auto failures = io::open_out(p.fit_failures());
  csv::write_row(states, {"event_id", "frame", "state"});
  csv::write_row(bic, {"event_id", "K", "loglik", "parameters", "bic", "degenerate", "selected"});
  csv::write_row(failures, {"event_id", "error"});
  std::size_t fitted = 0;
  for (std::size_t f = 0; f < fits.size(); ++f) {
    const EventFit& r = fits[f];
    const std::string id = c.pooled ? "pooled" : events[f].event_id;
    if (!r.ok) {
      log << "fit: " << id << " failed: " << r.error << '\n';
      csv::write_row(failures, {id, r.error});
      continue;
    }
    auto out = io::open_out(p.model(id));
    out << io::to_json(r.model).dump(1) << '\n';
    for (const auto& row : r.model.bic)
      csv::write_row(bic, {id, csv::format(std::int64_t{row.K}), csv::format(row.loglik),
                           csv::format(static_cast<std::int64_t>(row.parameters)), csv::format(row.bic),
                           row.degenerate ? "true" : "false", row.K == r.model.K ? "true" : "false"});
    if (c.pooled) {
      for (std::size_t e = 0; e < events.size(); ++e) io::write_states(states, events[e].event_id, events[e].t_start, r.states[e]);
      fitted = events.size();
    } else {
      io::write_states(states, id, events[f].t_start, r.states[0]);
      ++fitted;
    }
  }
  log << "fit: " << fitted << " of " << events.size() << " events fitted\n";
  return 10 * fitted >= 9 * events.size() ? 0 : 1;
}

struct PrimitiveSet {
  std::vector<Primitive> retained;
  std::size_t total = 0;
  std::size_t dropped = 0;
};

inline PrimitiveSet collect_primitives(const std::vector<MergeEvent>& events, const io::StateTable& states,
                                       std::size_t min_frames) {
  PrimitiveSet out;
  for (const auto& e : events) {
    auto it = states.find(e.event_id);
    if (it == states.end()) continue;
    if (it->second.size() != e.length())
      throw SchemaError("states.csv: " + e.event_id + " has " + std::to_string(it->second.size()) + " states for " +
                        std::to_string(e.length()) + " frames");
    auto prims = segment(e, it->second);
    out.total += prims.size();
    auto filtered = filter_min_duration(std::move(prims), min_frames);
    out.dropped += filtered.dropped;
    for (auto& q : filtered.retained) out.retained.push_back(std::move(q));
  }
  return out;
}

inline json clusters_json(const tskm::ClusterModel& m, const std::vector<Primitive>& prims, const tskm::FeatureScaler& fs,
                          std::span<const tskm::Series> scaled, std::optional<int> suggested) {
  json assignments = json::array();
  for (std::size_t i = 0; i < prims.size(); ++i)
    assignments.push_back({{"primitive_id", prims[i].primitive_id}, {"cluster", m.assignments[i] + 1}});
  json clusters = json::array();
  for (const auto& s : tskm::summarize_patterns(m, scaled, fs)) {
    clusters.push_back({{"cluster", s.cluster + 1},
                        {"count", s.count},
                        {"share", s.share},
                        {"signature", s.signature},
                        {"centroid", s.centroid},
                        {"centroid_scaled", m.centroids[static_cast<std::size_t>(s.cluster)]},
                        {"duration", {{"min", s.duration_min}, {"max", s.duration_max}, {"mean", s.duration_mean}, {"median", s.duration_median}}}});
  }
  json j = {{"k", m.k_clusters},
            {"inertia", m.inertia},
            {"inertia_history", m.inertia_history},
            {"iterations", m.iterations},
            {"scaler", {{"mean", fs.mean}, {"sd", fs.sd}}},
            {"assignments", assignments},
            {"clusters", clusters}};
  j["suggested_k"] = suggested ? json(*suggested) : json(nullptr);
  return j;
}

inline int cmd_cluster(const PipelineConfig& c, std::ostream& log = std::cerr) {
  const Paths p{c.output_dir};
  try {
    const auto events = io::read_events(p.events());
    const auto states = io::read_states(p.states());
    PrimitiveSet set = collect_primitives(events, states, c.min_frames);
    {
      auto out = io::open_out(p.primitives());
      for (const auto& q : set.retained) out << io::to_json(q).dump() << '\n';
    }
    log << "cluster: " << set.retained.size() << " primitives retained, " << set.dropped << " dropped (<= "
        << c.min_frames << " frames)\n";
    if (set.retained.empty()) {
      log << "cluster: zero primitives retained; lower segmentation.min_frames\n";
      return 1;
    }
    std::vector<tskm::Series> raw;
    for (const auto& q : set.retained) raw.push_back(q.series);
    const tskm::FeatureScaler fscale = tskm::FeatureScaler::fit(raw);
    std::vector<tskm::Series> scaled;
    for (const auto& s : raw) scaled.push_back(fscale.apply(s));
    const std::size_t n = scaled.size();

    tskm::ClusterModel model;
    std::optional<int> suggested;
    std::vector<tskm::InertiaRow> rows;
    if (c.tskm_k) {
      if (n < static_cast<std::size_t>(*c.tskm_k)) {
        log << "cluster: " << n << " primitives for k = " << *c.tskm_k << " clusters\n";
        return 1;
      }
      model = tskm::fit_tskm(scaled, *c.tskm_k, c.seed, c.tskm);
      rows.push_back({model.k_clusters, model.inertia, std::nullopt});
    } else {
      if (n < static_cast<std::size_t>(c.tskm_k_min)) {
        log << "cluster: " << n << " primitives for k_min = " << c.tskm_k_min << " clusters\n";
        return 1;
      }
      std::vector<int> ks;
      for (int k = c.tskm_k_min; k <= std::min<int>(c.tskm_k_max, static_cast<int>(n)); ++k) ks.push_back(k);
      tskm::InertiaCurve curve = tskm::inertia_curve(scaled, ks, c.seed, c.tskm, c.change_rate_threshold);
      rows = curve.rows;
      suggested = curve.suggested_k;
      for (auto& m : curve.models)
        if (m.k_clusters == curve.suggested_k) model = std::move(m);
    }
    {
      auto out = io::open_out(p.clusters());
      out << clusters_json(model, set.retained, fscale, scaled, suggested).dump(1) << '\n';
    }
    {
      auto out = io::open_out(p.inertia_curve());
      csv::write_row(out, {"k", "lambda_w", "change_rate"});
      for (const auto& r : rows)
        csv::write_row(out, {csv::format(std::int64_t{r.k}), csv::format(r.lambda_w),
                             r.change_rate ? csv::format(*r.change_rate) : std::string()});
    }
    log << "cluster: k = " << model.k_clusters << ", inertia " << model.inertia << '\n';
    return 0;
  } catch (const Error& e) {
    log << "cluster: " << e.what() << '\n';
    return 1;
  }
}

inline int cmd_report(const PipelineConfig& c, std::ostream& log = std::cerr) {
  const Paths p{c.output_dir};
  try {
    for (const fs::path& need : {p.events(), p.states(), p.primitives(), p.clusters(), p.models()})
      if (!fs::exists(need)) throw InputError("missing artifact: " + need.string());
    const auto events = io::read_events(p.events());
    const auto prims = io::read_primitives(p.primitives());
    const json clusters = io::read_json_file(p.clusters());

    // Cluster label per primitive.
    std::map<std::string, int> label;
    int k = 0;
    try {
      k = clusters.at("k").get<int>();
      for (const auto& a : clusters.at("assignments"))
        label[a.at("primitive_id").get<std::string>()] = a.at("cluster").get<int>();
    } catch (const json::exception& e) {
      throw SchemaError(std::string("clusters.json: ") + e.what());
    }

    {
      std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
      std::vector<double> dur(static_cast<std::size_t>(k), 0.0);
      for (const auto& q : prims) {
        auto it = label.find(q.primitive_id);
        if (it == label.end()) throw SchemaError("clusters.json has no assignment for " + q.primitive_id);
        ++count[static_cast<std::size_t>(it->second - 1)];
        dur[static_cast<std::size_t>(it->second - 1)] += static_cast<double>(q.length());
      }
      auto out = io::open_out(p.pattern_frequency());
      csv::write_row(out, {"cluster", "count", "share", "sig_v_x", "sig_v_y", "sig_acc_x", "sig_acc_y", "mean_duration_frames"});
      for (int c2 = 0; c2 < k; ++c2) {
        const auto cs = static_cast<std::size_t>(c2);
        const auto centroid = clusters.at("clusters").at(cs).at("centroid").get<std::vector<Behavior>>();
        Behavior sig{};
        for (const auto& o : centroid)
          for (std::size_t d = 0; d < kBehaviorDim; ++d) sig[d] += o[d] / static_cast<double>(centroid.size());
        const double share = prims.empty() ? 0.0 : static_cast<double>(count[cs]) / static_cast<double>(prims.size());
        csv::write_row(out, {csv::format(std::int64_t{c2 + 1}), csv::format(static_cast<std::int64_t>(count[cs])),
                             csv::format(share), csv::format(sig[0]), csv::format(sig[1]), csv::format(sig[2]),
                             csv::format(sig[3]),
                             csv::format(count[cs] ? dur[cs] / static_cast<double>(count[cs]) : 0.0)});
      }
    }

    // Models: per event, or one pooled model for all.
    const bool pooled = fs::exists(p.pooled_model());
    std::optional<io::ModelRecord> pooled_model;
    if (pooled) pooled_model = io::model_from_json(io::read_json_file(p.pooled_model()));
    std::vector<std::optional<io::ModelRecord>> models;
    for (const auto& e : events) {
      if (pooled) {
        models.push_back(pooled_model);
      } else if (fs::exists(p.model(e.event_id))) {
        models.push_back(io::model_from_json(io::read_json_file(p.model(e.event_id))));
      } else {
        models.emplace_back();
      }
    }

    {
      std::array<std::size_t, kCovariateDim> ev_sig{}, ev_eval{}, co_sig{}, co_eval{};
      auto tally = [&](const io::ModelRecord& m) {
        std::array<bool, kCovariateDim> any{}, evaluated{};
        for (const auto& s : m.significance) {
          if (!s.active) continue;
          evaluated[s.covariate] = true;
          ++co_eval[s.covariate];
          if (s.significant) {
            ++co_sig[s.covariate];
            any[s.covariate] = true;
          }
        }
        for (std::size_t c2 = 0; c2 < kCovariateDim; ++c2) {
          ev_eval[c2] += evaluated[c2];
          ev_sig[c2] += any[c2];
        }
      };
      if (pooled) {
        tally(*pooled_model);
      } else {
        for (const auto& m : models)
          if (m) tally(*m);
      }
      auto out = io::open_out(p.significance_counts());
      csv::write_row(out, {"covariate", "models_significant", "models_evaluated", "coefficients_significant", "coefficients_evaluated"});
      for (std::size_t c2 = 0; c2 < kCovariateDim; ++c2)
        csv::write_row(out, {kCovariateNames[c2], csv::format(static_cast<std::int64_t>(ev_sig[c2])),
                             csv::format(static_cast<std::int64_t>(ev_eval[c2])),
                             csv::format(static_cast<std::int64_t>(co_sig[c2])),
                             csv::format(static_cast<std::int64_t>(co_eval[c2]))});
    }

    {
      auto series = io::open_out(p.transition_series());
      auto mean = io::open_out(p.transition_mean());
      csv::write_row(series, {"event_id", "frame", "from_state", "to_state", "probability"});
      csv::write_row(mean, {"event_id", "from_state", "to_state", "probability"});
      for (std::size_t e = 0; e < events.size(); ++e) {
        if (!models[e]) continue;
        const io::ModelRecord& m = *models[e];
        const auto K = static_cast<Eigen::Index>(m.K);
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(K, K);
        for (std::size_t t = 0; t < events[e].X.size(); ++t) {
          const Eigen::MatrixXd A = nhmm::transition_matrix_at(m.params, m.scaler.apply(events[e].X[t]));
          acc += A;
          const std::string frame = csv::format(events[e].t_start + static_cast<FrameIndex>(t));
          for (Eigen::Index i = 0; i < K; ++i)
            for (Eigen::Index j = 0; j < K; ++j)
              csv::write_row(series, {events[e].event_id, frame, csv::format(std::int64_t{i + 1}),
                                      csv::format(std::int64_t{j + 1}), csv::format(A(i, j))});
        }
        acc /= static_cast<double>(events[e].X.size());
        for (Eigen::Index i = 0; i < K; ++i)
          for (Eigen::Index j = 0; j < K; ++j)
            csv::write_row(mean, {events[e].event_id, csv::format(std::int64_t{i + 1}), csv::format(std::int64_t{j + 1}),
                                  csv::format(acc(i, j))});
      }
    }

    {
      std::map<EventId, std::vector<const Primitive*>> by_event;
      for (const auto& q : prims) by_event[q.event_id].push_back(&q);
      auto out = io::open_out(p.pattern_chains());
      csv::write_row(out, {"event_id", "n_primitives", "chain"});
      for (const auto& e : events) {
        auto& v = by_event[e.event_id];
        std::sort(v.begin(), v.end(), [](const Primitive* a, const Primitive* b) { return a->start_frame < b->start_frame; });
        std::string chain;
        for (const auto* q : v) {
          if (!chain.empty()) chain += ">";
          chain += std::to_string(label.at(q->primitive_id));
        }
        csv::write_row(out, {e.event_id, csv::format(static_cast<std::int64_t>(v.size())), chain});
      }
    }
    log << "report: " << events.size() << " events, " << prims.size() << " primitives, " << k << " patterns\n";
    return 0;
  } catch (const Error& e) {
    log << "report: " << e.what() << '\n';
    return 1;
  }
}

/// synth (when no input table is configured), extract, fit, cluster, report.
inline int cmd_run_all(const PipelineConfig& c, std::ostream& log = std::cerr) {
  if (c.tracks_path.empty())
    if (int rc = cmd_synth(c, log)) return rc;
  if (int rc = cmd_extract(c, log)) return rc;
  if (int rc = cmd_fit(c, log)) return rc;
  if (int rc = cmd_cluster(c, log)) return rc;
  return cmd_report(c, log);
}

}  // namespace onramp::pipeline
