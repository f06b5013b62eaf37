#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "onramp/merge_extractor.hpp"
#include "onramp/nhmm/params.hpp"
#include "onramp/random.hpp"
#include "onramp/trajectory_store.hpp"
#include "onramp/tskm/dtw.hpp"

namespace onramp::synth {

inline constexpr int kGeneratorVersion = 1;

// ---------------------------------------------------------------- NHMM data

struct CovariateProcess {
  /// Used for every sequence when non-empty (must have T rows); otherwise
  /// each covariate is i.i.d. standard normal per frame.
  std::vector<Covariates> path;
};

struct NhmmLedger {
  nhmm::NhmmParams params;
  std::vector<std::vector<int>> states;
  std::uint64_t seed = 0;
};

struct NhmmSynthetic {
  std::vector<MergeEvent> events;
  NhmmLedger ledger;
};

/// Forward simulation: q_0 ~ pi0, q_t ~ A(x_t)[q_{t-1}], o_t ~ N(mu_q, Sigma_q).
/// Sequence i uses derive_seed(seed, i).
inline NhmmSynthetic gen_nhmm_sequences(const nhmm::NhmmParams& p, const CovariateProcess& cov, std::size_t n_sequences,
                                        std::size_t T, std::uint64_t seed) {
  if (!cov.path.empty() && cov.path.size() != T) throw InputError("gen_nhmm_sequences: covariate path must have T rows");
  std::vector<Eigen::Matrix4d> chol;
  for (const auto& s : p.sigma) {
    Eigen::LLT<Eigen::Matrix4d> llt(s);
    if (llt.info() != Eigen::Success) throw ModelStateError("gen_nhmm_sequences: covariance not positive definite");
    chol.emplace_back(llt.matrixL());
  }
  NhmmSynthetic out;
  out.ledger.params = p;
  out.ledger.seed = seed;
  std::vector<double> w(static_cast<std::size_t>(p.K));
  for (std::size_t i = 0; i < n_sequences; ++i) {
    Random rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    MergeEvent ev;
    ev.event_id = "syn" + std::to_string(i);
    ev.vehicle_id = static_cast<TrackId>(i);
    ev.t_start = 0;
    ev.t_end = static_cast<FrameIndex>(T) - 1;
    ev.t_cross = static_cast<FrameIndex>(T / 2);
    std::vector<int> q(T);
    for (std::size_t t = 0; t < T; ++t) {
      Covariates x{};
      if (cov.path.empty())
        for (auto& v : x) v = rng.normal();
      else
        x = cov.path[t];
      if (t == 0) {
        for (int k = 0; k < p.K; ++k) w[static_cast<std::size_t>(k)] = p.pi0[k];
      } else {
        const Eigen::MatrixXd A = nhmm::transition_matrix_at(p, x);
        for (int k = 0; k < p.K; ++k) w[static_cast<std::size_t>(k)] = A(q[t - 1], k);
      }
      q[t] = static_cast<int>(rng.categorical(w));
      Eigen::Vector4d z;
      for (int d = 0; d < 4; ++d) z[d] = rng.normal();
      const Eigen::Vector4d o = p.mu[static_cast<std::size_t>(q[t])] + chol[static_cast<std::size_t>(q[t])] * z;
      ev.O.push_back({o[0], o[1], o[2], o[3]});
      ev.X.push_back(x);
    }
    ev.neighbor_ids.assign(T, NeighborIds{});
    out.events.push_back(std::move(ev));
    out.ledger.states.push_back(std::move(q));
  }
  return out;
}

// ------------------------------------------------------------------- scenes

struct SceneLayout {
  bool arc = false;
  double arc_radius_m = 600.0;
  double centerline_length_m = 800.0;
  double acceleration_lane_end_s = 350.0;
  double ramp_length_m = 350.0;
  int lane_count = 1;
  double lane_width_m = 3.5;
  double default_gap_m = 130.0;
  int sampling_hz = 10;
};

struct ScriptedNeighbor {
  NeighborRole role = kLeadTarget;
  double gap_m = 20.0;  ///< beyond the default gap the vehicle exists but is not a neighbor
  AgentType type = AgentType::car;
};

enum class TrackCut { none, before_end_peak, after_start_peak };

/// One merging vehicle plus the vehicles scripted around it. All vehicles of
/// a merge share one longitudinal profile, so every gap stays constant.
struct ScriptedMerge {
  int duration_frames = 40;  ///< lateral manoeuvre length; multiple of 4
  int pre_roll = 15;
  int post_roll = 15;
  double s0 = 180.0;
  double v0 = 13.0;
  std::vector<std::pair<int, double>> regimes;  ///< (frames, longitudinal acceleration); then constant speed
  std::vector<ScriptedNeighbor> neighbors;
  std::vector<double> bystander_offsets;  ///< extra acceleration-lane vehicles at these s offsets
  AgentType subject_type = AgentType::car;
  TrackCut cut = TrackCut::none;
};

struct MergeTruth {
  TrackId subject = 0;
  std::string expected = "event";  ///< or the discard reason
  FrameIndex t_cross = 0;
  FrameIndex start_peak = 0;
  FrameIndex end_peak = 0;
  std::vector<Covariates> X;      ///< over [start_peak, end_peak]
  std::vector<NeighborIds> ids;
};

struct SceneLedger {
  std::uint64_t seed = 0;
  std::vector<MergeTruth> merges;
  std::map<TrackId, std::size_t> track_frames;

  std::size_t expected_events() const {
    return static_cast<std::size_t>(
        std::count_if(merges.begin(), merges.end(), [](const MergeTruth& m) { return m.expected == "event"; }));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["generator_version"] = kGeneratorVersion;
    j["seed"] = seed;
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : merges) {
      nlohmann::json o;
      o["subject"] = m.subject;
      o["expected"] = m.expected;
      o["t_cross"] = m.t_cross;
      o["start_peak"] = m.start_peak;
      o["end_peak"] = m.end_peak;
      nlohmann::json xs = nlohmann::json::array();
      for (const auto& x : m.X) xs.push_back(x);
      o["X"] = xs;
      nlohmann::json ids = nlohmann::json::array();
      for (const auto& f : m.ids) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& id : f) row.push_back(id ? nlohmann::json(*id) : nlohmann::json(nullptr));
        ids.push_back(row);
      }
      o["neighbor_ids"] = ids;
      ms.push_back(o);
    }
    j["merges"] = ms;
    nlohmann::json tf = nlohmann::json::object();
    for (const auto& [id, n] : track_frames) tf[std::to_string(id)] = n;
    j["track_frames"] = tf;
    return j;
  }
};

struct SyntheticScene {
  Scene scene;
  SceneLedger ledger;
};

inline LaneGeometry make_layout_geometry(const SceneLayout& L) {
  const double hw = 0.5 * L.lane_width_m;
  auto line = [&](double e) {
    std::vector<Point2> pts;
    if (!L.arc) {
      pts = {{0.0, e}, {L.centerline_length_m, e}};
    } else {
      // Left-turning arc; offsets toward the center shrink the radius.
      const double step = 5.0;
      const auto n = static_cast<std::size_t>(std::ceil(L.centerline_length_m / step));
      for (std::size_t k = 0; k <= n; ++k) {
        const double th = static_cast<double>(k) * step / L.arc_radius_m;
        const double r = L.arc_radius_m - e;
        pts.push_back({r * std::sin(th), L.arc_radius_m - r * std::cos(th)});
      }
    }
    return Polyline(std::move(pts));
  };
  return LaneGeometry(line(0.0), line(L.lane_width_m), line(hw), L.acceleration_lane_end_s, L.ramp_length_m,
                      L.lane_count, L.default_gap_m);
}

namespace detail {

// Lateral offset profile of the merging vehicle: smooth lane change of
// `delta` metres over D frames; |acceleration| peaks at D/4 and 3D/4.
struct LateralProfile {
  double e0 = -0.15;
  double delta = 3.5;
  int D = 40;
  double e(double tau) const {
    const double phi = std::clamp(tau / D, 0.0, 1.0);
    return e0 + delta * (phi - std::sin(2.0 * std::numbers::pi * phi) / (2.0 * std::numbers::pi));
  }
  double rate(double tau, double dt) const {
    if (tau <= 0.0 || tau >= D) return 0.0;
    const double phi = tau / D;
    return delta / (D * dt) * (1.0 - std::cos(2.0 * std::numbers::pi * phi));
  }
};

}  // namespace detail

/// Builds tracks for the scripted merges in consecutive, non-overlapping
/// frame windows and records the analytic answers.
inline SyntheticScene gen_merging_scene(const SceneLayout& layout, std::span<const ScriptedMerge> merges,
                                        std::uint64_t seed = 0) {
  SyntheticScene out;
  out.ledger.seed = seed;
  out.scene.geometry = make_layout_geometry(layout);
  out.scene.sampling_hz = layout.sampling_hz;
  const LaneGeometry& g = out.scene.geometry;
  const Polyline& center = g.acceleration_lane().line;
  const double dt = 1.0 / layout.sampling_hz;
  const double hw = 0.5 * layout.lane_width_m;
  const double boundary_e = hw;
  const auto ms_per_frame = static_cast<std::int64_t>(std::llround(1000.0 / layout.sampling_hz));
  TrackId next_id = 1;
  FrameIndex frame0 = 0;

  for (const ScriptedMerge& m : merges) {
    if (m.duration_frames < 8 || m.duration_frames % 4 != 0)
      throw InputError("ScriptedMerge: duration_frames must be a multiple of 4 and >= 8");
    const int N = m.pre_roll + m.duration_frames + m.post_roll;

    // Shared longitudinal profile.
    std::vector<double> s(static_cast<std::size_t>(N)), v(static_cast<std::size_t>(N)), a(static_cast<std::size_t>(N), 0.0);
    {
      std::size_t idx = 0;
      for (const auto& [frames, acc] : m.regimes)
        for (int k = 0; k < frames && idx < a.size(); ++k) a[idx++] = acc;
      s[0] = m.s0;
      v[0] = m.v0;
      for (std::size_t t = 1; t < s.size(); ++t) {
        double acc = a[t - 1];
        if (v[t - 1] + acc * dt < 0.5) acc = 0.0;
        a[t - 1] = acc;
        s[t] = s[t - 1] + v[t - 1] * dt + 0.5 * acc * dt * dt;
        v[t] = v[t - 1] + acc * dt;
      }
    }

    detail::LateralProfile lat;
    lat.D = m.duration_frames;
    const int tau0 = m.pre_roll;
    // Keep every sample clear of the boundary so the crossing frame is unambiguous.
    for (int attempt = 0; attempt < 100; ++attempt) {
      bool clear = true;
      for (int t = 0; t < N; ++t)
        if (std::abs(lat.e(t - tau0) - boundary_e) < 1e-6) clear = false;
      if (clear) break;
      lat.e0 -= 0.01;
    }
    int cross_local = -1;
    for (int t = 0; t < N; ++t)
      if (lat.e(t - tau0) >= boundary_e) {
        cross_local = t;
        break;
      }
    const int start_peak_local = tau0 + lat.D / 4;
    const int end_peak_local = tau0 + 3 * lat.D / 4;

    auto make_track = [&](TrackId id, double ds, bool subject, double lane_e, AgentType type, int first, int last) {
      Track tr;
      tr.track_id = id;
      tr.length_m = type == AgentType::truck ? 12.0 : 4.6;
      tr.width_m = type == AgentType::truck ? 2.5 : 1.8;
      for (int t = first; t <= last; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        const double sv = s[ti] + ds;
        const double e = subject ? lat.e(t - tau0) : lane_e;
        const double er = subject ? lat.rate(t - tau0, dt) : 0.0;
        const Point2 tg = center.segment_tangent(center.segment_at(sv));
        const Point2 nor{-tg.y, tg.x};
        TrackFrame f;
        f.frame_index = frame0 + t;
        f.timestamp_ms = f.frame_index * ms_per_frame;
        f.position = center.point_at(sv, e);
        f.velocity = v[ti] * tg + er * nor;
        f.heading = std::atan2(f.velocity.y, f.velocity.x);
        f.agent_type = type;
        tr.frames.push_back(f);
      }
      out.ledger.track_frames[id] = tr.frames.size();
      out.scene.tracks.emplace(id, std::move(tr));
    };

    MergeTruth truth;
    truth.subject = next_id++;
    truth.t_cross = frame0 + cross_local;
    truth.start_peak = frame0 + start_peak_local;
    truth.end_peak = frame0 + end_peak_local;

    int first = 0, last = N - 1;
    if (m.cut == TrackCut::before_end_peak) last = end_peak_local - 3;
    if (m.cut == TrackCut::after_start_peak) first = start_peak_local + 3;
    make_track(truth.subject, 0.0, true, 0.0, m.subject_type, first, last);

    struct Other {
      TrackId id;
      double ds;
      double e;
    };
    std::vector<Other> others;
    bool neighbor_truck = false;
    NeighborIds ids;
    std::array<double, 4> gaps;
    gaps.fill(layout.default_gap_m);
    for (const auto& n : m.neighbors) {
      const bool ahead = n.role == kLeadAccel || n.role == kLeadTarget;
      const bool target = n.role == kLeadTarget || n.role == kLagTarget;
      const double ds = ahead ? n.gap_m : -n.gap_m;
      const double e = target ? layout.lane_width_m : 0.0;
      const TrackId id = next_id++;
      make_track(id, ds, false, e, n.type, 0, N - 1);
      others.push_back({id, ds, e});
      if (n.gap_m <= layout.default_gap_m) {
        if (ids[n.role]) throw InputError("ScriptedMerge: two neighbors share a role within the default gap");
        ids[n.role] = id;
        gaps[n.role] = n.gap_m;
        if (n.type == AgentType::truck) neighbor_truck = true;
      }
    }
    for (double ds : m.bystander_offsets) {
      if (std::abs(ds) <= layout.default_gap_m)
        throw InputError("ScriptedMerge: bystanders must sit beyond the default gap");
      const TrackId id = next_id++;
      make_track(id, ds, false, 0.0, AgentType::car, 0, N - 1);
      others.push_back({id, ds, 0.0});
    }

    if (m.cut == TrackCut::after_start_peak)
      truth.expected = "no_start_peak";
    else if (m.cut == TrackCut::before_end_peak)
      truth.expected = "no_end_peak";
    else if (end_peak_local - start_peak_local + 1 < 10)
      truth.expected = "too_short";
    else if (m.subject_type == AgentType::truck || neighbor_truck)
      truth.expected = "truck_involved";

    if (truth.expected == "event") {
      for (int t = start_peak_local; t <= end_peak_local; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        Covariates x{};
        for (std::size_t r = 0; r < 4; ++r) x[r] = gaps[r];
        x[4] = std::max(0.0, layout.acceleration_lane_end_s - s[ti]);
        std::size_t count = 1;
        for (const auto& o : others) {
          const double so = s[ti] + o.ds;
          if (o.e == 0.0 && so >= 0.0 && so <= layout.acceleration_lane_end_s) ++count;
        }
        x[5] = static_cast<double>(count) / (layout.ramp_length_m * layout.lane_count);
        truth.X.push_back(x);
        truth.ids.push_back(ids);
      }
    }
    out.ledger.merges.push_back(std::move(truth));
    frame0 += N + 5;
  }
  return out;
}

struct SceneSpec {
  std::size_t n_merges = 10;
  std::size_t max_vehicles = 0;  ///< 0 = unlimited
  double invalid_fraction = 0.0;
};

/// Randomized merge scripts. Invalid merges cycle through the five discard
/// reasons.
inline std::vector<ScriptedMerge> random_merges(const SceneLayout& layout, const SceneSpec& spec, std::uint64_t seed) {
  Random rng(seed);
  std::vector<ScriptedMerge> out;
  std::size_t vehicles = 0;
  std::size_t invalid_made = 0;
  for (std::size_t i = 0; i < spec.n_merges; ++i) {
    ScriptedMerge m;
    m.duration_frames = 4 * static_cast<int>(12 + rng.uniform_index(13));  // 48..96
    m.pre_roll = 10 + static_cast<int>(rng.uniform_index(10));
    m.post_roll = 10 + static_cast<int>(rng.uniform_index(10));
    m.s0 = 170.0 + 20.0 * rng.uniform();
    m.v0 = 11.0 + 4.0 * rng.uniform();
    const int N = m.pre_roll + m.duration_frames + m.post_roll;
    int left = N;
    while (left > 0) {
      const int len = std::min(left, 15 + static_cast<int>(rng.uniform_index(30)));
      m.regimes.emplace_back(len, -0.8 + 1.6 * rng.uniform());
      left -= len;
    }
    for (int r = 0; r < 4; ++r) {
      const double u = rng.uniform();
      if (u < 0.7)
        m.neighbors.push_back({static_cast<NeighborRole>(r), 5.0 + 120.0 * rng.uniform(), AgentType::car});
      else if (u < 0.85)
        m.neighbors.push_back({static_cast<NeighborRole>(r), 135.0 + 25.0 * rng.uniform(), AgentType::car});
    }
    const std::size_t nb = rng.uniform_index(3);
    for (std::size_t b = 0; b < nb; ++b) {
      const double mag = 135.0 + 25.0 * rng.uniform();
      m.bystander_offsets.push_back(rng.uniform() < 0.5 ? -mag : mag + 40.0);
    }
    const bool invalid = static_cast<double>(invalid_made) < spec.invalid_fraction * static_cast<double>(i + 1);
    if (invalid) {
      switch (invalid_made % 5) {
        case 0: m.subject_type = AgentType::truck; break;
        case 1: {
          bool placed = false;
          for (auto& n : m.neighbors)
            if (n.gap_m <= layout.default_gap_m) {
              n.type = AgentType::truck;
              placed = true;
              break;
            }
          if (!placed) m.neighbors.push_back({kLeadTarget, 30.0, AgentType::truck});
          break;
        }
        case 2: m.cut = TrackCut::before_end_peak; break;
        case 3: m.cut = TrackCut::after_start_peak; break;
        default: m.duration_frames = 16; break;
      }
      ++invalid_made;
    }
    const std::size_t size = 1 + m.neighbors.size() + m.bystander_offsets.size();
    if (spec.max_vehicles > 0 && vehicles + size > spec.max_vehicles) break;
    vehicles += size;
    out.push_back(std::move(m));
  }
  return out;
}

inline SyntheticScene gen_merging_scene(const SceneLayout& layout, const SceneSpec& spec, std::uint64_t seed) {
  const auto merges = random_merges(layout, spec, seed);
  return gen_merging_scene(layout, merges, seed);
}

// --------------------------------------------------------- primitive families

struct PrimitiveFamilies {
  std::vector<tskm::Series> primitives;
  std::vector<int> labels;
  double between_min = 0.0;  ///< smallest DTW distance between two templates
  double within_max = 0.0;   ///< largest DTW distance from a member to its template
  double separation_ratio = 0.0;
};

/// Each member is its template under a random monotone time warp (length
/// within +-warp) plus i.i.d. Gaussian noise. Throws when the measured
/// separation ratio falls below `min_ratio`.
inline PrimitiveFamilies gen_primitive_families(const std::vector<tskm::Series>& templates, double noise_sd,
                                                std::size_t n_per_family, std::uint64_t seed, double warp = 0.2,
                                                double min_ratio = 20.0) {
  if (templates.empty()) throw InputError("gen_primitive_families: no templates");
  Random rng(seed);
  PrimitiveFamilies out;
  for (std::size_t f = 0; f < templates.size(); ++f) {
    const tskm::Series& tpl = templates[f];
    if (tpl.size() < 2) throw InputError("gen_primitive_families: templates need at least 2 frames");
    for (std::size_t i = 0; i < n_per_family; ++i) {
      std::size_t L = tpl.size();
      std::vector<double> u(L);
      if (warp > 0.0) {
        const double scale = 1.0 + warp * (2.0 * rng.uniform() - 1.0);
        L = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(static_cast<double>(tpl.size()) * scale)));
        u.assign(L, 0.0);
        for (std::size_t k = 1; k < L; ++k) u[k] = u[k - 1] + 0.5 + rng.uniform();
        const double top = u.back();
        for (auto& x : u) x *= static_cast<double>(tpl.size() - 1) / top;
      } else {
        for (std::size_t k = 0; k < L; ++k) u[k] = static_cast<double>(k);
      }
      tskm::Series m(L);
      for (std::size_t k = 0; k < L; ++k) {
        const auto lo = std::min(static_cast<std::size_t>(std::floor(u[k])), tpl.size() - 1);
        const std::size_t hi = std::min(lo + 1, tpl.size() - 1);
        const double w = u[k] - static_cast<double>(lo);
        for (std::size_t d = 0; d < kBehaviorDim; ++d) {
          m[k][d] = (1.0 - w) * tpl[lo][d] + w * tpl[hi][d];
          if (noise_sd > 0.0) m[k][d] += noise_sd * rng.normal();
        }
      }
      out.within_max = std::max(out.within_max, tskm::dtw_distance(m, tpl).distance);
      out.primitives.push_back(std::move(m));
      out.labels.push_back(static_cast<int>(f));
    }
  }
  out.between_min = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < templates.size(); ++a)
    for (std::size_t b = a + 1; b < templates.size(); ++b)
      out.between_min = std::min(out.between_min, tskm::dtw_distance(templates[a], templates[b]).distance);
  out.separation_ratio =
      out.within_max > 0.0 ? out.between_min / out.within_max : std::numeric_limits<double>::infinity();
  if (templates.size() > 1 && out.separation_ratio < min_ratio)
    throw InputError("gen_primitive_families: separation ratio " + std::to_string(out.separation_ratio) +
                     " below " + std::to_string(min_ratio) + "; increase template separation or reduce noise");
  return out;
}

}  // namespace onramp::synth
