#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onramp/common.hpp"
#include "onramp/trajectory_store.hpp"

namespace onramp {

struct ExtractionConfig {
  double peak_floor = 0.1;         ///< m/s^2; smaller local maxima of |lateral acc| are noise
  double lane_half_width = 1.75;   ///< lane membership radius around a centerline
  std::size_t min_event_frames = 10;
  std::size_t smoothing_window = 5;
};

enum NeighborRole : std::size_t { kLeadAccel = 0, kLagAccel = 1, kLeadTarget = 2, kLagTarget = 3 };
inline constexpr std::array<const char*, 4> kNeighborRoleNames = {"f", "r", "ft", "rt"};

using NeighborIds = std::array<std::optional<TrackId>, 4>;

struct NeighborMatch {
  NeighborIds ids;
  std::array<double, 4> gaps{};
};

/// One merging process. O and X are indexed by frame - t_start.
struct MergeEvent {
  EventId event_id;
  TrackId vehicle_id = 0;
  FrameIndex t_cross = 0;
  FrameIndex t_start = 0;
  FrameIndex t_end = 0;
  std::vector<Behavior> O;
  std::vector<Covariates> X;
  std::vector<NeighborIds> neighbor_ids;

  std::size_t length() const { return O.size(); }
};

inline EventId make_event_id(TrackId vehicle, FrameIndex t_cross) {
  return std::to_string(vehicle) + "_" + std::to_string(t_cross);
}

struct Discard {
  TrackId track_id = 0;
  FrameIndex t_cross = 0;
  std::string reason;
};

struct ExtractionResult {
  std::vector<MergeEvent> events;
  std::vector<Discard> discards;
};

/// Per-frame lane-frame kinematics of one track on the acceleration lane.
struct LaneKinematics {
  std::vector<double> lateral_speed;
  std::vector<double> longitudinal_speed;
  std::vector<double> lateral_acc;       ///< smoothed
  std::vector<double> longitudinal_acc;  ///< smoothed
  std::vector<double> boundary_offset;   ///< signed offset to the boundary line
};

/// Central differences (one-sided at the ends) divided by dt.
inline std::vector<double> central_difference(const std::vector<double>& v, double dt) {
  const std::size_t n = v.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d.front() = (v[1] - v[0]) / dt;
  d.back() = (v[n - 1] - v[n - 2]) / dt;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
  return d;
}

/// Centered moving average; the window shrinks symmetrically near the ends.
inline std::vector<double> centered_moving_average(const std::vector<double>& v, std::size_t window) {
  const std::size_t n = v.size();
  const std::size_t half = window / 2;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = std::min({half, i, n - 1 - i});
    double sum = 0.0;
    for (std::size_t j = i - h; j <= i + h; ++j) sum += v[j];
    out[i] = sum / static_cast<double>(2 * h + 1);
  }
  return out;
}

inline LaneKinematics lane_kinematics(const Track& track, const LaneGeometry& g, int sampling_hz,
                                      std::size_t window = 5) {
  LaneKinematics k;
  const std::size_t n = track.frames.size();
  k.lateral_speed.resize(n);
  k.longitudinal_speed.resize(n);
  k.boundary_offset.resize(n);
  std::vector<double> offset(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = track.frames[i];
    k.longitudinal_speed[i] = signed_lane_velocity(f, g.acceleration_lane()).longitudinal;
    offset[i] = g.acceleration_lane().project(f.position).e;
    k.boundary_offset[i] = g.boundary().project(f.position).e;
  }
  const double dt = 1.0 / sampling_hz;
  // Lateral speed from the offset series: the offset to a polyline is
  // continuous, the segment tangent is not.
  k.lateral_speed = central_difference(offset, dt);
  k.lateral_acc = centered_moving_average(central_difference(k.lateral_speed, dt), window);
  k.longitudinal_acc = centered_moving_average(central_difference(k.longitudinal_speed, dt), window);
  return k;
}

inline std::vector<FrameIndex> detect_crossing(const Track& track, const std::vector<double>& boundary_offset) {
  std::vector<FrameIndex> out;
  for (std::size_t i = 1; i < boundary_offset.size(); ++i)
    if ((boundary_offset[i - 1] < 0.0) != (boundary_offset[i] < 0.0)) out.push_back(track.frames[i].frame_index);
  return out;
}

/// Frames t where the signed offset to the boundary line changes sign between t-1 and t.
inline std::vector<FrameIndex> detect_crossing(const Track& track, const LaneGeometry& g) {
  std::vector<double> off(track.frames.size());
  for (std::size_t i = 0; i < off.size(); ++i) off[i] = g.boundary().project(track.frames[i].position).e;
  return detect_crossing(track, off);
}

/// Frames at each track end excluded from peak search: the peak test reads
/// i-1..i+1 and each smoothed value needs offsets from 2 + window/2 frames away.
inline std::size_t peak_edge_margin(const ExtractionConfig& cfg) { return 3 + cfg.smoothing_window / 2; }

struct MergeBounds {
  FrameIndex t_start = 0;
  FrameIndex t_end = 0;
  std::string discard_reason;  ///< empty on success
  bool ok() const { return discard_reason.empty(); }
};

/// Nearest qualifying peaks of |smoothed lateral acceleration| on either side
/// of the crossing. A peak is strictly above both neighbors, at least
/// `peak_floor`, and at least `edge_margin` frames from either track end.
inline MergeBounds find_merge_bounds(const Track& track, const std::vector<double>& smoothed_lateral_acc,
                                     FrameIndex t_cross, double peak_floor, std::size_t edge_margin = 1) {
  const auto n = static_cast<std::ptrdiff_t>(smoothed_lateral_acc.size());
  const std::ptrdiff_t c = t_cross - track.first_frame();
  if (c < 0 || c >= n) throw InputError("crossing frame outside track");
  auto mag = [&](std::ptrdiff_t i) { return std::abs(smoothed_lateral_acc[static_cast<std::size_t>(i)]); };
  auto is_peak = [&](std::ptrdiff_t i) {
    const auto m = static_cast<std::ptrdiff_t>(std::max<std::size_t>(edge_margin, 1));
    return i >= m && i + m < n && mag(i) > mag(i - 1) && mag(i) > mag(i + 1) && mag(i) >= peak_floor;
  };
  MergeBounds b;
  std::ptrdiff_t start = -1;
  for (std::ptrdiff_t i = c - 1; i > 0; --i)
    if (is_peak(i)) {
      start = i;
      break;
    }
  if (start < 0) {
    b.discard_reason = "no_start_peak";
    return b;
  }
  std::ptrdiff_t end = -1;
  for (std::ptrdiff_t i = c + 1; i + 1 < n; ++i)
    if (is_peak(i)) {
      end = i;
      break;
    }
  if (end < 0) {
    b.discard_reason = "no_end_peak";
    return b;
  }
  b.t_start = track.first_frame() + start;
  b.t_end = track.first_frame() + end;
  return b;
}

inline MergeBounds find_merge_bounds(const Track& track, FrameIndex t_cross, const LaneGeometry& g, int sampling_hz = 10,
                                     const ExtractionConfig& cfg = {}) {
  const LaneKinematics k = lane_kinematics(track, g, sampling_hz, cfg.smoothing_window);
  return find_merge_bounds(track, k.lateral_acc, t_cross, cfg.peak_floor, peak_edge_margin(cfg));
}

/// Lane-frame positions of every vehicle at every frame, projected once.
class LaneIndex {
 public:
  struct State {
    TrackId id = 0;
    double s = 0.0;         ///< arc length on the acceleration-lane centerline
    double e_accel = 0.0;   ///< offset to the acceleration-lane centerline
    double e_target = 0.0;  ///< offset to the target-lane centerline
    AgentType type = AgentType::car;
  };

  LaneIndex(const Scene& scene, const ExtractionConfig& cfg = {}) : scene_(&scene), cfg_(cfg) {
    const LaneGeometry& g = scene.geometry;
    for (const auto& [id, t] : scene.tracks) {
      for (const auto& f : t.frames) {
        State st;
        st.id = id;
        const LaneCoord ca = g.acceleration_lane().project(f.position);
        st.s = ca.s;
        st.e_accel = ca.e;
        st.e_target = g.target_lane().project(f.position).e;
        st.type = f.agent_type;
        by_frame_[f.frame_index].push_back(st);
      }
    }
  }

  const Scene& scene() const { return *scene_; }
  const ExtractionConfig& config() const { return cfg_; }

  const std::vector<State>& at(FrameIndex f) const {
    static const std::vector<State> empty;
    auto it = by_frame_.find(f);
    return it == by_frame_.end() ? empty : it->second;
  }

  std::optional<State> find(TrackId id, FrameIndex f) const {
    for (const State& s : at(f))
      if (s.id == id) return s;
    return std::nullopt;
  }

  bool in_acceleration_lane(const State& s) const { return std::abs(s.e_accel) <= cfg_.lane_half_width; }
  bool in_target_lane(const State& s) const { return std::abs(s.e_target) <= cfg_.lane_half_width; }
  bool on_ramp(const State& s) const {
    const double hw = cfg_.lane_half_width;
    const double far_edge = -(2.0 * scene_->geometry.lane_count() - 1.0) * hw;
    const double end = scene_->geometry.acceleration_lane_end_s();
    return s.s >= 0.0 && s.s <= end && s.e_accel <= hw && s.e_accel >= far_edge;
  }

 private:
  const Scene* scene_;
  ExtractionConfig cfg_;
  std::map<FrameIndex, std::vector<State>> by_frame_;
};

/// Nearest lead/lag vehicles in the acceleration and target lanes. Gaps are
/// arc-length differences on the acceleration-lane centerline; candidates
/// farther than default_gap_m count as absent.
inline NeighborMatch match_neighbors(const LaneIndex& index, TrackId vehicle, FrameIndex t) {
  const double gap_default = index.scene().geometry.default_gap_m();
  NeighborMatch m;
  m.gaps.fill(gap_default);
  const auto subject = index.find(vehicle, t);
  if (!subject) throw InputError("vehicle " + std::to_string(vehicle) + " not present at frame " + std::to_string(t));
  for (const auto& o : index.at(t)) {
    if (o.id == vehicle) continue;
    const double ds = o.s - subject->s;
    const double gap = std::abs(ds);
    if (gap > gap_default) continue;
    auto offer = [&](NeighborRole role) {
      if (!m.ids[role] || gap < m.gaps[role]) {
        m.ids[role] = o.id;
        m.gaps[role] = gap;
      }
    };
    if (index.in_acceleration_lane(o)) offer(ds > 0.0 ? kLeadAccel : kLagAccel);
    if (index.in_target_lane(o)) offer(ds > 0.0 ? kLeadTarget : kLagTarget);
  }
  return m;
}

/// Vehicles counted toward ramp density: those on the ramp at t, plus the
/// merging vehicle itself throughout its merge.
inline double ramp_density(const LaneIndex& index, TrackId vehicle, FrameIndex t) {
  const LaneGeometry& g = index.scene().geometry;
  std::size_t count = 1;
  for (const auto& o : index.at(t))
    if (o.id != vehicle && index.on_ramp(o)) ++count;
  return static_cast<double>(count) / (g.ramp_length_m() * g.lane_count());
}

struct CovariateSeries {
  std::vector<Covariates> X;
  std::vector<NeighborIds> neighbor_ids;
};

inline CovariateSeries compute_covariates(const LaneIndex& index, TrackId vehicle, FrameIndex t_start, FrameIndex t_end) {
  const LaneGeometry& g = index.scene().geometry;
  CovariateSeries out;
  for (FrameIndex t = t_start; t <= t_end; ++t) {
    const NeighborMatch m = match_neighbors(index, vehicle, t);
    const auto subject = index.find(vehicle, t);
    Covariates x{};
    for (std::size_t r = 0; r < 4; ++r) x[r] = m.gaps[r];
    x[4] = std::max(0.0, g.acceleration_lane_end_s() - subject->s);
    x[5] = ramp_density(index, vehicle, t);
    out.X.push_back(x);
    out.neighbor_ids.push_back(m.ids);
  }
  return out;
}

/// Data-processing steps 1-5 over the whole scene. Output is ordered by
/// (vehicle_id, t_cross).
inline ExtractionResult extract_events(const Scene& scene, const ExtractionConfig& cfg = {}) {
  ExtractionResult res;
  const LaneIndex index(scene, cfg);
  for (const auto& [id, track] : scene.tracks) {
    const LaneKinematics kin = lane_kinematics(track, scene.geometry, scene.sampling_hz, cfg.smoothing_window);
    for (FrameIndex t_cross : detect_crossing(track, kin.boundary_offset)) {
      const MergeBounds b = find_merge_bounds(track, kin.lateral_acc, t_cross, cfg.peak_floor, peak_edge_margin(cfg));
      if (!b.ok()) {
        res.discards.push_back({id, t_cross, b.discard_reason});
        continue;
      }
      if (static_cast<std::size_t>(b.t_end - b.t_start + 1) < cfg.min_event_frames) {
        res.discards.push_back({id, t_cross, "too_short"});
        continue;
      }
      CovariateSeries cov = compute_covariates(index, id, b.t_start, b.t_end);
      bool truck = false;
      for (FrameIndex t = b.t_start; t <= b.t_end && !truck; ++t)
        if (track.at(t).agent_type == AgentType::truck) truck = true;
      for (std::size_t i = 0; i < cov.neighbor_ids.size() && !truck; ++i) {
        const FrameIndex t = b.t_start + static_cast<FrameIndex>(i);
        for (const auto& n : cov.neighbor_ids[i])
          if (n && scene.tracks.at(*n).at(t).agent_type == AgentType::truck) truck = true;
      }
      if (truck) {
        res.discards.push_back({id, t_cross, "truck_involved"});
        continue;
      }
      MergeEvent ev;
      ev.event_id = make_event_id(id, t_cross);
      ev.vehicle_id = id;
      ev.t_cross = t_cross;
      ev.t_start = b.t_start;
      ev.t_end = b.t_end;
      for (FrameIndex t = b.t_start; t <= b.t_end; ++t) {
        const auto i = static_cast<std::size_t>(t - track.first_frame());
        ev.O.push_back({kin.lateral_speed[i], kin.longitudinal_speed[i], kin.lateral_acc[i], kin.longitudinal_acc[i]});
      }
      ev.X = std::move(cov.X);
      ev.neighbor_ids = std::move(cov.neighbor_ids);
      res.events.push_back(std::move(ev));
    }
  }
  return res;
}

}  // namespace onramp
