#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "onramp/common.hpp"
#include "onramp/csv.hpp"
#include "onramp/geometry.hpp"

namespace onramp {

enum class AgentType { car, truck, other };

inline AgentType parse_agent_type(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  while (!lower.empty() && (lower.back() == ' ' || lower.back() == '\r')) lower.pop_back();
  if (lower == "car") return AgentType::car;
  if (lower == "truck") return AgentType::truck;
  return AgentType::other;
}

inline const char* to_string(AgentType t) {
  switch (t) {
    case AgentType::car: return "car";
    case AgentType::truck: return "truck";
    default: return "other";
  }
}

struct TrackFrame {
  FrameIndex frame_index = 0;
  std::int64_t timestamp_ms = 0;
  Point2 position;
  Point2 velocity;
  double heading = 0.0;
  AgentType agent_type = AgentType::car;
};

struct Track {
  TrackId track_id = 0;
  std::vector<TrackFrame> frames;
  double length_m = 0.0;
  double width_m = 0.0;

  FrameIndex first_frame() const { return frames.front().frame_index; }
  FrameIndex last_frame() const { return frames.back().frame_index; }
  bool has_frame(FrameIndex f) const { return f >= first_frame() && f <= last_frame(); }
  // Validated tracks are contiguous, so frame lookup is an offset.
  const TrackFrame& at(FrameIndex f) const { return frames[static_cast<std::size_t>(f - first_frame())]; }
  bool is_truck() const {
    return std::any_of(frames.begin(), frames.end(), [](const TrackFrame& f) { return f.agent_type == AgentType::truck; });
  }
};

/// Lane geometry of one merging area. Every lane line is oriented so that
/// positive lateral offsets point toward the target lane.
class LaneGeometry {
 public:
  LaneGeometry() = default;

  LaneGeometry(Polyline acceleration_lane, Polyline target_lane, Polyline boundary, double acceleration_lane_end_s,
               double ramp_length_m, int lane_count, double default_gap_m = 130.0)
      : acceleration_lane_end_s_(acceleration_lane_end_s),
        ramp_length_m_(ramp_length_m),
        lane_count_(lane_count),
        default_gap_m_(default_gap_m) {
    if (!(acceleration_lane_end_s >= 0.0) || acceleration_lane_end_s > acceleration_lane.length() + 1e-9)
      throw GeometryError("acceleration_lane_end_s must lie within the acceleration-lane centerline");
    if (!(default_gap_m > 0.0)) throw GeometryError("default_gap_m must be positive");
    if (!(ramp_length_m > 0.0)) throw GeometryError("ramp_length_m must be positive");
    if (lane_count < 1) throw GeometryError("lane_count must be >= 1");

    const Point2 target_mid = midpoint(target_lane);
    const Point2 accel_mid = midpoint(acceleration_lane);
    acceleration_ = {std::move(acceleration_lane), 1.0};
    acceleration_.side = acceleration_.line.project(target_mid).e < 0.0 ? -1.0 : 1.0;
    boundary_ = {std::move(boundary), 1.0};
    boundary_.side = boundary_.line.project(target_mid).e < 0.0 ? -1.0 : 1.0;
    target_ = {std::move(target_lane), 1.0};
    target_.side = target_.line.project(accel_mid).e > 0.0 ? -1.0 : 1.0;
  }

  const LaneLine& acceleration_lane() const { return acceleration_; }
  const LaneLine& target_lane() const { return target_; }
  const LaneLine& boundary() const { return boundary_; }
  double acceleration_lane_end_s() const { return acceleration_lane_end_s_; }
  double ramp_length_m() const { return ramp_length_m_; }
  int lane_count() const { return lane_count_; }
  double default_gap_m() const { return default_gap_m_; }

  static LaneGeometry from_json(const nlohmann::json& j) {
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key)) throw SchemaError(std::string("geometry is missing key '") + key + "'");
      return j.at(key);
    };
    auto polyline = [&](const char* key) {
      const auto& arr = need(key);
      if (!arr.is_array()) throw SchemaError(std::string("geometry key '") + key + "' must be an array of [x, y]");
      std::vector<Point2> pts;
      for (const auto& p : arr) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
          throw SchemaError(std::string("geometry key '") + key + "' must be an array of [x, y]");
        pts.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      return Polyline(std::move(pts));
    };
    auto number = [&](const char* key) {
      const auto& v = need(key);
      if (!v.is_number()) throw SchemaError(std::string("geometry key '") + key + "' must be a number");
      return v.get<double>();
    };
    const auto& lanes = need("lane_count");
    if (!lanes.is_number_integer()) throw SchemaError("geometry key 'lane_count' must be an integer");
    return LaneGeometry(polyline("acceleration_lane_centerline"), polyline("target_lane_centerline"),
                        polyline("boundary_line"), number("acceleration_lane_end_s"), number("ramp_length_m"),
                        lanes.get<int>(), number("default_gap_m"));
  }

  nlohmann::json to_json() const {
    auto pts = [](const Polyline& p) {
      nlohmann::json arr = nlohmann::json::array();
      for (const Point2& v : p.vertices()) arr.push_back({v.x, v.y});
      return arr;
    };
    return {{"acceleration_lane_centerline", pts(acceleration_.line)},
            {"target_lane_centerline", pts(target_.line)},
            {"boundary_line", pts(boundary_.line)},
            {"acceleration_lane_end_s", acceleration_lane_end_s_},
            {"ramp_length_m", ramp_length_m_},
            {"lane_count", lane_count_},
            {"default_gap_m", default_gap_m_}};
  }

 private:
  static Point2 midpoint(const Polyline& p) { return p.point_at(0.5 * p.length()); }

  LaneLine acceleration_;
  LaneLine target_;
  LaneLine boundary_;
  double acceleration_lane_end_s_ = 0.0;
  double ramp_length_m_ = 1.0;
  int lane_count_ = 1;
  double default_gap_m_ = 130.0;
};

/// All tracks of one recording on a common frame clock. Immutable once built.
struct Scene {
  std::map<TrackId, Track> tracks;
  LaneGeometry geometry;
  int sampling_hz = 10;
};

struct TrackRejection {
  TrackId track_id = 0;
  std::string reason;
};

struct SceneLoad {
  Scene scene;
  std::vector<TrackRejection> rejected;
};

struct LoadOptions {
  int sampling_hz = 10;
  double spacing_tolerance_ms = 1.0;
  std::size_t min_frames = 10;
};

/// Empty optional when the track is valid, otherwise the rejection reason.
inline std::optional<std::string> validate_track(const Track& t, const LoadOptions& opt = {}) {
  if (t.frames.empty()) return "empty";
  const double period = 1000.0 / opt.sampling_hz;
  for (std::size_t i = 1; i < t.frames.size(); ++i) {
    const auto& a = t.frames[i - 1];
    const auto& b = t.frames[i];
    if (b.frame_index == a.frame_index) return "duplicate_frame";
    if (b.timestamp_ms <= a.timestamp_ms) return "non_monotone_timestamp";
    if (b.frame_index != a.frame_index + 1) return "missing_frame";
    if (std::abs(static_cast<double>(b.timestamp_ms - a.timestamp_ms) - period) > opt.spacing_tolerance_ms)
      return "irregular_sampling";
  }
  if (t.frames.size() < opt.min_frames) return "too_short";
  return std::nullopt;
}

inline const std::vector<std::string>& track_table_columns() {
  static const std::vector<std::string> cols = {"track_id", "frame_id", "timestamp_ms", "agent_type", "x",     "y",
                                                "vx",       "vy",       "psi_rad",      "length",     "width"};
  return cols;
}

/// Parses a track table; tracks failing validation are listed in `rejected`.
inline SceneLoad read_tracks(std::istream& in, LaneGeometry geometry, const LoadOptions& opt = {}) {
  const csv::Table table = csv::Table::read(in);
  std::vector<std::size_t> col;
  for (const auto& name : track_table_columns()) col.push_back(table.column(name));

  std::map<TrackId, Track> raw;
  std::size_t line_no = 1;
  for (const auto& row : table.rows()) {
    ++line_no;
    auto cell = [&](std::size_t c) -> const std::string& {
      if (col[c] >= row.size())
        throw SchemaError("line " + std::to_string(line_no) + ": missing value for column '" + track_table_columns()[c] + "'");
      return row[col[c]];
    };
    auto num = [&](std::size_t c) {
      auto v = csv::parse_double(cell(c));
      if (!v) throw SchemaError("line " + std::to_string(line_no) + ": column '" + track_table_columns()[c] + "' is not a number");
      return *v;
    };
    auto integer = [&](std::size_t c) {
      auto v = csv::parse_int(cell(c));
      if (!v) throw SchemaError("line " + std::to_string(line_no) + ": column '" + track_table_columns()[c] + "' is not an integer");
      return *v;
    };
    TrackFrame f;
    const TrackId id = integer(0);
    f.frame_index = integer(1);
    f.timestamp_ms = integer(2);
    f.agent_type = parse_agent_type(cell(3));
    f.position = {num(4), num(5)};
    f.velocity = {num(6), num(7)};
    f.heading = num(8);
    Track& t = raw[id];
    t.track_id = id;
    t.length_m = num(9);
    t.width_m = num(10);
    t.frames.push_back(f);
  }

  SceneLoad out;
  out.scene.geometry = std::move(geometry);
  out.scene.sampling_hz = opt.sampling_hz;
  for (auto& [id, t] : raw) {
    std::stable_sort(t.frames.begin(), t.frames.end(),
                     [](const TrackFrame& a, const TrackFrame& b) { return a.frame_index < b.frame_index; });
    if (auto reason = validate_track(t, opt)) {
      out.rejected.push_back({id, *reason});
    } else {
      out.scene.tracks.emplace(id, std::move(t));
    }
  }
  return out;
}

inline LaneGeometry read_geometry_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open geometry file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("geometry file is not valid JSON: " + std::string(e.what()));
  }
  return LaneGeometry::from_json(j);
}

inline SceneLoad load_scene(const std::string& track_table, const std::string& geometry_file,
                            const LoadOptions& opt = {}) {
  LaneGeometry g = read_geometry_file(geometry_file);
  std::ifstream in(track_table);
  if (!in) throw InputError("cannot open track table: " + track_table);
  return read_tracks(in, std::move(g), opt);
}

inline void write_tracks(std::ostream& out, const Scene& scene) {
  csv::write_row(out, track_table_columns());
  for (const auto& [id, t] : scene.tracks) {
    for (const auto& f : t.frames) {
      csv::write_row(out, {csv::format(id), csv::format(f.frame_index), csv::format(f.timestamp_ms), to_string(f.agent_type),
                           csv::format(f.position.x), csv::format(f.position.y), csv::format(f.velocity.x),
                           csv::format(f.velocity.y), csv::format(f.heading), csv::format(t.length_m),
                           csv::format(t.width_m)});
    }
  }
}

inline void write_geometry(std::ostream& out, const LaneGeometry& g) { out << g.to_json().dump(2) << '\n'; }

inline LaneVelocity signed_lane_velocity(const TrackFrame& frame, const LaneLine& lane) {
  return signed_lane_velocity(frame.position, frame.velocity, lane);
}

}  // namespace onramp
