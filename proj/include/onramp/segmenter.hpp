#pragma once

#include <span>
#include <string>
#include <vector>

#include "onramp/merge_extractor.hpp"

namespace onramp {

/// Maximal run of one decoded state inside an event. Frames are inclusive.
struct Primitive {
  std::string primitive_id;  ///< "<event_id>#<ordinal>"
  EventId event_id;
  int state_label = 0;
  FrameIndex start_frame = 0;
  FrameIndex end_frame = 0;
  std::vector<Behavior> series;

  std::size_t length() const { return static_cast<std::size_t>(end_frame - start_frame + 1); }
};

/// Run-length segmentation of q over the event's frames.
inline std::vector<Primitive> segment(const EventId& event_id, FrameIndex t_start, std::span<const Behavior> O,
                                      std::span<const int> q) {
  if (q.size() != O.size())
    throw InputError("segment: state sequence has " + std::to_string(q.size()) + " labels for " +
                     std::to_string(O.size()) + " frames");
  std::vector<Primitive> out;
  std::size_t begin = 0;
  for (std::size_t t = 1; t <= q.size(); ++t) {
    if (t < q.size() && q[t] == q[begin]) continue;
    Primitive p;
    p.primitive_id = event_id + "#" + std::to_string(out.size());
    p.event_id = event_id;
    p.state_label = q[begin];
    p.start_frame = t_start + static_cast<FrameIndex>(begin);
    p.end_frame = t_start + static_cast<FrameIndex>(t) - 1;
    p.series.assign(O.begin() + static_cast<std::ptrdiff_t>(begin), O.begin() + static_cast<std::ptrdiff_t>(t));
    out.push_back(std::move(p));
    begin = t;
  }
  return out;
}

inline std::vector<Primitive> segment(const MergeEvent& event, std::span<const int> q) {
  return segment(event.event_id, event.t_start, event.O, q);
}

struct FilterResult {
  std::vector<Primitive> retained;
  std::size_t dropped = 0;
};

/// Keeps primitives strictly longer than min_frames.
inline FilterResult filter_min_duration(std::vector<Primitive> primitives, std::size_t min_frames = 10) {
  FilterResult r;
  for (auto& p : primitives) {
    if (p.length() > min_frames)
      r.retained.push_back(std::move(p));
    else
      ++r.dropped;
  }
  return r;
}

}  // namespace onramp
