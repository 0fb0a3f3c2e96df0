#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lear/image.hpp"

namespace lear {

struct Event {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  // +1 or -1
};

// Time-ordered polarity events plus the emitting sensor extent.
struct EventStream {
  std::vector<Event> events;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

// Spatio-temporal contrast filter: an event survives iff at least one earlier
// event at the same pixel with the same polarity occurred within window_us.
// Output order is preserved (a subsequence of the input).
EventStream stc_filter(const EventStream& stream, std::uint64_t window_us);

// Trail filter: after a kept event, later same-pixel same-polarity events
// within window_us of the last kept one are dropped.
EventStream trail_filter(const EventStream& stream, std::uint64_t window_us);

// Accumulates events over [t_start, t_end) into a raster:
//  - each event adds a recency weight (t - t_start)/(t_end - t_start), so
//    trailing events dominate and moving edges stay sharp;
//  - the accumulation is clipped at its 99th-percentile nonzero value and
//    normalized to [0, 1];
//  - the result is center-cropped to the target aspect ratio and bilinearly
//    resized to (target_h, target_w).
// A window without events yields an all-zero image.
Image make_event_image(const EventStream& stream, std::uint64_t t_start,
                       std::uint64_t t_end, std::int64_t target_h,
                       std::int64_t target_w);

// Event file: little-endian, magic "LEAREVT1", u32 width, u32 height,
// u64 count, then count records of (u64 t_us, u16 x, u16 y, i8 polarity,
// u8 pad).
void save_events(const EventStream& stream, const std::string& path);
EventStream load_events(const std::string& path);

// Plain-text fixture loader, one "t,x,y,p" line per event.
EventStream load_events_csv(const std::string& path, std::uint32_t width,
                            std::uint32_t height);

}  // namespace lear
