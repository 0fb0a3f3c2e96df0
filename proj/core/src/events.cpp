#include "lear/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lear {
namespace {

constexpr std::uint64_t kNoTimestamp = ~std::uint64_t(0);

void check_extent(const EventStream& s) {
  for (const auto& e : s.events) {
    if (e.x >= s.width || e.y >= s.height)
      throw Error("events", "event outside sensor extent");
    if (e.polarity != 1 && e.polarity != -1)
      throw Error("events", "polarity must be +1 or -1");
  }
}

template <typename U>
void put_le(std::ofstream& out, U v) {
  std::uint8_t buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf[i] = std::uint8_t(static_cast<std::make_unsigned_t<U>>(v) >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::ifstream& in) {
  std::uint8_t buf[sizeof(U)];
  in.read(reinterpret_cast<char*>(buf), sizeof(U));
  std::make_unsigned_t<U> v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<std::make_unsigned_t<U>>(buf[i]) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace

EventStream stc_filter(const EventStream& stream, std::uint64_t window_us) {
  if (window_us == 0) throw Error("events", "stc_filter: window must be positive");
  check_extent(stream);
  // last seen timestamp per (pixel, polarity), over the raw input
  std::vector<std::uint64_t> last(2ull * stream.width * stream.height, kNoTimestamp);
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  for (const auto& e : stream.events) {
    const std::size_t slot =
        2ull * (std::size_t(e.y) * stream.width + e.x) + (e.polarity > 0 ? 1 : 0);
    const std::uint64_t prev = last[slot];
    if (prev != kNoTimestamp && e.t_us - prev <= window_us) out.events.push_back(e);
    last[slot] = e.t_us;
  }
  return out;
}

EventStream trail_filter(const EventStream& stream, std::uint64_t window_us) {
  if (window_us == 0) throw Error("events", "trail_filter: window must be positive");
  check_extent(stream);
  // last kept timestamp per (pixel, polarity)
  std::vector<std::uint64_t> last_kept(2ull * stream.width * stream.height, kNoTimestamp);
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  for (const auto& e : stream.events) {
    const std::size_t slot =
        2ull * (std::size_t(e.y) * stream.width + e.x) + (e.polarity > 0 ? 1 : 0);
    const std::uint64_t prev = last_kept[slot];
    if (prev != kNoTimestamp && e.t_us - prev <= window_us) continue;
    last_kept[slot] = e.t_us;
    out.events.push_back(e);
  }
  return out;
}

Image make_event_image(const EventStream& stream, std::uint64_t t_start,
                       std::uint64_t t_end, std::int64_t target_h,
                       std::int64_t target_w) {
  if (t_start >= t_end) throw Error("events", "make_event_image: empty time window");
  if (stream.width == 0 || stream.height == 0)
    throw Error("events", "make_event_image: zero sensor extent");
  check_extent(stream);
  Image acc(stream.height, stream.width);
  const double span = static_cast<double>(t_end - t_start);
  bool any = false;
  for (const auto& e : stream.events) {
    if (e.t_us < t_start || e.t_us >= t_end) continue;
    const double weight = static_cast<double>(e.t_us - t_start) / span;
    acc.at(e.y, e.x) += static_cast<float>(weight);
    any = true;
  }
  if (!any) return Image(target_h, target_w);

  // 99th percentile of the nonzero accumulation (nearest-rank), so a doubled
  // event count rescales the raster by the same factor and normalizes away.
  std::vector<float> nonzero;
  nonzero.reserve(acc.v.size());
  for (const float v : acc.v)
    if (v > 0.f) nonzero.push_back(v);
  std::sort(nonzero.begin(), nonzero.end());
  const std::size_t rank =
      static_cast<std::size_t>(
          std::ceil(0.99 * static_cast<double>(nonzero.size()))) - 1;
  const float clip = nonzero[std::min(rank, nonzero.size() - 1)];
  if (clip > 0.f) {
    for (auto& v : acc.v) v = std::min(v, clip) / clip;
  }

  // Center-crop to the target aspect ratio, then resize.
  std::int64_t crop_w = acc.width, crop_h = acc.height;
  if (acc.width * target_h > acc.height * target_w) {
    crop_w = acc.height * target_w / target_h;
  } else {
    crop_h = acc.width * target_h / target_w;
  }
  crop_w = std::max<std::int64_t>(1, std::min(crop_w, acc.width));
  crop_h = std::max<std::int64_t>(1, std::min(crop_h, acc.height));
  return resize_bilinear(center_crop(acc, crop_h, crop_w), target_h, target_w);
}

void save_events(const EventStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot open event file for writing: " + path);
  out.write("LEAREVT1", 8);
  put_le<std::uint32_t>(out, stream.width);
  put_le<std::uint32_t>(out, stream.height);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(stream.events.size()));
  for (const auto& e : stream.events) {
    put_le<std::uint64_t>(out, e.t_us);
    put_le<std::uint16_t>(out, e.x);
    put_le<std::uint16_t>(out, e.y);
    put_le<std::int8_t>(out, e.polarity);
    put_le<std::uint8_t>(out, 0);
  }
  if (!out) throw Error("io", "short write to event file: " + path);
}

EventStream load_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open event file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "LEAREVT1", 8) != 0)
    throw Error("format", "not a LEAREVT1 file: " + path);
  EventStream s;
  s.width = get_le<std::uint32_t>(in);
  s.height = get_le<std::uint32_t>(in);
  const std::uint64_t count = get_le<std::uint64_t>(in);
  s.events.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& e = s.events[i];
    e.t_us = get_le<std::uint64_t>(in);
    e.x = get_le<std::uint16_t>(in);
    e.y = get_le<std::uint16_t>(in);
    e.polarity = get_le<std::int8_t>(in);
    (void)get_le<std::uint8_t>(in);
  }
  if (!in) throw Error("format", "truncated event file: " + path);
  check_extent(s);
  return s;
}

EventStream load_events_csv(const std::string& path, std::uint32_t width,
                            std::uint32_t height) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open event CSV: " + path);
  EventStream s;
  s.width = width;
  s.height = height;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::uint64_t t;
    std::int64_t x, y;
    int p;
    if (!(ls >> t >> x >> y >> p))
      throw Error("format", "bad event CSV line: " + line);
    Event e;
    e.t_us = t;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.polarity = p > 0 ? 1 : -1;
    s.events.push_back(e);
  }
  check_extent(s);
  return s;
}

}  // namespace lear
