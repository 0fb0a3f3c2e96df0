#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "lear/events.hpp"
#include "lear/rng.hpp"

using namespace lear;

namespace {

Event ev(std::uint64_t t, std::uint16_t x, std::uint16_t y, std::int8_t p) {
  Event e;
  e.t_us = t;
  e.x = x;
  e.y = y;
  e.polarity = p;
  return e;
}

EventStream stream_of(std::vector<Event> events, std::uint32_t w = 16,
                      std::uint32_t h = 16) {
  EventStream s;
  s.events = std::move(events);
  s.width = w;
  s.height = h;
  return s;
}

bool is_subsequence(const std::vector<Event>& sub, const std::vector<Event>& full) {
  std::size_t i = 0;
  for (const auto& e : full) {
    if (i < sub.size() && sub[i].t_us == e.t_us && sub[i].x == e.x && sub[i].y == e.y &&
        sub[i].polarity == e.polarity)
      ++i;
  }
  return i == sub.size();
}

TEST(StcFilter, EmptyStream) {
  auto out = stc_filter(stream_of({}), 10000);
  EXPECT_TRUE(out.events.empty());
}

TEST(StcFilter, SecondOfPairSurvives) {
  // two same-pixel same-polarity events 5 ms apart, window 10 ms
  auto out = stc_filter(stream_of({ev(1000, 3, 4, 1), ev(6000, 3, 4, 1)}), 10000);
  ASSERT_EQ(out.events.size(), 1u);
  EXPECT_EQ(out.events[0].t_us, 6000u);
}

TEST(StcFilter, IsolatedEventDropped) {
  auto out = stc_filter(stream_of({ev(5000, 7, 7, -1)}), 10000);
  EXPECT_TRUE(out.events.empty());
}

TEST(StcFilter, SupportOutsideWindowDoesNotCount) {
  auto out = stc_filter(stream_of({ev(1000, 3, 4, 1), ev(20000, 3, 4, 1)}), 10000);
  EXPECT_TRUE(out.events.empty());
}

TEST(StcFilter, OppositePolarityIsNoSupport) {
  auto out = stc_filter(stream_of({ev(1000, 3, 4, -1), ev(6000, 3, 4, 1)}), 10000);
  EXPECT_TRUE(out.events.empty());
}

TEST(TrailFilter, BurstKeepsOnlyFirst) {
  std::vector<Event> burst;
  for (int i = 0; i < 5; ++i) burst.push_back(ev(1000 + 1000 * i, 2, 2, 1));
  auto out = trail_filter(stream_of(burst), 10000);
  ASSERT_EQ(out.events.size(), 1u);
  EXPECT_EQ(out.events[0].t_us, 1000u);
}

TEST(TrailFilter, OutsideWindowBothSurvive) {
  auto out = trail_filter(stream_of({ev(1000, 2, 2, 1), ev(21000, 2, 2, 1)}), 10000);
  EXPECT_EQ(out.events.size(), 2u);
}

TEST(TrailFilter, OppositePolaritiesNeverSuppress) {
  auto out = trail_filter(stream_of({ev(1000, 2, 2, 1), ev(1500, 2, 2, -1),
                                     ev(2000, 2, 2, 1), ev(2500, 2, 2, -1)}),
                          10000);
  // same-polarity repeats are dropped, alternating polarities all map to the
  // first occurrence of each polarity
  ASSERT_EQ(out.events.size(), 2u);
  EXPECT_EQ(out.events[0].polarity, 1);
  EXPECT_EQ(out.events[1].polarity, -1);
}

TEST(Filters, OutputsAreSubsequences) {
  Rng rng(42);
  std::vector<Event> events;
  std::uint64_t t = 0;
  for (int i = 0; i < 5000; ++i) {
    t += rng.uniform_int(4000);
    events.push_back(ev(t, static_cast<std::uint16_t>(rng.uniform_int(16)),
                        static_cast<std::uint16_t>(rng.uniform_int(16)),
                        rng.uniform() < 0.5 ? 1 : -1));
  }
  const auto input = stream_of(events);
  const auto stc = stc_filter(input, 10000);
  const auto trail = trail_filter(stc, 10000);
  EXPECT_TRUE(is_subsequence(stc.events, input.events));
  EXPECT_TRUE(is_subsequence(trail.events, stc.events));
}

TEST(EventImage, EmptyWindowIsAllZero) {
  auto img = make_event_image(stream_of({}), 0, 1000, 8, 8);
  EXPECT_EQ(img.height, 8);
  EXPECT_EQ(img.width, 8);
  for (const float v : img.v) EXPECT_EQ(v, 0.f);
}

TEST(EventImage, SingleLateEventNormalizesToOne) {
  auto img = make_event_image(stream_of({ev(999, 3, 5, 1)}, 8, 8), 0, 1000, 8, 8);
  for (std::int64_t y = 0; y < 8; ++y) {
    for (std::int64_t x = 0; x < 8; ++x) {
      if (x == 3 && y == 5) {
        EXPECT_FLOAT_EQ(img.at(y, x), 1.f);
      } else {
        EXPECT_EQ(img.at(y, x), 0.f);
      }
    }
  }
}

TEST(EventImage, DoublingEventsLeavesImageUnchanged) {
  Rng rng(7);
  std::vector<Event> events;
  for (int i = 0; i < 300; ++i) {
    events.push_back(ev(rng.uniform_int(10000), static_cast<std::uint16_t>(rng.uniform_int(8)),
                        static_cast<std::uint16_t>(rng.uniform_int(8)), 1));
  }
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  std::vector<Event> doubled;
  for (const auto& e : events) {
    doubled.push_back(e);
    doubled.push_back(e);
  }
  const auto a = make_event_image(stream_of(events, 8, 8), 0, 10000, 8, 8);
  const auto b = make_event_image(stream_of(doubled, 8, 8), 0, 10000, 8, 8);
  for (std::size_t i = 0; i < a.v.size(); ++i) EXPECT_FLOAT_EQ(a.v[i], b.v[i]);
}

TEST(EventImage, ValuesInUnitRangeAndSupportMatchesEvents) {
  Rng rng(9);
  std::vector<Event> events;
  for (int i = 0; i < 500; ++i) {
    events.push_back(ev(rng.uniform_int(50000),
                        static_cast<std::uint16_t>(rng.uniform_int(16)),
                        static_cast<std::uint16_t>(rng.uniform_int(16)),
                        rng.uniform() < 0.5 ? 1 : -1));
  }
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  // native resolution: no resize, support must match exactly
  const auto img = make_event_image(stream_of(events), 0, 50000, 16, 16);
  std::vector<bool> touched(16 * 16, false);
  for (const auto& e : events)
    if (e.t_us > 0) touched[e.y * 16 + e.x] = true;
  for (std::int64_t i = 0; i < img.pixels(); ++i) {
    EXPECT_GE(img.v[i], 0.f);
    EXPECT_LE(img.v[i], 1.f);
    if (img.v[i] > 0.f) EXPECT_TRUE(touched[i]);
  }
}

TEST(EventImage, CropAndResizeHitsTargetExtent) {
  std::vector<Event> events;
  for (int x = 0; x < 32; ++x)
    for (int y = 0; y < 24; ++y) events.push_back(ev(500, x, y, 1));
  auto img = make_event_image(stream_of(events, 32, 24), 0, 1000, 12, 16);
  EXPECT_EQ(img.height, 12);
  EXPECT_EQ(img.width, 16);
}

TEST(EventIo, BinaryRoundTrip) {
  Rng rng(11);
  std::vector<Event> events;
  std::uint64_t t = 0;
  for (int i = 0; i < 257; ++i) {
    t += rng.uniform_int(100);
    events.push_back(ev(t, static_cast<std::uint16_t>(rng.uniform_int(640)),
                        static_cast<std::uint16_t>(rng.uniform_int(480)),
                        rng.uniform() < 0.5 ? 1 : -1));
  }
  const auto s = stream_of(events, 640, 480);
  const auto path = (std::filesystem::temp_directory_path() / "lear_events.bin").string();
  save_events(s, path);
  const auto r = load_events(path);
  EXPECT_EQ(r.width, s.width);
  EXPECT_EQ(r.height, s.height);
  ASSERT_EQ(r.events.size(), s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    EXPECT_EQ(r.events[i].t_us, s.events[i].t_us);
    EXPECT_EQ(r.events[i].x, s.events[i].x);
    EXPECT_EQ(r.events[i].y, s.events[i].y);
    EXPECT_EQ(r.events[i].polarity, s.events[i].polarity);
  }
  std::filesystem::remove(path);
}

TEST(EventIo, CsvLoader) {
  const auto path = (std::filesystem::temp_directory_path() / "lear_events.csv").string();
  {
    std::ofstream out(path);
    out << "# t,x,y,p\n100,1,2,1\n200,3,4,-1\n";
  }
  const auto s = load_events_csv(path, 8, 8);
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_EQ(s.events[0].t_us, 100u);
  EXPECT_EQ(s.events[1].polarity, -1);
  std::filesystem::remove(path);
}

}  // namespace
