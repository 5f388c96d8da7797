#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cbo/rng.hpp"
#include "cbo/stats.hpp"

using namespace cbo;

TEST(Philox, KnownAnswerZero) {
  const rng::Block out = rng::philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (rng::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerAllOnes) {
  const rng::Block out =
      rng::philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (rng::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPiDigits) {
  const rng::Block out =
      rng::philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (rng::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterRng, SameAddressSameDraw) {
  const rng::CounterRng a(42, rng::Domain::step), b(42, rng::Domain::step);
  EXPECT_EQ(a.normal(7, 3, 11), b.normal(7, 3, 11));
  EXPECT_NE(a.normal(7, 3, 11), a.normal(7, 3, 12));
  EXPECT_NE(a.normal(7, 3, 11), a.normal(7, 4, 11));
}

TEST(CounterRng, DomainsAreIndependent) {
  const rng::CounterRng a(42, rng::Domain::step), b(42, rng::Domain::init);
  EXPECT_NE(a.uniform(0, 0, 0), b.uniform(0, 0, 0));
}

TEST(CounterRng, UniformsInOpenInterval) {
  const rng::CounterRng g(1, rng::Domain::init);
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const double u = g.uniform(0, 0, s);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  EXPECT_GT(rng::to_open_unit(0, 0), 0.0);
  EXPECT_LT(rng::to_open_unit(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(CounterRng, NormalMoments) {
  const rng::CounterRng g(3, rng::Domain::step);
  RunningStats rs;
  for (std::uint64_t s = 0; s < 200000; ++s) rs.add(g.normal(1, 2, s));
  EXPECT_NEAR(rs.mean(), 0.0, 5.0 / std::sqrt(200000.0));
  EXPECT_NEAR(rs.variance(), 1.0, 0.02);
}

TEST(NormalCursor, MatchesDirectAddressing) {
  const rng::CounterRng g(9, rng::Domain::step);
  rng::NormalCursor cur(g, 5, 1);
  for (std::uint64_t s = 0; s < 17; ++s) EXPECT_EQ(cur.at(s), g.normal(5, 1, s));
}

TEST(SplitMix, DistinctOutputs) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(rng::splitmix64(i));
  EXPECT_EQ(seen.size(), 1000u);
}
