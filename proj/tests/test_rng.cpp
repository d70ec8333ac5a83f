#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "test_support.hpp"
#include "wassdiff/rng.hpp"

using namespace wassdiff;
namespace wt = wassdiff::testing;

// Known-answer vectors published with the Random123 library.
TEST(Philox, KnownAnswerVectors) {
  using P = rng::Philox4x32;
  EXPECT_EQ(P::encrypt({0, 0, 0, 0}, {0, 0}),
            (P::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(P::encrypt({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}),
            (P::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(P::encrypt({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                       {0xa4093822u, 0x299f31d0u}),
            (P::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Stream, SameCellSameDraws) {
  rng::Stream a(42, rng::tag::init, 7, 3);
  rng::Stream b(42, rng::tag::init, 7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Stream, DistinctCellsDiffer) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    for (std::uint32_t step = 0; step < 4; ++step) {
      firsts.insert(rng::Stream(1, rng::tag::step_noise, rep, step).next_u64());
    }
  }
  firsts.insert(rng::Stream(1, rng::tag::init, 0).next_u64());
  firsts.insert(rng::Stream(2, rng::tag::step_noise, 0).next_u64());
  EXPECT_EQ(firsts.size(), 50u * 4u + 2u);
}

TEST(Stream, UniformIsOpenInterval) {
  rng::Stream s(9, "u", 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = s.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Stream, NormalMoments) {
  rng::Stream s(11, "n", 0);
  std::vector<double> v(200000);
  for (double& x : v) x = s.normal();
  EXPECT_NEAR(wt::mean(v), 0.0, 4.0 / std::sqrt(v.size()));
  EXPECT_NEAR(wt::variance(v), 1.0, 0.01);
  EXPECT_LT(wt::ks_one_sample(v, wt::phi), 1.63 / std::sqrt(v.size()));
}
