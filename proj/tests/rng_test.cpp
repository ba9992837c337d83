#include "driftpfn/rng.hpp"
#include <gtest/gtest.h>
using namespace driftpfn;
TEST(Rng, Deterministic) {
  RngState a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}
TEST(Rng, SerializeRoundTrip) {
  RngState a(7);
  a.normal();
  RngState b = RngState::deserialize(a.serialize());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.next_u64(), b.next_u64());
}
