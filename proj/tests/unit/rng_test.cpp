#include <doctest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "cxr/rng.hpp"

using namespace cxr;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed reproduces the stream, different seeds diverge") {
  Rng a(42), b(42), c(43);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    any_diff |= va != c.next_u64();
  }
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("below is bounded and roughly uniform") {
  Rng rng(9);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 100000; ++i) {
    const auto v = rng.below(10);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (const int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}

TEST_CASE("normal has sane first two moments") {
  Rng rng(11);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  CHECK(std::fabs(sum / n) < 0.02);
  CHECK(std::fabs(sumsq / n - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes without loss") {
  Rng rng(13);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  auto w = v;
  rng.shuffle(w);
  CHECK(w != v);  // 1/100! chance of a false alarm
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}

TEST_CASE("binomial is bounded by its trial count") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const int k = rng.binomial(5, 0.45);
    CHECK(k >= 0);
    CHECK(k <= 5);
  }
}

TEST_CASE("derive_seed separates purposes and salts") {
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(1, "alpha"));
  seen.insert(derive_seed(1, "beta"));
  seen.insert(derive_seed(1, "alpha", 1));
  seen.insert(derive_seed(2, "alpha"));
  CHECK(seen.size() == 4);
  CHECK(derive_seed(1, "alpha", 5) == derive_seed(1, "alpha", 5));
}

TEST_SUITE_END();
