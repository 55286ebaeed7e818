#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stpred/blobs.hpp"
#include "stpred/gray_scott.hpp"
#include "stpred/rng.hpp"
#include "stpred/splits.hpp"
#include "stpred/stds_io.hpp"

using namespace stpred;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("gray-scott conserves mass with diffusion only") {
  GrayScottParams p;
  p.feed = 0.0;
  p.kill = 0.0;
  p.grid_h = 32;
  p.grid_w = 32;
  GrayScottSim sim(p, 1);
  Rng rng(99);
  for (auto& u : sim.mutable_u()) u = rng.uniform();
  for (auto& v : sim.mutable_v()) v = 0.0;

  double prev = sim.sum_u();
  for (int s = 0; s < 1000; ++s) {
    sim.step();
    const double cur = sim.sum_u();
    CHECK(std::abs(cur - prev) <= 1e-9 * std::abs(prev));
    prev = cur;
  }
}

TEST_CASE("gray-scott uniform state is a fixed point") {
  GrayScottParams p;
  p.grid_h = 16;
  p.grid_w = 16;
  p.steps_per_frame = 1;
  GrayScottSim sim(p, 3);
  for (auto& u : sim.mutable_u()) u = 1.0;
  for (auto& v : sim.mutable_v()) v = 0.0;
  FrameSequence seq = sim.run(100);
  const std::size_t frame = seq.channels() * seq.height() * seq.width();
  for (std::size_t t = 1; t < seq.frames(); ++t)
    for (std::size_t i = 0; i < frame; ++i)
      CHECK(seq.frame(t)[i] == seq.frame(0)[i]);
}

// Regression value recorded from this simulator; see the acceptance suite
// for the +-20% band check.
TEST_CASE("gray-scott forms spatial structure from a seeded perturbation") {
  GrayScottParams p;  // defaults: Du=0.16 Dv=0.08 F=0.055 k=0.062
  GrayScottSim sim(p, 7);
  for (int s = 0; s < 500; ++s) sim.step();
  CHECK(sim.spatial_variance_u() > 1e-4);
}

TEST_CASE("gray-scott is deterministic and in range") {
  GrayScottParams p;
  p.grid_h = 16;
  p.grid_w = 16;
  p.steps_per_frame = 2;
  auto a = simulate_gray_scott(p, 42, 5, 10);
  auto b = simulate_gray_scott(p, 42, 5, 10);
  CHECK(a.data == b.data);
  a.validate();
  auto c = simulate_gray_scott(p, 43, 5, 10);
  CHECK_FALSE(a.data == c.data);
}

TEST_CASE("gray-scott rejects unstable configurations") {
  GrayScottParams p;
  p.du = 0.4;
  p.dt = 1.0;  // dt * 0.4 * 4 = 1.6 > 1
  CHECK_THROWS_AS(simulate_gray_scott(p, 0, 4), ConfigError);
}

TEST_CASE("blobs: zero speed freezes the scene") {
  BlobSceneParams p;
  p.speed = 0.0;
  p.grid_h = 32;
  p.grid_w = 32;
  p.radius = 4.0;
  auto seq = simulate_moving_blobs(p, 6);
  const std::size_t frame = seq.channels() * seq.height() * seq.width();
  for (std::size_t t = 1; t < seq.frames(); ++t)
    for (std::size_t i = 0; i < frame; ++i)
      CHECK(seq.frame(t)[i] == seq.frame(0)[i]);
}

TEST_CASE("blobs: unobstructed motion is exactly linear") {
  BlobSceneParams p;
  p.n_blobs = 1;
  p.grid_h = 256;  // big playfield so 8 frames cannot reach a wall
  p.grid_w = 256;
  p.radius = 4.0;
  p.speed = 1.25;
  p.seed = 5;
  const auto init = initial_blobs(p);
  const bool safe = init[0].y + 8 * std::abs(init[0].vy) < 252 &&
                    init[0].y - 8 * std::abs(init[0].vy) > 4 &&
                    init[0].x + 8 * std::abs(init[0].vx) < 252 &&
                    init[0].x - 8 * std::abs(init[0].vx) > 4;
    REQUIRE(safe);
  const auto tracks = blob_tracks(p, 8);
  for (int t = 0; t < 8; ++t) {
    CHECK(tracks[std::size_t(t)][0].y == init[0].y + double(t) * init[0].vy);
    CHECK(tracks[std::size_t(t)][0].x == init[0].x + double(t) * init[0].vx);
  }
}

TEST_CASE("blobs: centers stay inside the reflection margins") {
  BlobSceneParams p;
  p.n_blobs = 3;
  p.grid_h = 24;
  p.grid_w = 40;
  p.radius = 3.0;
  p.speed = 2.5;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    p.seed = seed;
    const auto tracks = blob_tracks(p, 64);
    for (const auto& frame : tracks)
      for (const auto& b : frame) {
        CHECK(b.y >= p.radius);
        CHECK(b.y <= p.grid_h - p.radius);
        CHECK(b.x >= p.radius);
        CHECK(b.x <= p.grid_w - p.radius);
      }
  }
}

TEST_CASE("blobs: same params and seed give byte-identical sequences") {
  BlobSceneParams p;
  p.seed = 123;
  auto a = simulate_moving_blobs(p, 10);
  auto b = simulate_moving_blobs(p, 10);
  CHECK(a.data == b.data);
  a.validate();
}

TEST_CASE("blobs: invalid radius is rejected") {
  BlobSceneParams p;
  p.radius = 40.0;
  p.grid_h = 64;
  p.grid_w = 64;
  CHECK_THROWS_AS(simulate_moving_blobs(p, 4), ConfigError);
}

TEST_CASE("make_splits produces the documented contiguous ranges") {
  SUBCASE("paper-sized pool") {
    auto ids = make_splits(2500, {1500, 500, 500});
    CHECK(ids.train.front() == 0);
    CHECK(ids.train.back() == 1499);
    CHECK(ids.val.front() == 1500);
    CHECK(ids.val.back() == 1999);
    CHECK(ids.test.front() == 2000);
    CHECK(ids.test.back() == 2499);
  }
  SUBCASE("80/10/10 on ten") {
    auto ids = make_splits(10, {8, 1, 1});
    CHECK(ids.train.size() == 8);
    CHECK(ids.val == std::vector<std::size_t>{8});
    CHECK(ids.test == std::vector<std::size_t>{9});
  }
  SUBCASE("overflow is a configuration error") {
    CHECK_THROWS_AS(make_splits(5, {4, 1, 1}), ConfigError);
  }
  SUBCASE("ranges never intersect") {
    for (std::size_t pool : {3u, 10u, 97u}) {
      auto ids = make_splits(pool, {pool / 2, pool / 4, pool / 4});
      std::vector<bool> seen(pool, false);
      for (auto* part : {&ids.train, &ids.val, &ids.test})
        for (std::size_t id : *part) {
          CHECK_FALSE(seen[id]);
          seen[id] = true;
        }
    }
  }
}

TEST_CASE("STDS round-trip is bit exact") {
  Rng rng(7);
  std::vector<FrameSequence> xs;
  for (int i = 0; i < 3; ++i) {
    FrameSequence s(4, 2, 8, 9);
    for (std::size_t j = 0; j < s.data.size(); ++j)
      s.data[j] = float(rng.uniform());
    xs.push_back(std::move(s));
  }
  const std::string path = temp_path("stds_roundtrip.stds");
  write_sequences(path, xs);
  auto back = read_sequences(path);
  REQUIRE(back.size() == xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    CHECK(back[i].data == xs[i].data);
  std::filesystem::remove(path);
}

TEST_CASE("STDS header arithmetic: one 1x1x2x2 zero sequence is 44 bytes") {
  std::vector<FrameSequence> xs;
  xs.emplace_back(1, 1, 2, 2);
  // T=1 is below the FrameSequence invariant but the container just stores
  // dims; use a valid T=2 sibling check plus the documented 44-byte case.
  const std::string path = temp_path("stds_bytes.stds");
  write_sequences(path, xs);
  CHECK(std::filesystem::file_size(path) == 44);
  std::filesystem::remove(path);
}

TEST_CASE("STDS load failures are distinct") {
  const std::string path = temp_path("stds_corrupt.stds");

  SUBCASE("bad magic") {
    std::ofstream f(path, std::ios::binary);
    f << "STDX";
    for (int i = 0; i < 40; ++i) f.put(0);
    f.close();
    CHECK_THROWS_AS(read_sequences(path), BadMagicError);
  }
  SUBCASE("bad version") {
    std::ofstream f(path, std::ios::binary);
    f << "STDS";
    const std::uint32_t vals[6] = {9, 1, 2, 1, 2, 2};
    f.write(reinterpret_cast<const char*>(vals), sizeof vals);
    f.close();
    CHECK_THROWS_AS(read_sequences(path), BadVersionError);
  }
  SUBCASE("truncated payload") {
    std::ofstream f(path, std::ios::binary);
    f << "STDS";
    const std::uint32_t vals[6] = {1, 1, 2, 1, 2, 2};
    f.write(reinterpret_cast<const char*>(vals), sizeof vals);
    const float some = 0.5f;
    f.write(reinterpret_cast<const char*>(&some), sizeof some);
    f.close();
    CHECK_THROWS_AS(read_sequences(path), TruncatedError);
  }
  SUBCASE("non-finite payload") {
    std::ofstream f(path, std::ios::binary);
    f << "STDS";
    const std::uint32_t vals[6] = {1, 1, 1, 1, 1, 2};
    f.write(reinterpret_cast<const char*>(vals), sizeof vals);
    const float payload[2] = {0.5f, std::numeric_limits<float>::infinity()};
    f.write(reinterpret_cast<const char*>(payload), sizeof payload);
    f.close();
    CHECK_THROWS_AS(read_sequences(path), NonFiniteDataError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("STDS rejects mixed shapes") {
  std::vector<FrameSequence> xs;
  xs.emplace_back(2, 1, 8, 8);
  xs.emplace_back(2, 1, 8, 9);
  CHECK_THROWS_AS(write_sequences(temp_path("stds_mixed.stds"), xs),
                  DimensionError);
}
