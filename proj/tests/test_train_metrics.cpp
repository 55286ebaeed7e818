#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stpred/blobs.hpp"
#include "stpred/losses.hpp"
#include "stpred/metrics.hpp"
#include "stpred/rng.hpp"
#include "stpred/train.hpp"

using namespace stpred;

namespace {

// Direct per-window SSIM, independent of the separable-filter path.
double ssim_ref(const Tensor<float>& a, const Tensor<float>& b) {
  const int win = 11;
  const double sigma = 1.5;
  double w2d[11][11];
  double wsum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      w2d[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      wsum += w2d[i][j];
    }
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) w2d[i][j] /= wsum;

  const int h = int(a.dim(0)), w = int(a.dim(1));
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  int count = 0;
  for (int y = 0; y + win <= h; ++y)
    for (int x = 0; x + win <= w; ++x) {
      double m1 = 0, m2 = 0, e11 = 0, e22 = 0, e12 = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double av = a(std::size_t(y + i), std::size_t(x + j));
          const double bv = b(std::size_t(y + i), std::size_t(x + j));
          m1 += w2d[i][j] * av;
          m2 += w2d[i][j] * bv;
          e11 += w2d[i][j] * av * av;
          e22 += w2d[i][j] * bv * bv;
          e12 += w2d[i][j] * av * bv;
        }
      const double s1 = e11 - m1 * m1, s2 = e22 - m2 * m2,
                   s12 = e12 - m1 * m2;
      acc += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) /
             ((m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2));
      ++count;
    }
  return acc / count;
}

std::vector<FrameSequence> blob_dataset(int n, int frames, std::uint64_t s0) {
  std::vector<FrameSequence> out;
  for (int i = 0; i < n; ++i) {
    BlobSceneParams p;
    p.grid_h = p.grid_w = 16;
    p.radius = 2.5;
    p.speed = 1.0;
    p.n_blobs = 1;
    p.seed = s0 + std::uint64_t(i);
    out.push_back(simulate_moving_blobs(p, frames));
  }
  return out;
}

ModelConfig tiny_train_config() {
  ModelConfig cfg;
  cfg.in_frames = 3;
  cfg.out_frames = 2;
  cfg.channels = 1;
  cfg.height = cfg.width = 16;
  cfg.crops.n_crops = 2;
  cfg.crops.crop_out = 8;
  cfg.n_blocks = 2;
  cfg.enc_channels = {4, 4};
  cfg.down_floor = 4;
  cfg.bank_entries = 8;
  cfg.bank_dim = 4;
  cfg.proj_channels = 2;
  cfg.expert_hidden = 3;
  cfg.decoder.depth = 2;
  cfg.decoder.channels = {4, 4};
  return cfg;
}

}  // namespace

TEST_CASE("mse_loss basics and oracle") {
  Tensor<double> a({1, 1, 2, 2}, 0.0), b({1, 1, 2, 2}, 1.0);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, b) == doctest::Approx(1.0));
  Rng rng(3);
  Tensor<double> x({2, 1, 3, 3}), y({2, 1, 3, 3});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
  }
  double want = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    want += (x[i] - y[i]) * (x[i] - y[i]);
  want /= double(x.size());
  CHECK(mse_loss(x, y) == doctest::Approx(want).epsilon(1e-12));
  Tensor<double> bad({1, 1, 2, 3});
  CHECK_THROWS_AS(mse_loss(a, bad), DimensionError);
}

TEST_CASE("ssim of an image with itself is exactly one") {
  Rng rng(5);
  Tensor<float> img({16, 16});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(rng.uniform());
  CHECK(ssim_image(img, img) == 1.0);
}

TEST_CASE("ssim of constant 0 vs constant 1 collapses to C1/(1+C1)") {
  Tensor<float> zeros({12, 12}, 0.0f), ones({12, 12}, 1.0f);
  const double want = 1e-4 / 1.0001;
  CHECK(std::abs(ssim_image(zeros, ones) - want) < 1e-8);
}

TEST_CASE("ssim matches the direct-formula reference on random images") {
  Rng rng(7);
  for (int inst = 0; inst < 5; ++inst) {
    Tensor<float> a({16, 16}), b({16, 16});
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = float(rng.uniform());
      b[i] = float(rng.uniform());
    }
    CHECK(std::abs(ssim_image(a, b) - ssim_ref(a, b)) < 1e-9);
  }
}

TEST_CASE("ssim is symmetric") {
  Rng rng(9);
  Tensor<float> a({14, 18}), b({14, 18});
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = float(rng.uniform());
    b[i] = float(rng.uniform());
  }
  CHECK(std::abs(ssim_image(a, b) - ssim_image(b, a)) < 1e-12);
}

TEST_CASE("ssim rejects images smaller than the window") {
  Tensor<float> small({8, 8}, 0.5f);
  CHECK_THROWS_AS(ssim_image(small, small), ConfigError);
}

TEST_CASE("psnr worked values and undefined case") {
  CHECK(psnr_from_mse(1.0) == doctest::Approx(0.0));
  CHECK(std::abs(psnr_from_mse(0.01) - 20.0) < 1e-9);
  CHECK_THROWS_AS(psnr_from_mse(0.0), UndefinedPsnrError);

  FrameSequence a(2, 1, 8, 8), b(2, 1, 8, 8);
  a.data.fill(0.5f);
  b.data.fill(0.5f);
  CHECK_THROWS_AS(psnr(a, b), UndefinedPsnrError);
}

TEST_CASE("total_loss sums components with unit weights") {
  CHECK(total_loss(0, 0, 0).total == 0.0);
  CHECK(total_loss(0.5, 0.25, 0.25).total == doctest::Approx(1.0));
  const auto a = total_loss(0.1, 0.2, 0.3);
  const auto b = total_loss(0.3, 0.1, 0.2);
  CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  CHECK(std::abs(a.total - (a.l_of + a.l_vq + a.l_mse)) < 1e-9);
  CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0), TrainingDivergedError);
}

TEST_CASE("persistence baseline repeats the last frame") {
  Rng rng(11);
  FrameSequence in(3, 1, 8, 8);
  for (std::size_t i = 0; i < in.data.size(); ++i)
    in.data[i] = float(rng.uniform());
  FrameSequence base = persistence_baseline(in, 4);
  REQUIRE(base.frames() == 4);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 64; ++i)
      CHECK(base.frame(t)[i] == in.frame(2)[i]);
}

TEST_CASE("baseline is perfect on static scenes, imperfect on moving ones") {
  BlobSceneParams p;
  p.grid_h = p.grid_w = 16;
  p.radius = 2.5;
  p.n_blobs = 1;
  SUBCASE("static") {
    p.speed = 0.0;
    auto seq = simulate_moving_blobs(p, 5);
    auto [in, target] = split_sequence(seq, 3, 2);
    auto base = persistence_baseline(FrameSequence(std::move(in)), 2);
    CHECK(mse(base, FrameSequence(std::move(target))) == 0.0);
  }
  SUBCASE("moving") {
    p.speed = 1.5;
    auto seq = simulate_moving_blobs(p, 5);
    auto [in, target] = split_sequence(seq, 3, 2);
    auto base = persistence_baseline(FrameSequence(std::move(in)), 2);
    CHECK(mse(base, FrameSequence(std::move(target))) > 0.0);
  }
}

TEST_CASE("split_sequence carves the observed and target windows") {
  FrameSequence seq(5, 2, 8, 8);
  for (std::size_t i = 0; i < seq.data.size(); ++i)
    seq.data[i] = float(i % 97) / 97.0f;
  auto [in, out] = split_sequence(seq, 3, 2);
  CHECK(in.shape() == std::vector<std::size_t>{3, 2, 8, 8});
  CHECK(out.shape() == std::vector<std::size_t>{2, 2, 8, 8});
  CHECK(in[0] == seq.data[0]);
  CHECK(out[0] == seq.data[3 * 2 * 64]);
  CHECK_THROWS_AS(split_sequence(seq, 4, 2), ConfigError);
}

TEST_CASE("training with lr = 0 leaves parameters untouched") {
  ModelConfig cfg = tiny_train_config();
  const ModelPlan plan = plan_model(cfg);
  auto params = make_model_params<float>(cfg, plan, 3);
  auto before = collect_params(params);
  std::vector<Tensor<float>> saved;
  for (auto& [name, arr] : before) saved.push_back(arr->value);

  auto data = blob_dataset(4, 5, 100);
  TrainConfig tcfg;
  tcfg.lr = 0.0;
  tcfg.epochs = 2;
  tcfg.batch = 2;
  train(cfg, plan, params, data, {}, tcfg);
  auto after = collect_params(params);
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK(after[i].second->value == saved[i]);
}

TEST_CASE("training is bit-deterministic given the seed") {
  ModelConfig cfg = tiny_train_config();
  const ModelPlan plan = plan_model(cfg);
  auto data = blob_dataset(4, 5, 200);
  auto val = blob_dataset(2, 5, 300);

  TrainConfig tcfg;
  tcfg.lr = 0.01;
  tcfg.epochs = 3;
  tcfg.batch = 2;
  tcfg.seed = 77;

  auto p1 = make_model_params<float>(cfg, plan, 9);
  auto h1 = train(cfg, plan, p1, data, val, tcfg);
  auto p2 = make_model_params<float>(cfg, plan, 9);
  auto h2 = train(cfg, plan, p2, data, val, tcfg);

  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].total == h2[i].total);
    CHECK(h1[i].val_mse == h2[i].val_mse);
  }
  auto c1 = collect_params(p1), c2 = collect_params(p2);
  for (std::size_t i = 0; i < c1.size(); ++i)
    CHECK(c1[i].second->value == c2[i].second->value);
}

TEST_CASE("resumed training reproduces an uninterrupted run") {
  ModelConfig cfg = tiny_train_config();
  const ModelPlan plan = plan_model(cfg);
  auto data = blob_dataset(4, 5, 400);

  TrainConfig four;
  four.lr = 0.01;
  four.epochs = 4;
  four.batch = 2;
  four.seed = 5;
  auto p_full = make_model_params<float>(cfg, plan, 1);
  auto h_full = train(cfg, plan, p_full, data, {}, four);

  TrainConfig two = four;
  two.epochs = 2;
  auto p_resumed = make_model_params<float>(cfg, plan, 1);
  auto h_a = train(cfg, plan, p_resumed, data, {}, two, 0);
  auto h_b = train(cfg, plan, p_resumed, data, {}, two, 2);

  CHECK(h_full[2].total == h_b[0].total);
  CHECK(h_full[3].total == h_b[1].total);
  auto cf = collect_params(p_full), cr = collect_params(p_resumed);
  for (std::size_t i = 0; i < cf.size(); ++i)
    CHECK(cf[i].second->value == cr[i].second->value);
}

TEST_CASE("small-step training does not increase the loss on median") {
  ModelConfig cfg = tiny_train_config();
  const ModelPlan plan = plan_model(cfg);
  auto data = blob_dataset(6, 5, 500);
  auto params = make_model_params<float>(cfg, plan, 13);

  TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.epochs = 11;
  tcfg.batch = 3;
  tcfg.seed = 21;
  auto history = train(cfg, plan, params, data, {}, tcfg);
  std::vector<double> deltas;
  for (std::size_t i = 1; i < std::min<std::size_t>(history.size(), 11); ++i)
    deltas.push_back(history[i].total - history[i - 1].total);
  std::sort(deltas.begin(), deltas.end());
  const double median = deltas[deltas.size() / 2];
  CHECK(median <= 0.0);
}
