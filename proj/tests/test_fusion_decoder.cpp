#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "stpred/fusion_decoder.hpp"
#include "stpred/gradcheck.hpp"
#include "stpred/rng.hpp"
#include "test_util.hpp"

using namespace stpred;

namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<std::size_t> shape,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Naive nearest upsample for the oracle comparison.
Tensor<double> upsample_ref(const Tensor<double>& x, std::size_t oh,
                            std::size_t ow) {
  Tensor<double> out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          out(n, c, i, j) = x(n, c, i * x.dim(2) / oh, j * x.dim(3) / ow);
  return out;
}

}  // namespace

TEST_CASE("fuse with zero locals returns the global features") {
  Rng rng(3);
  DiffArray<double> global(random_tensor(rng, {2, 3, 8, 8}));
  DiffArray<double> l1(Tensor<double>({2, 3, 4, 4}));
  DiffArray<double> l2(Tensor<double>({2, 3, 4, 4}));
  FuseContext<double> ctx;
  auto& fused = fuse_forward(global, {&l1, &l2}, {}, ctx);
  CHECK(fused.value == global.value);
}

TEST_CASE("fuse doubles when one local equals the global map") {
  Rng rng(5);
  DiffArray<double> global(random_tensor(rng, {2, 3, 8, 8}));
  DiffArray<double> same(global.value);
  FuseContext<double> ctx;
  auto& fused = fuse_forward(global, {&same}, {}, ctx);
  for (std::size_t i = 0; i < fused.value.size(); ++i)
    CHECK(fused.value[i] == doctest::Approx(2.0 * global.value[i]));
}

TEST_CASE("fuse equals the upsample-then-sum oracle") {
  Rng rng(7);
  DiffArray<double> global(random_tensor(rng, {2, 3, 8, 8}));
  DiffArray<double> l1(random_tensor(rng, {2, 3, 4, 4}));
  DiffArray<double> l2(random_tensor(rng, {2, 3, 2, 2}));
  FuseContext<double> ctx;
  auto& fused = fuse_forward(global, {&l1, &l2}, {}, ctx);

  Tensor<double> want = global.value;
  const auto u1 = upsample_ref(l1.value, 8, 8);
  const auto u2 = upsample_ref(l2.value, 8, 8);
  for (std::size_t i = 0; i < want.size(); ++i) want[i] += u1[i] + u2[i];
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(fused.value[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("fuse is invariant under crop permutation") {
  Rng rng(9);
  DiffArray<double> global(random_tensor(rng, {1, 2, 8, 8}));
  DiffArray<double> a(random_tensor(rng, {1, 2, 4, 4}));
  DiffArray<double> b(random_tensor(rng, {1, 2, 4, 4}));
  DiffArray<double> c(random_tensor(rng, {1, 2, 4, 4}));
  FuseContext<double> c1, c2;
  auto& f1 = fuse_forward(global, {&a, &b, &c}, {}, c1);
  const Tensor<double> first = f1.value;
  auto& f2 = fuse_forward(global, {&c, &a, &b}, {}, c2);
  for (std::size_t i = 0; i < first.size(); ++i)
    CHECK(first[i] == doctest::Approx(f2.value[i]).epsilon(1e-12));
}

TEST_CASE("fuse rejects channel mismatch") {
  Rng rng(11);
  DiffArray<double> global(random_tensor(rng, {1, 3, 8, 8}));
  DiffArray<double> bad(random_tensor(rng, {1, 2, 4, 4}));
  FuseContext<double> ctx;
  CHECK_THROWS_AS(fuse_forward(global, {&bad}, {}, ctx), DimensionError);
}

TEST_CASE("fuse backward routes gradients to both pipelines") {
  Rng rng(13);
  DiffArray<double> global(random_tensor(rng, {1, 1, 4, 4}));
  DiffArray<double> local(random_tensor(rng, {1, 1, 2, 2}));
  FuseContext<double> ctx;
  auto& fused = fuse_forward(global, {&local}, {}, ctx);
  fused.grad.fill(1.0);
  fuse_backward(global, {&local}, ctx);
  for (std::size_t i = 0; i < global.grad.size(); ++i)
    CHECK(global.grad[i] == 1.0);
  for (std::size_t i = 0; i < local.grad.size(); ++i)
    CHECK(local.grad[i] == 4.0);  // each source cell feeds a 2x2 patch
}

namespace {

DecoderConfig make_cfg(DecoderForm form, int depth, int width) {
  DecoderConfig cfg;
  cfg.form = form;
  cfg.depth = depth;
  cfg.channels.assign(std::size_t(depth), width);
  return cfg;
}

}  // namespace

TEST_CASE("decode reaches the target resolution for every form") {
  Rng rng(17);
  for (DecoderForm form :
       {DecoderForm::kDC, DecoderForm::kCLDC, DecoderForm::kCLDCR}) {
    DecoderConfig cfg = make_cfg(form, 3, 6);
    auto params = make_decoder_params<double>(cfg, 4, 5, 8, 8, 7, 2, 64, 64,
                                              rng);
    Tensor<double> fused = random_tensor(rng, {5, 4, 8, 8});
    DecoderContext<double> ctx;
    auto& pred = decoder_forward(fused, cfg, params, ctx);
    CHECK(pred.value.shape() == std::vector<std::size_t>{7, 2, 64, 64});
    for (std::size_t i = 0; i < pred.value.size(); ++i) {
      CHECK(pred.value[i] >= 0.0);
      CHECK(pred.value[i] <= 1.0);
    }
  }
}

TEST_CASE("decode keeps a stride-1 tail when depth exceeds the gap") {
  Rng rng(19);
  DecoderConfig cfg = make_cfg(DecoderForm::kDC, 3, 4);
  auto params = make_decoder_params<double>(cfg, 3, 2, 16, 16, 2, 1, 64, 64,
                                            rng);
  Tensor<double> fused = random_tensor(rng, {2, 3, 16, 16});
  DecoderContext<double> ctx;
  auto& pred = decoder_forward(fused, cfg, params, ctx);
  CHECK(pred.value.shape() == std::vector<std::size_t>{2, 1, 64, 64});
}

TEST_CASE("decode rejects unreachable resolutions") {
  Rng rng(23);
  DecoderConfig cfg = make_cfg(DecoderForm::kDC, 2, 4);
  // 8 -> 64 needs three doublings, depth is 2.
  CHECK_THROWS_AS(
      make_decoder_params<double>(cfg, 4, 5, 8, 8, 5, 1, 64, 64, rng),
      ConfigError);
  // 8 -> 63 is not a power-of-two multiple.
  DecoderConfig cfg3 = make_cfg(DecoderForm::kDC, 3, 4);
  CHECK_THROWS_AS(
      make_decoder_params<double>(cfg3, 4, 5, 8, 8, 5, 1, 63, 63, rng),
      ConfigError);
}

TEST_CASE("CL+DC+R with a zeroed residual branch equals the DC path") {
  Rng rng(29);
  DecoderConfig cfg_r = make_cfg(DecoderForm::kCLDCR, 3, 5);
  auto params_r = make_decoder_params<double>(cfg_r, 3, 4, 8, 8, 3, 1, 32, 32,
                                              rng);
  for (auto& blk : params_r.blocks) {
    blk.cl.kernel.value.zero();
    blk.cl.bias.value.zero();
  }
  DecoderConfig cfg_dc = make_cfg(DecoderForm::kDC, 3, 5);
  DecoderParams<double> params_dc;
  for (auto& blk : params_r.blocks) {
    DecoderBlockParams<double> copy;
    copy.dc = blk.dc;
    params_dc.blocks.push_back(std::move(copy));
  }
  params_dc.head = params_r.head;
  params_dc.out_frames = params_r.out_frames;
  params_dc.out_channels = params_r.out_channels;

  Tensor<double> fused = random_tensor(rng, {4, 3, 8, 8});
  DecoderContext<double> ctx_r, ctx_dc;
  auto& pred_r = decoder_forward(fused, cfg_r, params_r, ctx_r);
  auto& pred_dc = decoder_forward(fused, cfg_dc, params_dc, ctx_dc);
  CHECK(pred_r.value == pred_dc.value);
}

TEST_CASE("decode gradients match central differences for every form") {
  Rng rng(31);
  for (DecoderForm form :
       {DecoderForm::kDC, DecoderForm::kCLDC, DecoderForm::kCLDCR}) {
    DecoderConfig cfg = make_cfg(form, 2, 3);
    auto params = make_decoder_params<double>(cfg, 2, 3, 4, 4, 2, 1, 8, 8,
                                              rng);
    DiffArray<double> fused(random_tensor(rng, {3, 2, 4, 4}));

    std::vector<DiffArray<double>*> inputs{&fused};
    for (auto& blk : params.blocks) {
      if (!blk.cl.kernel.value.empty()) {
        inputs.push_back(&blk.cl.kernel);
        inputs.push_back(&blk.cl.bias);
      }
      inputs.push_back(&blk.dc.kernel);
      inputs.push_back(&blk.dc.bias);
    }
    inputs.push_back(&params.head.kernel);
    inputs.push_back(&params.head.bias);
    // Zero biases would park pre-activations exactly on the relu kink.
    testutil::fill_zero_entries(inputs, rng);

    DecoderContext<double> probe;
    Tensor<double> w = random_tensor(
        rng, decoder_forward(fused.value, cfg, params, probe).value.shape());

    DecoderContext<double> ctx;
    auto fwd = [&] {
      DecoderContext<double> local;
      auto& pred = decoder_forward(fused.value, cfg, params, local);
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) acc += pred.value[i] * w[i];
      return acc;
    };
    auto bwd = [&] {
      for (auto* in : inputs) in->zero_grad();
      auto& pred = decoder_forward(fused.value, cfg, params, ctx);
      pred.grad = w;
      decoder_backward(cfg, params, ctx);
      fused.grad = ctx.input.grad;
    };
    const double err = finite_diff_check<double>(inputs, fwd, bwd, 1e-5);
    CHECK(err < 1e-5);
  }
}
