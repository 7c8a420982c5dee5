#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "cxr/gradcheck.hpp"
#include "cxr/loss.hpp"
#include "cxr/net.hpp"
#include "cxr/rng.hpp"
#include "oracles.hpp"

using namespace cxr;

namespace {

void fill_random(Tensor4& t, Rng& rng, double scale = 1.0) {
  for (auto& v : t.data) v = scale * rng.normal();
}

// Direct definition of the padded strided convolution, no loop reordering.
Tensor4 naive_conv(const Tensor4& x, const ConvLayer& layer) {
  const auto& s = layer.spec;
  const int k = s.kernel;
  Tensor4 out(x.n, s.out_ch, s.out_h(x.h), s.out_w(x.w));
  for (int b = 0; b < x.n; ++b)
    for (int oc = 0; oc < s.out_ch; ++oc)
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
          double acc = layer.bias.value[oc];
          for (int ic = 0; ic < s.in_ch; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s.stride + ky - s.pad;
                const int ix = ox * s.stride + kx - s.pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(oc) * s.in_ch + ic) * k + ky) * k + kx;
                acc += layer.weight.value[wi] * x.at(b, ic, iy, ix);
              }
          out.at(b, oc, oy, ox) = acc;
        }
  return out;
}

ConvLayer make_layer(ConvSpec spec, std::uint64_t seed) {
  ConvLayer layer;
  layer.configure("test", spec);
  Rng rng(seed);
  layer.he_init(rng);
  return layer;
}

// Objective used for finite-difference checks: fixed random projection of the
// conv output, so dL/dout is a known constant tensor.
double projected(const Tensor4& out, const Tensor4& proj) {
  return std::inner_product(out.data.begin(), out.data.end(), proj.data.begin(), 0.0);
}

}  // namespace

TEST_SUITE_BEGIN("net");

TEST_CASE("conv2d matches the direct definition") {
  Rng rng(11);
  struct Combo { int stride, pad; };
  for (const Combo c : {Combo{1, 1}, Combo{2, 1}, Combo{1, 0}, Combo{2, 0}}) {
    ConvSpec spec{.in_ch = 2, .out_ch = 3, .kernel = 3, .stride = c.stride, .pad = c.pad};
    auto layer = make_layer(spec, 100 + c.stride * 10 + c.pad);
    Tensor4 x(2, 2, 7, 6);
    fill_random(x, rng);
    const Tensor4 fast = conv2d_forward(x, layer);
    const Tensor4 slow = naive_conv(x, layer);
    REQUIRE(fast.same_shape(slow));
    for (std::size_t i = 0; i < fast.data.size(); ++i) {
      CHECK(fast.data[i] == doctest::Approx(slow.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d backward agrees with central differences") {
  Rng rng(13);
  ConvSpec spec{.in_ch = 2, .out_ch = 2, .kernel = 3, .stride = 2, .pad = 1};
  auto layer = make_layer(spec, 77);
  Tensor4 x(1, 2, 6, 6);
  fill_random(x, rng);
  Tensor4 proj(1, 2, spec.out_h(x.h), spec.out_w(x.w));
  fill_random(proj, rng);

  std::vector<double> gw(layer.weight.count(), 0.0), gb(layer.bias.count(), 0.0);
  Tensor4 gx(x.n, x.c, x.h, x.w);
  conv2d_backward(x, layer, proj, &gx, gw, gb);

  const auto f = [&] { return projected(conv2d_forward(x, layer), proj); };
  for (std::size_t i = 0; i < gw.size(); i += 7) {
    const double num = oracle::central_diff(f, &layer.weight.value[i], 1e-6);
    CHECK(gw[i] == doctest::Approx(num).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < gb.size(); ++i) {
    const double num = oracle::central_diff(f, &layer.bias.value[i], 1e-6);
    CHECK(gb[i] == doctest::Approx(num).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < gx.data.size(); i += 11) {
    const double num = oracle::central_diff(f, &x.data[i], 1e-6);
    CHECK(gx.data[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("conv2d backward accumulates instead of overwriting") {
  Rng rng(17);
  ConvSpec spec{.in_ch = 1, .out_ch = 1, .kernel = 3, .stride = 1, .pad = 1};
  auto layer = make_layer(spec, 5);
  Tensor4 x(1, 1, 4, 4), proj(1, 1, 4, 4);
  fill_random(x, rng);
  fill_random(proj, rng);

  std::vector<double> once_w(9, 0.0), once_b(1, 0.0);
  conv2d_backward(x, layer, proj, nullptr, once_w, once_b);
  std::vector<double> twice_w(9, 0.0), twice_b(1, 0.0);
  conv2d_backward(x, layer, proj, nullptr, twice_w, twice_b);
  conv2d_backward(x, layer, proj, nullptr, twice_w, twice_b);
  for (int i = 0; i < 9; ++i) {
    CHECK(twice_w[i] == doctest::Approx(2.0 * once_w[i]).epsilon(1e-12));
  }
  CHECK(twice_b[0] == doctest::Approx(2.0 * once_b[0]).epsilon(1e-12));
}

TEST_CASE("downsampler init writes the binomial kernel on the diagonal") {
  ConvLayer layer;
  layer.configure("ds", ConvSpec{.in_ch = 3, .out_ch = 3, .kernel = 3, .stride = 2, .pad = 1});
  gaussian_downsample_init(layer);

  const double expect[9] = {1.0 / 16, 2.0 / 16, 1.0 / 16, 2.0 / 16, 4.0 / 16,
                            2.0 / 16, 1.0 / 16, 2.0 / 16, 1.0 / 16};
  for (int oc = 0; oc < 3; ++oc) {
    for (int ic = 0; ic < 3; ++ic) {
      for (int t = 0; t < 9; ++t) {
        const double v = layer.weight.value[(oc * 3 + ic) * 9 + t];
        if (ic == oc) {
          CHECK(v == doctest::Approx(expect[t]).epsilon(1e-15));
        } else {
          CHECK(v == 0.0);
        }
      }
    }
    CHECK(layer.bias.value[oc] == 0.0);
  }
}

TEST_CASE("downsampler preserves constant images away from the border") {
  ConvLayer layer;
  layer.configure("ds", ConvSpec{.in_ch = 3, .out_ch = 3, .kernel = 3, .stride = 2, .pad = 1});
  gaussian_downsample_init(layer);

  Tensor4 x(1, 3, 64, 64);
  x.fill(0.731);
  const Tensor4 half = conv2d_forward(x, layer);      // 32x32
  const Tensor4 quarter = conv2d_forward(half, layer);  // 16x16
  REQUIRE(quarter.h == 16);
  // Rows/cols whose 3x3 windows never touched zero padding at either stage.
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 1; y <= 7; ++y) {
      for (int xx = 1; xx <= 7; ++xx) {
        CHECK(std::fabs(quarter.at(0, ch, y, xx) - 0.731) <= 1e-12);
      }
    }
  }
}

TEST_CASE("average pooling halves dimensions and spreads gradient evenly") {
  Tensor4 x(1, 1, 4, 4);
  for (int i = 0; i < 16; ++i) x.data[i] = i;
  const Tensor4 y = avg_pool2x2_forward(x);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));

  Tensor4 gy(1, 1, 2, 2);
  gy.fill(1.0);
  gy.at(0, 0, 0, 1) = 3.0;
  const Tensor4 gx = avg_pool2x2_backward(gy, x);
  REQUIRE(gx.same_shape(x));
  CHECK(gx.at(0, 0, 0, 0) == doctest::Approx(0.25));
  CHECK(gx.at(0, 0, 0, 2) == doctest::Approx(0.75));
  CHECK(gx.at(0, 0, 1, 3) == doctest::Approx(0.75));
}

TEST_CASE("global average pooling and its adjoint") {
  Tensor4 x(2, 3, 4, 4);
  Rng rng(23);
  fill_random(x, rng);
  const Matrix feats = global_avg_pool_forward(x);
  REQUIRE(feats.rows == 2);
  REQUIRE(feats.cols == 3);
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) mean += x.at(b, c, y, xx);
      CHECK(feats.at(b, c) == doctest::Approx(mean / 16.0).epsilon(1e-12));
    }
  }
  Matrix g(2, 3);
  g.at(1, 2) = 16.0;
  const Tensor4 gx = global_avg_pool_backward(g, 4, 4);
  CHECK(gx.at(1, 2, 3, 3) == doctest::Approx(1.0));
  CHECK(gx.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("stable sigmoid behaves at the extremes") {
  CHECK(stable_sigmoid(0.0) == doctest::Approx(0.5));
  CHECK(stable_sigmoid(800.0) == doctest::Approx(1.0));
  CHECK(stable_sigmoid(-800.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(stable_sigmoid(800.0)));
  CHECK(std::isfinite(stable_sigmoid(-800.0)));
  for (double v : {0.3, 1.7, 9.0}) {
    CHECK(stable_sigmoid(-v) == doctest::Approx(1.0 - stable_sigmoid(v)).epsilon(1e-12));
  }
}

TEST_CASE("dense block grows channels and checks out against differences") {
  DenseBlock block(3, 2, 4, false, "blk");
  Rng rng(31);
  block.init(rng);
  CHECK(block.out_channels() == 3 + 2 * 4);

  Tensor4 x(2, 3, 6, 6);
  fill_random(x, rng, 0.5);
  Tensor4 proj;
  {
    DenseBlock::Cache cache;
    const Tensor4 y = block.forward(x, cache, true);
    REQUIRE(y.c == 11);
    REQUIRE(y.h == 6);
    proj = Tensor4(y.n, y.c, y.h, y.w);
    fill_random(proj, rng);
  }

  DenseBlock::Cache cache;
  const Tensor4 y = block.forward(x, cache, true);
  std::vector<double> grad_flat(block.param_count(), 0.0);
  const Tensor4 gx = block.backward(cache, proj, grad_flat);

  // Scatter the flat gradient back into the tensors grad_check reads.
  auto params = block.params();
  std::size_t off = 0;
  for (ParamTensor* p : params) {
    std::copy(grad_flat.begin() + off, grad_flat.begin() + off + p->count(),
              p->grad.begin());
    off += p->count();
  }
  REQUIRE(off == grad_flat.size());

  const auto f = [&] {
    DenseBlock::Cache c2;
    return projected(block.forward(x, c2, true), proj);
  };
  const auto report = grad_check(f, params, 8, 1e-6, 99);
  INFO("worst ", report.worst_name, "[", report.worst_index, "] analytic ",
       report.worst_analytic, " numeric ", report.worst_numeric);
  CHECK(report.pass(1e-5));

  for (std::size_t i = 0; i < gx.data.size(); i += 13) {
    const double num = oracle::central_diff(f, &x.data[i], 1e-6);
    CHECK(gx.data[i] == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("model spec validation guards the supported geometry") {
  ModelSpec spec;
  CHECK_NOTHROW(spec.validate());
  ModelSpec bad = spec;
  bad.input_h = 10;  // not divisible by 4
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.input_channels = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.num_blocks = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const auto j = spec.to_json();
  CHECK(ModelSpec::from_json(j) == spec);
}

TEST_CASE("model forward is deterministic, clamped and shape-checked") {
  ModelSpec spec;
  spec.input_h = spec.input_w = 16;
  spec.layers_per_block = 2;
  spec.growth = 4;
  Model m1(spec, 42), m2(spec, 42), m3(spec, 43);

  Tensor4 x(3, 3, 16, 16);
  Rng rng(7);
  fill_random(x, rng);
  Model::Cache c1, c2, c3;
  const Matrix p1 = m1.forward(x, c1, false);
  const Matrix p2 = m2.forward(x, c2, false);
  const Matrix p3 = m3.forward(x, c3, false);
  REQUIRE(p1.rows == 3);
  REQUIRE(p1.cols == 35);
  bool differs = false;
  for (std::size_t i = 0; i < p1.data.size(); ++i) {
    CHECK(p1.data[i] == p2.data[i]);
    CHECK(p1.data[i] >= kProbClamp);
    CHECK(p1.data[i] <= 1.0 - kProbClamp);
    differs |= p1.data[i] != p3.data[i];
  }
  CHECK(differs);  // the init seed must matter

  Tensor4 wrong(1, 3, 32, 32);
  Model::Cache cw;
  CHECK_THROWS_AS((void)m1.forward(wrong, cw), std::invalid_argument);
}

namespace {

// Shared harness: analytic grads via backward, then finite differences
// through the full forward + pooled loss.
GradCheckReport model_grad_report(const ModelSpec& spec, std::uint64_t seed,
                                  int batch, int samples_per_tensor) {
  Model model(spec, seed);
  Rng rng(derive_seed(seed, "gradcheck_data"));
  Tensor4 x(batch, spec.input_channels, spec.input_h, spec.input_w);
  fill_random(x, rng, 0.8);

  std::vector<LabelVector> labels(batch);
  std::vector<MaskVector> masks(batch);
  for (int s = 0; s < batch; ++s) {
    labels[s].bits.assign(spec.num_outputs, 0);
    masks[s].bits.assign(spec.num_outputs, 0);
    for (int n = 0; n < spec.num_outputs; ++n) {
      labels[s].bits[n] = rng.bernoulli(0.4) ? 1 : 0;
      masks[s].bits[n] = rng.bernoulli(0.7) ? 1 : 0;
    }
  }

  Model::Cache cache;
  const Matrix preds = model.forward(x, cache, true);
  const auto weights = batch_weights(labels, masks);
  const Matrix gpred = pooled_loss_grad(preds, labels, masks, weights);
  std::vector<double> grad_flat(model.param_count(), 0.0);
  model.backward(cache, gpred, grad_flat);
  model.zero_grad();
  model.accumulate_grad(grad_flat);

  const auto f = [&] {
    Model::Cache c;
    const Matrix p = model.forward(x, c, true);
    return pooled_loss(p, labels, masks, weights).total;
  };
  auto params = model.params();
  return grad_check(f, params, samples_per_tensor, 1e-6,
                    derive_seed(seed, "gradcheck_pick"));
}

}  // namespace

TEST_CASE("model gradients pass a finite-difference audit") {
  ModelSpec spec;
  spec.input_h = spec.input_w = 16;
  spec.num_blocks = 2;
  spec.layers_per_block = 2;
  spec.growth = 4;
  const auto report = model_grad_report(spec, 2024, 2, 6);
  INFO("checked ", report.checked, " worst ", report.worst_name, "[",
       report.worst_index, "] analytic ", report.worst_analytic, " numeric ",
       report.worst_numeric);
  CHECK(report.pass(1e-4));
  CHECK(report.checked >= 50);
}

TEST_CASE("model gradients hold with normalization layers enabled") {
  ModelSpec spec;
  spec.input_h = spec.input_w = 16;
  spec.num_blocks = 2;
  spec.layers_per_block = 2;
  spec.growth = 4;
  spec.norm_layers = true;
  const auto report = model_grad_report(spec, 515, 3, 4);
  INFO("checked ", report.checked, " worst ", report.worst_name, "[",
       report.worst_index, "] analytic ", report.worst_analytic, " numeric ",
       report.worst_numeric);
  CHECK(report.pass(1e-4));
}

TEST_CASE("accumulate_grad sums into existing gradients") {
  ModelSpec spec;
  spec.input_h = spec.input_w = 8;
  spec.num_blocks = 1;
  spec.layers_per_block = 1;
  spec.growth = 2;
  spec.pool_between_blocks = false;
  Model model(spec, 3);
  std::vector<double> ones(model.param_count(), 1.0);
  model.zero_grad();
  model.accumulate_grad(ones);
  model.accumulate_grad(ones);
  for (const ParamTensor* p : std::as_const(model).params()) {
    for (const double g : p->grad) CHECK(g == 2.0);
  }
}

TEST_SUITE_END();
