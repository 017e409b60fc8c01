#include <catch2/catch_amalgamated.hpp>
#include <functional>

#include "cfinet/nn.hpp"
#include "cfinet/nn_ops.hpp"
#include "cfinet/rng.hpp"
#include "cfinet/tensor.hpp"

using namespace cfinet;
using namespace cfinet::ops;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
  return t;
}

// Central-difference check of d(f)/d(leaf) for every element of every leaf.
double max_grad_err(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                    double eps = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  Tensor loss = f();
  loss.backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.grad_data(), leaf.grad_data() + leaf.numel());
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      double save = leaf.data()[i];
      double up, dn;
      {
        NoGradGuard ng;
        leaf.data()[i] = save + eps;
        up = f().item();
        leaf.data()[i] = save - eps;
        dn = f().item();
        leaf.data()[i] = save;
      }
      double fd = (up - dn) / (2 * eps);
      double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(1);
  Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng);
  CHECK(max_grad_err([&] { return mean(mul(add(a, b), sub(a, b))); }, {a, b}) < 1e-6);
  CHECK(max_grad_err([&] { return sum(mul(scale(a, 0.7), add_scalar(b, 2.0))); }, {a, b}) < 1e-6);
  Tensor c = randn({5}, rng);
  for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = 0.5 + std::abs(c.data()[i]);
  CHECK(max_grad_err([&] { return mean(log(c)); }, {c}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(exp(scale(c, 0.3))); }, {c}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(sigmoid(a)); }, {a}) < 1e-6);
  // keep relu inputs away from the kink
  Tensor d = randn({4, 4}, rng);
  for (int64_t i = 0; i < d.numel(); ++i)
    if (std::abs(d.data()[i]) < 0.05) d.data()[i] = 0.1;
  CHECK(max_grad_err([&] { return mean(relu(d)); }, {d}) < 1e-6);
}

TEST_CASE("matmul family gradients") {
  Rng rng(2);
  Tensor a = randn({3, 5}, rng), b = randn({5, 2}, rng), bias = randn({2}, rng);
  CHECK(max_grad_err([&] { return mean(matmul(a, b)); }, {a, b}) < 1e-6);
  Tensor bt = randn({2, 5}, rng);
  CHECK(max_grad_err([&] { return mean(matmul_nt(a, bt)); }, {a, bt}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(add_rowvec(matmul(a, b), bias)); }, {a, b, bias}) < 1e-6);
}

TEST_CASE("indexing op gradients") {
  Rng rng(3);
  Tensor a = randn({6, 3}, rng);
  std::vector<int> idx{4, 0, 4, 2};
  CHECK(max_grad_err([&] { return mean(gather_rows(a, idx)); }, {a}) < 1e-6);
  Tensor b = randn({2, 3}, rng);
  CHECK(max_grad_err([&] { return mean(concat_rows({a, b, b})); }, {a, b}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(reshape(a, {3, 6})); }, {a}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(logsumexp_rows(a)); }, {a}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(sum_cols_subset(a, {0, 2})); }, {a}) < 1e-6);
}

TEST_CASE("l2_normalize_rows gradient and norm") {
  Rng rng(4);
  Tensor a = randn({4, 6}, rng);
  Tensor n = l2_normalize_rows(a);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += n.at(r * 6 + c) * n.at(r * 6 + c);
    CHECK(std::sqrt(s) == Catch::Approx(1.0).epsilon(1e-9));
  }
  Tensor w = randn({4, 6}, rng);
  CHECK(max_grad_err([&] { return mean(mul(l2_normalize_rows(a), w.detach())); }, {a}) < 1e-6);
}

TEST_CASE("conv2d matches direct computation and gradients") {
  Rng rng(5);
  Tensor x = randn({2, 3, 5, 6}, rng);
  Tensor w = randn({4, 3, 3, 3}, rng, 0.5);
  Tensor b = randn({4}, rng, 0.1);

  Tensor y = conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == std::vector<int>{2, 4, 5, 6});
  // direct check of one output element
  int ib = 1, oc = 2, oy = 2, ox = 3;
  double acc = b.at(oc);
  for (int ic = 0; ic < 3; ++ic)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        int iy = oy - 1 + ky, ix = ox - 1 + kx;
        if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
        acc += x.at(((ib * 3 + ic) * 5 + iy) * 6 + ix) * w.at(((oc * 3 + ic) * 3 + ky) * 3 + kx);
      }
  CHECK(y.at(((ib * 4 + oc) * 5 + oy) * 6 + ox) == Catch::Approx(acc).epsilon(1e-12));

  CHECK(max_grad_err([&] { return mean(conv2d(x, w, b, 1, 1)); }, {x, w, b}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(conv2d(x, w, b, 2, 1)); }, {x, w, b}) < 1e-6);
  // valid convolution (no padding)
  Tensor x7 = randn({1, 2, 7, 7}, rng);
  Tensor w7 = randn({3, 2, 3, 3}, rng, 0.5);
  Tensor b7 = randn({3}, rng, 0.1);
  Tensor y7 = conv2d(x7, w7, b7, 1, 0);
  REQUIRE(y7.shape() == std::vector<int>{1, 3, 5, 5});
  CHECK(max_grad_err([&] { return mean(conv2d(x7, w7, b7, 1, 0)); }, {x7, w7, b7}) < 1e-6);
}

TEST_CASE("upsample and crop gradients") {
  Rng rng(6);
  Tensor x = randn({1, 2, 3, 4}, rng);
  Tensor y = upsample_nearest2(x);
  REQUIRE(y.shape() == std::vector<int>{1, 2, 6, 8});
  CHECK(y.at(0) == x.at(0));
  CHECK(max_grad_err([&] { return mean(upsample_nearest2(x)); }, {x}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(crop2d(upsample_nearest2(x), 5, 7)); }, {x}) < 1e-6);
}

TEST_CASE("roi_align identity and gradients") {
  Rng rng(7);
  Tensor x = randn({1, 3, 8, 8}, rng);
  // ROI spanning exactly the 7x7 top-left feature block at stride 1 with
  // single-sample bins hits integer coordinates: values reproduced exactly.
  std::vector<Box> rois{Box(0, 0, 7, 7)};
  Tensor y = roi_align(x, rois, 1.0, 7, 7, 1);
  REQUIRE(y.shape() == std::vector<int>{1, 3, 7, 7});
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < 7; ++by)
      for (int bx = 0; bx < 7; ++bx)
        CHECK(y.at((c * 7 + by) * 7 + bx) == Catch::Approx(x.at((c * 8 + by) * 8 + bx)).epsilon(1e-12));

  std::vector<Box> rois2{Box(1.2, 0.7, 6.3, 5.9), Box(0, 0, 3, 3)};
  CHECK(max_grad_err([&] { return mean(roi_align(x, rois2, 1.0, 7, 7, 2)); }, {x}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(roi_align(x, rois2, 0.5, 7, 7, 2)); }, {x}) < 1e-6);
}

TEST_CASE("adaptive_conv equals plain conv on native cells") {
  Rng rng(8);
  int h = 6, w = 7;
  double stride = 4.0;
  Tensor x = randn({1, 3, h, w}, rng);
  Tensor wt = randn({5, 3, 3, 3}, rng, 0.5);
  Tensor bias = randn({5}, rng, 0.1);
  // native receptive cell: box of size 2*stride centred on the feature cell
  std::vector<Box> native;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      double cx = stride * (xx + 0.5), cy = stride * (y + 0.5);
      native.push_back(Box(cx - stride, cy - stride, cx + stride, cy + stride));
    }
  Tensor ya = adaptive_conv(x, native, wt, bias, stride);
  Tensor yp = conv2d(x, wt, bias, 1, 1);
  REQUIRE(ya.shape() == yp.shape());
  for (int64_t i = 0; i < ya.numel(); ++i)
    CHECK(ya.at(i) == Catch::Approx(yp.at(i)).margin(1e-12));

  // shifted boxes change the output
  std::vector<Box> shifted = native;
  for (auto& b : shifted) {
    b.x1 += stride;
    b.x2 += stride;
  }
  Tensor ys = adaptive_conv(x, shifted, wt, bias, stride);
  double diff = 0.0;
  for (int64_t i = 0; i < ys.numel(); ++i) diff += std::abs(ys.at(i) - ya.at(i));
  CHECK(diff > 1e-3);

  // translation property: shifting boxes right by one stride samples the
  // next cell, so column c of the shifted output equals column c+1 of the
  // unshifted output away from the border.
  for (int oc = 0; oc < 5; ++oc)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx + 1 < w; ++xx)
        CHECK(ys.at((oc * h + y) * w + xx) ==
              Catch::Approx(ya.at((oc * h + y) * w + xx + 1)).margin(1e-9));

  std::vector<Box> random_boxes;
  Rng rng2(9);
  for (int i = 0; i < h * w; ++i) {
    double cx = rng2.uniform(2, stride * w - 2), cy = rng2.uniform(2, stride * h - 2);
    double bw = rng2.uniform(1, 10), bh = rng2.uniform(1, 10);
    random_boxes.push_back(Box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2));
  }
  CHECK(max_grad_err([&] { return mean(adaptive_conv(x, random_boxes, wt, bias, stride)); },
                     {x, wt, bias}) < 1e-6);

  // degenerate box: taps collapse to the centre, no error
  std::vector<Box> degen = native;
  degen[3] = Box(10, 10, 10, 10);
  CHECK_NOTHROW(adaptive_conv(x, degen, wt, bias, stride));
}

TEST_CASE("loss op gradients") {
  Rng rng(10);
  Tensor logits = randn({6, 4}, rng);
  std::vector<int> labels{0, 3, 1, 2, 0, 1};
  CHECK(max_grad_err([&] { return softmax_cross_entropy(logits, labels); }, {logits}) < 1e-6);

  Tensor z = randn({8}, rng);
  std::vector<double> t{1, 0, 1, 1, 0, 0, 1, 0};
  CHECK(max_grad_err([&] { return bce_with_logits(z, t); }, {z}) < 1e-6);

  Tensor pred = randn({5, 4}, rng);
  std::vector<double> tgt(20);
  for (auto& v : tgt) v = rng.normal(0, 1);
  CHECK(max_grad_err([&] { return smooth_l1(pred, tgt, 1.0); }, {pred}) < 1e-5);
}

TEST_CASE("decode_boxes and iou_loss_rows gradients") {
  Rng rng(12);
  std::vector<Box> anchors, targets;
  int n = 6;
  Tensor deltas = Tensor::zeros({n, 4}, true);
  for (int i = 0; i < n; ++i) {
    double cx = rng.uniform(10, 50), cy = rng.uniform(10, 50);
    double s = rng.uniform(6, 20);
    anchors.push_back(Box(cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2));
    targets.push_back(Box(cx - s / 2 + rng.uniform(-2, 2), cy - s / 2 + rng.uniform(-2, 2),
                          cx + s / 2 + rng.uniform(-2, 2), cy + s / 2 + rng.uniform(-2, 2)));
    for (int k = 0; k < 4; ++k) deltas.data()[i * 4 + k] = rng.uniform(-0.2, 0.2);
  }
  Tensor boxes = decode_boxes(deltas, anchors);
  REQUIRE(boxes.shape() == std::vector<int>{n, 4});
  CHECK(max_grad_err([&] { return mean(decode_boxes(deltas, anchors)); }, {deltas}) < 1e-6);
  CHECK(max_grad_err([&] { return mean(iou_loss_rows(decode_boxes(deltas, anchors), targets)); },
                     {deltas}, 1e-6) < 1e-4);
}

TEST_CASE("no-grad mode cuts the graph") {
  Rng rng(13);
  Tensor a = randn({3, 3}, rng);
  Tensor frozen;
  {
    NoGradGuard ng;
    frozen = mul(a, a);
  }
  CHECK_FALSE(frozen.requires_grad());
  Tensor loss = mean(mul(frozen, a));
  loss.backward();
  double gsum = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) gsum += std::abs(a.grad_data()[i]);
  CHECK(gsum > 0.0);  // gradient flows through the live path only
}

TEST_CASE("sgd with momentum and weight decay steps as expected") {
  ParamStore ps;
  Tensor w = ps.add("w", Tensor::from({2}, {1.0, -2.0}));
  nn::SgdOptimizer opt(ps, 0.1, 0.9, 0.01);
  w.grad_data()[0] = 0.5;
  w.grad_data()[1] = -1.0;
  opt.step();
  // v = g + wd*w = (0.5+0.01, -1.0-0.02); w -= 0.1*v
  CHECK(w.at(0) == Catch::Approx(1.0 - 0.1 * 0.51).epsilon(1e-12));
  CHECK(w.at(1) == Catch::Approx(-2.0 + 0.1 * 1.02).epsilon(1e-12));
  ps.zero_grad();
  w.grad_data()[0] = 0.0;
  w.grad_data()[1] = 0.0;
  double w0 = w.at(0), w1 = w.at(1);
  opt.step();
  // momentum keeps moving: v' = 0.9*v + wd*w
  CHECK(w.at(0) == Catch::Approx(w0 - 0.1 * (0.9 * 0.51 + 0.01 * w0)).epsilon(1e-9));
  CHECK(w.at(1) == Catch::Approx(w1 - 0.1 * (0.9 * -1.02 + 0.01 * w1)).epsilon(1e-9));
}
