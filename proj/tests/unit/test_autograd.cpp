#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "hpl/autograd.hpp"
#include "hpl/rng.hpp"

using namespace hpl;
namespace ag = hpl::ag;
using VarD = ag::VarT<double>;

namespace {

TensorD rnd(std::vector<long> shape, uint64_t seed, double scale = 1.0) {
  Rng r(seed);
  return TensorD::randn(std::move(shape), r, scale);
}

void expect_clean(const gradcheck::Result& res) {
  CAPTURE(res.worst_rel);
  CAPTURE(res.checked);
  CHECK(res.failed == 0);
}

}  // namespace

TEST_CASE("matmul gradients, all transpose flags") {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      std::vector<long> sa = ta ? std::vector<long>{4, 3} : std::vector<long>{3, 4};
      std::vector<long> sb = tb ? std::vector<long>{5, 4} : std::vector<long>{4, 5};
      auto res = gradcheck::check(
          [&](const std::vector<VarD>& v) {
            return ag::sum_all(ag::matmul(v[0], v[1], ta, tb));
          },
          {rnd(sa, 1 + ta), rnd(sb, 7 + tb)});
      expect_clean(res);
    }
}

TEST_CASE("bmm gradients, all transpose flags") {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      std::vector<long> sa = ta ? std::vector<long>{2, 4, 3} : std::vector<long>{2, 3, 4};
      std::vector<long> sb = tb ? std::vector<long>{2, 5, 4} : std::vector<long>{2, 4, 5};
      auto res = gradcheck::check(
          [&](const std::vector<VarD>& v) {
            return ag::sum_all(ag::bmm(v[0], v[1], ta, tb));
          },
          {rnd(sa, 11 + ta), rnd(sb, 17 + tb)});
      expect_clean(res);
    }
}

TEST_CASE("elementwise and broadcast ops") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) { return ag::sum_all(ag::mul(ag::add(v[0], v[1]), v[2])); },
      {rnd({3, 4}, 2), rnd({3, 4}, 3), rnd({3, 4}, 4)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::mean_all(ag::scale(ag::add_rowvec(v[0], v[1]), 1.7));
      },
      {rnd({3, 4}, 5), rnd({4}, 6)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::sum_all(ag::mul(ag::add_tiled(v[0], v[1], 3), v[0]));
      },
      {rnd({2, 3, 4}, 8), rnd({3, 4}, 9)}));
  TensorD bias = rnd({3, 4}, 10);
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        return ag::sum_all(ag::mul(ag::add_const_tiled(v[0], bias, 3), v[0]));
      },
      {rnd({2, 3, 4}, 12)}));
}

TEST_CASE("nonlinearities") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) { return ag::sum_all(ag::gelu(v[0])); },
      {rnd({4, 5}, 13, 2.0)}, 1e-6, 1e-5));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) { return ag::sum_all(ag::mul(ag::sigmoid(v[0]), v[0])); },
      {rnd({4, 5}, 14, 2.0)}));
}

TEST_CASE("layer norm gradients for input and affine") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto y = ag::layer_norm(v[0], v[1], v[2]);
        return ag::sum_all(ag::mul(y, y));
      },
      {rnd({5, 8}, 15), rnd({8}, 16), rnd({8}, 17)}, 1e-6, 1e-5));
}

TEST_CASE("batch norm train and eval gradients") {
  // Probe with a random linear functional: a plain sum of squares makes the
  // input gradient nearly vanish (it is O(eps)) and drowns in FD noise.
  auto probe = ag::constant(rnd({6, 4}, 60));
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        auto y = ag::batch_norm_train<double>(v[0], v[1], v[2], nullptr, nullptr);
        return ag::sum_all(ag::mul(y, probe));
      },
      {rnd({6, 4}, 18), rnd({4}, 19), rnd({4}, 20)}, 1e-6, 1e-5));
  TensorD rm = rnd({4}, 21, 0.3), rv = TensorD::full({4}, 1.2);
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        auto y = ag::batch_norm_eval(v[0], v[1], v[2], rm, rv);
        return ag::sum_all(ag::mul(y, probe));
      },
      {rnd({6, 4}, 22), rnd({4}, 23), rnd({4}, 24)}));
}

TEST_CASE("softmax family") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::sum_all(ag::mul(ag::softmax_rows(v[0]), v[1]));
      },
      {rnd({4, 6}, 25), rnd({4, 6}, 26)}, 1e-6, 1e-5));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::sum_all(ag::mul(ag::log_softmax_rows(v[0]), v[1]));
      },
      {rnd({4, 6}, 27), rnd({4, 6}, 28)}, 1e-6, 1e-5));
}

TEST_CASE("l2 row normalization") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::sum_all(ag::mul(ag::l2_normalize_rows(v[0]), v[1]));
      },
      {rnd({5, 7}, 29), rnd({5, 7}, 30)}, 1e-6, 1e-5));
}

TEST_CASE("shape surgery ops route gradients") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto r = ag::reshape(v[0], {4, 6});
        return ag::sum_all(ag::mul(r, r));
      },
      {rnd({2, 3, 4}, 31)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto s = ag::select_rows(v[0], IndexVec{2, 0, 2, 1});
        return ag::sum_all(ag::mul(s, s));
      },
      {rnd({3, 5}, 32)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto c = ag::concat_rows<double>({v[0], v[1]});
        return ag::sum_all(ag::mul(c, c));
      },
      {rnd({2, 4}, 33), rnd({3, 4}, 34)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto c = ag::concat_cols<double>({v[0], v[1]});
        return ag::sum_all(ag::mul(c, c));
      },
      {rnd({3, 2}, 35), rnd({3, 5}, 36)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto s = ag::slice_cols(v[0], 1, 3);
        return ag::sum_all(ag::mul(s, s));
      },
      {rnd({4, 6}, 37)}));
}

TEST_CASE("attention head reshapes invert each other") {
  const long B = 2, T = 3, H = 2, D = 8;
  TensorD x = rnd({B * T, D}, 38);
  auto vx = ag::make_var(x, true);
  auto split = ag::split_heads(vx, B, T, H);
  auto merged = ag::merge_heads(split, B, T, H);
  for (long i = 0; i < x.numel(); ++i) CHECK(merged->val[i] == x[i]);
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        auto s = ag::split_heads(v[0], B, T, H);
        return ag::sum_all(ag::mul(s, s));
      },
      {x}));
}

TEST_CASE("token ops") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto y = ag::prepend_token(v[0], v[1], 2, 3);
        return ag::sum_all(ag::mul(y, y));
      },
      {rnd({2, 3, 4}, 39), rnd({4}, 40)}));
  auto mask = std::make_shared<ByteTensor>(std::vector<long>{6});
  (*mask)[1] = 1;
  (*mask)[4] = 1;
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        auto y = ag::mask_token_fill(v[0], mask, v[1]);
        return ag::sum_all(ag::mul(y, y));
      },
      {rnd({6, 4}, 41), rnd({4}, 42)}));
}

TEST_CASE("dropout scales kept activations and masks gradients") {
  TensorD x = rnd({50, 10}, 43);
  Rng r(99);
  auto vx = ag::make_var(x, true);
  auto y = ag::dropout(vx, 0.4, r);
  long kept = 0;
  for (long i = 0; i < y->val.numel(); ++i) {
    if (y->val[i] != 0.0) {
      ++kept;
      CHECK(y->val[i] == doctest::Approx(x[i] / 0.6));
    }
  }
  CHECK(kept > 200);
  CHECK(kept < 400);
  ag::backward(ag::sum_all(y));
  for (long i = 0; i < x.numel(); ++i) {
    if (y->val[i] == 0.0) CHECK(vx->grad[i] == 0.0);
    else CHECK(vx->grad[i] == doctest::Approx(1.0 / 0.6));
  }
}

TEST_CASE("loss reductions") {
  auto targets = std::make_shared<IndexVec>(IndexVec{1, -1, 0, 2});
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        return ag::nll_rows(ag::log_softmax_rows(v[0]), targets);
      },
      {rnd({4, 3}, 44)}, 1e-6, 1e-5));

  auto q = std::make_shared<TensorD>(rnd({4, 3}, 45, 0.3));
  for (long i = 0; i < q->numel(); ++i) (*q)[i] = std::abs((*q)[i]);
  auto w = std::make_shared<TensorD>(TensorD::full({4}, 0.25));
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) {
        return ag::soft_ce_rows(ag::log_softmax_rows(v[0]), q, w);
      },
      {rnd({4, 3}, 46)}, 1e-6, 1e-5));

  auto y = std::make_shared<TensorD>(std::vector<long>{3, 4});
  auto n = std::make_shared<TensorD>(std::vector<long>{3, 4});
  Rng r(47);
  for (long i = 0; i < 12; ++i) {
    (*y)[i] = r.bernoulli(0.5) ? 1.0 : 0.0;
    (*n)[i] = r.bernoulli(0.7) ? 1.0 : 0.0;
  }
  for (long c = 0; c < 4; ++c) (*n)[2 * 4 + c] = 0.0;  // one fully ignored row
  expect_clean(gradcheck::check(
      [&](const std::vector<VarD>& v) { return ag::masked_bce_logits(v[0], y, n); },
      {rnd({3, 4}, 48, 1.5)}, 1e-6, 1e-5));
}

TEST_CASE("nearest-neighbor spreading regularizer") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        return ag::koleo_core(ag::l2_normalize_rows(v[0]));
      },
      {rnd({6, 5}, 49)}, 1e-6, 1e-4));
}

TEST_CASE("grid ops") {
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto y = ag::bilinear_upsample(v[0], 2, 3, 3, 5, 5);
        return ag::sum_all(ag::mul(y, y));
      },
      {rnd({2, 3, 3, 2}, 50)}));
  expect_clean(gradcheck::check(
      [](const std::vector<VarD>& v) {
        auto y = ag::adaptive_avg_pool(v[0], 2, 5, 5, 2);
        return ag::sum_all(ag::mul(y, y));
      },
      {rnd({2, 5, 5, 3}, 51)}));
}

TEST_CASE("gradients accumulate when a leaf feeds multiple paths") {
  auto x = ag::make_var(TensorD::full({2, 2}, 1.5), true);
  auto y = ag::sum_all(ag::add(ag::mul(x, x), x));  // d/dx = 2x + 1
  ag::backward(y);
  for (long i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(4.0));
}

TEST_CASE("no-grad mode builds no graph") {
  auto x = ag::make_var(rnd({3, 3}, 52), true);
  ag::NoGradGuard ng;
  auto y = ag::matmul(x, x);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("backward requires a scalar root") {
  auto x = ag::make_var(rnd({2, 2}, 53), true);
  CHECK_THROWS_AS(ag::backward(ag::mul(x, x)), hpl::ParamError);
}

TEST_CASE("float instantiation matches double within tolerance") {
  Rng r(54);
  Tensor xf = Tensor::randn({4, 4}, r, 1.0f);
  TensorD xd = xf.cast<double>();
  auto vf = ag::make_var(xf, true);
  auto vd = ag::make_var(xd, true);
  auto lf = ag::sum_all(ag::gelu(ag::matmul(vf, vf)));
  auto ld = ag::sum_all(ag::gelu(ag::matmul(vd, vd)));
  ag::backward(lf);
  ag::backward(ld);
  CHECK(static_cast<double>(lf->val[0]) ==
        doctest::Approx(ld->val[0]).epsilon(1e-4));
  for (long i = 0; i < 16; ++i)
    CHECK(static_cast<double>(vf->grad[i]) == doctest::Approx(vd->grad[i]).epsilon(1e-3));
}
