#include "pcdepth/cvrl.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pcdepth;
using namespace pcdepth::cvrl;
using testutil::max_abs_diff;
using testutil::random_param;
using testutil::random_values;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Var& v) {
  Mat m(static_cast<std::size_t>(v.dim(0)), std::vector<double>(static_cast<std::size_t>(v.dim(1))));
  for (int i = 0; i < v.dim(0); ++i)
    for (int j = 0; j < v.dim(1); ++j) m[i][j] = v.value()[static_cast<std::size_t>(i) * v.dim(1) + j];
  return m;
}

std::vector<double> flat(const Mat& m) {
  std::vector<double> out;
  for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
  return out;
}

Mat affine(const Mat& x, const Var& weight, const Var& bias) {
  const int in = weight.dim(0), out = weight.dim(1);
  Mat y(x.size(), std::vector<double>(static_cast<std::size_t>(out)));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int o = 0; o < out; ++o) {
      double s = bias.value()[static_cast<std::size_t>(o)];
      for (int k = 0; k < in; ++k) s += x[i][k] * weight.value()[static_cast<std::size_t>(k) * out + o];
      y[i][o] = s;
    }
  return y;
}

Mat layer_norm(const Mat& x, const Var& gamma, const Var& beta) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v;
    mu /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mu) / std::sqrt(var + 1e-5) * gamma.value()[j] + beta.value()[j];
  }
  return y;
}

// Dense evaluation of the token-competition attention: softmax over tokens per
// pixel, renormalised over pixels per token.
Mat dense_transposed(const Mat& q, const Mat& k, const Mat& v) {
  const std::size_t n = q.size(), m = k.size(), c = q[0].size(), cv = v[0].size();
  Mat logits(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t d = 0; d < c; ++d) s += q[i][d] * k[j][d];
      logits[i][j] = s / std::sqrt(static_cast<double>(c));
    }
  Mat a(n, std::vector<double>(m));
  for (std::size_t j = 0; j < m; ++j) {
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(logits[i][j]);
    for (std::size_t i = 0; i < n; ++i) a[i][j] = std::exp(logits[i][j]) / z;
  }
  Mat out(n, std::vector<double>(cv, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < m; ++j) row += a[i][j];
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t d = 0; d < cv; ++d) out[i][d] += a[i][j] / row * v[j][d];
  }
  return out;
}

Mat level_rows(const Var& level) {
  const int c = level.dim(0), h = level.dim(1), w = level.dim(2);
  Mat rows(static_cast<std::size_t>(h * w), std::vector<double>(static_cast<std::size_t>(c)));
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p) rows[p][ch] = level.value()[static_cast<std::size_t>(ch) * h * w + p];
  return rows;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x))); }

void perturb_all(nn::ParamStore& store, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (const auto& e : store.entries()) {
    auto v = e.var;
    for (auto& x : v.mutable_value()) x += rng.normal(0.0, scale);
  }
}

void fill(nn::ParamStore& store, const std::string& name, double value) {
  auto v = store.find(name);
  std::fill(v.mutable_value().begin(), v.mutable_value().end(), value);
}

backbone::FeaturePyramid toy_pyramid(Rng& rng, int channels) {
  backbone::FeaturePyramid p;
  p.levels[0] = Var::constant({channels, 2, 2}, random_values(static_cast<std::size_t>(channels) * 4, rng));
  p.levels[1] = Var::constant({channels, 1, 2}, random_values(static_cast<std::size_t>(channels) * 2, rng));
  p.levels[2] = Var::constant({channels, 1, 1}, random_values(static_cast<std::size_t>(channels), rng));
  return p;
}

}  // namespace

TEST(InitTokens, ShapeStatisticsAndReproducibility) {
  const auto a = init_tokens(32, 128, 5);
  EXPECT_EQ(a.count(), 32);
  EXPECT_EQ(a.dim(), 128);
  EXPECT_EQ(a.tokens.value(), init_tokens(32, 128, 5).tokens.value());
  EXPECT_NE(a.tokens.value(), init_tokens(32, 128, 6).tokens.value());
  double mean = 0, sq = 0;
  for (double v : a.tokens.value()) mean += v, sq += v * v;
  mean /= 32.0 * 128;
  sq /= 32.0 * 128;
  EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(32.0 * 128));
  EXPECT_NEAR(sq, 1.0, 0.1);
  EXPECT_THROW(init_tokens(0, 4, 1), std::invalid_argument);
}

TEST(TransposedAttention, TwoTokensThreePixelsMatchesDenseOracle) {
  const Mat q = {{0.5, -1.0}, {1.5, 0.25}};
  const Mat k = {{1.0, 0.0}, {0.0, 1.0}, {-0.5, 2.0}};
  const Mat v = {{1.0, 2.0, 3.0}, {-1.0, 0.5, 0.0}, {4.0, -2.0, 1.0}};
  const auto r = transposed_attention(Var::constant({2, 2}, flat(q)), Var::constant({3, 2}, flat(k)),
                                      Var::constant({3, 3}, flat(v)));
  EXPECT_LT(max_abs_diff(r.output.value(), flat(dense_transposed(q, k, v))), 1e-12);
}

TEST(TransposedAttention, RandomShapesMatchDenseOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = rng.uniform_int(1, 5), m = rng.uniform_int(1, 9), c = rng.uniform_int(1, 6), cv = rng.uniform_int(1, 4);
    const auto q = Var::constant({n, c}, random_values(static_cast<std::size_t>(n * c), rng));
    const auto k = Var::constant({m, c}, random_values(static_cast<std::size_t>(m * c), rng));
    const auto v = Var::constant({m, cv}, random_values(static_cast<std::size_t>(m * cv), rng));
    const auto r = transposed_attention(q, k, v);
    EXPECT_LT(max_abs_diff(r.output.value(), flat(dense_transposed(to_mat(q), to_mat(k), to_mat(v)))), 1e-12);
  }
}

TEST(TransposedAttention, SinglePixelReturnsItsValueRow) {
  Rng rng(22);
  const auto v = Var::constant({1, 3}, {0.3, -2.0, 7.5});
  const auto r = transposed_attention(random_param({4, 5}, rng), random_param({1, 5}, rng), v);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(r.output.value()[static_cast<std::size_t>(i * 3 + d)], v.value()[static_cast<std::size_t>(d)]);
}

TEST(TransposedAttention, IdenticalKeysGiveColumnMean) {
  Rng rng(23);
  std::vector<double> k;
  for (int m = 0; m < 6; ++m) k.insert(k.end(), {0.4, -1.2, 0.7});
  const auto v = Var::constant({6, 2}, random_values(12, rng));
  const auto r = transposed_attention(random_param({3, 3}, rng), Var::constant({6, 3}, k), v);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(r.weights.value()[static_cast<std::size_t>(i * 6 + j)], 1.0 / 6, 1e-12);
    for (int d = 0; d < 2; ++d) {
      double mean = 0;
      for (int j = 0; j < 6; ++j) mean += v.value()[static_cast<std::size_t>(j * 2 + d)] / 6;
      EXPECT_NEAR(r.output.value()[static_cast<std::size_t>(i * 2 + d)], mean, 1e-12);
    }
  }
}

TEST(TransposedAttention, NormalisationAcrossHeads) {
  Rng rng(24);
  for (int heads : {1, 2, 4}) {
    const auto r = transposed_attention(random_param({5, 8}, rng, 3.0), random_param({11, 8}, rng, 3.0),
                                        random_param({11, 8}, rng), heads);
    ASSERT_EQ(r.weights.dim(0), 5 * heads);
    for (int i = 0; i < r.weights.dim(0); ++i) {
      double s = 0;
      for (int j = 0; j < 11; ++j) s += r.weights.value()[static_cast<std::size_t>(i * 11 + j)];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (int h = 0; h < heads; ++h)
      for (int j = 0; j < 11; ++j) {
        double s = 0;
        for (int i = 0; i < 5; ++i) s += r.assignment.value()[static_cast<std::size_t>((h * 5 + i) * 11 + j)];
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
}

TEST(TransposedAttention, ZeroPixelsIsAnError) {
  EXPECT_THROW(transposed_attention(Var::constant({2, 2}, 1.0), Var::constant({0, 2}, std::vector<double>{}),
                                    Var::constant({0, 2}, std::vector<double>{})),
               std::invalid_argument);
}

TEST(Attention, RowsSumToOneAndMatchDenseSoftmax) {
  Rng rng(25);
  const auto q = random_param({4, 3}, rng), k = random_param({5, 3}, rng), v = random_param({5, 2}, rng);
  const auto r = attention(q, k, v);
  const Mat qm = to_mat(q), km = to_mat(k), vm = to_mat(v);
  for (int i = 0; i < 4; ++i) {
    std::vector<double> w(5);
    double z = 0;
    for (int j = 0; j < 5; ++j) {
      double s = 0;
      for (int d = 0; d < 3; ++d) s += qm[i][d] * km[j][d];
      w[j] = std::exp(s / std::sqrt(3.0));
      z += w[j];
    }
    for (int d = 0; d < 2; ++d) {
      double o = 0;
      for (int j = 0; j < 5; ++j) o += w[j] / z * vm[j][d];
      EXPECT_NEAR(r.output.value()[static_cast<std::size_t>(i * 2 + d)], o, 1e-12);
    }
  }
}

TEST(Discretizer, MatchesStraightLineReference) {
  Rng rng(31);
  nn::ParamStore store;
  const Discretizer disc(store, "d", 3, 4, 1, rng);
  perturb_all(store, 32);
  const auto pyramid = toy_pyramid(rng, 3);
  const TokenSet tokens{Var::constant({2, 4}, random_values(8, rng))};
  const auto step = disc(pyramid, tokens);

  auto p = [&](const std::string& n) { return store.find("d." + n); };
  const Mat t = to_mat(tokens.tokens);
  const Mat q = affine(layer_norm(t, p("norm_in.gamma"), p("norm_in.beta")), p("to_q.weight"), p("to_q.bias"));
  Mat vr = t;
  for (int i = 0; i < 3; ++i) {
    const std::string l = std::to_string(i + 1);
    const Mat rows = level_rows(pyramid.levels[static_cast<std::size_t>(i)]);
    const Mat u = dense_transposed(q, affine(rows, p("to_k" + l + ".weight"), p("to_k" + l + ".bias")),
                                   affine(rows, p("to_v" + l + ".weight"), p("to_v" + l + ".bias")));
    for (std::size_t a = 0; a < vr.size(); ++a)
      for (std::size_t b = 0; b < vr[a].size(); ++b) vr[a][b] += u[a][b] / 3.0;
  }
  Mat hidden = affine(layer_norm(vr, p("norm_mlp.gamma"), p("norm_mlp.beta")), p("mlp.fc1.weight"), p("mlp.fc1.bias"));
  for (auto& r : hidden)
    for (auto& x : r) x = gelu(x);
  const Mat mlp = affine(hidden, p("mlp.fc2.weight"), p("mlp.fc2.bias"));
  for (std::size_t a = 0; a < vr.size(); ++a)
    for (std::size_t b = 0; b < vr[a].size(); ++b) vr[a][b] += mlp[a][b];

  EXPECT_LT(max_abs_diff(step.tokens.tokens.value(), flat(vr)), 1e-12);
}

TEST(Discretizer, ZeroValueProjectionsAndZeroMlpLeaveTokensUnchanged) {
  Rng rng(33);
  nn::ParamStore store;
  const Discretizer disc(store, "d", 3, 4, 1, rng);
  for (const char* l : {"1", "2", "3"}) {
    fill(store, std::string("d.to_v") + l + ".weight", 0.0);
    fill(store, std::string("d.to_v") + l + ".bias", 0.0);
  }
  fill(store, "d.mlp.fc2.weight", 0.0);
  fill(store, "d.mlp.fc2.bias", 0.0);
  const TokenSet tokens{Var::constant({3, 4}, random_values(12, rng))};
  EXPECT_EQ(disc(toy_pyramid(rng, 3), tokens).tokens.tokens.value(), tokens.tokens.value());
}

TEST(Discretizer, EqualPerScaleUpdatesAddOnce) {
  Rng rng(34);
  nn::ParamStore store;
  const Discretizer disc(store, "d", 3, 4, 1, rng);
  for (const char* kind : {"to_k", "to_v"})
    for (const char* part : {".weight", ".bias"}) {
      const auto src = store.find(std::string("d.") + kind + "1" + part).value();
      for (const char* l : {"2", "3"}) store.find(std::string("d.") + kind + l + part).mutable_value() = src;
    }
  fill(store, "d.mlp.fc2.weight", 0.0);
  fill(store, "d.mlp.fc2.bias", 0.0);
  const auto level = Var::constant({3, 2, 2}, random_values(12, rng));
  backbone::FeaturePyramid pyr;
  pyr.levels = {level, level, level};
  const TokenSet tokens{Var::constant({2, 4}, random_values(8, rng))};

  const Var q = nn::Linear{store.find("d.to_q.weight"), store.find("d.to_q.bias")}(
      nn::LayerNorm{store.find("d.norm_in.gamma"), store.find("d.norm_in.beta")}(tokens.tokens));
  const Var rows = ag::image_to_rows(level);
  const Var k = nn::Linear{store.find("d.to_k1.weight"), store.find("d.to_k1.bias")}(rows);
  const Var v = nn::Linear{store.find("d.to_v1.weight"), store.find("d.to_v1.bias")}(rows);
  const auto u = transposed_attention(q, k, v).output;

  const auto out = disc(pyr, tokens).tokens.tokens.value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], tokens.tokens.value()[i] + u.value()[i], 1e-12);
}

TEST(Discretizer, WrongPyramidShapeIsAnError) {
  Rng rng(35);
  nn::ParamStore store;
  const Discretizer disc(store, "d", 3, 4, 1, rng);
  auto pyr = toy_pyramid(rng, 3);
  pyr.levels[1] = Var::constant({5, 1, 2}, 0.0);
  EXPECT_THROW(disc(pyr, {Var::constant({2, 4}, 0.0)}), std::invalid_argument);
}

namespace {

struct FusionFixture {
  nn::ParamStore store;
  ScoreFusion fusion;
  FusionFixture(int dim, ScoreGranularity g = ScoreGranularity::element, FusionStyle style = FusionStyle::score) {
    Rng rng(41);
    fusion = ScoreFusion(store, "f", dim, 1, style, g, rng);
  }
};

}  // namespace

TEST(ScoreFusion, EqualLogitsGiveHalfAndAverage) {
  FusionFixture fx(6);
  fx.store.find("f.score_events.weight").mutable_value() = fx.store.find("f.score_image.weight").value();
  fx.store.find("f.score_events.bias").mutable_value() = fx.store.find("f.score_image.bias").value();
  Rng rng(42);
  const auto r = fx.fusion({Var::constant({3, 6}, random_values(18, rng))}, {Var::constant({3, 6}, random_values(18, rng))});
  for (std::size_t i = 0; i < 18; ++i) {
    EXPECT_EQ(r.scores.image.value()[i], 0.5);
    EXPECT_EQ(r.scores.events.value()[i], 0.5);
    EXPECT_NEAR(r.fused.tokens.value()[i],
                0.5 * (r.enhanced_image.tokens.value()[i] + r.enhanced_events.tokens.value()[i]), 1e-15);
  }
}

TEST(ScoreFusion, ScoresSumToOneAndFusedIsConvex) {
  for (auto g : {ScoreGranularity::element, ScoreGranularity::token}) {
    FusionFixture fx(8, g);
    perturb_all(fx.store, 43);
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
      const auto r = fx.fusion({Var::constant({5, 8}, random_values(40, rng, 2.0))},
                               {Var::constant({5, 8}, random_values(40, rng, 2.0))});
      for (std::size_t i = 0; i < 40; ++i) {
        const double si = r.scores.image.value()[i], se = r.scores.events.value()[i];
        EXPECT_NEAR(si + se, 1.0, 1e-12);
        EXPECT_GE(si, 0.0);
        EXPECT_LE(si, 1.0);
        const double a = r.enhanced_image.tokens.value()[i], b = r.enhanced_events.tokens.value()[i];
        EXPECT_GE(r.fused.tokens.value()[i], std::min(a, b) - 1e-12);
        EXPECT_LE(r.fused.tokens.value()[i], std::max(a, b) + 1e-12);
      }
      if (g == ScoreGranularity::token)
        for (int n = 0; n < 5; ++n)
          for (int c = 1; c < 8; ++c)
            EXPECT_EQ(r.scores.image.value()[static_cast<std::size_t>(n * 8 + c)], r.scores.image.value()[static_cast<std::size_t>(n * 8)]);
    }
  }
}

TEST(ScoreFusion, SaturatedImageHeadSelectsEnhancedImageTokens) {
  FusionFixture fx(6);
  fill(fx.store, "f.score_image.bias", 40.0);
  Rng rng(45);
  const auto r = fx.fusion({Var::constant({4, 6}, random_values(24, rng))}, {Var::constant({4, 6}, random_values(24, rng))});
  EXPECT_LT(max_abs_diff(r.fused.tokens.value(), r.enhanced_image.tokens.value()), 1e-4);
}

TEST(ScoreFusion, PermutationEquivariantOverTokens) {
  FusionFixture fx(6);
  perturb_all(fx.store, 46, 0.3);
  Rng rng(47);
  const auto a = random_values(24, rng), b = random_values(24, rng);
  const std::vector<int> perm = {2, 0, 3, 1};
  auto permute = [&](const std::vector<double>& x) {
    std::vector<double> y(x.size());
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 6; ++c) y[static_cast<std::size_t>(i * 6 + c)] = x[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * 6 + c)];
    return y;
  };
  const auto r = fx.fusion({Var::constant({4, 6}, a)}, {Var::constant({4, 6}, b)});
  const auto rp = fx.fusion({Var::constant({4, 6}, permute(a))}, {Var::constant({4, 6}, permute(b))});
  EXPECT_LT(max_abs_diff(rp.fused.tokens.value(), permute(r.fused.tokens.value())), 1e-12);
  EXPECT_LT(max_abs_diff(rp.scores.image.value(), permute(r.scores.image.value())), 1e-12);
}

TEST(ScoreFusion, GradientReachesBothModalities) {
  FusionFixture fx(6);
  Rng rng(48);
  auto img = random_param({4, 6}, rng), evt = random_param({4, 6}, rng);
  testutil::probe(fx.fusion({img}, {evt}).fused.tokens).backward();
  auto norm = [](const std::vector<double>& g) {
    double s = 0;
    for (double x : g) s += x * x;
    return s;
  };
  EXPECT_GT(norm(img.grad()), 1e-8);
  EXPECT_GT(norm(evt.grad()), 1e-8);
}

TEST(ScoreFusion, GradientMatchesFiniteDifferences) {
  FusionFixture fx(4);
  perturb_all(fx.store, 49, 0.3);
  Rng rng(50);
  auto img = random_param({3, 4}, rng), evt = random_param({3, 4}, rng);
  const double err = testutil::max_grad_error([&] { return testutil::probe(fx.fusion({img}, {evt}).fused.tokens); },
                                              {img, evt});
  EXPECT_LT(err, 1e-6);
}

TEST(ScoreFusion, ShapeMismatchIsAnError) {
  FusionFixture fx(4);
  EXPECT_THROW(fx.fusion({Var::constant({3, 4}, 0.0)}, {Var::constant({2, 4}, 0.0)}), std::invalid_argument);
}

TEST(ScoreFusion, AddStyleHasHalfScores) {
  FusionFixture fx(4, ScoreGranularity::element, FusionStyle::add);
  Rng rng(51);
  const auto r = fx.fusion({Var::constant({2, 4}, random_values(8, rng))}, {Var::constant({2, 4}, random_values(8, rng))});
  for (double s : r.scores.image.value()) EXPECT_EQ(s, 0.5);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_DOUBLE_EQ(r.fused.tokens.value()[i], r.enhanced_image.tokens.value()[i] + r.enhanced_events.tokens.value()[i]);
}

TEST(ComplementaryTokens, OneScorePairPerIteration) {
  ModelConfig cfg;
  cfg.feature_channels = 3;
  cfg.token_count = 2;
  cfg.token_dim = 4;
  nn::ParamStore store;
  Rng rng(52);
  const ComplementaryTokens ct(store, "cvrl", cfg, rng);
  const auto out = ct(toy_pyramid(rng, 3), toy_pyramid(rng, 3), 3);
  EXPECT_EQ(out.scores.size(), 3u);
  EXPECT_EQ(out.image_weights.size(), 3u);
  EXPECT_EQ(out.tokens.count(), 2);
  EXPECT_EQ(out.tokens.dim(), 4);
  EXPECT_NE(store.find("cvrl.initial_tokens").value(), std::vector<double>(8, 0.0));
}
