#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "attention_oracle.hpp"
#include "doctest.h"
#include "test_util.hpp"
#include "vst/checkpoint.hpp"
#include "vst/errors.hpp"
#include "vst/io.hpp"
#include "vst/model.hpp"
#include "vst/ops.hpp"

using namespace vst;
using vst::testing::random_tensor;
using vst::testing::region_restricted_attention;
using vst::testing::relative_error;
using vst::testing::same_shifted_region;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Small block-level config: C = 8, two heads, window (2,2,2), two blocks in stage 0.
VstConfig block_config(bool rel_pos_bias = true) {
  VstConfig cfg;
  cfg.embed_dim = 8;
  cfg.depths = {2, 1, 1, 1};
  cfg.heads = {2, 2, 2, 2};
  cfg.window = {2, 2, 2};
  cfg.geometry = {4, 32, 32};
  cfg.use_rel_pos_bias = rel_pos_bias;
  cfg.validate();
  return cfg;
}

// Every parameter uniform in [-0.5, 0.5] so biases and tables all matter.
VstParams random_params(const VstConfig& cfg, std::uint64_t seed, bool requires_grad = false) {
  CounterRng rng{seed};
  VstParams p;
  for (auto& [name, shape] : parameter_shapes(cfg)) p.set(name, random_tensor(shape, rng, requires_grad, -0.5, 0.5));
  return p;
}

Extent3 unflatten(std::size_t i, const Extent3& e) { return {i / (e[1] * e[2]), (i / e[2]) % e[1], i % e[2]}; }

}  // namespace

TEST_SUITE("patch embedding") {
  TEST_CASE("full-resolution clip maps to a 16x56x56 token grid") {
    VstParams p;
    CounterRng rng{1};
    p.set("patch_embed.proj.weight", random_tensor({kPatchFeatures, 128}, rng));
    p.set("patch_embed.proj.bias", Tensor::zeros({128}));
    p.set("patch_embed.norm.weight", Tensor::full({128}, 1.0));
    p.set("patch_embed.norm.bias", Tensor::zeros({128}));
    auto cfg = make_config(ModelSize::base, 10, {32, 224, 224});
    auto grid = patch_partition_embed(Tensor::zeros({1, 32, 224, 224, 3}), cfg, p);
    CHECK(grid.features.shape() == Shape{1, 16, 56, 56, 128});
  }

  TEST_CASE("a single 2x4x4 clip becomes one token: LN(W x + b) in (dt, dh, dw, c) order") {
    CounterRng rng{2};
    auto clip = random_tensor({1, 2, 4, 4, 3}, rng);
    const std::size_t c = 6;
    VstParams p;
    p.set("patch_embed.proj.weight", random_tensor({kPatchFeatures, c}, rng));
    p.set("patch_embed.proj.bias", random_tensor({c}, rng));
    p.set("patch_embed.norm.weight", random_tensor({c}, rng, false, 0.5, 1.5));
    p.set("patch_embed.norm.bias", random_tensor({c}, rng));
    VstConfig cfg;
    auto grid = patch_partition_embed(clip, cfg, p);
    REQUIRE(grid.features.shape() == Shape{1, 1, 1, 1, c});

    std::vector<double> flat;
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w)
          for (std::size_t ch = 0; ch < 3; ++ch) flat.push_back(clip[((t * 4 + h) * 4 + w) * 3 + ch]);
    std::vector<double> y(c);
    const auto& W = p.at("patch_embed.proj.weight");
    for (std::size_t o = 0; o < c; ++o) {
      y[o] = p.at("patch_embed.proj.bias")[o];
      for (std::size_t i = 0; i < kPatchFeatures; ++i) y[o] += flat[i] * W[i * c + o];
    }
    double mu = 0.0, var = 0.0;
    for (double v : y) mu += v / c;
    for (double v : y) var += (v - mu) * (v - mu) / c;
    for (std::size_t o = 0; o < c; ++o) {
      const double expect = (y[o] - mu) / std::sqrt(var + 1e-5) * p.at("patch_embed.norm.weight")[o] +
                            p.at("patch_embed.norm.bias")[o];
      CHECK(grid.features[o] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  TEST_CASE("identity-prefix projection reproduces the flattened blocks") {
    CounterRng rng{3};
    auto clip = random_tensor({2, 4, 8, 12, 3}, rng);
    const std::size_t c = 16;
    std::vector<double> eye(kPatchFeatures * c, 0.0);
    for (std::size_t i = 0; i < c; ++i) eye[i * c + i] = 1.0;
    auto tokens = linear(patch_partition(clip), Tensor({kPatchFeatures, c}, eye));
    REQUIRE(tokens.shape() == Shape{2, 2, 2, 3, c});
    const Shape& s = clip.shape();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t w = 0; w < 3; ++w)
            for (std::size_t f = 0; f < c; ++f) {
              const std::size_t dt = f / 48, dh = (f / 12) % 4, dw = (f / 3) % 4, ch = f % 3;
              const double raw =
                  clip[(((b * s[1] + 2 * t + dt) * s[2] + 4 * h + dh) * s[3] + 4 * w + dw) * 3 + ch];
              CHECK(tokens[(((b * 2 + t) * 2 + h) * 3 + w) * c + f] == raw);
            }
  }

  TEST_CASE("indivisible clips are rejected with a geometry error") {
    CHECK_THROWS_AS(patch_partition(Tensor::zeros({1, 3, 8, 8, 3})), GeometryError);
    CHECK_THROWS_AS(patch_partition(Tensor::zeros({1, 2, 8, 6, 3})), GeometryError);
    CHECK_THROWS_AS(make_config(ModelSize::small, 2, {31, 224, 224}), GeometryError);
  }
}

TEST_SUITE("windows") {
  TEST_CASE("window partition counts and token order") {
    CounterRng rng{4};
    auto grid = random_tensor({1, 8, 8, 8, 3}, rng);
    auto win = window_partition(grid, {2, 4, 4});
    REQUIRE(win.shape() == Shape{16, 32, 3});
    // Window 0 holds t<2, h<4, w<4 in raster order.
    for (std::size_t i = 0; i < 32; ++i) {
      const auto [t, h, w] = unflatten(i, {2, 4, 4});
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(win[i * 3 + ch] == grid[((t * 8 + h) * 8 + w) * 3 + ch]);
    }
    CHECK(window_partition(grid, {8, 8, 8}).shape() == Shape{1, 512, 3});
    CHECK_THROWS_AS(window_partition(grid, {3, 4, 4}), GeometryError);
  }

  TEST_CASE("window reverse inverts partition") {
    CounterRng rng{5};
    for (int trial = 0; trial < 10; ++trial) {
      const Extent3 w{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
      const Extent3 e{w[0] * (1 + rng.below(3)), w[1] * (1 + rng.below(3)), w[2] * (1 + rng.below(3))};
      const std::size_t b = 1 + rng.below(2);
      auto grid = random_tensor({b, e[0], e[1], e[2], 2}, rng);
      CHECK(vec(window_reverse(window_partition(grid, w), b, e, w)) == vec(grid));
    }
  }

  TEST_CASE("cyclic shift") {
    CounterRng rng{6};
    auto grid = random_tensor({2, 4, 6, 6, 3}, rng);
    CHECK(vec(cyclic_shift(grid, {0, 0, 0}, 1)) == vec(grid));
    CHECK(vec(cyclic_shift(cyclic_shift(grid, {1, 3, 2}, -1), {1, 3, 2}, 1)) == vec(grid));

    auto line = Tensor({1, 1, 1, 4, 1}, {1, 2, 3, 4});  // [a,b,c,d]
    CHECK(vec(cyclic_shift(line, {0, 0, 1}, 1)) == std::vector<double>{4, 1, 2, 3});
    CHECK(vec(cyclic_shift(line, {0, 0, 1}, -1)) == std::vector<double>{2, 3, 4, 1});
    CHECK_THROWS_AS(cyclic_shift(line, {0, 0, 1}, 0), ContractError);
  }

  TEST_CASE("window plan clamps oversized windows and drops their shift") {
    auto plan = plan_windows({2, 7, 7}, {8, 7, 7}, true);
    CHECK(plan.window == Extent3{2, 7, 7});
    CHECK(plan.shift == Extent3{0, 0, 0});
    CHECK_FALSE(plan.needs_mask({2, 7, 7}));

    plan = plan_windows({16, 56, 56}, {8, 7, 7}, true);
    CHECK(plan.window == Extent3{8, 7, 7});
    CHECK(plan.shift == Extent3{4, 3, 3});
    CHECK(plan.window_count() == 2 * 8 * 8);

    plan = plan_windows({3, 5, 4}, {2, 2, 2}, false);
    CHECK(plan.padded == Extent3{4, 6, 4});
    CHECK(plan.needs_mask({3, 5, 4}));
  }
}

TEST_SUITE("attention mask") {
  TEST_CASE("zero shift on an exact grid masks nothing") {
    auto m = attention_mask({4, 4, 4}, {2, 2, 2}, {0, 0, 0});
    CHECK(m.shape() == Shape{8, 8, 8});
    for (double v : m.values()) CHECK(v == 0.0);
  }

  TEST_CASE("four tokens, window two, shift one: the wrapped window masks exactly its two cross pairs") {
    auto m = attention_mask({1, 1, 4}, {1, 1, 2}, {0, 0, 1});
    REQUIRE(m.shape() == Shape{2, 2, 2});
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(vec(m) == std::vector<double>{0, 0, 0, 0, 0, -inf, -inf, 0});
  }

  TEST_CASE("mask matches the wrap-consistency oracle, including padding") {
    CounterRng rng{7};
    for (int trial = 0; trial < 40; ++trial) {
      Extent3 grid{}, window{}, shift{};
      for (std::size_t a = 0; a < 3; ++a) {
        window[a] = 1 + rng.below(3);
        grid[a] = window[a] + 1 + rng.below(5);
        shift[a] = window[a] / 2;
      }
      auto m = attention_mask(grid, window, shift);
      Extent3 padded{};
      for (std::size_t a = 0; a < 3; ++a) padded[a] = (grid[a] + window[a] - 1) / window[a] * window[a];
      const std::size_t n = window[0] * window[1] * window[2];
      const Extent3 counts{padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
      REQUIRE(m.extent(0) == counts[0] * counts[1] * counts[2]);

      // Original coordinates of the token at slot i of shifted window `win`.
      auto origin = [&](std::size_t win, std::size_t i) {
        const auto wi = unflatten(win, counts), ti = unflatten(i, window);
        Extent3 o{};
        for (std::size_t a = 0; a < 3; ++a) o[a] = (wi[a] * window[a] + ti[a] + shift[a]) % padded[a];
        return o;
      };
      auto is_pad = [&](const Extent3& o) { return o[0] >= grid[0] || o[1] >= grid[1] || o[2] >= grid[2]; };
      std::size_t mismatches = 0;
      for (std::size_t win = 0; win < m.extent(0); ++win)
        for (std::size_t q = 0; q < n; ++q)
          for (std::size_t k = 0; k < n; ++k) {
            const auto oq = origin(win, q), ok = origin(win, k);
            const bool visible = is_pad(oq) == is_pad(ok) && same_shifted_region(padded, window, shift, oq, ok);
            const double v = m[(win * n + q) * n + k];
            if (visible != (v == 0.0)) ++mismatches;
            if (!visible && !(std::isinf(v) && v < 0)) ++mismatches;
          }
      CHECK_MESSAGE(mismatches == 0, "grid ", to_string(grid), " window ", to_string(window));
    }
  }

  TEST_CASE("masked positions receive exactly zero weight after softmax") {
    auto m = attention_mask({4, 4, 4}, {2, 2, 2}, {1, 1, 1});
    CounterRng rng{8};
    auto logits = add(random_tensor(m.shape(), rng, false, -3, 3), m);
    auto w = softmax(logits, -1);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (std::isinf(m[i])) {
        ++masked;
        CHECK(w[i] == 0.0);
      }
    }
    CHECK(masked > 0);
  }
}

TEST_SUITE("window attention") {
  TEST_CASE("shifted window attention equals region-restricted dense attention on 4x4x4") {
    for (bool bias : {false, true}) {
      auto cfg = block_config(bias);
      auto params = random_params(cfg, 9);
      CounterRng rng{10};
      auto grid = random_tensor({1, 4, 4, 4, 8}, rng);
      const auto prefix = block_prefix(0, 1) + "attn.";
      auto got = window_attention(grid, params, prefix, cfg, 2, true);
      auto want = region_restricted_attention(grid, params, prefix, cfg, 2, true);
      CHECK(max_abs_diff(vec(got), want) < 1e-10);

      got = window_attention(grid, params, prefix, cfg, 2, false);
      want = region_restricted_attention(grid, params, prefix, cfg, 2, false);
      CHECK(max_abs_diff(vec(got), want) < 1e-10);
    }
  }

  TEST_CASE("padded and clamped grids match the oracle") {
    auto cfg = block_config();
    cfg.window = {2, 3, 3};
    cfg.heads = {2, 2, 2, 2};
    auto params = random_params(cfg, 11);
    CounterRng rng{12};
    for (const Extent3& e : {Extent3{3, 5, 4}, Extent3{1, 7, 5}, Extent3{2, 3, 3}, Extent3{5, 2, 8}}) {
      auto grid = random_tensor({1, e[0], e[1], e[2], 8}, rng);
      for (bool shifted : {false, true}) {
        auto got = window_attention(grid, params, block_prefix(0, 0) + "attn.", cfg, 2, shifted);
        auto want = region_restricted_attention(grid, params, block_prefix(0, 0) + "attn.", cfg, 2, shifted);
        CHECK_MESSAGE(max_abs_diff(vec(got), want) < 1e-10, "grid ", to_string(e), " shifted ", shifted);
      }
    }
  }

  TEST_CASE("a window covering the whole grid is dense attention") {
    auto cfg = block_config(false);
    auto params = random_params(cfg, 13);
    CounterRng rng{14};
    auto grid = random_tensor({1, 2, 2, 2, 8}, rng);
    const auto prefix = block_prefix(0, 0) + "attn.";
    auto got = vec(window_attention(grid, params, prefix, cfg, 2, true));

    // Plain softmax(Q K^T / sqrt(d)) V over all 8 tokens, per head.
    const std::size_t n = 8, c = 8, hd = 4;
    auto qkv = vec(linear(grid, params.at(prefix + "qkv.weight"), params.at(prefix + "qkv.bias")));
    std::vector<double> merged(n * c, 0.0);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> a(n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < hd; ++e) dot += qkv[i * 24 + h * hd + e] * qkv[j * 24 + 8 + h * hd + e];
          total += (a[j] = std::exp(dot / 2.0));
        }
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t e = 0; e < hd; ++e) merged[i * c + h * hd + e] += a[j] / total * qkv[j * 24 + 16 + h * hd + e];
      }
    auto want = vec(linear(Tensor({1, n, c}, merged), params.at(prefix + "proj.weight"), params.at(prefix + "proj.bias")));
    CHECK(max_abs_diff(got, want) < 1e-10);
  }

  TEST_CASE("relative position index covers the table symmetrically") {
    auto idx = relative_position_index({2, 2, 2}, {2, 2, 2});
    REQUIRE(idx.size() == 64);
    CHECK(idx[0] == 13);  // zero offset sits at the table centre
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(idx[i * 8 + j] + idx[j * 8 + i] == 26);
  }
}

TEST_SUITE("blocks") {
  TEST_CASE("zeroed output projections make a block the identity") {
    auto cfg = block_config();
    auto params = random_params(cfg, 15);
    const auto pre = block_prefix(0, 1);
    for (auto name : {"attn.proj.weight", "attn.proj.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
      params.set(pre + name, Tensor::zeros(params.at(pre + name).shape()));
    }
    CounterRng rng{16};
    auto x = random_tensor({2, 4, 4, 4, 8}, rng);
    CHECK(vec(wmsa_block({x}, params, pre, cfg, 2, true).features) == vec(x));
  }

  TEST_CASE("a regular then shifted block carries a corner token across window boundaries") {
    auto cfg = block_config();
    auto params = random_params(cfg, 17);
    CounterRng rng{18};
    auto input = random_tensor({1, 4, 4, 4, 8}, rng);

    // d(sum of token (2,2,2)) / d(token (0,0,0)).
    auto corner_grad = [&](bool second_shifted) {
      auto x = input.detach(true);
      auto y = wmsa_block({x}, params, block_prefix(0, 0), cfg, 2, false).features;
      y = wmsa_block({y}, params, block_prefix(0, 1), cfg, 2, second_shifted).features;
      const std::size_t far = ((2 * 4 + 2) * 4 + 2) * 8;
      backward(sum(slice(reshape(y, {64 * 8}), 0, far, far + 8)));
      auto g = x.grad();
      double norm = 0.0;
      for (std::size_t ch = 0; ch < 8; ++ch) norm += std::abs(g[ch]);
      return norm;
    };
    CHECK(corner_grad(false) == 0.0);
    CHECK(corner_grad(true) > 1e-6);
  }

  TEST_CASE("stochastic depth only acts in training mode") {
    auto cfg = block_config();
    auto params = random_params(cfg, 19);
    CounterRng rng{20};
    TokenGrid x{random_tensor({8, 4, 4, 4, 8}, rng)};
    auto eval = vec(wmsa_block(x, params, block_prefix(0, 0), cfg, 2, false, 0.5).features);
    CHECK(eval == vec(wmsa_block(x, params, block_prefix(0, 0), cfg, 2, false, 0.0).features));
    ForwardOptions train{true, 3};
    auto a = vec(wmsa_block(x, params, block_prefix(0, 0), cfg, 2, false, 0.5, train).features);
    auto b = vec(wmsa_block(x, params, block_prefix(0, 0), cfg, 2, false, 0.5, train).features);
    CHECK(a == b);
    CHECK(a != eval);
  }

  TEST_CASE("patch merge concatenates 2x2 neighbours, normalizes and halves") {
    auto cfg = block_config();
    auto params = random_params(cfg, 21);
    const std::string pre = "layers.0.downsample.";
    CounterRng rng{22};
    auto x = random_tensor({1, 2, 4, 6, 8}, rng);
    auto y = patch_merge({x}, params, pre);
    REQUIRE(y.features.shape() == Shape{1, 2, 2, 3, 16});

    const auto& g = params.at(pre + "norm.weight");
    const auto& bn = params.at(pre + "norm.bias");
    const auto& w = params.at(pre + "reduction.weight");
    double worst = 0.0;
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          std::vector<double> cat;
          for (auto [dh, dw] : {std::pair{0, 0}, {1, 0}, {0, 1}, {1, 1}})
            for (std::size_t ch = 0; ch < 8; ++ch) cat.push_back(x[((t * 4 + 2 * i + dh) * 6 + 2 * j + dw) * 8 + ch]);
          double mu = 0.0, var = 0.0;
          for (double v : cat) mu += v / 32;
          for (double v : cat) var += (v - mu) * (v - mu) / 32;
          for (std::size_t k = 0; k < 32; ++k) cat[k] = (cat[k] - mu) / std::sqrt(var + 1e-5) * g[k] + bn[k];
          for (std::size_t o = 0; o < 16; ++o) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 32; ++k) acc += cat[k] * w[k * 16 + o];
            worst = std::max(worst, std::abs(acc - y.features[((t * 2 + i) * 3 + j) * 16 + o]));
          }
        }
    CHECK(worst < 1e-12);
    CHECK_THROWS_AS(patch_merge({random_tensor({1, 2, 3, 4, 8}, rng)}, params, pre), GeometryError);
  }
}

TEST_SUITE("model") {
  TEST_CASE("size presets") {
    const Geometry g{32, 224, 224};
    auto small = make_config(ModelSize::small, 60, g);
    auto base = make_config(ModelSize::base, 60, g);
    auto large = make_config(ModelSize::large, 60, g);
    CHECK(small.embed_dim == 96);
    CHECK(base.embed_dim == 128);
    CHECK(large.embed_dim == 192);
    CHECK(small.heads == std::array<std::size_t, 4>{3, 6, 12, 24});
    CHECK(base.heads == std::array<std::size_t, 4>{4, 8, 16, 32});
    CHECK(large.heads == std::array<std::size_t, 4>{6, 12, 24, 48});
    CHECK(base.depths == std::array<std::size_t, 4>{2, 2, 18, 2});
    CHECK(base.window == Extent3{8, 7, 7});
    CHECK(parse_model_size("large") == ModelSize::large);
    CHECK_THROWS_AS(parse_model_size("huge"), ContractError);
  }

  TEST_CASE("stage extents and channels at full resolution") {
    auto cfg = make_config(ModelSize::small, 60, {32, 224, 224});
    CHECK(cfg.stage_tokens(0) == Extent3{16, 56, 56});
    CHECK(cfg.stage_tokens(1) == Extent3{16, 28, 28});
    CHECK(cfg.stage_tokens(2) == Extent3{16, 14, 14});
    CHECK(cfg.stage_tokens(3) == Extent3{16, 7, 7});
    CHECK(cfg.stage_channels(3) == 8 * 96);
    CHECK(parameter_shapes(cfg).at("head.weight") == Shape{768, 60});

    // Run the embed and the three merges on real tensors.
    VstParams p;
    for (auto& [name, shape] : parameter_shapes(cfg)) {
      if (name.starts_with("patch_embed") || name.find("downsample") != std::string::npos) {
        p.set(name, Tensor::full(shape, name.find("norm") != std::string::npos ? 1.0 : 0.01));
      }
    }
    auto grid = patch_partition_embed(Tensor::zeros({1, 32, 224, 224, 3}), cfg, p);
    for (std::size_t s = 0; s < 3; ++s) {
      auto e = cfg.stage_tokens(s);
      CHECK(grid.features.shape() == Shape{1, e[0], e[1], e[2], cfg.stage_channels(s)});
      grid = patch_merge(grid, p, "layers." + std::to_string(s) + ".downsample.");
    }
    CHECK(grid.features.shape() == Shape{1, 16, 7, 7, 768});
  }

  TEST_CASE("toy forward: shape, determinism, batch independence") {
    auto cfg = make_toy_config(ModelSize::base, 5, {8, 32, 32});
    auto params = init_params(cfg, 1).detached(false);
    CounterRng rng{23};
    auto clips = random_tensor({3, 8, 32, 32, 3}, rng, false, 0.0, 1.0);
    auto a = forward(clips, cfg, params);
    auto b = forward(clips, cfg, params);
    REQUIRE(a.shape() == Shape{3, 5});
    CHECK(std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0);
    for (double v : a.values()) CHECK(std::isfinite(v));
    auto one = forward(slice(clips, 0, 1, 2), cfg, params);
    for (std::size_t k = 0; k < 5; ++k) CHECK(one[k] == doctest::Approx(a[5 + k]).epsilon(1e-12));

    CHECK_THROWS_AS(forward(Tensor::zeros({1, 8, 32, 16, 3}), cfg, params), GeometryError);
    CHECK(init_params(cfg, 1).parameter_count() == init_params(cfg, 2).parameter_count());
    CHECK(vec(init_params(cfg, 1).at("head.weight")) != vec(init_params(cfg, 2).at("head.weight")));
  }

  TEST_CASE("toy loss gradients agree with finite differences") {
    auto cfg = make_toy_config(ModelSize::small, 4, {4, 32, 32});
    auto params = random_params(cfg, 24, true);
    CounterRng rng{25};
    auto input = random_tensor({2, 4, 32, 32, 3}, rng, true, 0.0, 1.0);
    const std::vector<std::size_t> targets{1, 3};
    auto loss_of = [&](const Tensor& x, const VstParams& p) {
      return softmax_cross_entropy(forward(x, cfg, p), targets);
    };
    backward(loss_of(input, params));
    const double h = 1e-5;

    auto frozen = params.detached(false);
    double worst_input = 0.0;
    const auto gx = input.grad();
    for (int probe = 0; probe < 10; ++probe) {
      const std::size_t j = rng.below(input.size());
      auto eval = [&](double d) {
        auto v = vec(input);
        v[j] += d;
        return loss_of(Tensor(input.shape(), v), frozen).item();
      };
      worst_input = std::max(worst_input, relative_error(gx[j], (eval(h) - eval(-h)) / (2 * h)));
    }
    CHECK(worst_input < 1e-3);

    std::vector<std::string> names;
    for (const auto& [name, _] : params.tensors()) names.push_back(name);
    double worst_param = 0.0;
    auto x0 = input.detach(false);
    for (int probe = 0; probe < 20; ++probe) {
      const auto& name = names[rng.below(names.size())];
      const auto& t = params.at(name);
      const std::size_t j = rng.below(t.size());
      auto eval = [&](double d) {
        auto p = frozen;
        auto v = vec(t);
        v[j] += d;
        p.set(name, Tensor(t.shape(), v));
        return loss_of(x0, p).item();
      };
      const double err = relative_error(t.grad()[j], (eval(h) - eval(-h)) / (2 * h));
      CHECK_MESSAGE(err < 1e-3, name, "[", j, "]");
      worst_param = std::max(worst_param, err);
    }
    MESSAGE("worst relative error: input ", worst_input, ", parameters ", worst_param);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit-exact at f32 and keeps config and metadata") {
    auto cfg = make_toy_config(ModelSize::large, 7, {8, 32, 32});
    Checkpoint ckpt{cfg, init_params(cfg, 4), {{"size", "large"}, {"modality", "depth"}}};
    std::stringstream ss;
    write_checkpoint(ss, ckpt);
    auto back = read_checkpoint(ss);
    CHECK(back.config == cfg);
    CHECK(back.meta == ckpt.meta);
    REQUIRE(back.params.size() == ckpt.params.size());
    for (const auto& [name, t] : ckpt.params.tensors()) {
      const auto& r = back.params.at(name);
      CHECK(r.shape() == t.shape());
      CHECK(vec(r) == vec(round_to_f32(t)));
      CHECK_FALSE(r.requires_grad());
    }
  }

  TEST_CASE("header records the width, so base is distinguishable from small") {
    auto text = encode_config_header(make_config(ModelSize::base, 10, {32, 224, 224}), {});
    CHECK(text.find("embed_dim=128\n") != std::string::npos);
    CHECK(decode_config_header(text) == make_config(ModelSize::base, 10, {32, 224, 224}));
  }

  TEST_CASE("corrupt checkpoints raise format errors") {
    auto cfg = make_toy_config(ModelSize::small, 3, {8, 32, 32});
    std::stringstream ss;
    write_checkpoint(ss, {cfg, init_params(cfg, 1), {}});
    const auto bytes = ss.str();

    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
    std::stringstream bad_magic("XSTC" + bytes.substr(4));
    CHECK_THROWS_AS(read_checkpoint(bad_magic), FormatError);

    auto params = init_params(cfg, 1);
    params.tensors().erase("head.bias");
    std::stringstream missing;
    write_checkpoint(missing, {cfg, params, {}});
    CHECK_THROWS_AS(read_checkpoint(missing), FormatError);

    CHECK_THROWS_AS(load_checkpoint(std::filesystem::temp_directory_path() / "no_such_vst_checkpoint.vstc"), IoError);
  }
}
