#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "../support/gradcheck.hpp"
#include "fbd/errors.hpp"
#include "fbd/ops.hpp"
#include "fbd/training.hpp"

using namespace fbd;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.cube_size = 8;
  c.patch_size = 4;
  c.n_encoders = 1;
  c.embed_dim = 8;
  c.n_heads = 2;
  c.mlp_ratio = 2;
  c.fcn_base_features = 4;
  c.fcn_depth = 2;
  c.l_sg = 2;
  c.l_tr = 3;
  c.l_pc = 2;
  return c;
}

// Random labels with a little spatial structure so every label shows up.
TrainingCase random_case(const ModelConfig& c, std::array<std::int64_t, 3> dims, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  TrainingCase t;
  t.dims = dims;
  const auto v = t.voxels();
  t.x.resize(static_cast<std::size_t>(c.input_channels * v));
  for (auto& x : t.x) x = n(rng);
  t.y_sg.resize(static_cast<std::size_t>(v));
  t.y_pc.resize(static_cast<std::size_t>(v));
  t.y_tr.resize(static_cast<std::size_t>(c.l_tr * v));
  for (std::int64_t i = 0; i < v; ++i) {
    const auto x = i % dims[2];
    const auto y = (i / dims[2]) % dims[1];
    t.y_sg[static_cast<std::size_t>(i)] = static_cast<std::int32_t>((x / 2) % (c.l_sg + 1));
    t.y_pc[static_cast<std::size_t>(i)] = static_cast<std::int32_t>((y / 2) % (c.l_pc + 1));
    for (int k = 0; k < c.l_tr; ++k) t.y_tr[static_cast<std::size_t>(k * v + i)] = (x + y + k) % 3 == 0;
  }
  t.m_tr.assign(static_cast<std::size_t>(c.l_tr), 1);
  return t;
}

template <typename T>
Tensor<T> full(Shape s, T v) {
  return Tensor<T>(std::move(s), v);
}

// Output/target pair with one foreground label per task where every
// prediction equals its target, so every DSC is exactly 1.
struct PerfectToy {
  ModelConfig config;
  CascadeOutput<double> out;
  TrainingPatch<double> patch;
};

PerfectToy perfect_toy(std::uint8_t tract_mask) {
  PerfectToy t;
  t.config.l_sg = t.config.l_tr = t.config.l_pc = 1;
  const Shape two{2, 2, 2, 2}, one{1, 2, 2, 2};
  std::vector<double> onehot(16, 0.0);
  for (int i = 0; i < 8; ++i) onehot[static_cast<std::size_t>(i < 4 ? i : 8 + i)] = 1.0;
  t.out.y_sg = Tensor<double>(two, onehot, true);
  t.out.y_pc = Tensor<double>(two, onehot, true);
  t.out.y_tr = Tensor<double>(one, 1.0, true);
  t.patch.y_sg = Tensor<double>(two, onehot);
  t.patch.y_pc = Tensor<double>(two, onehot);
  t.patch.y_tr = full<double>(one, 1.0);
  t.patch.m_tr = {tract_mask};
  return t;
}

}  // namespace

TEST_CASE("soft dice examples") {
  const Shape s{1, 4, 4, 4};
  const auto t = full<double>(s, 1.0);
  CHECK(soft_dice(t, t).item() == doctest::Approx(1.0).epsilon(1e-12));
  const double n = 64;
  const double half = soft_dice(full<double>(s, 0.5), t).item();
  CHECK(half == doctest::Approx((n + 1e-5) / (1.5 * n + 1e-5)).epsilon(1e-14));
  CHECK(std::abs(half - 2.0 / 3.0) < 1e-6);

  std::vector<double> a(64, 0.0), b(64, 0.0);
  for (int i = 0; i < 32; ++i) a[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(32 + i)] = 1.0;
  const double disjoint = soft_dice(Tensor<double>(s, a), Tensor<double>(s, b)).item();
  CHECK(disjoint == doctest::Approx(1e-5 / (64 + 1e-5)));
  CHECK_THROWS_AS(soft_dice(full<double>({1, 2, 2, 2}, 1.0), t), ShapeError);
}

TEST_CASE("paper loss with all DSC = 1 and w = 0") {
  auto toy = perfect_toy(1);
  const Tensor<double> w({3}, 0.0, true);
  LossOptions opt;
  opt.variant = LossVariant::Paper;
  const auto r = mtl_loss(toy.out, toy.patch, w, toy.config, opt);
  CHECK(r.breakdown.total == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(std::abs(r.breakdown.total - r.breakdown.parts_sum()) < 1e-6);
}

TEST_CASE("masked tract contributes nothing to loss or w gradient") {
  auto toy = perfect_toy(0);
  Tensor<double> w({3}, 0.0, true);
  LossOptions opt;
  opt.variant = LossVariant::Paper;
  const auto r = mtl_loss(toy.out, toy.patch, w, toy.config, opt);
  CHECK(r.breakdown.total == doctest::Approx(-2.0).epsilon(1e-12));
  backward(r.total);
  CHECK(w.grad()[static_cast<std::size_t>(toy.config.w_offset(Task::Tract))] == 0.0);
  for (double g : Tensor<double>(toy.out.y_tr).grad()) CHECK(g == 0.0);
  CHECK(w.grad()[0] != 0.0);
  CHECK(r.breakdown.mean_dice(Task::Tract) != r.breakdown.mean_dice(Task::Tract));  // NaN: nothing annotated
}

TEST_CASE("single tissue label with w = ln 2 and DSC = 0.8") {
  ModelConfig c;
  c.l_sg = 1;
  c.tasks = {Task::Tissue};
  const Shape s{2, 2, 2, 2};
  std::vector<double> pred(16), target(16);
  for (int i = 0; i < 8; ++i) {
    pred[static_cast<std::size_t>(i)] = 1.0 / 3.0;
    pred[static_cast<std::size_t>(8 + i)] = 2.0 / 3.0;
    target[static_cast<std::size_t>(8 + i)] = 1.0;
  }
  CascadeOutput<double> out;
  out.y_sg = Tensor<double>(s, pred);
  TrainingPatch<double> p;
  p.y_sg = Tensor<double>(s, target);
  const Tensor<double> w({1}, std::log(2.0));
  LossOptions opt;
  opt.variant = LossVariant::Paper;
  const auto r = mtl_loss(out, p, w, c, opt);
  const double dsc = (2.0 * 8 * 2.0 / 3.0 + 1e-5) / (8 * 2.0 / 3.0 + 8 + 1e-5);
  CHECK(r.breakdown.dice_sg.at(0) == doctest::Approx(dsc).epsilon(1e-12));
  CHECK(r.breakdown.total == doctest::Approx(-0.5 * dsc + std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(r.breakdown.total - 0.2931471805599453) < 1e-6);

  opt.variant = LossVariant::Bounded;
  CHECK(mtl_loss(out, p, w, c, opt).breakdown.total == doctest::Approx(0.5 * (1 - dsc) + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("three-label toy total matches a hand computation") {
  ModelConfig c;
  c.l_sg = 2;
  c.l_tr = 3;
  c.l_pc = 1;
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_probs = [&](std::int64_t ch) {
    std::vector<double> v(static_cast<std::size_t>(ch * 27));
    for (auto& x : v) x = u(rng);
    return Tensor<double>({ch, 3, 3, 3}, v);
  };
  auto random_binary = [&](std::int64_t ch) {
    std::vector<double> v(static_cast<std::size_t>(ch * 27));
    for (auto& x : v) x = u(rng) < 0.5 ? 1.0 : 0.0;
    return Tensor<double>({ch, 3, 3, 3}, v);
  };
  CascadeOutput<double> out;
  TrainingPatch<double> p;
  out.y_sg = random_probs(3);
  out.y_tr = random_probs(3);
  out.y_pc = random_probs(2);
  p.y_sg = random_binary(3);
  p.y_tr = random_binary(3);
  p.y_pc = random_binary(2);
  p.m_tr = {1, 0, 1};
  const std::vector<double> wv{0.3, -0.2, 0.1, 0.7, -0.4, 0.25};
  const Tensor<double> w({6}, wv);

  auto dice = [](const Tensor<double>& a, const Tensor<double>& b, int ch) {
    double i = 0, sa = 0, sb = 0;
    for (int k = 0; k < 27; ++k) {
      const double x = a.data()[static_cast<std::size_t>(ch * 27 + k)], y = b.data()[static_cast<std::size_t>(ch * 27 + k)];
      i += x * y;
      sa += x;
      sb += y;
    }
    return (2 * i + 1e-5) / (sa + sb + 1e-5);
  };
  for (auto variant : {LossVariant::Paper, LossVariant::Bounded}) {
    double expect = 0;
    auto term = [&](double wi, double d, double m) {
      const double e = std::exp(-wi);
      return m * (variant == LossVariant::Paper ? -e * d : e * (1 - d)) + m * wi;
    };
    expect += term(wv[0], dice(out.y_sg, p.y_sg, 1), 1) + term(wv[1], dice(out.y_sg, p.y_sg, 2), 1);
    for (int k = 0; k < 3; ++k) expect += term(wv[static_cast<std::size_t>(2 + k)], dice(out.y_tr, p.y_tr, k), p.m_tr[static_cast<std::size_t>(k)]);
    expect += term(wv[5], dice(out.y_pc, p.y_pc, 1), 1);
    LossOptions opt;
    opt.variant = variant;
    const auto r = mtl_loss(out, p, w, c, opt);
    CHECK(std::abs(r.breakdown.total - expect) < 1e-6);
    CHECK(std::abs(r.breakdown.total - r.breakdown.parts_sum()) < 1e-6);
    CHECK(r.breakdown.terms_tr.at(1) == 0.0);
  }
  // Background terms get their own weights when enabled.
  auto cb = c;
  cb.dice_background = true;
  CHECK(cb.w_length() == 8);
  CHECK_THROWS_AS(mtl_loss(out, p, w, cb), ShapeError);
  const std::vector<double> wb{0.5, 0.3, -0.2, 0.1, 0.7, -0.4, -0.1, 0.25};
  LossOptions paper;
  paper.variant = LossVariant::Paper;
  const auto rb = mtl_loss(out, p, Tensor<double>({8}, wb), cb, paper);
  double expect_bg = 0;
  for (int k = 0; k < 3; ++k) expect_bg += -std::exp(-wb[static_cast<std::size_t>(k)]) * dice(out.y_sg, p.y_sg, k) + wb[static_cast<std::size_t>(k)];
  for (int k = 0; k < 3; ++k) {
    if (!p.m_tr[static_cast<std::size_t>(k)]) continue;
    expect_bg += -std::exp(-wb[static_cast<std::size_t>(3 + k)]) * dice(out.y_tr, p.y_tr, k) + wb[static_cast<std::size_t>(3 + k)];
  }
  for (int k = 0; k < 2; ++k) expect_bg += -std::exp(-wb[static_cast<std::size_t>(6 + k)]) * dice(out.y_pc, p.y_pc, k) + wb[static_cast<std::size_t>(6 + k)];
  CHECK(std::abs(rb.breakdown.total - expect_bg) < 1e-6);
  CHECK(rb.breakdown.mean_dice(Task::Tissue) == doctest::Approx((dice(out.y_sg, p.y_sg, 1) + dice(out.y_sg, p.y_sg, 2)) / 2));
  CHECK_THROWS_AS(mtl_loss(out, p, Tensor<double>({5}, 0.0), c), ShapeError);
  p.m_tr = {1, 1};
  CHECK_THROWS_AS(mtl_loss(out, p, w, c), ShapeError);
}

TEST_CASE("masked tracts give zero gradient to their output rows in the full model") {
  const auto c = tiny_config();
  CascadeModel<double> model(c, 3);
  auto tc = random_case(c, {8, 8, 8}, 2);
  tc.m_tr = {1, 0, 1};
  const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
  const auto out = model.forward(patch.x);
  for (auto variant : {LossVariant::Paper, LossVariant::Bounded}) {
    for (const auto& p : model.parameters()) Tensor<double>(p.tensor).zero_grad();
    model.task_weights().zero_grad();
    LossOptions opt;
    opt.variant = variant;
    backward(mtl_loss(model.forward(patch.x), patch, model.task_weights(), c, opt).total);
    const Tensor<double>* out_w = nullptr;
    const Tensor<double>* out_b = nullptr;
    for (const auto& p : model.parameters()) {
      if (p.name == "fcn_tract.out_w") out_w = &p.tensor;
      if (p.name == "fcn_tract.out_b") out_b = &p.tensor;
    }
    REQUIRE(out_w);
    REQUIRE(out_b);
    const auto row = static_cast<std::size_t>(c.fcn_base_features);
    for (std::size_t i = 0; i < row; ++i) {
      CHECK(out_w->grad()[row + i] == 0.0);
      CHECK(out_w->grad()[i] != 0.0);
    }
    CHECK(out_b->grad()[1] == 0.0);
    CHECK(out_b->grad()[0] != 0.0);
    CHECK(model.task_weights().grad()[static_cast<std::size_t>(c.w_offset(Task::Tract) + 1)] == 0.0);
  }
  (void)out;
}

TEST_CASE("gradient of the multi-task loss matches finite differences on a tiny model") {
  const auto c = tiny_config();
  CascadeModel<double> model(c, 8);
  for (auto& v : model.task_weights().mutable_data()) v = 0.3;
  auto tc = random_case(c, {8, 8, 8}, 6);
  tc.m_tr = {1, 0, 1};
  const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
  inputs.push_back(model.task_weights());
  for (auto variant : {LossVariant::Paper, LossVariant::Bounded}) {
    LossOptions opt;
    opt.variant = variant;
    const auto r = fbd::testing::gradcheck(
        inputs, [&] { return mtl_loss(model.forward(patch.x), patch, model.task_weights(), c, opt).total; }, 1e-6, 3, 5);
    CHECK(r.relative() < 1e-5);
  }
}

TEST_CASE("patch sampling") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 20; ++i) CHECK(sample_corner({64, 64, 64}, 64, rng) == std::array<std::int64_t, 3>{0, 0, 0});
  CHECK_THROWS_AS(sample_corner({64, 63, 64}, 64, rng), ShapeError);

  // Uniformity: per-axis chi-square over 33 bins against its mean 32 and sd 8.
  std::array<std::array<int, 33>, 3> hist{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_corner({96, 96, 96}, 64, rng);
    for (int a = 0; a < 3; ++a) {
      REQUIRE(c[static_cast<std::size_t>(a)] >= 0);
      REQUIRE(c[static_cast<std::size_t>(a)] <= 32);
      ++hist[static_cast<std::size_t>(a)][static_cast<std::size_t>(c[static_cast<std::size_t>(a)])];
    }
  }
  const double expected = draws / 33.0;
  for (const auto& h : hist) {
    double chi2 = 0;
    for (int count : h) chi2 += (count - expected) * (count - expected) / expected;
    CHECK(std::abs(chi2 - 32.0) < 3 * 8.0);
    for (int count : h) CHECK(std::abs(count - expected) < 4 * std::sqrt(expected));
  }

  const auto c = tiny_config();
  const auto tc = random_case(c, {10, 9, 12}, 1);
  std::mt19937_64 r1(7), r2(7);
  for (int i = 0; i < 5; ++i) {
    const auto a = sample_patch<float>(tc, c, r1);
    const auto b = sample_patch<float>(tc, c, r2);
    CHECK(a.corner == b.corner);
    CHECK(std::equal(a.x.data().begin(), a.x.data().end(), b.x.data().begin()));
  }

  // Cropping is consistent across inputs and targets.
  const std::array<std::int64_t, 3> corner{2, 1, 3};
  const auto p = extract_patch<double>(tc, corner, c);
  CHECK(p.x.shape() == Shape{6, 8, 8, 8});
  CHECK(p.y_sg.shape() == Shape{3, 8, 8, 8});
  CHECK(p.y_tr.shape() == Shape{3, 8, 8, 8});
  CHECK(p.y_pc.shape() == Shape{3, 8, 8, 8});
  const std::int64_t H = 9, W = 12, n = 10 * 9 * 12;
  bool ok = true;
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        const auto src = ((z + 2) * H + (y + 1)) * W + (x + 3);
        const auto dst = (z * 8 + y) * 8 + x;
        ok = ok && p.x.data()[static_cast<std::size_t>(5 * 512 + dst)] == static_cast<double>(tc.x[static_cast<std::size_t>(5 * n + src)]);
        const auto lab = tc.y_sg[static_cast<std::size_t>(src)];
        ok = ok && p.y_sg.data()[static_cast<std::size_t>(lab * 512 + dst)] == 1.0;
        ok = ok && p.y_tr.data()[static_cast<std::size_t>(2 * 512 + dst)] == tc.y_tr[static_cast<std::size_t>(2 * n + src)];
        const auto plab = tc.y_pc[static_cast<std::size_t>(src)];
        ok = ok && p.y_pc.data()[static_cast<std::size_t>(plab * 512 + dst)] == 1.0;
      }
  CHECK(ok);
  double total = 0;
  for (double v : p.y_sg.data()) total += v;
  CHECK(total == 512.0);

  auto bad = tc;
  bad.y_sg[4] = 7;
  CHECK_THROWS_AS(bad.validate(c), DataError);
}

TEST_CASE("plateau learning-rate schedule") {
  TrainState s;
  for (double l : {1.0, 0.9, 0.91, 0.92}) s = lr_schedule_update(s, l);
  CHECK(s.lr == 1e-4);
  s = lr_schedule_update(s, 0.93);
  CHECK(s.lr == doctest::Approx(9e-5).epsilon(1e-12));
  CHECK(s.epoch == 5);

  TrainState dec;
  for (int i = 0; i < 20; ++i) dec = lr_schedule_update(dec, 1.0 - 0.01 * i);
  CHECK(dec.lr == 1e-4);

  TrainState flat;
  for (int e = 1; e <= 13; ++e) {
    flat = lr_schedule_update(flat, 0.5);
    // The first epoch sets the best; the plateau count starts after it.
    CHECK(flat.lr == doctest::Approx(1e-4 * std::pow(0.9, (e - 1) / 3)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lr_schedule_update(flat, std::nan("")), DataError);
}

TEST_CASE("sgd steps") {
  const auto c = tiny_config();
  const auto tc = random_case(c, {8, 8, 8}, 3);

  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    CascadeModel<float> model(c, 1);
    CascadeModel<float> ref(c, 1);
    SgdOptimizer<float> opt(model);
    const auto patch = extract_patch<float>(tc, {0, 0, 0}, c);
    StepOptions so;
    so.momentum = 0.9;
    for (int i = 0; i < 3; ++i) train_step(model, opt, patch, 0.0, so);
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
      const auto a = model.parameters()[k].tensor.data();
      const auto b = ref.parameters()[k].tensor.data();
      CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
    CHECK(model.task_weights().data()[0] == 0.0f);
  }

  SUBCASE("gradient clipping rescales the update to the norm limit") {
    const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
    CascadeModel<double> probe(c, 5);
    SgdOptimizer<double> probe_opt(probe);
    train_step(probe, probe_opt, patch, 0.0);
    std::vector<std::vector<double>> grads;
    double sq = 0;
    for (const auto& p : probe.parameters()) {
      const auto g = p.tensor.grad();
      grads.emplace_back(g.begin(), g.end());
    }
    const auto gw = probe.task_weights().grad();
    grads.emplace_back(gw.begin(), gw.end());
    for (const auto& g : grads)
      for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    REQUIRE(norm > 0);

    for (double limit : {norm / 4, norm * 4}) {
      CAPTURE(limit);
      CascadeModel<double> model(c, 5);
      SgdOptimizer<double> opt(model);
      StepOptions so;
      so.clip_norm = limit;
      train_step(model, opt, patch, 0.1, so);
      const double factor = 0.1 * std::min(1.0, limit / norm);
      double worst = 0;
      for (std::size_t k = 0; k <= model.parameters().size(); ++k) {
        const bool is_w = k == model.parameters().size();
        const auto before = is_w ? probe.task_weights().data() : probe.parameters()[k].tensor.data();
        const auto after = is_w ? model.task_weights().data() : model.parameters()[k].tensor.data();
        for (std::size_t i = 0; i < after.size(); ++i) {
          worst = std::max(worst, std::abs((before[i] - after[i]) - factor * grads[k][i]));
        }
      }
      CHECK(worst < 1e-14);
    }
  }

  SUBCASE("a small step decreases the loss on the same batch") {
    CascadeModel<double> model(c, 2);
    SgdOptimizer<double> opt(model);
    const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
    for (auto variant : {LossVariant::Bounded, LossVariant::Paper}) {
      StepOptions so;
      so.loss.variant = variant;
      const double before = train_step(model, opt, patch, 1e-6, so).total;
      const double after = evaluate_loss(model, patch, so.loss).total;
      CHECK(after < before);
    }
  }

  SUBCASE("paper variant with frozen theta drives w down monotonically") {
    CascadeModel<float> model(c, 4);
    SgdOptimizer<float> opt(model);
    auto masked = tc;
    masked.m_tr = {1, 1, 0};
    const auto patch = extract_patch<float>(masked, {0, 0, 0}, c);
    StepOptions so;
    so.freeze_theta = true;
    so.loss.variant = LossVariant::Paper;
    std::vector<float> prev(model.task_weights().data().begin(), model.task_weights().data().end());
    const auto theta0 = std::vector<float>(model.parameters()[0].tensor.data().begin(), model.parameters()[0].tensor.data().end());
    const auto frozen_tr = static_cast<std::size_t>(c.w_offset(Task::Tract) + 2);
    bool monotone = true;
    for (int i = 0; i < 100; ++i) {
      train_step(model, opt, patch, 1e-3, so);
      const auto w = model.task_weights().data();
      for (std::size_t k = 0; k < w.size(); ++k) monotone = monotone && (k == frozen_tr ? w[k] == prev[k] : w[k] < prev[k]);
      prev.assign(w.begin(), w.end());
    }
    CHECK(monotone);
    CHECK(std::equal(theta0.begin(), theta0.end(), model.parameters()[0].tensor.data().begin()));
  }

  SUBCASE("bounded variant settles at w = ln(1 - DSC)") {
    CascadeModel<double> model(c, 5);
    SgdOptimizer<double> opt(model);
    const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
    StepOptions so;
    so.freeze_theta = true;
    LossBreakdown b;
    for (int i = 0; i < 200; ++i) b = train_step(model, opt, patch, 0.5, so);
    const auto w = model.task_weights().data();
    std::vector<double> dsc = b.dice_sg;
    dsc.insert(dsc.end(), b.dice_tr.begin(), b.dice_tr.end());
    dsc.insert(dsc.end(), b.dice_pc.begin(), b.dice_pc.end());
    REQUIRE(dsc.size() == w.size());
    for (std::size_t k = 0; k < w.size(); ++k) CHECK(std::abs(w[k] - std::log(1 - dsc[k])) < 1e-6);
  }

  SUBCASE("non-finite loss aborts with a per-term dump") {
    CascadeModel<float> model(c, 6);
    SgdOptimizer<float> opt(model);
    auto patch = extract_patch<float>(tc, {0, 0, 0}, c);
    patch.x.mutable_data()[0] = std::nanf("");
    CHECK_THROWS_AS(train_step(model, opt, patch, 1e-3), DataError);
    patch = extract_patch<float>(tc, {0, 0, 0}, c);
    model.task_weights().mutable_data()[0] = std::numeric_limits<float>::infinity();
    try {
      train_step(model, opt, patch, 1e-3);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      INFO(std::string(e.what()));
      CHECK(std::string(e.what()).find("sg regularizer=inf") != std::string::npos);
    }
  }
}

TEST_CASE("training run is deterministic and writes its run directory") {
  const auto c = tiny_config();
  const std::vector<TrainingCase> cases{random_case(c, {10, 10, 10}, 1), random_case(c, {9, 8, 11}, 2)};
  TrainConfig tc;
  tc.steps = 12;
  tc.steps_per_epoch = 5;
  tc.lr = 1e-2;
  tc.momentum = 0.5;
  tc.checkpoint_every = 2;
  tc.validation_patches = 2;
  const auto dir = std::filesystem::temp_directory_path() / "fbd_train_run";
  std::filesystem::remove_all(dir);
  CascadeModel<float> a(c, 9), b(c, 9);
  std::vector<std::string> lines;
  const auto ra = train_model(a, cases, {}, tc, dir.string(), [&](const std::string& l) { lines.push_back(l); });
  const auto rb = train_model(b, cases, {}, tc);
  CHECK(ra.step_losses == rb.step_losses);
  CHECK(ra.steps_run == 12);
  CHECK(ra.epochs == 3);
  CHECK(lines.size() == 3);
  CHECK(std::filesystem::exists(dir / "config.json"));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "checkpoint_epoch_0002.ckpt"));
  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,lr,total,dsc_tissue,dsc_tract,dsc_parcellation");
  int rows = 0;
  for (std::string l; std::getline(csv, l);) ++rows;
  CHECK(rows == 3);

  const auto j = nlohmann::json::parse(std::ifstream(dir / "config.json"));
  CHECK(j.at("train").get<TrainConfig>().steps == 12);
  CHECK(j.at("model").get<ModelConfig>() == c);
  std::filesystem::remove_all(dir);

  nlohmann::json bad = tc;
  bad["loss"] = "huber";
  CHECK_THROWS_AS(bad.get<TrainConfig>(), UsageError);
}
