// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "../support/oracles.hpp"
#include "fbd/annotation.hpp"
#include "fbd/dti.hpp"
#include "fbd/inference.hpp"
#include "fbd/metrics.hpp"
#include "fbd/model.hpp"
#include "fbd/phantom.hpp"
#include "fbd/training.hpp"

using namespace fbd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainingCase phantom_case(std::int64_t n, std::uint64_t seed) {
  const auto ph = generate_phantom(PhantomSpec::scaled({n, n, n}), seed);
  return make_training_case(ph.dti, ph.y_sg, ph.tracts, ph.y_pc, 1000.0);
}

// 1. Finite differences through the whole float64 model and loss.
Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = ModelConfig::desk();
  c.cube_size = 16;
  CascadeModel<double> model(c, 21);
  std::mt19937_64 rng(5);
  {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : model.task_weights().mutable_data()) v = u(rng);
  }
  auto tc = phantom_case(16, 3);
  tc.m_tr[1] = 0;
  const auto patch = extract_patch<double>(tc, {0, 0, 0}, c);
  LossOptions opt;
  opt.variant = LossVariant::Paper;
  auto loss = [&] { return mtl_loss(model.forward(patch.x), patch, model.task_weights(), c, opt).total; };

  std::vector<Tensor<double>> tensors;
  for (const auto& p : model.parameters()) tensors.push_back(p.tensor);
  tensors.push_back(model.task_weights());
  for (auto& t : tensors) t.zero_grad();
  backward(loss());

  // Every w entry, one entry of every parameter tensor, then random extras.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  const std::size_t w_index = tensors.size() - 1;
  for (std::size_t i = 0; i < static_cast<std::size_t>(model.task_weights().size()); ++i) probes.push_back({w_index, i});
  auto random_entry = [&](std::size_t k) {
    return std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(tensors[k].size()) - 1)(rng);
  };
  for (std::size_t k = 0; k < w_index; ++k) probes.push_back({k, random_entry(k)});
  std::uniform_int_distribution<std::size_t> pick(0, w_index - 1);
  while (probes.size() < 240) {
    const auto k = pick(rng);
    probes.push_back({k, random_entry(k)});
  }

  const double h = 1e-6;
  double max_diff = 0, max_numeric = 0;
  for (const auto& [k, i] : probes) {
    auto values = tensors[k].mutable_data();
    const double analytic = tensors[k].grad()[i];
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss().item();
    values[i] = saved - h;
    const double down = loss().item();
    values[i] = saved;
    const double numeric = (up - down) / (2 * h);
    max_diff = std::max(max_diff, std::abs(numeric - analytic));
    max_numeric = std::max(max_numeric, std::abs(numeric));
  }
  const double rel = max_diff / max_numeric;
  const double sec = seconds_since(t0);
  return {rel < 1e-4 && sec < 300,
          fmt("max relative error %.2e over %zu entries (%zu parameter tensors, all %lld w) in %.1f s", rel,
              probes.size(), w_index, static_cast<long long>(model.task_weights().size()), sec)};
}

// 2. Hand-computed loss values and the masked-tract gradient.
Outcome loss_examples() {
  ModelConfig c;
  c.l_sg = c.l_tr = c.l_pc = 1;
  const Shape two{2, 2, 2, 2}, one{1, 2, 2, 2};
  std::vector<double> onehot(16, 0.0);
  for (int i = 0; i < 8; ++i) onehot[static_cast<std::size_t>(i < 4 ? i : 8 + i)] = 1.0;
  LossOptions paper;
  paper.variant = LossVariant::Paper;

  double worst = 0;
  bool mask_ok = true;
  for (std::uint8_t m : {1, 0}) {
    CascadeOutput<double> out;
    TrainingPatch<double> p;
    out.y_sg = Tensor<double>(two, onehot, true);
    out.y_pc = Tensor<double>(two, onehot, true);
    out.y_tr = Tensor<double>(one, 1.0, true);
    p.y_sg = Tensor<double>(two, onehot);
    p.y_pc = Tensor<double>(two, onehot);
    p.y_tr = Tensor<double>(one, 1.0);
    p.m_tr = {m};
    Tensor<double> w({3}, 0.0, true);
    const auto r = mtl_loss(out, p, w, c, paper);
    worst = std::max(worst, std::abs(r.breakdown.total - (m ? -3.0 : -2.0)));
    if (!m) {
      backward(r.total);
      mask_ok = mask_ok && w.grad()[static_cast<std::size_t>(c.w_offset(Task::Tract))] == 0.0;
      for (double g : out.y_tr.grad()) mask_ok = mask_ok && g == 0.0;
    }
  }

  ModelConfig single;
  single.l_sg = 1;
  single.tasks = {Task::Tissue};
  std::vector<double> pred(16), target(16);
  for (int i = 0; i < 8; ++i) {
    pred[static_cast<std::size_t>(i)] = 1.0 / 3.0;
    pred[static_cast<std::size_t>(8 + i)] = 2.0 / 3.0;
    target[static_cast<std::size_t>(8 + i)] = 1.0;
  }
  CascadeOutput<double> out;
  out.y_sg = Tensor<double>(two, pred);
  TrainingPatch<double> p;
  p.y_sg = Tensor<double>(two, target);
  const auto r = mtl_loss(out, p, Tensor<double>({1}, std::log(2.0)), single, paper);
  worst = std::max(worst, std::abs(r.breakdown.total - 0.2931471805599453));

  return {worst < 1e-6 && mask_ok,
          fmt("max deviation from -3, -2, 0.2931 is %.2e; masked tract gradients %s", worst, mask_ok ? "exactly 0" : "NONZERO")};
}

// 3. Task-weight dynamics with the network frozen.
Outcome w_drift() {
  auto c = ModelConfig::desk();
  c.cube_size = 16;
  auto tc = phantom_case(16, 4);
  tc.m_tr[2] = 0;
  const auto patch = extract_patch<float>(tc, {0, 0, 0}, c);
  const auto nw = static_cast<std::size_t>(c.w_length());
  const auto masked = static_cast<std::size_t>(c.w_offset(Task::Tract) + 2);

  bool monotone = true, masked_fixed = true, dsc_positive = true;
  {
    CascadeModel<float> model(c, 6);
    SgdOptimizer<float> opt(model);
    StepOptions so;
    so.freeze_theta = true;
    so.loss.variant = LossVariant::Paper;
    std::vector<float> prev(model.task_weights().data().begin(), model.task_weights().data().end());
    for (int step = 0; step < 100; ++step) {
      const auto b = train_step(model, opt, patch, 1e-3, so);
      if (step == 0) {
        for (const auto* d : {&b.dice_sg, &b.dice_tr, &b.dice_pc})
          for (double v : *d) dsc_positive = dsc_positive && v > 0;
      }
      const auto now = model.task_weights().data();
      for (std::size_t i = 0; i < nw; ++i) {
        if (i == masked) masked_fixed = masked_fixed && now[i] == prev[i];
        else monotone = monotone && now[i] < prev[i];
        prev[i] = now[i];
      }
    }
  }

  double worst = 0;
  {
    CascadeModel<float> model(c, 6);
    SgdOptimizer<float> opt(model);
    StepOptions so;
    so.freeze_theta = true;
    so.loss.variant = LossVariant::Bounded;
    LossBreakdown b;
    for (int step = 0; step < 300; ++step) b = train_step(model, opt, patch, 0.5, so);
    std::vector<double> dice;
    for (const auto* d : {&b.dice_sg, &b.dice_tr, &b.dice_pc}) dice.insert(dice.end(), d->begin(), d->end());
    const auto w = model.task_weights().data();
    for (std::size_t i = 0; i < nw; ++i) {
      if (i == masked) continue;
      worst = std::max(worst, std::abs(static_cast<double>(w[i]) - std::log(1.0 - dice[i])));
    }
  }
  return {monotone && masked_fixed && dsc_positive && worst < 1e-3,
          fmt("paper: %d unmasked w %s over 100 steps, masked w %s; bounded: max |w - ln(1-DSC)| = %.2e",
              static_cast<int>(nw - 1), monotone ? "strictly decreasing" : "NOT monotone",
              masked_fixed ? "unchanged" : "CHANGED", worst)};
}

// 4. Overfitting one 32^3 phantom.
Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = ModelConfig::desk();
  c.dice_background = true;
  const auto tc = phantom_case(32, 1);
  CascadeModel<float> model(c, 1);
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.lr = 0.01;
  cfg.momentum = 0.9;
  cfg.freeze_w = true;
  cfg.early_stop_dice = 0.96;
  cfg.validation_patches = 1;
  cfg.steps_per_epoch = 50;
  const auto r = train_model(model, {tc}, {}, cfg);
  const auto patch = extract_patch<float>(tc, {0, 0, 0}, c);
  const auto b = evaluate_loss(model, patch);
  const double sg = b.mean_dice(Task::Tissue), tr = b.mean_dice(Task::Tract), pc = b.mean_dice(Task::Parcellation);
  const double sec = seconds_since(t0);
  return {sg > 0.95 && tr > 0.95 && pc > 0.95 && r.steps_run <= 2000 && sec < 1800,
          fmt("soft DSC tissue %.4f tract %.4f parcellation %.4f after %d steps in %.0f s", sg, tr, pc, r.steps_run, sec)};
}

// 5. Metrics against brute-force oracles.
Outcome metric_oracles() {
  std::mt19937 rng(29);
  std::uniform_int_distribution<std::int64_t> ext(1, 12);
  const Spacing iso{1.2, 1.2, 1.2};
  int mismatches = 0, pairs = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Grid3 g{ext(rng), ext(rng), ext(rng)};
    auto a = testing::random_blob(g, rng), b = testing::random_blob(g, rng);
    a[0] = 1;
    b.back() = 1;
    const auto slow = testing::brute_force_distances(a, b, g, iso);
    double sum = 0;
    for (double d : slow) sum += d;
    const auto m = distance_metrics(a, b, g, iso);
    const bool ok = *dsc(a, b) == testing::brute_dsc(a, b) && *surface_distances(a, b, g, iso) == slow &&
                    *m.hd95 == testing::sorted_percentile(slow, 95) && *m.asd == sum / static_cast<double>(slow.size());
    mismatches += !ok;
    ++pairs;
  }

  // Two single voxels three apart along x, and two slabs offset by one voxel.
  const Grid3 g{8, 6, 5};
  std::vector<std::uint8_t> p(240, 0), q(240, 0);
  p[static_cast<std::size_t>((2 * 6 + 2) * 8 + 1)] = 1;
  q[static_cast<std::size_t>((2 * 6 + 2) * 8 + 4)] = 1;
  const auto pt = distance_metrics(p, q, g, iso);
  const Grid3 sg{12, 12, 3};
  std::vector<std::uint8_t> s1(432, 0), s2(432, 0);
  for (int y = 1; y <= 10; ++y)
    for (int x = 0; x < 10; ++x) {
      s1[static_cast<std::size_t>((12 + y) * 12 + x)] = 1;
      s2[static_cast<std::size_t>((12 + y) * 12 + x + 1)] = 1;
    }
  const auto slab = distance_metrics(s1, s2, sg, iso);
  // 3 * 1.2 is one ulp away from 3.6, hence the tolerance.
  const bool examples = std::abs(*pt.hd95 - 3.6) < 1e-12 && std::abs(*pt.asd - 3.6) < 1e-12 &&
                        std::abs(*slab.hd95 - 1.2) < 1e-12 && std::abs(*slab.asd - 0.12) < 1e-12;
  return {mismatches == 0 && examples,
          fmt("%d/%d random pairs match the O(n^2) oracle exactly; point pair HD95 %.17g, slab HD95 %.17g ASD %.17g",
              pairs - mismatches, pairs, *pt.hd95, *slab.hd95, *slab.asd)};
}

// 6. Noiseless tensor recovery.
Outcome dti_round_trip() {
  std::mt19937_64 rng(31);
  const auto table = default_gradient_table(12, 500.0, 1);
  double worst = 0;
  int failed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto d = testing::random_spd(rng);
    const double s0 = std::uniform_real_distribution<double>(100.0, 5000.0)(rng);
    const auto fit = fit_voxel(simulate_signal(d, s0, table), table);
    failed += fit.status != FitStatus::Ok;
    for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(fit.d[i] - d[i]));
  }
  return {worst < 1e-10 && failed == 0,
          fmt("1000 random SPD tensors, b = 0 and 500 with 12 directions: max component error %.2e mm^2/s", worst)};
}

// 7. STAPLE behaviour.
Outcome staple_checks() {
  bool ll_ok = true;
  int runs = 0;
  auto check_ll = [&](const FusionResult& r) {
    ++runs;
    for (std::size_t k = 1; k < r.log_likelihood.size(); ++k)
      ll_ok = ll_ok && r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9 * std::abs(r.log_likelihood[k - 1]);
  };

  auto m = testing::sphere_map(14, 4.5);
  for (std::size_t i = 0; i < m.size(); i += 5) m[i] = 2;
  const auto unanimous = staple_fuse({m, m, m, m}, 3);
  check_ll(unanimous);
  const bool fixed_point = unanimous.hard == m;

  const int n = 20;
  const auto truth = testing::sphere_map(n, 6.5);
  double worst_agree = 1.0;
  for (unsigned seed = 1; seed <= 5; ++seed) {
    std::mt19937 rng(seed);
    std::vector<std::int32_t> noise(truth.size());
    for (auto& v : noise) v = static_cast<std::int32_t>(rng() & 1u);
    const std::vector<std::vector<std::int32_t>> cands{truth, truth, truth, truth, noise};
    const auto r = staple_fuse(cands, 2);
    check_ll(r);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      int ones = 0;
      for (const auto& c : cands) ones += c[i];
      agree += r.hard[i] == (ones * 2 > 5 ? 1 : 0);
    }
    worst_agree = std::min(worst_agree, static_cast<double>(agree) / static_cast<double>(truth.size()));
  }

  std::mt19937 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const int L = 3 + trial;
    std::vector<std::int32_t> base(4000);
    for (auto& v : base) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(L));
    std::vector<std::vector<std::int32_t>> cands;
    for (int k = 0; k < 4; ++k) {
      auto c = base;
      for (auto& v : c)
        if (rng() % 100 < static_cast<unsigned>(5 + 10 * k)) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(L));
      cands.push_back(c);
    }
    StapleOptions opt;
    opt.tol = 1e-12;
    opt.max_iter = 50;
    check_ll(staple_fuse(cands, L, opt));
  }
  return {fixed_point && worst_agree >= 0.99 && ll_ok,
          fmt("unanimity fixed point %s; majority recovered on >= %.4f of voxels; log-likelihood non-decreasing in %s of %d runs",
              fixed_point ? "exact" : "BROKEN", worst_agree, ll_ok ? "all" : "NOT all", runs)};
}

// 8. Window plans and stitching.
Outcome windows() {
  const auto n64 = plan_windows({64, 64, 64}, 64, 0.25).corners.size();
  const auto n112 = plan_windows({112, 112, 112}, 64, 0.25).corners.size();
  const auto n80 = plan_windows({80, 80, 80}, 64, 0.25).corners.size();

  // A pointwise map is translation invariant.
  const WindowPredictor pointwise = [](const Tensor<float>& x) {
    const auto s = x.shape();
    const std::int64_t n = s[1] * s[2] * s[3];
    std::vector<float> sg(static_cast<std::size_t>(2 * n)), tr(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const float v = x.data()[static_cast<std::size_t>(i)] + 0.5f * x.data()[static_cast<std::size_t>(n + i)];
      sg[static_cast<std::size_t>(i)] = 1.0f / (1.0f + std::exp(-v));
      sg[static_cast<std::size_t>(n + i)] = 1.0f - sg[static_cast<std::size_t>(i)];
      tr[static_cast<std::size_t>(i)] = std::tanh(0.3f * v);
    }
    return std::array<Tensor<float>, 3>{Tensor<float>({2, s[1], s[2], s[3]}, sg), Tensor<float>({1, s[1], s[2], s[3]}, tr),
                                        Tensor<float>()};
  };
  bool bitwise = true;
  for (std::int64_t dim : {80, 112}) {
    const std::int64_t v = dim * dim * dim;
    std::vector<float> x(static_cast<std::size_t>(2 * v));
    std::fill(x.begin(), x.begin() + v, 0.37f);
    std::fill(x.begin() + v, x.end(), -1.3f);
    std::vector<float> wx(static_cast<std::size_t>(2 * 64 * 64 * 64), 0.37f);
    std::fill(wx.begin() + 64 * 64 * 64, wx.end(), -1.3f);
    const auto single = pointwise(Tensor<float>({2, 64, 64, 64}, wx));
    for (int threads : {1, 4}) {
      InferenceOptions opt;
      opt.threads = threads;
      const auto r = sliding_window_infer(x, 2, plan_windows({dim, dim, dim}, 64, 0.25), pointwise, opt);
      for (std::size_t t = 0; t < 2; ++t) {
        const auto& probs = r.probs[t];
        for (std::size_t i = 0; i < probs.size(); ++i) {
          bitwise = bitwise && probs[i] == single[t].data()[(i / static_cast<std::size_t>(v)) * 64 * 64 * 64];
        }
      }
    }
  }
  return {n64 == 1 && n112 == 8 && n80 == 8 && bitwise,
          fmt("windows 64^3 -> %zu, 112^3 -> %zu, 80^3 -> %zu; constant-input stitching %s", n64, n112, n80,
              bitwise ? "bitwise equal to the single-window output" : "DIFFERS")};
}

// 9. Channel arithmetic of the full-size configuration.
Outcome shape_contract() {
  const auto c = ModelConfig::paper();
  const auto s = cascade_shapes(c);
  bool ok = s.tokens == Shape{512, 3072} && s.embedded == Shape{512, 512} && s.f_att == Shape{6, 64, 64, 64} &&
            s.fcn_inputs.size() == 3 && s.fcn_inputs[0].second == Shape{12, 64, 64, 64} &&
            s.fcn_inputs[1].second == Shape{44, 64, 64, 64} && s.fcn_inputs[2].second == Shape{76, 64, 64, 64} &&
            s.logits[0].second == Shape{5, 64, 64, 64} && s.logits[1].second == Shape{31, 64, 64, 64} &&
            s.logits[2].second == Shape{97, 64, 64, 64};
  ok = ok && c.fcn_input_channels(Task::Tissue) == 12 && c.fcn_input_channels(Task::Tract) == 44 &&
       c.fcn_input_channels(Task::Parcellation) == 76;

  // Build the transformer module and run it on a 64^3 input.
  auto att_only = c;
  att_only.tasks = {Task::Tissue};
  CascadeModel<float> model(att_only, 2);
  const auto& a = model.attention();
  ok = ok && a.embed_w.shape() == Shape{3072, 512} && a.pos.shape() == Shape{512, 512} &&
       a.out_w.shape() == Shape{512, 3072} && model.parameter_count() == expected_parameter_count(att_only);
  NoGradGuard guard;
  const Tensor<float> x({6, 64, 64, 64}, 0.1f);
  const auto f_att = attention_forward(x, a, att_only);
  ok = ok && f_att.shape() == Shape{6, 64, 64, 64};
  return {ok, fmt("FCN inputs %lld/%lld/%lld channels; attention %s tokens -> %s -> %s",
                  static_cast<long long>(c.fcn_input_channels(Task::Tissue)),
                  static_cast<long long>(c.fcn_input_channels(Task::Tract)),
                  static_cast<long long>(c.fcn_input_channels(Task::Parcellation)), shape_str(s.tokens).c_str(),
                  shape_str(s.embedded).c_str(), shape_str(f_att.shape()).c_str())};
}

// 10. Two identical CLI pipelines give identical bytes.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("fbd_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string exe = FBD_EXE;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    const std::string cmd = "cd '" + dir.string() + "' && '" + exe + "' phantom --seed 7 --threads 2 --out-dir case && '" +
                            exe + "' train --case case --steps 50 --seed 7 --threads 2 --run-dir run && '" + exe +
                            "' infer --checkpoint run/final.ckpt --case case --threads 2 --save-probs --out-dir out";
    if (std::system(("(" + cmd + ") > '" + (dir / "log.txt").string() + "' 2>&1").c_str()) != 0) {
      return {false, "pipeline failed in " + dir.string()};
    }
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  int files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "log.txt") continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++files;
    if (!fs::exists(root / "b" / rel) || slurp(e.path()) != slurp(root / "b" / rel)) ++differ;
  }
  const bool have_ckpt = fs::exists(root / "a/run/final.ckpt") && fs::exists(root / "a/out/tissue.nii");
  fs::remove_all(root);
  return {differ == 0 && have_ckpt && files > 10,
          fmt("%d files compared (case, run directory with checkpoint, inference outputs); %d differ", files, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"loss examples", loss_examples},
      {"task-weight drift", w_drift},
      {"overfit sanity", overfit},
      {"metric oracles", metric_oracles},
      {"DTI round trip", dti_round_trip},
      {"STAPLE", staple_checks},
      {"window planning", windows},
      {"shape contract", shape_contract},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] criterion %d, %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
