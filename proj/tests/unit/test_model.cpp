#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../support/gradcheck.hpp"
#include "fbd/binary_io.hpp"
#include "fbd/checkpoint.hpp"
#include "fbd/errors.hpp"
#include "fbd/model.hpp"
#include "fbd/ops.hpp"

using namespace fbd;
using fbd::testing::random_tensor;

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

template <typename T>
Tensor<T> random_input(const ModelConfig& c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<T> v(static_cast<std::size_t>(c.input_channels) * c.cube_size * c.cube_size * c.cube_size);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>({c.input_channels, c.cube_size, c.cube_size, c.cube_size}, std::move(v));
}

void fill(Tensor<float> t, float value) {
  for (auto& v : t.mutable_data()) v = value;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK_NOTHROW(ModelConfig::paper().validate());
  auto c = ModelConfig::desk();
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig::desk();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig::desk();
  c.l_tr = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig::desk();
  c.tasks = {Task::Tract, Task::Tissue};
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig::desk();
  c.fcn_max_features = 4;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ModelConfig::desk();
  c.tasks.clear();
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("config json round trip") {
  auto c = ModelConfig::paper();
  c.tasks = {Task::Tissue, Task::Parcellation};
  const nlohmann::json j = c;
  CHECK(j.get<ModelConfig>() == c);
  CHECK_THROWS_AS(nlohmann::json({{"tasks", {"bogus"}}}).get<ModelConfig>(), UsageError);
}

TEST_CASE("paper config shape contract") {
  const auto c = ModelConfig::paper();
  const auto s = cascade_shapes(c);
  CHECK(s.tokens == Shape{512, 3072});
  CHECK(s.embedded == Shape{512, 512});
  CHECK(s.f_att == Shape{6, 64, 64, 64});
  REQUIRE(s.fcn_inputs.size() == 3);
  CHECK(s.fcn_inputs[0].second == Shape{12, 64, 64, 64});
  CHECK(s.fcn_inputs[1].second == Shape{44, 64, 64, 64});
  CHECK(s.fcn_inputs[2].second == Shape{76, 64, 64, 64});
  CHECK(s.logits[0].second == Shape{5, 64, 64, 64});
  CHECK(s.logits[1].second == Shape{31, 64, 64, 64});
  CHECK(s.logits[2].second == Shape{97, 64, 64, 64});
  CHECK(c.w_length() == 4 + 31 + 96);
}

TEST_CASE("desk attention shapes and zero projection") {
  auto c = ModelConfig::desk();
  c.cube_size = 16;
  CascadeModel<float> m(c, 3);
  CHECK(m.attention().embed_w.shape() == Shape{384, 128});
  CHECK(m.attention().pos.shape() == Shape{64, 128});
  auto x = random_input<float>(c, 1);
  NoGradGuard ng;
  auto f = attention_forward(x, m.attention(), c);
  CHECK(f.shape() == Shape{6, 16, 16, 16});
  fill(m.attention().out_w, 0.0f);
  fill(m.attention().out_b, 0.0f);
  auto z = attention_forward(x, m.attention(), c);
  for (float v : z.data()) CHECK(v == 0.0f);

  Tensor<float> bad({6, 15, 16, 16});
  CHECK_THROWS_AS(attention_forward(bad, m.attention(), c), ShapeError);
}

TEST_CASE("fcn examples") {
  auto c = tiny_config();
  CascadeModel<float> m(c, 5);
  auto& fw = m.fcn(Task::Tissue);
  const auto in_c = c.fcn_input_channels(Task::Tissue);
  std::mt19937 rng(2);
  std::normal_distribution<float> dist;
  std::vector<float> v(static_cast<std::size_t>(in_c) * 512);
  for (auto& x : v) x = dist(rng);
  Tensor<float> input({in_c, 8, 8, 8}, v);
  NoGradGuard ng;
  auto r = fcn_forward(input, fw);
  CHECK(r.logits.shape() == Shape{3, 8, 8, 8});
  CHECK(r.penultimate.shape() == Shape{4, 8, 8, 8});

  const auto before = r.penultimate.vec();
  fill(fw.out_w, 0.0f);
  fill(fw.out_b, 0.0f);
  auto r0 = fcn_forward(input, fw);
  for (float x : r0.logits.data()) CHECK(x == 0.0f);
  CHECK(r0.penultimate.vec() == before);

  Tensor<float> odd({in_c, 7, 8, 8});
  CHECK_THROWS_AS(fcn_forward(odd, fw), ShapeError);
  Tensor<float> wrong_c({in_c + 1, 8, 8, 8});
  CHECK_THROWS_AS(fcn_forward(wrong_c, fw), ShapeError);

  auto c1 = tiny_config();
  c1.fcn_depth = 1;
  CascadeModel<float> m1(c1, 5);
  Tensor<float> input7({in_c, 6, 6, 6}, 0.5f);
  auto r1 = fcn_forward(input7, m1.fcn(Task::Tissue));
  CHECK(r1.logits.shape() == Shape{3, 6, 6, 6});
}

TEST_CASE("paper-size fcn shapes") {
  // out_channels 5, base 32, 12-channel 64^3 input.
  auto c = ModelConfig::paper();
  c.tasks = {Task::Tissue};
  CascadeModel<float> m(c, 1);
  Tensor<float> input({12, 64, 64, 64}, 0.25f);
  NoGradGuard ng;
  auto r = fcn_forward(input, m.fcn(Task::Tissue));
  CHECK(r.logits.shape() == Shape{5, 64, 64, 64});
  CHECK(r.penultimate.shape() == Shape{32, 64, 64, 64});
}

TEST_CASE("parameter count is a function of the config") {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    ModelConfig c;
    c.patch_size = 1 << std::uniform_int_distribution<int>(0, 2)(rng);
    c.fcn_depth = std::uniform_int_distribution<int>(1, 3)(rng);
    const int unit = std::max(c.patch_size, 1 << (c.fcn_depth - 1));
    c.cube_size = unit * std::uniform_int_distribution<int>(1, 2)(rng);
    c.n_heads = std::uniform_int_distribution<int>(1, 3)(rng);
    c.embed_dim = c.n_heads * std::uniform_int_distribution<int>(1, 4)(rng);
    c.n_encoders = std::uniform_int_distribution<int>(1, 2)(rng);
    c.mlp_ratio = std::uniform_int_distribution<int>(1, 3)(rng);
    c.att_out_channels = std::uniform_int_distribution<int>(1, 4)(rng);
    c.fcn_base_features = std::uniform_int_distribution<int>(1, 4)(rng);
    c.fcn_max_features = c.fcn_base_features + std::uniform_int_distribution<int>(0, 4)(rng);
    c.l_sg = std::uniform_int_distribution<int>(1, 3)(rng);
    c.l_tr = std::uniform_int_distribution<int>(1, 3)(rng);
    c.l_pc = std::uniform_int_distribution<int>(1, 3)(rng);
    const int mask = std::uniform_int_distribution<int>(1, 7)(rng);
    c.tasks.clear();
    for (int t = 0; t < 3; ++t)
      if (mask & (1 << t)) c.tasks.push_back(static_cast<Task>(t));
    CAPTURE(nlohmann::json(c).dump());
    CascadeModel<float> m(c, static_cast<std::uint64_t>(trial));
    CHECK(m.parameter_count() == expected_parameter_count(c));
    CHECK(m.task_weights().size() == c.w_length());

    auto x = random_input<float>(c, static_cast<unsigned>(trial));
    NoGradGuard ng;
    auto out = m.forward(x);
    const std::int64_t s = c.cube_size;
    CHECK(out.f_att.shape() == Shape{c.att_out_channels, s, s, s});
    if (c.has_task(Task::Tissue)) CHECK(out.y_sg.shape() == Shape{c.l_sg + 1, s, s, s});
    if (c.has_task(Task::Tract)) CHECK(out.y_tr.shape() == Shape{c.l_tr, s, s, s});
    if (c.has_task(Task::Parcellation)) CHECK(out.y_pc.shape() == Shape{c.l_pc + 1, s, s, s});
    CHECK(out.y_sg.defined() == c.has_task(Task::Tissue));
    CHECK(out.y_tr.defined() == c.has_task(Task::Tract));
    CHECK(out.y_pc.defined() == c.has_task(Task::Parcellation));
  }
}

TEST_CASE("cascade head semantics") {
  const auto c = tiny_config();
  CascadeModel<float> m(c, 7);
  auto x = random_input<float>(c, 3);
  NoGradGuard ng;
  auto out = m.forward(x);
  const std::int64_t vox = 512;
  for (std::int64_t v = 0; v < vox; ++v) {
    double s_sg = 0, s_pc = 0;
    for (int k = 0; k < 3; ++k) s_sg += out.y_sg[k * vox + v];
    for (int k = 0; k < 3; ++k) s_pc += out.y_pc[k * vox + v];
    CHECK(std::abs(s_sg - 1.0) < 1e-5);
    CHECK(std::abs(s_pc - 1.0) < 1e-5);
  }
  for (float p : out.y_tr.data()) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
  CHECK_THROWS_AS(m.forward(Tensor<float>({6, 8, 8, 4})), ShapeError);
}

TEST_CASE("permuting tract output rows permutes y_tr") {
  const auto c = tiny_config();
  CascadeModel<float> m(c, 7);
  auto x = random_input<float>(c, 3);
  NoGradGuard ng;
  auto a = m.forward(x);
  auto& f = m.fcn(Task::Tract);
  const std::vector<int> perm{2, 0, 1};
  const auto w = f.out_w.vec();
  const auto b = f.out_b.vec();
  const std::int64_t base = c.fcn_base_features;
  auto ow = f.out_w.mutable_data();
  auto ob = f.out_b.mutable_data();
  for (int r = 0; r < 3; ++r) {
    for (std::int64_t k = 0; k < base; ++k) ow[r * base + k] = w[perm[r] * base + k];
    ob[r] = b[perm[r]];
  }
  auto p = m.forward(x);
  for (int r = 0; r < 3; ++r)
    for (std::int64_t v = 0; v < 512; ++v) CHECK(p.y_tr[r * 512 + v] == a.y_tr[perm[r] * 512 + v]);
  CHECK(p.y_sg.vec() == a.y_sg.vec());
}

TEST_CASE("determinism") {
  const auto c = tiny_config();
  CascadeModel<float> m1(c, 42), m2(c, 42);
  auto x = random_input<float>(c, 8);
  auto o1 = m1.forward(x);
  auto o2 = m2.forward(x);
  CHECK(o1.y_sg.vec() == o2.y_sg.vec());
  CHECK(o1.y_tr.vec() == o2.y_tr.vec());
  CHECK(o1.y_pc.vec() == o2.y_pc.vec());
  CascadeModel<float> m3(c, 43);
  CHECK(m3.forward(x).y_pc.vec() != o1.y_pc.vec());
}

TEST_CASE("parcellation loss reaches attention and tissue weights") {
  const auto c = tiny_config();
  CascadeModel<double> m(c, 11);
  auto x = random_input<double>(c, 4);
  auto out = m.forward(x);
  backward(ops::mean(ops::square(out.y_pc)));
  auto nonzero = [](const Tensor<double>& t) {
    for (double g : t.grad())
      if (g != 0.0) return true;
    return false;
  };
  CHECK(nonzero(m.attention().embed_w));
  CHECK(nonzero(m.attention().blocks[0].qkv_w));
  CHECK(nonzero(m.fcn(Task::Tissue).encoder[0][0].kernel));
  CHECK(nonzero(m.fcn(Task::Tract).decoder[0][1].kernel));
  // Output layers of earlier tasks feed nothing downstream.
  CHECK_FALSE(nonzero(m.fcn(Task::Tissue).out_w));
}

TEST_CASE("single-task topology") {
  auto c = tiny_config();
  c.tasks = {Task::Tissue};
  CascadeModel<float> m(c, 1);
  CHECK(m.parameter_count() == expected_parameter_count(c));
  CHECK(m.task_weights().size() == c.l_sg);
  for (const auto& p : m.parameters()) CHECK(p.name.rfind("fcn_tract", 0) == std::string::npos);
  CHECK_THROWS_AS(m.fcn(Task::Tract), UsageError);
  auto x = random_input<float>(c, 1);
  auto out = m.forward(x);
  CHECK(out.y_sg.defined());
  CHECK_FALSE(out.y_tr.defined());
  CHECK_FALSE(out.y_pc.defined());

  auto full = tiny_config();
  CascadeModel<float> mf(full, 1);
  // An STL tissue model has the same FCN as the first cascade stage.
  CHECK(m.fcn(Task::Tissue).encoder[0][0].kernel.shape() == mf.fcn(Task::Tissue).encoder[0][0].kernel.shape());
}

TEST_CASE("float and double models agree") {
  const auto c = tiny_config();
  CascadeModel<float> mf(c, 21);
  CascadeModel<double> md(c, 21);
  for (std::size_t i = 0; i < mf.parameters().size(); ++i) {
    const auto a = mf.parameters()[i].tensor.data();
    const auto b = md.parameters()[i].tensor.data();
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == static_cast<float>(b[k]));
  }
}

TEST_CASE("checkpoint round trip and errors") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "fbd_test_model";
  fs::create_directories(dir);
  const auto path = (dir / "m.ckpt").string();
  auto c = tiny_config();
  c.tasks = {Task::Tissue, Task::Parcellation};
  CascadeModel<float> m(c, 99);
  auto w = m.task_weights().mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = -0.5f * static_cast<float>(i);
  save_checkpoint(path, m);
  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.config() == c);
  REQUIRE(loaded.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(loaded.parameters()[i].name == m.parameters()[i].name);
    CHECK(loaded.parameters()[i].tensor.vec() == m.parameters()[i].tensor.vec());
  }
  CHECK(loaded.task_weights().vec() == m.task_weights().vec());

  auto bytes = bin::read_file(path);
  {
    auto bad = bytes;
    bad[0] = 'X';
    bin::write_file(path, bad);
    CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
  }
  {
    auto bad = bytes;
    bad[8] = 7;
    bin::write_file(path, bad);
    CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
  }
  {
    auto bad = bytes;
    bad.resize(bad.size() - 3);
    bin::write_file(path, bad);
    CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
  }
  CHECK_THROWS_AS(load_checkpoint<float>((dir / "missing.ckpt").string()), IoError);
  fs::remove_all(dir);
}
