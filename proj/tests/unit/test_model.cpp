#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "domprompt/model.hpp"
#include "domprompt/ops.hpp"
#include "domprompt/rng.hpp"

using namespace domprompt;

namespace {

ModelConfig small_config(HeadKind head) {
  ModelConfig c;
  c.encoder.dim = 32;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.prompt_dim = 16;
  c.encoder.fpn_width = 16;
  c.head = head;
  c.set_head.queries = 6;
  c.set_head.layers = 1;
  c.set_head.heads = 2;
  c.seed = 7;
  return c;
}

Tensor random_image(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(64 * 64);
  for (auto& x : v) x = rng.bernoulli(0.2) ? rng.uniform(0.5, 1.0) : 0.0;
  return Tensor::from_values({1, 64, 64}, v);
}

Tensor random_prompt(std::uint64_t seed, std::size_t dim = 16) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_values({dim}, v);
}

std::vector<Box> some_boxes() {
  return {Box{0.3, 0.3, 0.2, 0.1, 0}, Box{0.6, 0.7, 0.4, 0.2, 3}};
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "domprompt_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("model config validation") {
  auto c = small_config(HeadKind::set);
  c.set_head.memory_level = 2;  // two levels at two layers
  CHECK_THROWS_AS(Model{c}, std::invalid_argument);
  c.set_head.memory_level = 1;
  CHECK_NOTHROW(Model{c});
  CHECK(small_config(HeadKind::set).fingerprint() != small_config(HeadKind::dense).fingerprint());
}

TEST_CASE("checkpoint round trip restores every parameter") {
  auto cfg = small_config(HeadKind::dense);
  Model a(cfg);
  Rng rng(3);
  for (auto& [name, t] : a.params().params()) {
    auto d = a.params().at(name).mutable_data<float>();
    for (auto& x : d) x += static_cast<float>(rng.uniform(-0.1, 0.1));
  }
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, a, {{"epochs", "3"}});
  CHECK(checkpoint_fingerprint(path) == cfg.fingerprint());

  Model b(cfg);
  const auto meta = load_checkpoint(path, b);
  CHECK(meta.at("epochs") == "3");
  for (const auto& [name, t] : a.params().params()) {
    auto x = t.data<float>();
    auto y = b.params().at(name).data<float>();
    REQUIRE(x.size() == y.size());
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  const auto img = random_image(1);
  const auto p = random_prompt(2);
  CHECK(a.loss(img, p, some_boxes(), {}).item() == b.loss(img, p, some_boxes(), {}).item());
}

TEST_CASE("loading into a different architecture fails") {
  Model a(small_config(HeadKind::dense));
  const auto path = temp_file("mismatch.ckpt");
  save_checkpoint(path, a);
  Model b(small_config(HeadKind::set));
  CHECK_THROWS_AS(load_checkpoint(path, b), std::runtime_error);
  auto cfg = small_config(HeadKind::dense);
  cfg.encoder.prompted = false;
  Model c(cfg);
  CHECK_THROWS_AS(load_checkpoint(path, c), std::runtime_error);
  std::ofstream(temp_file("garbage.ckpt")) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(temp_file("garbage.ckpt"), c), std::runtime_error);
}

TEST_CASE("inert parameters receive no gradient and the rest do") {
  for (bool masked : {false, true}) {
    auto cfg = small_config(HeadKind::set);
    cfg.encoder.prompt_mask = masked;
    Model m(cfg);
    for (auto& [name, t] : m.params().params()) m.params().at(name).set_requires_grad(true);
    const auto inert = m.inert_params();
    CHECK(!inert.empty());
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = m.loss(random_image(4), random_prompt(5), some_boxes(), {});
    }
    tape.backward(loss);
    for (const auto& [name, t] : m.params().params()) {
      const bool is_inert = std::find(inert.begin(), inert.end(), name) != inert.end();
      double norm = 0.0;
      if (tape.has_grad(t)) {
        for (double g : tape.grad(t).values()) norm += std::abs(g);
      }
      INFO(name);
      if (is_inert) {
        CHECK(norm == 0.0);
      } else {
        CHECK(norm > 0.0);
      }
    }
  }
}

TEST_CASE("masked prompt leaves the loss independent of the prompt") {
  auto cfg = small_config(HeadKind::dense);
  cfg.encoder.prompt_mask = true;
  Model m(cfg);
  const auto img = random_image(8);
  const double a = m.loss(img, random_prompt(1), some_boxes(), {}).item();
  const double b = m.loss(img, random_prompt(2), some_boxes(), {}).item();
  CHECK(a == b);

  cfg.encoder.prompt_mask = false;
  Model u(cfg);
  CHECK(u.loss(img, random_prompt(1), some_boxes(), {}).item() !=
        u.loss(img, random_prompt(2), some_boxes(), {}).item());
}

TEST_CASE("detections are valid boxes with distributions") {
  for (auto head : {HeadKind::dense, HeadKind::set}) {
    Model m(small_config(head));
    const auto dets = m.detect(random_image(9), random_prompt(3), {0.0, 0.5});
    for (const auto& d : dets) {
      CHECK(d.box.valid());
      CHECK(d.box.label >= 0);
      CHECK(d.box.label < 9);
      double s = 0.0;
      for (double p : d.probs) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}
