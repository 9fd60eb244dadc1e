// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lrdm/data_io.hpp"
#include "lrdm/trainer.hpp"
#include "support.hpp"

using namespace lrdm;
using lrdm::test::random_matrix;
using lrdm::test::temp_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

ModelConfig tiny(ModelKind kind) {
  ModelConfig m;
  m.kind = kind;
  m.denoiser.hidden = 8;
  m.denoiser.depth = 2;
  m.denoiser.embed_dim = 4;
  m.encoder.hidden = 8;
  m.encoder.depth = 1;
  m.encoder.repr_dim = 3;
  m.encoder.embed_dim = 4;
  m.first_stage.kind = FirstStageKind::Mlp;
  m.first_stage.hidden = 8;
  m.first_stage.depth = 1;
  return m;
}

}  // namespace

TEST_CASE("mixture generator") {
  SUBCASE("one mode at the origin") {
    MixtureSpec s;
    s.n = 20000;
    s.modes = 1;
    s.radius = 0.0;
    s.std = 0.5;
    s.seed = 3;
    const Dataset d = make_mixture(s);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) m += d.points(i, c);
      m /= static_cast<double>(d.size());
      CHECK(std::abs(m) < 4.0 * 0.5 / std::sqrt(20000.0));
    }
  }
  SUBCASE("per-mode counts follow the multinomial") {
    MixtureSpec s;
    s.n = 16000;
    s.labeled = true;
    s.seed = 4;
    const Dataset d = make_mixture(s, Split::Heldout);
    CHECK(d.split == Split::Heldout);
    CHECK(d.num_classes() == 8);
    std::vector<int> counts(8, 0);
    for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
    const double expect = 16000.0 / 8.0;
    const double sd = std::sqrt(16000.0 * (1.0 / 8.0) * (7.0 / 8.0));
    for (int c : counts) CHECK(std::abs(c - expect) < 4.0 * sd);
    // points sit around their own center
    const Matrix centers = mixture_centers(8, 2.0);
    for (std::size_t i = 0; i < 200; ++i) {
      const auto l = static_cast<std::size_t>(d.labels[i]);
      CHECK(std::hypot(d.points(i, 0) - centers(l, 0), d.points(i, 1) - centers(l, 1)) < 0.6);
    }
  }
  SUBCASE("a pure function of the spec") {
    MixtureSpec s;
    s.n = 100;
    s.seed = 5;
    CHECK(make_mixture(s).points == make_mixture(s).points);
    MixtureSpec t = s;
    t.seed = 6;
    CHECK(make_mixture(s).points != make_mixture(t).points);
    CHECK(make_mixture(s).provenance.find("seed") != std::string::npos);
  }
}

TEST_CASE("CSV datasets") {
  const auto dir = temp_dir("csv");
  SUBCASE("round trip at full precision") {
    Dataset d;
    d.points = random_matrix(100, 3, 7);
    save_csv_dataset(dir / "a.csv", d);
    const Dataset back = load_csv_dataset(dir / "a.csv", false);
    REQUIRE(back.points.same_shape(d.points));
    for (std::size_t i = 0; i < d.points.data.size(); ++i) {
      CHECK(std::abs(back.points.data[i] - d.points.data[i]) <= 1e-15);
    }
    CHECK_FALSE(back.labeled());
  }
  SUBCASE("ragged row names the row") {
    std::string text;
    for (int r = 1; r <= 10; ++r) text += r == 7 ? "1.0,2.0,3.0\n" : "1.0,2.0\n";
    spit(dir / "ragged.csv", text);
    try {
      (void)load_csv_dataset(dir / "ragged.csv", false);
      FAIL("expected CsvError");
    } catch (const CsvError& e) {
      CHECK(e.row() == 7);
      CHECK(std::string(e.what()).find("row 7") != std::string::npos);
    }
  }
  SUBCASE("non-numeric cell names the row") {
    spit(dir / "bad.csv", "x,y\n1,2\n3,abc\n");
    try {
      (void)load_csv_dataset(dir / "bad.csv", false);
      FAIL("expected CsvError");
    } catch (const CsvError& e) {
      CHECK(e.row() == 3);
    }
  }
  SUBCASE("labels infer the class count") {
    spit(dir / "lab.csv", "0.1,0.2,0\n0.3,0.4,2\n0.5,0.6,1\n0.7,0.8,2\n");
    const Dataset d = load_csv_dataset(dir / "lab.csv", true);
    CHECK(d.dim() == 2);
    CHECK(d.num_classes() == 3);
    CHECK(d.labels == std::vector<int>{0, 2, 1, 2});
    save_csv_dataset(dir / "lab2.csv", d);
    CHECK(load_csv_dataset(dir / "lab2.csv", true).labels == d.labels);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = temp_dir("ckpt");
  for (auto kind : {ModelKind::Dm, ModelKind::Lrdm, ModelKind::TLrdm, ModelKind::Lvae}) {
    CAPTURE(to_string(kind));
    auto b = ModelBundle::create(tiny(kind), ScheduleConfig{}, 21);
    MixtureSpec spec;
    spec.n = 128;
    TrainConfig tc;
    tc.steps = 3;
    tc.batch_size = 16;
    tc.first_stage.steps = 5;
    tc.first_stage.welford_batches = 2;
    train(tc, b, make_mixture(spec));
    const auto path = dir / (std::string(to_string(kind)) + ".lrdm");
    save_checkpoint(path, b, R"({"note":"x"})");
    const ModelBundle back = load_checkpoint(path);

    const auto a = b.all_params();
    const auto c = back.all_params();
    REQUIRE(a.size() == c.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == c[i].name);
      CHECK(std::equal(a[i].tensor->values().begin(), a[i].tensor->values().end(),
                       c[i].tensor->values().begin(), c[i].tensor->values().end()));
    }
    CHECK(back.state.ema.shadow == b.state.ema.shadow);
    CHECK(back.state.step == 3);
    CHECK(back.state.rng_state == b.state.rng_state);
    CHECK(back.first_stage.scale() == b.first_stage.scale());
    CHECK(back.state.adam.steps_taken() == b.state.adam.steps_taken());
    CHECK(checkpoint_extra(path) == R"({"note":"x"})");

    // load -> save -> load is byte-identical
    const auto path2 = dir / (std::string(to_string(kind)) + "2.lrdm");
    save_checkpoint(path2, back, checkpoint_extra(path));
    CHECK(slurp(path) == slurp(path2));
  }
}

TEST_CASE("checkpoint errors are distinct") {
  const auto dir = temp_dir("ckpt_err");
  const auto b = ModelBundle::create(tiny(ModelKind::Lrdm), ScheduleConfig{}, 23);
  const auto path = dir / "ok.lrdm";
  save_checkpoint(path, b);
  const std::string raw = slurp(path);
  const std::size_t blob_start = raw.find("\n\n") + 2;

  SUBCASE("corrupted length prefix") {
    std::string bad = raw;
    bad[blob_start + 6] = '\x7f';  // huge element count
    spit(dir / "len.lrdm", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "len.lrdm"), CheckpointTruncatedError);
  }
  SUBCASE("truncated file") {
    spit(dir / "short.lrdm", raw.substr(0, raw.size() - 100));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.lrdm"), CheckpointTruncatedError);
  }
  SUBCASE("wrong element count") {
    std::string bad = raw;
    bad[blob_start] = static_cast<char>(bad[blob_start] - 1);
    spit(dir / "count.lrdm", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "count.lrdm"), CheckpointShapeError);
  }
  SUBCASE("version mismatch") {
    std::string bad = raw;
    const auto pos = bad.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 11, "\"version\":7");
    spit(dir / "ver.lrdm", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "ver.lrdm"), CheckpointVersionError);
    spit(dir / "tag.lrdm", "LRDM2\n" + raw.substr(6));
    CHECK_THROWS_AS(load_checkpoint(dir / "tag.lrdm"), CheckpointVersionError);
  }
  SUBCASE("bad magic") {
    spit(dir / "magic.lrdm", "hello\n{}\n\n");
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.lrdm"), CheckpointFormatError);
  }
  SUBCASE("declared shape disagrees with the config") {
    std::string bad = raw;
    const auto pos = bad.find("\"shape\":[");
    REQUIRE(pos != std::string::npos);
    bad.insert(pos + 9, "1,");
    spit(dir / "shape.lrdm", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "shape.lrdm"), CheckpointShapeError);
  }
}

TEST_CASE("golden checkpoint header layout") {
  const auto dir = temp_dir("ckpt_golden");
  const auto b = ModelBundle::create(tiny(ModelKind::Lrdm), ScheduleConfig{}, 25);
  save_checkpoint(dir / "g.lrdm", b);
  const std::string raw = slurp(dir / "g.lrdm");
  REQUIRE(raw.rfind("LRDM1\n", 0) == 0);
  const auto end = raw.find('\n', 6);
  CHECK(raw.substr(end, 2) == "\n\n");
  const auto h = nlohmann::ordered_json::parse(raw.substr(6, end - 6));

  std::vector<std::string> keys;
  for (const auto& [k, v] : h.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"version", "model", "schedule", "train", "params", "extra"});
  std::vector<std::string> train_keys;
  for (const auto& [k, v] : h["train"].items()) train_keys.push_back(k);
  CHECK(train_keys == std::vector<std::string>{"step", "first_stage_trained", "first_stage_scale",
                                               "adam", "ema", "rng_state"});

  std::vector<std::string> names;
  for (const auto& p : h["params"]) names.push_back(p["name"]);
  const std::vector<std::string> golden{
      "denoiser.layer0.weight", "denoiser.layer0.bias", "denoiser.layer1.weight",
      "denoiser.layer1.bias",   "denoiser.layer2.weight", "denoiser.layer2.bias",
      "encoder.layer0.weight",  "encoder.layer0.bias",  "encoder.mu.weight",
      "encoder.mu.bias",        "encoder.logvar.weight", "encoder.logvar.bias",
      "first_stage.encoder.layer0.weight", "first_stage.encoder.layer0.bias",
      "first_stage.encoder.layer1.weight", "first_stage.encoder.layer1.bias",
      "first_stage.decoder.layer0.weight", "first_stage.decoder.layer0.bias",
      "first_stage.decoder.layer1.weight", "first_stage.decoder.layer1.bias"};
  CHECK(names == golden);
  CHECK(h["params"][0]["shape"] == nlohmann::ordered_json::array({2 + 4 + 3, 8}));
}
