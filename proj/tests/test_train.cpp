#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "sar/checkpoint.hpp"
#include "sar/error.hpp"
#include "sar/kernels.hpp"
#include "sar/train.hpp"

namespace fs = std::filesystem;
using sar::TrainConfig;

namespace {

fs::path tmp_dir(const std::string& name) {
  const char* base = std::getenv("SAR_TEST_TMP");
  fs::path p = fs::path(base ? base : fs::temp_directory_path().string()) / ("train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_config(int samples = 24) {
  TrainConfig c;
  c.model.image_size = 16;
  c.model.patch_size = 4;
  c.model.embed_dim = 16;
  c.model.heads = 2;
  c.model.blocks = 2;
  c.model.mlp_ratio = 2.0;
  c.dataset.image_size = 16;
  c.dataset.patch_size = 4;
  c.dataset.samples = samples;
  c.dataset.min_size = 5;
  c.dataset.max_size = 9;
  c.dataset.max_shapes = 2;
  c.batch_size = 8;
  c.epochs = 2;
  c.test_samples = 12;
  return c;
}

std::vector<sar::ShapeSample> data_for(const TrainConfig& c, std::uint64_t seed = 1) {
  return sar::generate_dataset(c.dataset, seed);
}

template <class T>
bool same_bits(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity") {
  TrainConfig c;
  c.lr = 1e-3;
  c.min_lr = 1e-6;
  const long total = 500;
  CHECK(sar::cosine_lr(c, 0, total) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(sar::cosine_lr(c, total - 1, total) <= 1e-2 * c.lr);
  CHECK(sar::cosine_lr(c, total - 1, total) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(sar::cosine_lr(c, (total - 1) / 2, total) > 0.4e-3);
  double prev = 1.0;
  for (long s = 0; s < total; ++s) {
    const double lr = sar::cosine_lr(c, s, total);
    CHECK(lr <= prev);
    CHECK(lr >= c.min_lr);
    prev = lr;
  }
  CHECK(sar::cosine_lr(c, 0, 1) == c.lr);
}

TEST_CASE("step counts and seed streams") {
  auto c = tiny_config(25);
  CHECK(c.steps_per_epoch() == 4);
  CHECK(c.total_steps() == 8);
  std::set<std::uint64_t> seen;
  for (auto s : {sar::Stream::Init, sar::Stream::TrainData, sar::Stream::TestData}) {
    seen.insert(sar::derive_seed(0, s));
    seen.insert(sar::derive_seed(1, s));
  }
  for (std::uint64_t e = 0; e < 10; ++e) seen.insert(sar::derive_seed(0, sar::Stream::Shuffle, e));
  CHECK(seen.size() == 16);
  CHECK(sar::derive_seed(7, sar::Stream::Init) == sar::derive_seed(7, sar::Stream::Init));
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.dataset.image_size = 32;
  CHECK_THROWS_AS(c.validate(), sar::Error);
  c = tiny_config();
  c.model.num_classes = 4;
  CHECK_THROWS_AS(c.validate(), sar::Error);
  c = tiny_config();
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), sar::Error);
  c = tiny_config();
  c.min_lr = 1.0;
  CHECK_THROWS_AS(c.validate(), sar::Error);
  CHECK_NOTHROW(tiny_config().validate());
  CHECK_THROWS_AS(sar::Trainer<float>(tiny_config(), {}), sar::Error);
}

TEST_CASE("a tiny model overfits eight samples") {
  auto c = tiny_config(8);
  c.epochs = 200;
  c.lr = 3e-3;
  c.min_lr = 1e-5;
  c.weight_decay = 0.0;
  const auto data = data_for(c);
  sar::Trainer<float> t(c, data);
  for (int i = 0; i < 200; ++i) t.step();
  CHECK(t.step_count() == 200);
  const auto m = sar::evaluate(t.model(), std::span<const sar::ShapeSample>(data));
  CHECK(m.accuracy == 1.0);
  CHECK(m.loss < 0.1);
}

TEST_CASE("lambda = 0 trains exactly like no auxiliary loss") {
  auto c = tiny_config();
  c.lambda = 0.0;
  const auto data = data_for(c);
  for (auto aux : {sar::AuxLoss::SpatialEntropy, sar::AuxLoss::TotalVariation}) {
    auto with = c;
    with.aux_loss = aux;
    auto none = c;
    none.aux_loss = sar::AuxLoss::None;
    sar::Trainer<float> a(with, data), b(none, data);
    for (int i = 0; i < 6; ++i) {
      a.step();
      b.step();
    }
    CHECK(same_bits<float>(a.model().parameters(), b.model().parameters()));
    CHECK(same_bits<float>(a.adam_m(), b.adam_m()));
  }
}

TEST_CASE("the auxiliary loss changes training when lambda > 0") {
  auto c = tiny_config();
  c.lambda = 0.5;
  const auto data = data_for(c);
  auto none = c;
  none.aux_loss = sar::AuxLoss::None;
  sar::Trainer<float> a(c, data), b(none, data);
  const auto sa = a.step();
  const auto sb = b.step();
  CHECK(sa.ce == sb.ce);  // same initial model, same batch
  CHECK(sa.aux > 0.0);
  CHECK(sa.loss == doctest::Approx(sa.ce + 0.5 * sa.aux));
  CHECK_FALSE(same_bits<float>(a.model().parameters(), b.model().parameters()));
}

TEST_CASE("training is reproducible and independent of the thread count") {
  auto c = tiny_config();
  c.precision = sar::Precision::Float64;
  const auto data = data_for(c);
  const int saved = sar::kernels::max_threads();
  sar::kernels::set_threads(1);
  sar::Trainer<double> a(c, data);
  a.run_epoch();
  sar::kernels::set_threads(3);
  sar::Trainer<double> b(c, data);
  b.run_epoch();
  sar::Trainer<double> d(c, data);
  d.run_epoch();
  sar::kernels::set_threads(saved);
  CHECK(same_bits<double>(a.model().parameters(), b.model().parameters()));
  CHECK(same_bits<double>(b.model().parameters(), d.model().parameters()));

  auto other = c;
  other.seed = 1;
  sar::Trainer<double> e(other, data);
  e.run_epoch();
  CHECK_FALSE(same_bits<double>(a.model().parameters(), e.model().parameters()));
}

TEST_CASE("run_epoch averages over the epoch and advances counters") {
  auto c = tiny_config(20);  // 8 + 8 + 4
  sar::Trainer<float> t(c, data_for(c));
  const auto r = t.run_epoch();
  CHECK(r.epoch == 1);
  CHECK(r.step == 3);
  CHECK(t.epoch() == 1);
  CHECK(r.loss == doctest::Approx(r.ce + c.lambda * r.aux));
  CHECK(r.entropy == r.aux);
  CHECK(r.entropy >= 0.0);
  CHECK(r.entropy <= std::log(16.0));
  CHECK(r.components >= 1.0);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  CHECK(t.run_epoch().step == 6);
}

TEST_CASE("evaluate is pure and an untrained model sits at chance") {
  auto c = tiny_config();
  TrainConfig big = c;
  big.dataset.samples = 300;
  const auto data = data_for(big, 9);
  sar::Trainer<float> t(c, data_for(c));
  const std::vector<float> before(t.model().parameters().begin(), t.model().parameters().end());
  const auto m1 = sar::evaluate(t.model(), std::span<const sar::ShapeSample>(data));
  const auto m2 = sar::evaluate(t.model(), std::span<const sar::ShapeSample>(data));
  CHECK(m1 == m2);
  CHECK(same_bits<float>(t.model().parameters(), before));
  CHECK(m1.samples == 300);
  CHECK(std::abs(m1.accuracy - 1.0 / 3.0) <= 0.1);
  CHECK(m1.loss == doctest::Approx(std::log(3.0)).epsilon(0.05));
  CHECK(m1.entropy >= 0.0);
  CHECK(m1.entropy <= std::log(16.0));
  CHECK(m1.jaccard >= 0.0);
  CHECK(m1.jaccard <= 1.0);
  CHECK_THROWS_AS((void)sar::evaluate(t.model(), std::span<const sar::ShapeSample>()), sar::Error);

  const auto scores = sar::jaccard_scores(t.model(), std::span<const sar::ShapeSample>(data), 0.6);
  REQUIRE(scores.size() == 300);
  double mean = 0.0;
  for (const auto& s : scores) {
    CHECK(s.best_head >= 0);
    CHECK(s.best_head < 2);
    mean += s.jaccard;
  }
  CHECK(mean / 300 == doctest::Approx(m1.jaccard).epsilon(1e-12));
}

TEST_CASE("run log round trip") {
  sar::EpochRecord r{3, 42, 1e-4, 1.5, 1.4, 10.0, 0.5, 2.25, 3.5, std::nullopt};
  CHECK(sar::parse_json_line(sar::to_json_line(r)) == r);
  r.test = sar::EvalMetrics{500, 0.7, 0.8, 1.1, 4.5, 0.3};
  CHECK(sar::parse_json_line(sar::to_json_line(r)) == r);
  CHECK(sar::to_json_line(r).find('\n') == std::string::npos);

  const auto dir = tmp_dir("log");
  sar::RunLogWriter w(dir / "log.jsonl");
  w.append(r);
  r.epoch = 4;
  r.test.reset();
  w.append(r);
  const auto back = sar::read_run_log(dir / "log.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1] == r);
  CHECK(back[0].test->samples == 500);

  CHECK_THROWS_AS((void)sar::parse_json_line("{\"epoch\": 1}"), sar::Error);
  CHECK_THROWS_AS((void)sar::parse_json_line("garbage"), sar::Error);
  CHECK_THROWS_AS((void)sar::read_run_log(dir / "missing.jsonl"), sar::Error);
}

TEST_CASE("a non-finite parameter aborts the step with a dump") {
  auto c = tiny_config();
  sar::Trainer<float> t(c, data_for(c));
  const auto dir = tmp_dir("nan");
  t.set_dump_path(dir / "dump.json");
  t.model().parameter("blocks.0.attn.qkv.weight")[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.step();
    FAIL("expected NumericFailure");
  } catch (const sar::Error& e) {
    CHECK(e.code() == sar::ErrorCode::NumericFailure);
  }
  REQUIRE(fs::exists(dir / "dump.json"));
  std::ifstream in(dir / "dump.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.contains("reason"));
  CHECK(j.at("samples").size() == 8);
  CHECK(t.step_count() == 0);
}

TEST_CASE("run_training writes logs and checkpoints, and resumes exactly") {
  auto c = tiny_config();
  c.epochs = 4;
  c.checkpoint_every = 2;
  c.eval_every = 2;
  const auto full_dir = tmp_dir("full");
  const auto full = sar::run_training(c, {full_dir, std::nullopt, {}});
  REQUIRE(full.log.size() == 4);
  CHECK_FALSE(full.log[0].test.has_value());
  CHECK(full.log[1].test.has_value());
  CHECK(full.log[3].test.has_value());
  CHECK(fs::exists(full_dir / "checkpoint_epoch2.bin"));
  CHECK(fs::exists(full_dir / "checkpoint.bin"));
  CHECK(sar::read_run_log(full_dir / "run_log.jsonl") == full.log);

  const auto res_dir = tmp_dir("resumed");
  const auto resumed =
      sar::run_training(c, {res_dir, full_dir / "checkpoint_epoch2.bin", {}});
  REQUIRE(resumed.log.size() == 2);
  CHECK(resumed.log[0] == full.log[2]);
  CHECK(resumed.log[1] == full.log[3]);
  const auto a = sar::load_checkpoint(full_dir / "checkpoint.bin");
  const auto b = sar::load_checkpoint(res_dir / "checkpoint.bin");
  CHECK(a.blobs == b.blobs);
  CHECK(a.step == b.step);

  // a checkpoint from a different model is refused
  auto other = c;
  other.model.last_block = sar::BlockVariant::Standard;
  try {
    sar::run_training(other, {tmp_dir("bad"), full_dir / "checkpoint_epoch2.bin", {}});
    FAIL("expected CheckpointFormat");
  } catch (const sar::Error& e) {
    CHECK(e.code() == sar::ErrorCode::CheckpointFormat);
  }
}

TEST_CASE("checkpoint format errors") {
  auto c = tiny_config();
  sar::Trainer<float> t(c, data_for(c));
  t.step();
  const auto dir = tmp_dir("ckpt");
  sar::save_checkpoint(dir / "a.bin", t);
  const auto ck = sar::load_checkpoint(dir / "a.bin");
  CHECK(ck.step == 1);
  CHECK(ck.precision == sar::Precision::Float32);
  sar::VisionTransformer<float> m(c.model);
  sar::load_parameters(ck, m);
  CHECK(same_bits<float>(m.parameters(), t.model().parameters()));

  auto code = [&](const fs::path& p) {
    try {
      (void)sar::load_checkpoint(p);
    } catch (const sar::Error& e) {
      return e.code();
    }
    return sar::ErrorCode::Usage;
  };
  CHECK(code(dir / "missing.bin") == sar::ErrorCode::MissingFile);
  std::string bytes;
  {
    std::ifstream in(dir / "a.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  CHECK(code(write("trunc.bin", bytes.substr(0, bytes.size() - 3))) == sar::ErrorCode::CheckpointFormat);
  CHECK(code(write("extra.bin", bytes + "x")) == sar::ErrorCode::CheckpointFormat);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code(write("magic.bin", bad_magic)) == sar::ErrorCode::CheckpointFormat);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK(code(write("version.bin", bad_version)) == sar::ErrorCode::CheckpointFormat);
  CHECK(code(write("empty.bin", "")) == sar::ErrorCode::CheckpointFormat);

  auto wrong = c.model;
  wrong.embed_dim = 8;
  sar::VisionTransformer<float> w(wrong);
  CHECK_THROWS_AS(sar::load_parameters(ck, w), sar::Error);
}
