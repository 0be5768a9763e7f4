// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "sar/ccl.hpp"
#include "sar/config.hpp"
#include "sar/entropy.hpp"
#include "sar/train.hpp"
#include "sar/vit.hpp"

namespace fs = std::filesystem;
using sar::Grid2D;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Central differences at h = 1e-6 carry roundoff of about eps_mach * |f| / h,
// i.e. ~1e-10 for the losses here, so relative error is measured against
// max(|a|, |b|, 1e-4): gradients below the floor are held to 1e-9 absolute.
constexpr double kFdStep = 1e-6;
constexpr double kFdFloor = 1e-4;
constexpr double kFdTolerance = 1e-5;

std::vector<int> support_of(const Grid2D& s) {
  return sar::connected_components(sar::threshold_map(s).thresholded).labels;
}

fs::path work_dir() {
  const char* base = std::getenv("SAR_TEST_TMP");
  return fs::path(base ? base : fs::temp_directory_path().string()) / "acceptance";
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream ss;
  ss << std::setprecision(prec) << x;
  return ss.str();
}

// 1. Spatial-entropy gradient against central differences.
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n;
  double worst = 0.0;
  long compared = 0, skipped = 0;
  for (int map = 0; map < 200; ++map) {
    std::vector<double> v(64);
    for (double& x : v) x = n(rng);
    const Grid2D s(8, v);
    const auto r = sar::spatial_entropy(s);
    const auto base = support_of(s);
    for (int i = 0; i < 64; ++i) {
      auto p = v, m = v;
      p[i] += kFdStep;
      m[i] -= kFdStep;
      if (support_of(Grid2D(8, p)) != base || support_of(Grid2D(8, m)) != base) {
        ++skipped;
        continue;
      }
      const double fd = (sar::spatial_entropy(Grid2D(8, p)).entropy -
                         sar::spatial_entropy(Grid2D(8, m)).entropy) / (2 * kFdStep);
      worst = std::max(worst, oracle::rel_error(r.gradient.values()[i], fd, kFdFloor));
      ++compared;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kFdTolerance && secs < 60.0 && compared > 0,
          "max rel err " + fmt(worst) + " over " + std::to_string(compared) + " cells (" +
              std::to_string(skipped) + " support flips skipped), " + fmt(secs, 3) + " s"};
}

// 2. Union-find labeling against flood fill.
Outcome ccl_equivalence() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> dens(0.1, 0.9);
  int mismatches = 0;
  for (int g = 0; g < 1000; ++g) {
    std::bernoulli_distribution on(dens(rng));
    std::vector<double> v(196);
    for (double& x : v) x = on(rng) ? 1.0 : 0.0;
    const auto l = sar::connected_components(Grid2D(14, v));
    const auto o = oracle::flood_fill(v, 14);
    if (oracle::partition(l.labels) != oracle::partition(o) || l.labels != o) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches on 1000 grids of 14x14"};
}

// 3. Worked entropy examples.
Outcome hand_cases() {
  const double h0 = sar::spatial_entropy(Grid2D(2, {2, 2, 0, 0})).entropy;
  const double h1 = sar::spatial_entropy(Grid2D(3, {3, 0, 3, 0, 0, 0, 0, 0, 0})).entropy;
  const auto r2 = sar::spatial_entropy(Grid2D(3, {4, 0, 2, 0, 0, 0, 0, 0, 0}));
  const double want2 = -(5.0 / 7) * std::log(5.0 / 7) - (2.0 / 7) * std::log(2.0 / 7);
  const double e0 = std::abs(h0);
  const double e1 = std::abs(h1 - std::numbers::ln2);
  const double e2 = std::abs(r2.entropy - want2);
  const bool ok = e0 <= 1e-9 && e1 <= 1e-9 && e2 <= 1e-9 && std::abs(r2.entropy - 0.5983) < 5e-5;
  return {ok, "H=" + fmt(h0, 10) + ", " + fmt(h1, 10) + ", " + fmt(r2.entropy, 10) +
                  " (errors " + fmt(e0, 2) + ", " + fmt(e1, 2) + ", " + fmt(e2, 2) + ")"};
}

// 4. Shift and scale invariance, entropy bound.
Outcome invariance_suite() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> q(-64, 64);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  int shift_fail = 0, bound_fail = 0;
  double worst_scale = 0.0;
  auto bound_ok = [](const sar::EntropyResult& r) {
    const int hr = r.components.count;
    return r.entropy >= 0.0 && r.entropy <= std::log(std::max(1, hr)) + 1e-6;
  };
  for (int g = 0; g < 500; ++g) {
    const int k = 2 + g % 15;
    // values and shift on a coarse dyadic lattice so that s + c is exact
    std::vector<double> v(static_cast<std::size_t>(k) * k);
    for (double& x : v) x = q(rng) / 16.0;
    const double c = q(rng) / 8.0;
    auto shifted = v;
    for (double& x : shifted) x += c;
    const auto a = sar::spatial_entropy(Grid2D(k, v));
    const auto b = sar::spatial_entropy(Grid2D(k, shifted));
    if (a.entropy != b.entropy) ++shift_fail;

    std::vector<double> w(v.size());
    for (double& x : w) x = n(rng);
    const double s = scale(rng);
    auto scaled = w;
    for (double& x : scaled) x *= s;
    const auto u = sar::spatial_entropy(Grid2D(k, w));
    const auto us = sar::spatial_entropy(Grid2D(k, scaled));
    worst_scale = std::max(worst_scale, std::abs(u.entropy - us.entropy));
    for (const auto* r : {&a, &b, &u, &us}) bound_fail += !bound_ok(*r);
  }
  return {shift_fail == 0 && worst_scale <= 1e-9 && bound_fail == 0,
          std::to_string(shift_fail) + " shift mismatches, max scale diff " + fmt(worst_scale, 3) +
              ", " + std::to_string(bound_fail) + " bound violations over 500 grids"};
}

// 5. Whole-model gradient of ce + 0.01 * L_se in double precision.
Outcome vit_gradient_check() {
  sar::ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.mlp_ratio = 2.0;
  cfg.num_classes = 3;
  cfg.last_block = sar::BlockVariant::NoMsaSkipNoLn;
  sar::VisionTransformer<double> model(cfg);
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& p : model.parameters()) p = n(rng);
  for (const auto& e : model.layout().entries()) {
    if (e.name.find("norm") != std::string::npos && e.name.ends_with(".weight")) {
      for (double& p : model.parameter(e.name)) p += 1.0;
    }
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> image(64);
  for (double& x : image) x = u(rng);
  const int label = 1;
  const double lambda = 0.01;

  auto loss = [&]() {
    const auto t = model.forward(image);
    return sar::classification_loss<double>(t.logits, label).loss +
           lambda * sar::spatial_entropy_loss(t.last_block_similarity).loss;
  };
  auto supports = [&]() {
    const auto t = model.forward(image);
    std::vector<std::vector<int>> s;
    for (const auto& g : t.last_block_similarity) s.push_back(support_of(g));
    return s;
  };

  const auto t = model.forward(image);
  const auto ce = sar::classification_loss<double>(t.logits, label);
  auto se = sar::spatial_entropy_loss(t.last_block_similarity);
  for (auto& g : se.gradients)
    for (double& x : g.values()) x *= lambda;
  const auto grad = model.backward(t, ce.grad, se.gradients);
  const auto base = supports();

  auto params = model.parameters();
  double worst = 0.0;
  std::string worst_name;
  int excluded = 0;
  for (const auto& e : model.layout().entries()) {
    for (std::size_t i = e.offset; i < e.offset + e.size(); ++i) {
      const double x0 = params[i];
      double fd = std::nan("");
      for (double h = kFdStep; h >= 1e-8 && std::isnan(fd); h /= 10) {
        params[i] = x0 + h;
        const bool up = supports() == base;
        const double lp = loss();
        params[i] = x0 - h;
        const bool down = supports() == base;
        const double lm = loss();
        if (up && down) fd = (lp - lm) / (2 * h);
      }
      params[i] = x0;
      if (std::isnan(fd)) {
        ++excluded;
        continue;
      }
      const double err = oracle::rel_error(grad[i], fd, kFdFloor);
      if (err > worst) {
        worst = err;
        worst_name = e.name;
      }
    }
  }
  return {worst <= kFdTolerance,
          "max rel err " + fmt(worst) + " (" + worst_name + ") over " +
              std::to_string(params.size() - excluded) + "/" + std::to_string(params.size()) +
              " parameters, " + std::to_string(excluded) + " excluded for support flips"};
}

// 6. Variants A-D at desk scale: construct, forward, backward, parameter deltas,
//    and agreement with the straight-line forward at a small size.
Outcome architecture_variants() {
  const sar::BlockVariant variants[] = {sar::BlockVariant::Standard, sar::BlockVariant::NoMsaSkip,
                                        sar::BlockVariant::NoMsaSkipNoLn,
                                        sar::BlockVariant::NoAllSkips};
  sar::ViTConfig desk;  // 56x56, patch 4, d=64, H=4, L=4
  std::vector<std::size_t> counts;
  bool finite = true;
  double oracle_err = 0.0;
  for (auto v : variants) {
    desk.last_block = v;
    sar::VisionTransformer<double> m(desk);
    std::mt19937_64 rng(606);
    m.init(rng);
    counts.push_back(m.parameter_count());
    std::vector<double> img(56 * 56);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& x : img) x = u(rng);
    const auto t = m.forward(img);
    const auto ce = sar::classification_loss<double>(t.logits, 0);
    const auto se = sar::spatial_entropy_loss(t.last_block_similarity);
    const auto g = m.backward(t, ce.grad, se.gradients);
    for (double x : g) finite = finite && std::isfinite(x);

    sar::ViTConfig small = desk;
    small.image_size = 8;
    small.patch_size = 2;
    small.embed_dim = 8;
    small.heads = 2;
    small.blocks = 2;
    sar::VisionTransformer<double> s(small);
    std::normal_distribution<double> n(0.0, 0.3);
    for (double& p : s.parameters()) p = n(rng);
    std::vector<double> simg(64);
    for (double& x : simg) x = u(rng);
    const auto st = s.forward(simg);
    const auto so = oracle::vit_forward(s, simg);
    for (int c = 0; c < small.num_classes; ++c) {
      oracle_err = std::max(oracle_err, std::abs(st.logits[c] - so.logits[c]));
    }
  }
  const long d = desk.embed_dim;
  const long dB = static_cast<long>(counts[1]) - static_cast<long>(counts[0]);
  const long dC = static_cast<long>(counts[2]) - static_cast<long>(counts[0]);
  const long dD = static_cast<long>(counts[3]) - static_cast<long>(counts[0]);
  const bool ok = finite && dB == 0 && dC == -2 * d && dD == -2 * d && oracle_err < 1e-12;
  return {ok, "A=" + std::to_string(counts[0]) + " params; B-A=" + std::to_string(dB) +
                  ", C-A=" + std::to_string(dC) + ", D-A=" + std::to_string(dD) +
                  " (2d=" + std::to_string(2 * d) + "); gradients finite=" +
                  (finite ? "yes" : "no") + "; oracle logit diff " + fmt(oracle_err, 2)};
}

// Shared training runs for criteria 7-9.
struct RunSummary {
  sar::EvalMetrics test;
  double first_train_entropy = 0.0;
  double last_train_entropy = 0.0;
  double seconds = 0.0;
};

sar::TrainConfig acceptance_config() {
  return sar::load_config(fs::path(SAR_CONFIG_DIR) / "acceptance.json");
}

RunSummary train_once(sar::TrainConfig cfg, const std::string& name) {
  const auto dir = work_dir() / name;
  fs::remove_all(dir);
  std::cerr << "[acceptance] training " << name << " (" << cfg.epochs << " epochs)\n";
  const auto t0 = Clock::now();
  sar::RunOptions opts;
  opts.out_dir = dir;
  opts.on_epoch = [&](const sar::EpochRecord& r) {
    std::cerr << "  " << name << " " << sar::to_json_line(r) << '\n';
  };
  const auto res = sar::run_training(cfg, opts);
  RunSummary s;
  s.test = *res.log.back().test;
  s.first_train_entropy = res.log.front().entropy;
  s.last_train_entropy = res.log.back().entropy;
  s.seconds = seconds_since(t0);
  return s;
}

struct Comparison {
  std::vector<RunSummary> sar, baseline;
};

Comparison& directional_runs() {
  static Comparison c = [] {
    Comparison out;
    const auto base = acceptance_config();
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      auto s = base;
      s.seed = seed;
      s.aux_loss = sar::AuxLoss::SpatialEntropy;
      s.lambda = 0.01;
      auto b = s;
      b.lambda = 0.0;
      out.sar.push_back(train_once(s, "sar_seed" + std::to_string(seed)));
      out.baseline.push_back(train_once(b, "baseline_seed" + std::to_string(seed)));
    }
    return out;
  }();
  return c;
}

// 7. SAR lowers test-set entropy and component count against lambda = 0.
Outcome directional_effect() {
  const auto& c = directional_runs();
  int entropy_wins = 0, hr_wins = 0;
  std::string detail;
  double worst_secs = 0.0;
  for (std::size_t i = 0; i < c.sar.size(); ++i) {
    const auto& s = c.sar[i].test;
    const auto& b = c.baseline[i].test;
    entropy_wins += s.entropy < b.entropy;
    hr_wins += s.components < b.components;
    worst_secs = std::max({worst_secs, c.sar[i].seconds, c.baseline[i].seconds});
    detail += "seed " + std::to_string(i) + ": H " + fmt(s.entropy) + " vs " + fmt(b.entropy) +
              ", h_r " + fmt(s.components) + " vs " + fmt(b.components) + " (SAR train H epoch 1 " +
              fmt(c.sar[i].first_train_entropy) + " -> last " + fmt(c.sar[i].last_train_entropy) +
              "); ";
  }
  detail += "slowest run " + fmt(worst_secs, 4) + " s";
  return {entropy_wins == 3 && hr_wins == 3 && worst_secs <= 1200.0, detail};
}

// 8. SAR raises best-head Jaccard in at least two of three seeds.
Outcome jaccard_direction() {
  const auto& c = directional_runs();
  int wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < c.sar.size(); ++i) {
    const double s = c.sar[i].test.jaccard, b = c.baseline[i].test.jaccard;
    wins += s > b;
    detail += "seed " + std::to_string(i) + ": " + fmt(s) + " vs " + fmt(b) + "; ";
  }
  detail += std::to_string(wins) + "/3 seeds";
  return {wins >= 2, detail};
}

// 9. TV loss oracle and a TV-regularised run.
Outcome tv_baseline() {
  std::mt19937_64 rng(909);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int g = 0; g < 100; ++g) {
    const int k = 2 + g % 13, heads = 1 + g % 4;
    std::vector<Grid2D> maps;
    std::vector<std::vector<double>> raw;
    for (int h = 0; h < heads; ++h) {
      std::vector<double> v(static_cast<std::size_t>(k) * k);
      for (double& x : v) x = n(rng);
      raw.push_back(v);
      maps.emplace_back(k, v);
    }
    worst = std::max(worst, std::abs(sar::tv_loss(maps).loss - oracle::tv(raw, k)));
  }
  auto cfg = acceptance_config();
  cfg.seed = 0;
  cfg.aux_loss = sar::AuxLoss::TotalVariation;
  cfg.lambda = 0.01;
  const auto tv = train_once(cfg, "tv_seed0");
  const auto& sar0 = directional_runs().sar[0].test;
  const auto& base0 = directional_runs().baseline[0].test;
  const bool ran = std::isfinite(tv.test.components) && tv.test.samples > 0;
  return {worst <= 1e-12 && ran,
          "oracle max diff " + fmt(worst, 2) + " on 100 grids; seed 0 test h_r: TV " +
              fmt(tv.test.components) + ", SAR " + fmt(sar0.components) + ", lambda=0 " +
              fmt(base0.components) + " (entropy " + fmt(tv.test.entropy) + "/" +
              fmt(sar0.entropy) + "/" + fmt(base0.entropy) + ")"};
}

// 10. lambda = 0 with the entropy term is bit-identical to no auxiliary loss.
Outcome lambda_zero_equivalence() {
  auto cfg = acceptance_config();
  cfg.dataset.samples = 256;
  cfg.lambda = 0.0;
  cfg.aux_loss = sar::AuxLoss::SpatialEntropy;
  auto none = cfg;
  none.aux_loss = sar::AuxLoss::None;
  const auto data = sar::generate_dataset(cfg.dataset, sar::derive_seed(cfg.seed, sar::Stream::TrainData));
  sar::Trainer<float> a(cfg, data), b(none, data);
  const int steps = 2 * cfg.steps_per_epoch();
  int identical = 0;
  for (int s = 0; s < steps; ++s) {
    a.step();
    b.step();
    const auto pa = a.model().parameters(), pb = b.model().parameters();
    identical += std::memcmp(pa.data(), pb.data(), pa.size_bytes()) == 0 &&
                 std::memcmp(a.adam_v().data(), b.adam_v().data(), a.adam_v().size_bytes()) == 0;
  }
  return {identical == steps,
          std::to_string(identical) + "/" + std::to_string(steps) + " steps bit-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"ccl oracle equivalence", ccl_equivalence},
      {"entropy hand cases", hand_cases},
      {"invariance suite", invariance_suite},
      {"mini-vit gradient check", vit_gradient_check},
      {"architecture variants", architecture_variants},
      {"directional SAR effect", directional_effect},
      {"jaccard direction", jaccard_direction},
      {"tv baseline", tv_baseline},
      {"lambda=0 equivalence", lambda_zero_equivalence},
  };
  // SAR_ACCEPTANCE_ONLY=1,3,5 runs a subset while iterating; ctest runs all.
  std::set<std::size_t> only;
  if (const char* sel = std::getenv("SAR_ACCEPTANCE_ONLY")) {
    std::stringstream ss(sel);
    for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoul(tok));
  }
  fs::create_directories(work_dir());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << i + 1 << ". "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed;
}
