// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance gate. Each test is one release criterion and
// prints a single [ACCEPTANCE] line; the suite passes only when every
// criterion holds.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "distillkit/distillkit.hpp"
#include "support/oracles.hpp"

#ifndef DISTILLKIT_CLI_PATH
#error "DISTILLKIT_CLI_PATH must point at the distillkit binary"
#endif
#ifndef DISTILLKIT_FIXTURES_DIR
#error "DISTILLKIT_FIXTURES_DIR must point at tests/fixtures"
#endif

namespace fs = std::filesystem;
using namespace distillkit;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

fs::path fixtures() { return fs::path(DISTILLKIT_FIXTURES_DIR); }

fs::path fresh_dir(const std::string& leaf) {
  fs::path dir = fs::temp_directory_path() / "distillkit_acceptance" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << "cannot open " << p;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / "distillkit_acceptance";
  fs::create_directories(dir);
  fs::path capture = dir / ("cli_" + std::to_string(counter++) + ".txt");
  std::string cmd = std::string("\"") + DISTILLKIT_CLI_PATH + "\" " + args +
                    " > \"" + capture.string() + "\" 2>&1";
  int status = std::system(cmd.c_str());
  CliResult r;
  if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(capture);
  return r;
}

ModelConfig toy_config(std::size_t layers, std::size_t d, std::size_t f,
                       std::size_t h, std::size_t channels,
                       std::size_t pos_k = 8, std::size_t pos_g = 4) {
  ModelConfig cfg;
  cfg.name = "toy";
  cfg.n_layers = layers;
  cfg.embed_dim = d;
  cfg.ffn_dim = f;
  cfg.n_heads = h;
  cfg.frontend.channels = channels;
  cfg.pos_conv_kernel = pos_k;
  cfg.pos_conv_groups = pos_g;
  return cfg;
}

Tensor leaf(Shape shape, RngStream& s, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * s.next_normal();
  Tensor t = Tensor::from_data(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor constant(Shape shape, RngStream& s) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = s.next_normal();
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. parameter counts via the CLI, within 1.5% of the published sizes
// ---------------------------------------------------------------------------

TEST(Criteria, C01_ParameterCounts) {
  auto t0 = std::chrono::steady_clock::now();
  CliResult r = run_cli("count-params --check");
  double dt = seconds_since(t0);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_LT(dt, 1.0) << "count-params took " << dt << " s";
  const std::vector<std::pair<std::string, std::string>> expect = {
      {"hubert-base", "94370816"},    {"hubert-large", "315427840"},
      {"distilhubert", "23492096"},   {"12l-half", "26872832"},
      {"12l-fourth", "9933824"},      {"3l-one", "30579968"},
      {"3l-half", "10902656"},        {"6l-half", "16226048"},
  };
  for (const auto& [name, count] : expect) {
    std::string row_prefix = name + "," + count + ",";
    EXPECT_NE(r.out.find(row_prefix), std::string::npos)
        << "missing row for " << name << " in:\n"
        << r.out;
  }
  std::size_t yes_rows = 0;
  std::istringstream in(r.out);
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() >= 4 && line.compare(line.size() - 4, 4, ",yes") == 0) {
      ++yes_rows;
    }
  }
  EXPECT_EQ(yes_rows, 8u) << r.out;
}

// ---------------------------------------------------------------------------
// 2. rank aggregation reproduces the published averages exactly
// ---------------------------------------------------------------------------

TEST(Criteria, C02_RankAggregation) {
  const std::vector<std::pair<const char*, const char*>> cases = {
      {"ranks_base_teacher.csv",
       "system,average_rank\n"
       "base teacher,1.7\n"
       "2l baseline,5.8\n"
       "12l-half pred,4.6\n"
       "12l-half l2l,2.6\n"
       "12l-fourth pred,8.1\n"
       "12l-fourth l2l,7.0\n"
       "3l-one pred,4.6\n"
       "3l-one l2l,5.2\n"
       "3l-half pred,8.1\n"
       "3l-half l2l,7.5\n"},
      {"ranks_large_teacher.csv",
       "system,average_rank\n"
       "large teacher,2.7\n"
       "12l-half pred,4.2\n"
       "12l-half l2l,3.2\n"
       "12l-fourth pred,6.8\n"
       "12l-fourth l2l,7.4\n"
       "3l-one pred,3.7\n"
       "3l-one l2l,4.3\n"
       "3l-half pred,5.9\n"
       "3l-half l2l,6.9\n"},
      {"ranks_combined.csv",
       "system,average_rank\n"
       "base teacher,1.3\n"
       "2l baseline,4.1\n"
       "6l-half pred,3.4\n"
       "6l-half l2l,3.3\n"
       "6l-half combined,2.9\n"},
  };
  for (const auto& [file, expected] : cases) {
    auto t0 = std::chrono::steady_clock::now();
    CliResult r =
        run_cli("rank --table \"" + (fixtures() / file).string() + "\"");
    double dt = seconds_since(t0);
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_LT(dt, 1.0) << file << " took " << dt << " s";
    EXPECT_EQ(r.out, expected) << file;
  }
}

// ---------------------------------------------------------------------------
// 3. learning-rate schedule: pinned points exact, continuous at the knee
// ---------------------------------------------------------------------------

TEST(Criteria, C03_LearningRateSchedule) {
  const std::uint64_t total = 200000;
  const double peak = 2e-4;
  const std::uint64_t warmup_end = 14000;  // round(0.07 * 200000)
  EXPECT_EQ(lr_at(warmup_end, total, peak), peak);
  EXPECT_EQ(lr_at(107000, total, peak), 1e-4);
  EXPECT_EQ(lr_at(0, total, peak), 0.0);
  EXPECT_EQ(lr_at(total, total, peak), 0.0);
  // one step inside each leg of the knee, against the closed forms
  double up = peak * static_cast<double>(warmup_end - 1) /
              static_cast<double>(warmup_end);
  double down = peak * static_cast<double>(total - warmup_end - 1) /
                static_cast<double>(total - warmup_end);
  EXPECT_LT(std::fabs(lr_at(warmup_end - 1, total, peak) - up), 1e-12);
  EXPECT_LT(std::fabs(lr_at(warmup_end + 1, total, peak) - down), 1e-12);
  EXPECT_LT(std::fabs(lr_at(warmup_end + 1, total, peak) - peak),
            2.0 * peak / static_cast<double>(total - warmup_end));
}

// ---------------------------------------------------------------------------
// 4. finite-difference gradient oracle over primitives and objectives
// ---------------------------------------------------------------------------

namespace {

void expect_fd(const char* what, const std::function<Tensor()>& f,
               std::vector<NamedParam> params,
               std::size_t max_entries_per_param = 0) {
  FdReport r = fd_check(f, std::move(params), 1e-5, 1e-4,
                        max_entries_per_param, 2026);
  EXPECT_TRUE(r.passed()) << what << ": max relative error " << r.max_rel_err;
}

}  // namespace

TEST(Criteria, C04_GradientOracle) {
  auto t0 = std::chrono::steady_clock::now();
  RngStream s(404);

  {
    Tensor p = leaf({3, 4}, s), q = leaf({3, 4}, s);
    Tensor c = constant({4, 2}, s);
    expect_fd("add/sub/scale/matmul/mean",
              [&] {
                return mean_all(matmul(sub(add(p, q), scale(p, 0.3)), c));
              },
              {{"p", p}, {"q", q}});
  }
  {
    Tensor p = leaf({4, 6}, s);
    expect_fd("reshape/slice/concat/pad/sum",
              [&] {
                Tensor a = slice_cols(p, 0, 3);
                Tensor b = pad_cols(slice_cols(p, 3, 6), 1, 0);
                Tensor c = concat_cols({a, b});  // (4, 7)
                Tensor d = slice_rows(reshape(c, {7, 4}), 1, 6);
                return sum_all(gelu(d));
              },
              {{"p", p}});
  }
  {
    Tensor p1 = leaf({2, 3}, s), p2 = leaf({3, 3}, s);
    expect_fd("stack/slice items",
              [&] {
                Tensor st = stack_items({p1, p2}, 3);
                return sum_all(gelu(slice_item(st, 1, 3)));
              },
              {{"p1", p1}, {"p2", p2}});
  }
  {
    Tensor p = leaf({3, 4}, s);
    Tensor c = constant({4, 2}, s);
    expect_fd("gelu", [&] { return mean_all(matmul(gelu(p), c)); },
              {{"p", p}});
    expect_fd("log_sigmoid",
              [&] { return mean_all(matmul(log_sigmoid(p), c)); }, {{"p", p}});
    expect_fd("softmax", [&] { return mean_all(matmul(softmax(p), c)); },
              {{"p", p}});
  }
  {
    Tensor x = leaf({4, 6}, s);
    Tensor g = leaf({6}, s, 0.3), b = leaf({6}, s, 0.3);
    Tensor c = constant({6, 2}, s);
    expect_fd("layer_norm",
              [&] { return mean_all(matmul(layer_norm(x, g, b), c)); },
              {{"x", x}, {"g", g}, {"b", b}});
  }
  {
    Tensor x = leaf({6, 8}, s);
    Tensor g = leaf({6}, s, 0.3), b = leaf({6}, s, 0.3);
    Tensor c = constant({8, 2}, s);
    expect_fd("group_norm",
              [&] { return mean_all(matmul(group_norm(x, 3, g, b), c)); },
              {{"x", x}, {"g", g}, {"b", b}});
  }
  {
    Tensor x = leaf({2, 4, 10}, s);
    Tensor w = leaf({6, 2, 3}, s);
    Tensor b = leaf({6}, s, 0.3);
    expect_fd("conv1d",
              [&] { return sum_all(gelu(conv1d(x, w, b, 2, 2))); },
              {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Tensor x = leaf({5, 4}, s);
    Tensor w = leaf({4, 3}, s);
    Tensor b = leaf({3}, s, 0.3);
    Tensor c = constant({3, 2}, s);
    expect_fd("linear",
              [&] { return mean_all(matmul(linear(x, w, b), c)); },
              {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    // keep |s - t| entries away from the L1 kink: the two sides are
    // drawn with disjoint signs of a unit-scale offset
    RngStream o(405);
    std::vector<double> sv(30), tv(30);
    for (std::size_t i = 0; i < 30; ++i) {
      sv[i] = o.next_normal();
      double off = 0.5 + o.next_unit();
      tv[i] = sv[i] + (i % 2 == 0 ? off : -off);
    }
    Tensor a = Tensor::from_data({6, 5}, sv);
    Tensor b = Tensor::from_data({6, 5}, tv);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor c = constant({1, 6}, s);
    expect_fd("l1_distance", [&] { return l1_distance(a, b); },
              {{"a", a}, {"b", b}});
    expect_fd("cosine_similarity",
              [&] {
                return mean_all(
                    matmul(c, reshape(cosine_similarity(a, b), {6, 1})));
              },
              {{"a", a}, {"b", b}});
    expect_fd("pair_loss", [&] { return pair_loss(a, b, 1.0); },
              {{"a", a}, {"b", b}});
  }
  {
    Tensor p = leaf({4, 4}, s);
    Tensor c = constant({4, 2}, s);
    expect_fd("dropout",
              [&] {
                RngStream mask(977);
                return mean_all(matmul(dropout(p, 0.4, mask), c));
              },
              {{"p", p}});
  }
  {
    Tensor p = leaf({3, 4}, s), q = leaf({3, 4}, s);
    Tensor c = constant({4, 1}, s);
    expect_fd("mean_scalars",
              [&] {
                return mean_scalars(
                    {mean_all(matmul(p, c)), mean_all(matmul(gelu(q), c))});
              },
              {{"p", p}, {"q", q}});
  }

  // objectives on 2-layer toys, d = 16, through the full encoder
  {
    ModelConfig cfg = toy_config(2, 16, 32, 2, 8);
    Encoder teacher(cfg, 3);
    teacher.set_requires_grad(false);
    Encoder student = init_student(teacher, cfg, 4);
    student.set_frontend_requires_grad(true);
    student.attach_heads(2, cfg.embed_dim, RngStream(5).split("heads"));
    student.attach_projections(2, cfg.embed_dim,
                               RngStream(5).split("projections"));
    Corpus corpus = synth_corpus(77, 2, 0.026, 0.05);
    ItemStates teacher_states;
    std::vector<Tensor> waves;
    for (const auto& item : corpus.items) {
      Tensor w = Tensor::from_data({item.size()}, item.samples);
      waves.push_back(w);
      teacher_states.push_back(teacher.hidden_states(w));
    }
    auto student_states = [&] {
      ItemStates out;
      for (const auto& w : waves) out.push_back(student.hidden_states(w));
      return out;
    };
    std::vector<NamedParam> params;
    for (const auto& p : student.all_params()) {
      if (p.tensor.requires_grad()) params.push_back(p);
    }
    ASSERT_GT(params.size(), 30u);

    DistillObjective pred;
    pred.kind = KdKind::pred;
    pred.pred_targets = MappingStrategy::strided(2, 2, 1);
    expect_fd("pred objective",
              [&] {
                return evaluate_objective(student, student_states(),
                                          teacher_states, pred)
                    .loss;
              },
              params, 3);

    DistillObjective l2l;
    l2l.kind = KdKind::l2l;
    l2l.l2l_map = MappingStrategy::all(2, 2);
    expect_fd("l2l objective",
              [&] {
                return evaluate_objective(student, student_states(),
                                          teacher_states, l2l)
                    .loss;
              },
              params, 3);

    DistillObjective combined;
    combined.kind = KdKind::combined;
    combined.pred_targets = MappingStrategy::strided(2, 2, 1);
    combined.l2l_map = MappingStrategy::all(2, 2);
    expect_fd("combined objective",
              [&] {
                return evaluate_objective(student, student_states(),
                                          teacher_states, combined)
                    .loss;
              },
              params, 3);

    DistillObjective nofm;
    nofm.kind = KdKind::l2l_n_of_m;
    nofm.l2l_map = MappingStrategy::all(2, 2);
    expect_fd("l2l n-of-m objective",
              [&] {
                RngStream draw(9090);
                return evaluate_objective(student, student_states(),
                                          teacher_states, nofm, &draw)
                    .loss;
              },
              params, 2);
  }

  double dt = seconds_since(t0);
  EXPECT_LT(dt, 120.0) << "gradient oracle took " << dt << " s";
}

// ---------------------------------------------------------------------------
// 5. mapping laws and n-of-m sampling statistics
// ---------------------------------------------------------------------------

TEST(Criteria, C05_MappingLaws) {
  using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(realize_mapping(MappingStrategy::explicit_layers(12, 3, {4, 8, 12}))
                .pairs,
            (Pairs{{1, 4}, {2, 8}, {3, 12}}));
  EXPECT_EQ(realize_mapping(MappingStrategy::strided(12, 6, 2)).pairs,
            (Pairs{{1, 2}, {2, 4}, {3, 6}, {4, 8}, {5, 10}, {6, 12}}));
  LayerMap over24 = realize_mapping(MappingStrategy::strided(24, 12, 2));
  ASSERT_EQ(over24.pairs.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(over24.pairs[i].first, i + 1);
    EXPECT_EQ(over24.pairs[i].second, 2 * (i + 1));
  }
  LayerMap eights = realize_mapping(MappingStrategy::strided(24, 3, 8),
                                    nullptr, PairingMode::pred);
  EXPECT_EQ(eights.pairs, (Pairs{{3, 8}, {3, 16}, {3, 24}}));

  // n-of-m sampling: marginals and a chi-square uniformity test.
  // Inclusion counts over N draws of an n-subset are equicorrelated, so
  // the plain Pearson statistic scaled by (m-1)/(m-n) is chi-square
  // with m-1 degrees of freedom.
  const std::size_t n = 4, m = 12, draws = 10000;
  MappingStrategy strat = MappingStrategy::random(m, n);
  std::vector<std::size_t> counts(m, 0);
  RngStream root(606);
  for (std::size_t k = 0; k < draws; ++k) {
    RngStream stream = root.split("nofm").split(k);
    LayerMap map = realize_mapping(strat, &stream);
    for (const auto& [sl, tl] : map.pairs) counts[tl - 1]++;
  }
  const double p_marginal = static_cast<double>(n) / static_cast<double>(m);
  const double expected = draws * p_marginal;
  double chi2 = 0.0;
  for (std::size_t l = 0; l < m; ++l) {
    double phat = static_cast<double>(counts[l]) / draws;
    EXPECT_NEAR(phat, p_marginal, 0.02) << "teacher layer " << l + 1;
    double d = counts[l] - expected;
    chi2 += d * d / expected;
  }
  double corrected = chi2 * static_cast<double>(m - 1) /
                     static_cast<double>(m - n);
  double pval = oracle::chi_square_survival(corrected, m - 1);
  EXPECT_GT(pval, 0.01) << "chi2=" << chi2 << " corrected=" << corrected;
}

// ---------------------------------------------------------------------------
// 6. self-distillation convergence on the toy pair
// ---------------------------------------------------------------------------

TEST(Criteria, C06_SelfDistillation) {
  auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = toy_config(2, 32, 16, 1, 32, 4, 32);
  Encoder teacher(cfg, 3);
  Encoder student = init_student(teacher, cfg, 4);
  Corpus corpus = synth_corpus(11, 64, 1.0, 1.0);

  DistillObjective obj;
  obj.kind = KdKind::l2l;
  obj.l2l_map = MappingStrategy::all(2, 2);

  TrainConfig tc;
  tc.total_steps = 500;
  tc.batch_size = 8;
  tc.peak_lr = 3e-2;
  tc.beta1 = 0.75;
  tc.adam_eps = 1e-8;
  tc.seed = 4;

  Trainer trainer(teacher, student, corpus, obj, tc);
  double first = 0.0, last = 0.0;
  for (std::size_t k = 1; k <= tc.total_steps; ++k) {
    TraceRow row = trainer.step_once();
    if (k == 1) first = row.loss;
    last = row.loss;
  }
  ASSERT_GT(first, 0.0);
  EXPECT_LE(last, 0.2 * first)
      << "first " << first << " last " << last << " ratio " << last / first;

  Corpus held = synth_corpus(12, 16, 1.0, 1.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    double acc = 0.0;
    for (const auto& item : held.items) {
      Tensor wave = Tensor::from_data({item.size()}, item.samples);
      Tensor sim = cosine_similarity(student.hidden_states(wave)[l],
                                     teacher.hidden_states(wave)[l]);
      acc += mean_all(sim).value();
    }
    double mean_cos = acc / static_cast<double>(held.size());
    EXPECT_GE(mean_cos, 0.9) << "mapped layer " << l + 1;
  }
  double dt = seconds_since(t0);
  EXPECT_LT(dt, 600.0) << "self-distillation took " << dt << " s";
}

// ---------------------------------------------------------------------------
// 7. strip_aux leaves evaluation features bit-identical
// ---------------------------------------------------------------------------

TEST(Criteria, C07_EvalInvariance) {
  ModelConfig cfg = toy_config(2, 16, 32, 2, 8);
  std::vector<Tensor> waves;
  for (std::size_t i = 0; i < 10; ++i) {
    Waveform w = synth_waveform(RngStream(70).split("item").split(i),
                                0.03 + 0.005 * static_cast<double>(i));
    waves.push_back(Tensor::from_data({w.size()}, w.samples));
  }
  for (int variant = 0; variant < 3; ++variant) {
    Encoder enc(cfg, 29);
    if (variant == 0 || variant == 2) {
      enc.attach_heads(3, 24, RngStream(2).split("heads"));
    }
    if (variant == 1 || variant == 2) {
      enc.attach_projections(2, 24, RngStream(2).split("projections"));
    }
    Encoder bare = enc.strip_aux();
    for (const Tensor& wave : waves) {
      std::vector<Tensor> before = enc.hidden_states(wave);
      std::vector<Tensor> after = bare.hidden_states(wave);
      ASSERT_EQ(before.size(), after.size());
      for (std::size_t l = 0; l < before.size(); ++l) {
        auto a = before[l].values();
        auto b = after[l].values();
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
          ASSERT_EQ(a[k], b[k]) << "variant " << variant << " layer " << l;
        }
      }
      Tensor fat = enc.final_output(before.back());
      Tensor fbt = bare.final_output(after.back());
      auto fa = fat.values();
      auto fb = fbt.values();
      ASSERT_EQ(fa.size(), fb.size());
      for (std::size_t k = 0; k < fa.size(); ++k) ASSERT_EQ(fa[k], fb[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// 8. frame-length law against a direct sliding-window count
// ---------------------------------------------------------------------------

TEST(Criteria, C08_FrameLengthLaw) {
  ConvFrontendSpec fe;
  EXPECT_EQ(fe.output_length(16000), 49u);
  RngStream s(808);
  for (int i = 0; i < 50; ++i) {
    std::size_t samples = 400 + s.next_below(48000 - 400 + 1);
    std::size_t windows = samples;
    for (std::size_t l = 0; l < ConvFrontendSpec::kLayers; ++l) {
      // count the positions where a full kernel fits
      std::size_t k = ConvFrontendSpec::kKernels[l];
      std::size_t st = ConvFrontendSpec::kStrides[l];
      std::size_t count = 0;
      for (std::size_t p = 0; p + k <= windows; p += st) ++count;
      windows = count;
    }
    EXPECT_EQ(fe.output_length(samples), windows) << samples << " samples";
  }
  // and the law matches what the convolution stack actually produces
  ModelConfig cfg = toy_config(1, 8, 16, 2, 4);
  Encoder enc(cfg, 5);
  for (std::size_t samples : {400u, 999u, 16000u}) {
    RngStream w(samples);
    std::vector<double> v(samples);
    for (auto& x : v) x = 0.1 * w.next_normal();
    Tensor frames = enc.frontend_frames(Tensor::from_data({samples}, v));
    EXPECT_EQ(frames.dim(0), fe.output_length(samples));
  }
}

// ---------------------------------------------------------------------------
// 9. reproducibility and resume through the CLI
// ---------------------------------------------------------------------------

TEST(Criteria, C09_Reproducibility) {
  fs::path base = fresh_dir("c9");
  fs::path teacher_dir = base / "teacher";
  std::string mk =
      "make-teacher --out \"" + teacher_dir.string() +
      "\" --set teacher.preset= --set teacher.n_layers=2"
      " --set teacher.embed_dim=16 --set teacher.ffn_dim=32"
      " --set teacher.n_heads=2 --set teacher.channels=8"
      " --set teacher.seed=3";
  CliResult made = run_cli(mk);
  ASSERT_EQ(made.code, 0) << made.out;
  fs::path teacher_ckpt = teacher_dir / "teacher.dkd";
  ASSERT_TRUE(fs::exists(teacher_ckpt));

  auto distill_cmd = [&](const fs::path& out, const std::string& extra) {
    return "distill --out \"" + out.string() +
           "\" --set teacher.checkpoint=" + teacher_ckpt.string() +
           " --set student.preset= --set student.n_layers=2"
           " --set student.embed_dim=16 --set student.ffn_dim=32"
           " --set student.n_heads=2 --set student.channels=8"
           " --set run.total_steps=10 --set run.batch_size=4"
           " --set run.peak_lr=0.001 --set run.seed=5"
           " --set data.synth_seed=21 --set data.synth_n=8"
           " --set data.synth_min_dur=0.05 --set data.synth_max_dur=0.1"
           " --set kd.kind=l2l --set kd.l2l_map.kind=all" +
           extra;
  };

  fs::path a = base / "a", b = base / "b", c = base / "c";
  CliResult ra = run_cli(distill_cmd(a, ""));
  ASSERT_EQ(ra.code, 0) << ra.out;
  CliResult rb = run_cli(distill_cmd(b, ""));
  ASSERT_EQ(rb.code, 0) << rb.out;
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(b / "trace.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.dkd"), slurp(b / "checkpoint.dkd"));

  CliResult rc1 = run_cli(distill_cmd(c, " --set run.halt_after=6"));
  ASSERT_EQ(rc1.code, 0) << rc1.out;
  std::string halted_trace = slurp(c / "trace.csv");
  EXPECT_LT(halted_trace.size(), slurp(a / "trace.csv").size());
  CliResult rc2 = run_cli(
      distill_cmd(c, " --resume \"" + (c / "checkpoint.dkd").string() + "\""));
  ASSERT_EQ(rc2.code, 0) << rc2.out;
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(c / "trace.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.dkd"), slurp(c / "checkpoint.dkd"));
}

// ---------------------------------------------------------------------------
// 10. padding neutrality of the batched forward
// ---------------------------------------------------------------------------

TEST(Criteria, C10_PaddingNeutrality) {
  ModelConfig cfg = toy_config(2, 16, 32, 2, 8);
  Encoder teacher(cfg, 3);
  teacher.set_requires_grad(false);
  Encoder student = init_student(teacher, cfg, 4);

  std::vector<std::size_t> lengths = {700, 2500, 1200};
  std::size_t smax = 2500;
  std::vector<Tensor> waves;
  std::vector<double> padded(lengths.size() * smax, 0.0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    Waveform w = synth_waveform(RngStream(100).split("pad").split(i),
                                static_cast<double>(lengths[i]) / kSampleRate);
    Tensor t = Tensor::from_data({w.size()}, w.samples);
    waves.push_back(t);
    std::copy(w.samples.begin(), w.samples.end(), padded.begin() + i * smax);
  }
  Tensor batch = Tensor::from_data({lengths.size(), smax}, std::move(padded));

  DistillObjective obj;
  obj.kind = KdKind::l2l;
  obj.l2l_map = MappingStrategy::all(2, 2);

  // batched path: one padded forward per tower, then per-item slices
  auto batched_states = [&](const Encoder& enc) {
    BatchedFrames frames = frontend_forward(enc, batch, lengths);
    std::vector<Tensor> stacked = encoder_forward(enc, frames);
    ItemStates out(lengths.size());
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      for (const Tensor& layer : stacked) {
        out[i].push_back(slice_item(layer, i, frames.frame_lengths[i]));
      }
    }
    return out;
  };
  double batched = evaluate_objective(student, batched_states(student),
                                      batched_states(teacher), obj)
                       .loss.value();

  // reference path: every item alone, losses averaged
  double solo_sum = 0.0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    ItemStates ss{student.hidden_states(waves[i])};
    ItemStates ts{teacher.hidden_states(waves[i])};
    solo_sum += evaluate_objective(student, ss, ts, obj).loss.value();
  }
  double solo_mean = solo_sum / static_cast<double>(lengths.size());
  EXPECT_NEAR(batched, solo_mean, 1e-9);
}

namespace {

class AcceptanceLinePrinter : public ::testing::EmptyTestEventListener {
  void OnTestEnd(const ::testing::TestInfo& info) override {
    std::printf("[ACCEPTANCE] %s: %s\n", info.name(),
                info.result()->Passed() ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(
      new AcceptanceLinePrinter);
  return RUN_ALL_TESTS();
}
