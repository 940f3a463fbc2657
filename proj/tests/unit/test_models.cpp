#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../gradcheck.hpp"
#include "uwbseq/models/mamba.hpp"
#include "uwbseq/models/rnn.hpp"
#include "uwbseq/models/ssm.hpp"
#include "uwbseq/models/train.hpp"

namespace ad = uwbseq::ad;
namespace md = uwbseq::models;
using uwbseq::testing::grad_check;
using uwbseq::testing::leaf;
using uwbseq::testing::random_tensor;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

// Straight recurrence with std::exp, independent of discretize().
Tensor naive_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                  const Tensor& d) {
  const std::size_t B = u.shape()[0], S = u.shape()[1], E = u.shape()[2], N = a.shape()[1];
  Tensor y({B, S, E});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> h(N, 0.0);
      for (std::size_t t = 0; t < S; ++t) {
        const std::size_t ix = (bi * S + t) * E + e;
        const double dt = delta[ix], x = u[ix];
        double out = d[e] * x;
        for (std::size_t n = 0; n < N; ++n) {
          const double an = a[e * N + n];
          const double abar = std::exp(dt * an);
          const double bbar = (abar - 1.0) / an * b[(bi * S + t) * N + n];
          h[n] = abar * h[n] + bbar * x;
          out += c[(bi * S + t) * N + n] * h[n];
        }
        y[ix] = out;
      }
    }
  return y;
}

struct ScanInputs {
  Var u, delta, a, b, c, d;
  std::vector<Var> all() const { return {u, delta, a, b, c, d}; }
};

ScanInputs random_scan(std::mt19937_64& g, std::size_t B, std::size_t S, std::size_t E, std::size_t N) {
  return {leaf(g, {B, S, E}), leaf(g, {B, S, E}, 0.001, 0.5), leaf(g, {E, N}, -4.0, -0.05),
          leaf(g, {B, S, N}), leaf(g, {B, S, N}), leaf(g, {E})};
}

md::MambaConfig tiny_mamba(std::size_t window) {
  md::MambaConfig c;
  c.input_dim = 3;
  c.label_dim = 2;
  c.d_model = 4;
  c.n_blocks = 2;
  c.d_state = 3;
  c.window = window;
  return c;
}

std::size_t mamba_param_formula(const md::MambaConfig& c) {
  const std::size_t d = c.d_model, e = c.d_inner(), n = c.d_state, r = c.resolved_dt_rank(), w = c.conv_width;
  const std::size_t block = d + d * 2 * e + (w ? e * w + e : 0) + e * (r + 2 * n) + r * e + e + e * n + e + e * d;
  return c.input_dim * d + d + c.window * d + c.n_blocks * block + d + d * c.label_dim + c.label_dim;
}

std::size_t rnn_param_formula(const md::RnnConfig& c) {
  const bool bi = c.cell == md::CellKind::BiLSTM;
  const std::size_t gates = c.cell == md::CellKind::GRU ? 3 : 4, h = c.hidden_size, dirs = bi ? 2 : 1;
  std::size_t total = 0, in = c.input_dim;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::size_t per_dir = gates * h * (in + h) + gates * h * (c.cell == md::CellKind::GRU ? 2 : 1);
    total += dirs * per_dir;
    in = dirs * h;
  }
  return total + in * c.label_dim + c.label_dim;
}

}  // namespace

TEST(Discretize, SmallStepMatchesFirstOrderSeries) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> ua(-20.0, -0.01), ub(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = ua(g), b = ub(g), delta = 1e-8;
    const auto r = md::discretize(delta, a, b);
    EXPECT_NEAR(r.abar, 1.0 + delta * a, 1e-12);
    EXPECT_NEAR(r.bbar, delta * b, 1e-12);
  }
}

TEST(Discretize, HalvingStepIsExact) {
  const auto r = md::discretize(std::log(2.0), -1.0, 1.0);
  EXPECT_EQ(r.abar, 0.5);
  EXPECT_EQ(r.bbar, 0.5);
}

TEST(Discretize, DecayStaysInOpenUnitInterval) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> log_delta(std::log(1e-4), std::log(1.0)), log_a(std::log(1e-2), std::log(100.0));
  for (int i = 0; i < 100000; ++i) {
    const double abar = md::discretize(std::exp(log_delta(g)), -std::exp(log_a(g)), 1.0).abar;
    ASSERT_GT(abar, 0.0);
    ASSERT_LT(abar, 1.0);
  }
}

TEST(SelectiveScan, MatchesNaiveRecurrence) {
  std::mt19937_64 g(3);
  std::uniform_int_distribution<std::size_t> bs(1, 2), ss(1, 64), es(1, 4), ns(1, 32);
  for (int i = 0; i < 100; ++i) {
    const auto in = random_scan(g, bs(g), ss(g), es(g), ns(g));
    const Tensor y = md::selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d).value();
    const Tensor want =
        naive_scan(in.u.value(), in.delta.value(), in.a.value(), in.b.value(), in.c.value(), in.d.value());
    for (std::size_t k = 0; k < y.numel(); ++k) ASSERT_NEAR(y[k], want[k], 1e-10) << "instance " << i;
  }
}

TEST(SelectiveScan, ThreeStepsUnrolledByHand) {
  // One channel, two states.
  const double u[3] = {0.7, -1.2, 0.4}, dt[3] = {0.1, 0.3, 0.05};
  const double a[2] = {-1.0, -2.5}, dskip = 0.3;
  const double b[3][2] = {{0.5, -1.0}, {1.5, 0.2}, {-0.3, 0.8}};
  const double c[3][2] = {{1.0, 0.4}, {-0.6, 1.1}, {0.9, -0.2}};
  double h1[2], h2[2], h3[2], want[3];
  for (int n = 0; n < 2; ++n) {
    h1[n] = (std::exp(dt[0] * a[n]) - 1) / a[n] * b[0][n] * u[0];
    h2[n] = std::exp(dt[1] * a[n]) * h1[n] + (std::exp(dt[1] * a[n]) - 1) / a[n] * b[1][n] * u[1];
    h3[n] = std::exp(dt[2] * a[n]) * h2[n] + (std::exp(dt[2] * a[n]) - 1) / a[n] * b[2][n] * u[2];
  }
  want[0] = c[0][0] * h1[0] + c[0][1] * h1[1] + dskip * u[0];
  want[1] = c[1][0] * h2[0] + c[1][1] * h2[1] + dskip * u[1];
  want[2] = c[2][0] * h3[0] + c[2][1] * h3[1] + dskip * u[2];

  const Var vu(Tensor({1, 3, 1}, {u[0], u[1], u[2]})), vdt(Tensor({1, 3, 1}, {dt[0], dt[1], dt[2]}));
  const Var va(Tensor({1, 2}, {a[0], a[1]}));
  const Var vb(Tensor({1, 3, 2}, {b[0][0], b[0][1], b[1][0], b[1][1], b[2][0], b[2][1]}));
  const Var vc(Tensor({1, 3, 2}, {c[0][0], c[0][1], c[1][0], c[1][1], c[2][0], c[2][1]}));
  const Var vd(Tensor({1}, {dskip}));
  const Tensor y = md::selective_scan(vu, vdt, va, vb, vc, vd).value();
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(y[static_cast<std::size_t>(t)], want[t], 1e-12);
}

TEST(SelectiveScan, StabilityCheckRejectsNonNegativeA) {
  md::set_stability_checks(true);
  std::mt19937_64 g(4);
  auto in = random_scan(g, 1, 4, 2, 3);
  in.a.mutable_value()[0] = 0.5;
  EXPECT_THROW(md::selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d), std::exception);
  md::set_stability_checks(false);
}

TEST(GradCheck, SelectiveScan) {
  std::mt19937_64 g(5);
  std::uniform_int_distribution<std::size_t> bs(1, 2), ss(1, 8), es(1, 3), ns(1, 4);
  for (int i = 0; i < 5; ++i) {
    const auto in = random_scan(g, bs(g), ss(g), es(g), ns(g));
    const auto r = grad_check(
        [](const std::vector<Var>& v) { return md::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]); }, in.all());
    EXPECT_LT(r.worst, 1e-5) << r.where;
  }
}

TEST(CausalConv, MatchesDefinitionAndGradients) {
  std::mt19937_64 g(6);
  for (int i = 0; i < 5; ++i) {
    const std::size_t B = 1 + g() % 2, S = 1 + g() % 7, E = 1 + g() % 3, W = 1 + g() % 4;
    const Var x = leaf(g, {B, S, E}), w = leaf(g, {E, W}), bias = leaf(g, {E});
    const Tensor y = md::causal_conv1d(x, w, bias).value();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < S; ++t)
        for (std::size_t e = 0; e < E; ++e) {
          double want = bias.value()[e];
          for (std::size_t k = 0; k < W; ++k) {
            const long src = static_cast<long>(t) - static_cast<long>(W - 1) + static_cast<long>(k);
            if (src >= 0) want += w.value()[e * W + k] * x.value()[(b * S + static_cast<std::size_t>(src)) * E + e];
          }
          EXPECT_NEAR(y[(b * S + t) * E + e], want, 1e-12);
        }
    const auto r = grad_check([](const std::vector<Var>& v) { return md::causal_conv1d(v[0], v[1], v[2]); },
                              {x, w, bias});
    EXPECT_LT(r.worst, 1e-5) << r.where;
  }
}

TEST(GradCheck, MambaBlock) {
  std::mt19937_64 g(7);
  for (int i = 0; i < 5; ++i) {
    const std::size_t S = 2 + g() % 5;
    auto cfg = tiny_mamba(S);
    cfg.conv_width = i % 3 == 0 ? 0 : 2 + g() % 3;
    md::MambaModel model(cfg, 100 + static_cast<std::uint64_t>(i));
    const auto& p = model.block(0);
    std::vector<Var> inputs = {leaf(g, {1 + g() % 2, S, cfg.d_model})};
    for (const auto& v : {p.norm, p.in_proj, p.conv_weight, p.conv_bias, p.x_proj, p.dt_weight, p.dt_bias, p.a_log,
                          p.d_skip, p.out_proj})
      if (v.defined()) inputs.push_back(v);
    const auto r = grad_check([&](const std::vector<Var>& v) { return md::mamba_block(v[0], p, cfg); }, inputs);
    EXPECT_LT(r.worst, 1e-5) << r.where;
  }
}

TEST(GradCheck, RecurrentLayers) {
  std::mt19937_64 g(8);
  for (int i = 0; i < 5; ++i) {
    const std::size_t B = 1 + g() % 2, S = 1 + g() % 5, I = 1 + g() % 3, H = 1 + g() % 3;
    const bool reverse = i % 2;
    md::RecurrentWeights lstm{leaf(g, {I, 4 * H}), leaf(g, {H, 4 * H}), leaf(g, {4 * H}), Var()};
    const Var x = leaf(g, {B, S, I});
    auto r = grad_check(
        [&](const std::vector<Var>& v) {
          return md::lstm_layer(v[0], md::RecurrentWeights{v[1], v[2], v[3], Var()}, H, reverse);
        },
        {x, lstm.w_ih, lstm.w_hh, lstm.b_ih});
    EXPECT_LT(r.worst, 1e-5) << "lstm " << r.where;
    md::RecurrentWeights gru{leaf(g, {I, 3 * H}), leaf(g, {H, 3 * H}), leaf(g, {3 * H}), leaf(g, {3 * H})};
    r = grad_check(
        [&](const std::vector<Var>& v) {
          return md::gru_layer(v[0], md::RecurrentWeights{v[1], v[2], v[3], v[4]}, H, reverse);
        },
        {x, gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh});
    EXPECT_LT(r.worst, 1e-5) << "gru " << r.where;
  }
}

TEST(GradCheck, WholeModels) {
  std::mt19937_64 g(9);
  for (int i = 0; i < 5; ++i) {
    const std::size_t S = 2 + g() % 4;
    const Var x = leaf(g, {2, S, 3});
    std::vector<std::unique_ptr<md::SequenceModel>> models;
    models.push_back(std::make_unique<md::MambaModel>(tiny_mamba(S), 10 + static_cast<std::uint64_t>(i)));
    for (auto cell : {md::CellKind::GRU, md::CellKind::LSTM, md::CellKind::BiLSTM}) {
      md::RnnConfig rc;
      rc.cell = cell;
      rc.hidden_size = 3;
      rc.input_dim = 3;
      rc.label_dim = 2;
      models.push_back(std::make_unique<md::RnnModel>(rc, 20 + static_cast<std::uint64_t>(i)));
    }
    for (auto& m : models) {
      std::vector<Var> inputs = {x};
      for (const auto& p : m->parameters().items()) inputs.push_back(p.var);
      const auto r = grad_check([&](const std::vector<Var>& v) { return m->forward(v[0]); }, inputs, 1, 1e-6, 16);
      EXPECT_LT(r.worst, 1e-4) << m->kind() << ' ' << r.where;
    }
  }
}

TEST(Models, ParameterCounts) {
  md::MambaConfig mc;
  EXPECT_EQ(md::MambaModel(mc, 1).parameter_count(), mamba_param_formula(mc));
  mc.window = 20;
  EXPECT_EQ(md::MambaModel(mc, 1).parameter_count(), 133894u);
  for (auto cell : {md::CellKind::GRU, md::CellKind::LSTM, md::CellKind::BiLSTM}) {
    md::RnnConfig rc;
    rc.cell = cell;
    EXPECT_EQ(md::RnnModel(rc, 1).parameter_count(), rnn_param_formula(rc)) << md::cell_name(cell);
  }
}

TEST(Models, MambaIsCausalAndBiLstmIsNot) {
  std::mt19937_64 g(10);
  const std::size_t S = 6;
  Var x(random_tensor(g, {1, S, 3}));
  md::MambaModel mamba(tiny_mamba(S), 3);
  md::RnnConfig rc;
  rc.hidden_size = 4;
  rc.input_dim = 3;
  rc.label_dim = 2;
  md::RnnModel bilstm(rc, 3);
  const Tensor m0 = mamba.forward(x).value(), b0 = bilstm.forward(x).value();
  x.mutable_value()[(S - 1) * 3] += 1.0;  // perturb the last step only
  const Tensor m1 = mamba.forward(x).value(), b1 = bilstm.forward(x).value();
  double bi_change = 0.0;
  for (std::size_t k = 0; k < (S - 1) * 2; ++k) {
    EXPECT_EQ(m0[k], m1[k]) << k;
    bi_change += std::abs(b0[k] - b1[k]);
  }
  EXPECT_GT(bi_change, 0.0);
}

TEST(Models, SameSeedSameOutputs) {
  std::mt19937_64 g(11);
  const Var x(random_tensor(g, {2, 5, 3}));
  md::MambaModel a(tiny_mamba(5), 42), b(tiny_mamba(5), 42), c(tiny_mamba(5), 43);
  const Tensor ya = a.forward(x).value(), yb = b.forward(x).value(), yc = c.forward(x).value();
  EXPECT_EQ(ya.storage(), yb.storage());
  EXPECT_NE(ya.storage(), yc.storage());
}

TEST(Models, ConfigValidation) {
  md::MambaConfig mc;
  mc.d_model = 0;
  EXPECT_THROW(mc.validate(), std::invalid_argument);
  md::RnnConfig rc;
  rc.hidden_size = 0;
  EXPECT_THROW(rc.validate(), std::invalid_argument);
  EXPECT_THROW(md::parse_cell("transformer"), std::invalid_argument);
  EXPECT_EQ(md::parse_cell("bilstm"), md::CellKind::BiLSTM);
}

namespace {

// Emits the in-window step index on every label channel.
class StepIndexModel : public md::SequenceModel {
public:
  StepIndexModel() : SequenceModel(0) {}
  Var forward(const Var& x) override {
    const auto& s = x.value().shape();
    Tensor y({s[0], s[1], 3});
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t t = 0; t < s[1]; ++t)
        for (std::size_t j = 0; j < 3; ++j) y[(b * s[1] + t) * 3 + j] = static_cast<double>(t);
    return Var(y);
  }
  std::string kind() const override { return "step"; }
  std::size_t input_dim() const override { return 2; }
  std::size_t label_dim() const override { return 3; }
};

std::vector<uwbseq::LabeledFrame> line_pairs(std::size_t k) {
  std::vector<uwbseq::LabeledFrame> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double s = 0.05 * static_cast<double>(i);
    out[i].frame = {s, {10.0 + i, i % 4 ? 20.0 - 0.5 * i : 0.0}};
    out[i].label = {s, {0.1 * i, -0.05 * i, 0.2}};
  }
  return out;
}

uwbseq::WindowedDataset line_dataset(std::size_t k, std::size_t window) {
  uwbseq::WindowedDataset ds(uwbseq::ChannelLayout::make(1, 2), window);
  const auto pairs = line_pairs(k);
  ds.add_trial(uwbseq::to_trial_frames(pairs, pairs, 0));
  ds.set_scaler(uwbseq::fit_normalizer(ds.trials(), 2, 3));
  return ds;
}

}  // namespace

TEST(Training, PredictTrialAggregatesOverlappingWindows) {
  uwbseq::WindowedDataset ds(uwbseq::ChannelLayout::make(1, 2), 4);
  const auto pairs = line_pairs(9);
  ds.add_trial(uwbseq::to_trial_frames(pairs, pairs, 0));
  ds.set_scaler(uwbseq::Normalizer{});
  StepIndexModel m;
  const auto avg = md::predict_trial(m, ds, 0, md::Aggregation::Average, 2);
  const auto last = md::predict_trial(m, ds, 0, md::Aggregation::Last, 2);
  ASSERT_EQ(avg.size(), 27u);
  const std::size_t K = 9, S = 4;
  for (std::size_t k = 0; k < K; ++k) {
    // Windows start at w = max(0, k-S+1) .. min(k, K-S); frame k sits at step k-w.
    double sum = 0.0;
    int n = 0;
    for (std::size_t w = k + 1 >= S ? k + 1 - S : 0; w <= std::min(k, K - S); ++w, ++n) sum += static_cast<double>(k - w);
    EXPECT_DOUBLE_EQ(avg[k * 3], sum / n) << "frame " << k;
    EXPECT_DOUBLE_EQ(last[k * 3 + 2], static_cast<double>(k < S - 1 ? k : S - 1)) << "frame " << k;
  }
}

TEST(Training, LossFallsAndRunsAreRepeatable) {
  const auto ds = line_dataset(60, 8);
  md::TrainConfig tc;
  tc.batch = 16;
  tc.epochs = 6;
  tc.lr0 = 0.01;
  tc.lr_step = 4;
  tc.seed = 3;
  md::ModelSpec spec;
  spec.mamba = tiny_mamba(8);
  auto a = md::make_model(spec, 2, 3, 8, 9), b = md::make_model(spec, 2, 3, 8, 9);
  const auto ra = md::train(*a, ds, tc), rb = md::train(*b, ds, tc);
  ASSERT_EQ(ra.curve.size(), 6u);
  EXPECT_LT(ra.curve.back().train_loss, 0.5 * ra.curve.front().train_loss);
  EXPECT_DOUBLE_EQ(ra.curve[5].lr, 0.005);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].train_loss, rb.curve[i].train_loss);
  tc.max_steps = 5;
  auto c = md::make_model(spec, 2, 3, 8, 9);
  EXPECT_EQ(md::train(*c, ds, tc).steps, 5u);
}
