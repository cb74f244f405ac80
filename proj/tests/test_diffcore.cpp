#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "entangle/diffcore.hpp"
#include "entangle/dyngraph.hpp"
#include "test_support.hpp"

using namespace entangle;
using namespace entangle::diffcore;
using testing_support::project;
using testing_support::random_matrix;

namespace {

constexpr double kTol = 1e-4;

GradCheckOptions options() {
  GradCheckOptions o;
  o.epsilon = 1e-5;
  o.abs_floor = 1e-6;
  return o;
}

}  // namespace

TEST(GradCheck, QuadraticIsExact) {
  ParameterSet p;
  p.add("w", 3, 2) << 0.5, -1.0, 2.0, 0.25, -0.75, 1.5;
  auto fn = [](const ParameterSet& q) {
    GradientMap g;
    g.accumulate("w", 2.0 * q.at("w"));
    return std::make_pair(q.at("w").squaredNorm(), g);
  };
  GradCheckOptions o;
  o.epsilon = 1e-5;
  EXPECT_LT(finite_difference_check(fn, p, o), 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParameterSet p;
  p.add("w", 1, 2) << 1.0, 2.0;
  auto fn = [](const ParameterSet& q) {
    GradientMap g;
    g.accumulate("w", 3.0 * q.at("w"));
    return std::make_pair(q.at("w").squaredNorm(), g);
  };
  EXPECT_GT(finite_difference_check(fn, p), 0.1);
}

TEST(Mlp, HandComputedTwoLayer) {
  Mlp net("net", {2, 2, 1});
  ParameterSet p;
  p.add("net.0.weight", 2, 2) << 1.0, -1.0, 2.0, 0.5;
  p.add("net.0.bias", 1, 2) << 0.1, -0.2;
  p.add("net.1.weight", 2, 1) << 3.0, -2.0;
  p.add("net.1.bias", 1, 1) << 0.5;
  Matrix x(1, 2);
  x << 1.0, 2.0;
  // hidden pre = (1 + 4 + 0.1, -1 + 1 - 0.2) = (5.1, -0.2) -> relu (5.1, 0)
  EXPECT_NEAR(net.forward(p, x)(0, 0), 3.0 * 5.1 + 0.5, 1e-12);
}

TEST(Mlp, ZeroAndIdentityWeights) {
  Mlp net("net", {3, 3}, Activation::Relu, Activation::Identity);
  ParameterSet p;
  p.add("net.0.weight", 3, 3);
  p.add("net.0.bias", 1, 3);
  Rng rng(1);
  const Matrix x = random_matrix(4, 3, rng);
  EXPECT_TRUE(net.forward(p, x).isZero(0.0));
  p.at("net.0.weight").setIdentity();
  EXPECT_EQ(net.forward(p, x), x);
  Mlp sig("s", {3, 2}, Activation::Relu, Activation::Sigmoid);
  ParameterSet q;
  q.add("s.0.weight", 3, 2);
  q.add("s.0.bias", 1, 2);
  EXPECT_TRUE(sig.forward(q, x).isApprox(Matrix::Constant(4, 2, 0.5)));
  EXPECT_THROW(net.forward(p, random_matrix(2, 4, rng)), std::invalid_argument);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  for (Activation hidden : {Activation::Relu, Activation::Tanh, Activation::Sigmoid}) {
    Rng rng(7);
    Mlp net("net", {3, 4, 2}, hidden, Activation::Tanh);
    ParameterSet p;
    net.init(p, rng);
    const Matrix x = random_matrix(5, 3, rng), w = random_matrix(5, 2, rng);
    auto fn = [&](const ParameterSet& q) {
      MlpCache cache;
      auto [v, g] = project(net.forward(q, x, &cache), w);
      GradientMap grads;
      net.backward(q, cache, g, grads);
      return std::make_pair(v, grads);
    };
    EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
  }
}

TEST(Mlp, InputGradient) {
  Rng rng(3);
  Mlp net("net", {3, 5, 2});
  ParameterSet p;
  net.init(p, rng);
  const Matrix w = random_matrix(4, 2, rng);
  ParameterSet holder;
  holder.add("x", 4, 3) = random_matrix(4, 3, rng);
  auto fn = [&](const ParameterSet& q) {
    MlpCache cache;
    auto [v, g] = project(net.forward(p, q.at("x"), &cache), w);
    GradientMap scratch, grads;
    grads.accumulate("x", net.backward(p, cache, g, scratch));
    return std::make_pair(v, grads);
  };
  EXPECT_LT(finite_difference_check(fn, holder, options()), kTol);
}

TEST(Gru, ZeroParameterCell) {
  GruCell cell("gru", 3, 2);
  ParameterSet p;
  Rng rng(1);
  cell.init(p, rng);
  for (auto& [_, m] : p) m.setZero();
  const Matrix x = random_matrix(4, 3, rng), h = random_matrix(4, 2, rng);
  EXPECT_TRUE(cell.forward(p, x, Matrix::Zero(4, 2)).isZero(0.0));
  EXPECT_TRUE(cell.forward(p, x, h).isApprox(0.5 * h, 1e-15));
  EXPECT_THROW(cell.forward(p, random_matrix(4, 2, rng), h), std::invalid_argument);
}

TEST(Gru, MatchesPerUnitReference) {
  GruCell cell("gru", 3, 2);
  ParameterSet p;
  Rng rng(2);
  cell.init(p, rng);
  const Matrix x = random_matrix(3, 3, rng), h = random_matrix(3, 2, rng);
  const Matrix out = cell.forward(p, x, h);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      auto gate = [&](const char* g, bool reset_h, const Eigen::RowVectorXd& r) {
        double s = p.at(std::string("gru.b_") + g)(0, j);
        for (Eigen::Index k = 0; k < 3; ++k) s += x(i, k) * p.at(std::string("gru.w_") + g)(k, j);
        for (Eigen::Index k = 0; k < 2; ++k)
          s += (reset_h ? r(k) * h(i, k) : h(i, k)) * p.at(std::string("gru.u_") + g)(k, j);
        return s;
      };
      Eigen::RowVectorXd r(2);
      for (Eigen::Index k = 0; k < 2; ++k) {
        double s = p.at("gru.b_r")(0, k);
        for (Eigen::Index q = 0; q < 3; ++q) s += x(i, q) * p.at("gru.w_r")(q, k);
        for (Eigen::Index q = 0; q < 2; ++q) s += h(i, q) * p.at("gru.u_r")(q, k);
        r(k) = sig(s);
      }
      const double z = sig(gate("z", false, r));
      const double c = std::tanh(gate("n", true, r));
      EXPECT_NEAR(out(i, j), (1 - z) * h(i, j) + z * c, 1e-12);
    }
}

TEST(Gru, GradientMatchesFiniteDifferences) {
  GruCell cell("gru", 4, 3);
  Rng rng(5);
  ParameterSet p;
  cell.init(p, rng);
  p.add("x", 6, 4) = random_matrix(6, 4, rng);
  p.add("h", 6, 3) = random_matrix(6, 3, rng, 0.5);
  const Matrix w = random_matrix(6, 3, rng);
  auto fn = [&](const ParameterSet& q) {
    GruCache cache;
    auto [v, g] = project(cell.forward(q, q.at("x"), q.at("h"), &cache), w);
    GradientMap grads;
    const GruGrad gg = cell.backward(q, cache, g, grads);
    grads.accumulate("x", gg.input);
    grads.accumulate("h", gg.state);
    return std::make_pair(v, grads);
  };
  EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
}

TEST(Gcn, HandExamples) {
  GcnLayer layer("gcn", 2, 2);
  ParameterSet p;
  p.add("gcn.weight", 2, 2).setIdentity();
  p.add("gcn.bias", 1, 2);
  Matrix x(2, 2);
  x << 1, 2, 3, 6;
  EXPECT_EQ(layer.forward(p, NormalizedAdjacency::identity(2), x), x);
  const Matrix out = layer.forward(p, normalize_adjacency(GraphSnapshot(2, {{0, 1}})), x);
  EXPECT_TRUE(out.row(0).isApprox(Eigen::RowVector2d(2, 4)));
  EXPECT_TRUE(out.row(1).isApprox(Eigen::RowVector2d(2, 4)));
  EXPECT_THROW(layer.forward(p, NormalizedAdjacency::identity(3), x), std::invalid_argument);
}

TEST(Gcn, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng = make_stream(s, {tag("gcn-oracle")});
    const std::size_t n = s < 100 ? 8 : 1 + rng() % 10;
    const GraphSnapshot g = generate_er_graph(n, draw_uniform(rng), rng);
    const auto a = normalize_adjacency(g);
    GcnLayer layer("gcn", 3, 2, Activation::Tanh);
    ParameterSet p;
    layer.init(p, rng);
    const Matrix x = random_matrix(static_cast<Eigen::Index>(n), 3, rng);
    Eigen::MatrixXd adj = g.dense_adjacency() + Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd d = adj.rowwise().sum().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd a_dense = d.asDiagonal() * adj * d.asDiagonal();
    const Matrix oracle =
        ((a_dense * x * p.at("gcn.weight")).rowwise() + p.at("gcn.bias").row(0)).array().tanh().matrix();
    EXPECT_LE((layer.forward(p, a, x) - oracle).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Gcn, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const GraphSnapshot g = generate_er_graph(7, 0.4, rng);
  const auto a = normalize_adjacency(g);
  for (Activation act : {Activation::Identity, Activation::Sigmoid}) {
    GcnLayer layer("gcn", 3, 2, act);
    ParameterSet p;
    layer.init(p, rng);
    p.add("x", 7, 3) = random_matrix(7, 3, rng);
    const Matrix w = random_matrix(7, 2, rng);
    auto fn = [&](const ParameterSet& q) {
      GcnCache cache;
      auto [v, gout] = project(layer.forward(q, a, q.at("x"), &cache), w);
      GradientMap grads;
      grads.accumulate("x", layer.backward(q, a, cache, gout, grads));
      return std::make_pair(v, grads);
    };
    EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
  }
}

TEST(CrossEntropy, ValuesAndErrors) {
  const Matrix uniform = Matrix::Zero(3, 4);
  const std::vector<int> labels{0, 3, 2};
  EXPECT_NEAR(cross_entropy_loss(uniform, labels).value, std::log(4.0), 1e-12);
  Matrix dominant = Matrix::Zero(3, 4);
  for (int i = 0; i < 3; ++i) dominant(i, labels[static_cast<std::size_t>(i)]) = 60.0;
  EXPECT_LT(cross_entropy_loss(dominant, labels).value, 1e-20);
  EXPECT_THROW(cross_entropy_loss(Matrix(0, 2), std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(cross_entropy_loss(uniform, std::vector<int>{0, 4, 1}), std::invalid_argument);
  Rng rng(1);
  const Matrix sm = softmax_rows(random_matrix(10, 3, rng, 5.0));
  EXPECT_LE((sm.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(CrossEntropy, SoftmaxHeadGradient) {
  Rng rng(4);
  ParameterSet p;
  p.add("logits", 6, 3) = random_matrix(6, 3, rng, 2.0);
  const std::vector<int> labels{0, 1, 2, 2, 1, 0};
  auto fn = [&](const ParameterSet& q) {
    const LossResult l = cross_entropy_loss(q.at("logits"), labels);
    GradientMap g;
    g.accumulate("logits", l.grad);
    return std::make_pair(l.value, g);
  };
  EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
}

TEST(Mse, ValuesAndGradient) {
  Matrix pred = Matrix::Zero(2, 1), target(2, 1);
  target << 1, 3;
  const LossResult l = mse_loss(pred, target);
  EXPECT_DOUBLE_EQ(l.value, 5.0);
  EXPECT_TRUE(l.grad.isApprox(Matrix(Eigen::Vector2d(-1, -3))));
  EXPECT_EQ(mse_loss(target, target).value, 0.0);
  EXPECT_THROW(mse_loss(pred, Matrix::Zero(3, 1)), std::invalid_argument);

  Rng rng(2);
  ParameterSet p;
  p.add("pred", 5, 2) = random_matrix(5, 2, rng);
  const Matrix t = random_matrix(5, 2, rng);
  auto fn = [&](const ParameterSet& q) {
    const LossResult r = mse_loss(q.at("pred"), t);
    GradientMap g;
    g.accumulate("pred", r.grad);
    return std::make_pair(r.value, g);
  };
  EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
}

TEST(MixtureHead, ClosedFormsAndValidity) {
  MixtureParams one{Matrix::Ones(1, 1), Matrix::Constant(1, 1, 2.0), Matrix::Ones(1, 1)};
  EXPECT_NEAR(gmm_nll(one, Eigen::VectorXd::Constant(1, 2.0)), 0.5 * std::log(2 * std::numbers::pi), 1e-12);
  MixtureParams two{Matrix(1, 2), Matrix::Constant(1, 2, 0.3), Matrix::Constant(1, 2, 0.7)};
  two.weights << 0.3, 0.7;
  MixtureParams single{Matrix::Ones(1, 1), Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, 0.7)};
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, -1.1);
  EXPECT_NEAR(gmm_nll(two, y), gmm_nll(single, y), 1e-12);
  MixtureParams bad = single;
  bad.scales(0, 0) = 0.0;
  EXPECT_THROW(gmm_nll(bad, y), std::invalid_argument);

  MixtureHead head{3, 1e-3};
  Rng rng(3);
  const MixtureParams m = head.evaluate(random_matrix(8, 9, rng, 3.0));
  EXPECT_LE((m.weights.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GT(m.scales.minCoeff(), 0.0);
  EXPECT_THROW(head.evaluate(Matrix::Zero(2, 8)), std::invalid_argument);
}

TEST(MixtureHead, NllGradient) {
  MixtureHead head{3, 1e-3};
  Rng rng(6);
  ParameterSet p;
  p.add("raw", 7, 9) = random_matrix(7, 9, rng);
  const Eigen::VectorXd y = random_matrix(7, 1, rng, 1.5).col(0);
  auto fn = [&](const ParameterSet& q) {
    const LossResult l = gmm_nll(head, q.at("raw"), y);
    GradientMap g;
    g.accumulate("raw", l.grad);
    return std::make_pair(l.value, g);
  };
  EXPECT_LT(finite_difference_check(fn, p, options()), kTol);
  // value agrees with the parameter-space overload
  EXPECT_NEAR(gmm_nll(head, p.at("raw"), y).value, gmm_nll(head.evaluate(p.at("raw")), y), 1e-12);
}

TEST(Pipelines, MlpMseAndGcnCrossEntropy) {
  Rng rng(8);
  Mlp net("net", {4, 6, 1});
  ParameterSet p;
  net.init(p, rng);
  const Matrix x = random_matrix(10, 4, rng), t = random_matrix(10, 1, rng);
  auto mlp_mse = [&](const ParameterSet& q) {
    MlpCache cache;
    const LossResult l = mse_loss(net.forward(q, x, &cache), t);
    GradientMap g;
    net.backward(q, cache, l.grad, g);
    return std::make_pair(l.value, g);
  };
  EXPECT_LT(finite_difference_check(mlp_mse, p, options()), kTol);

  const GraphSnapshot g = generate_er_graph(10, 0.3, rng);
  const auto a = normalize_adjacency(g);
  GcnLayer layer("gcn", 4, 2);
  ParameterSet q;
  layer.init(q, rng);
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
  auto gcn_ce = [&](const ParameterSet& s) {
    GcnCache cache;
    const LossResult l = cross_entropy_loss(layer.forward(s, a, x, &cache), labels);
    GradientMap grads;
    layer.backward(s, a, cache, l.grad, grads);
    return std::make_pair(l.value, grads);
  };
  EXPECT_LT(finite_difference_check(gcn_ce, q, options()), kTol);
}

TEST(Adam, ZeroGradientAndFirstStep) {
  ParameterSet p;
  p.add("w", 1, 2) << 1.0, -2.0;
  const ParameterSet before = p;
  AdamOptimizer opt;
  opt.step(p, p.zeros_like());
  EXPECT_TRUE(p == before);

  GradientMap g;
  g.accumulate("w", Matrix(Eigen::RowVector2d(3.0, -0.2)));
  opt = AdamOptimizer(AdamConfig{0.01});
  opt.step(p, g);
  EXPECT_NEAR(p.at("w")(0, 0) - 1.0, -0.01, 1e-8);
  EXPECT_NEAR(p.at("w")(0, 1) + 2.0, 0.01, 1e-7);
}

TEST(Adam, RejectsNonFiniteAndIncongruent) {
  ParameterSet p;
  p.add("w", 1, 1);
  AdamOptimizer opt;
  GradientMap g;
  g.accumulate("w", Matrix::Constant(1, 1, std::nan("")));
  EXPECT_THROW(opt.step(p, g), DivergenceError);
  GradientMap wrong;
  wrong.accumulate("w", Matrix::Zero(2, 1));
  EXPECT_THROW(opt.step(p, wrong), std::invalid_argument);
  EXPECT_THROW(AdamOptimizer(AdamConfig{0.0}), std::invalid_argument);
}

TEST(Adam, DeterministicTrajectory) {
  auto run = [] {
    Rng rng(1);
    Mlp net("n", {2, 3, 1});
    ParameterSet p;
    net.init(p, rng);
    const Matrix x = random_matrix(5, 2, rng), y = random_matrix(5, 1, rng);
    AdamOptimizer opt;
    for (int e = 0; e < 20; ++e) {
      MlpCache c;
      const LossResult l = mse_loss(net.forward(p, x, &c), y);
      GradientMap g;
      net.backward(p, c, l.grad, g);
      opt.step(p, g);
    }
    return p;
  };
  EXPECT_TRUE(run() == run());
}

TEST(Params, DuplicateNamesAndCongruence) {
  ParameterSet p;
  p.add("a", 2, 2);
  EXPECT_THROW(p.add("a", 1, 1), std::invalid_argument);
  EXPECT_THROW(p.at("missing"), std::out_of_range);
  GradientMap g = p.zeros_like();
  EXPECT_TRUE(g.congruent_with(p));
  EXPECT_THROW(g.accumulate("a", Matrix::Zero(1, 2)), std::invalid_argument);
  EXPECT_EQ(p.scalar_count(), 4u);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  Rng rng(12);
  ParameterSet p;
  p.add("layer.weight", 3, 4) = random_matrix(3, 4, rng);
  p.add("layer.bias", 1, 4) = random_matrix(1, 4, rng);
  p.at("layer.bias")(0, 0) = -0.0;
  p.at("layer.bias")(0, 1) = 1e-310;
  std::stringstream ss;
  write_checkpoint(ss, p);
  const ParameterSet back = read_checkpoint(ss);
  EXPECT_TRUE(back == p);
  EXPECT_TRUE(std::signbit(back.at("layer.bias")(0, 0)));

  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
  std::string bytes = [&] { std::stringstream s; write_checkpoint(s, p); return s.str(); }();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(truncated), std::runtime_error);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), std::runtime_error);
}

TEST(Forwards, ArePure) {
  Rng rng(1);
  GruCell cell("g", 3, 2);
  ParameterSet p;
  cell.init(p, rng);
  const Matrix x = random_matrix(4, 3, rng), h = random_matrix(4, 2, rng);
  const Matrix a = cell.forward(p, x, h), b = cell.forward(p, x, h);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())));
}
