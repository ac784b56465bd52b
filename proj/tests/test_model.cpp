#include <doctest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "semcsi/error.hpp"
#include "semcsi/metrics.hpp"
#include "semcsi/model.hpp"
#include "toy.hpp"

using namespace semcsi;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Exact mean of a Gumbel-softmax (Concrete) coordinate at temperature 1:
// with a_k = exp(l_k) and e^{-g} ~ Exp(1), 1/S = int_0^inf e^{-tS} dt turns
// E[y_k] into a 1-D integral of modified Bessel functions.
double concrete_mean(const std::vector<double>& logits, std::size_t k) {
  std::vector<double> a;
  for (double l : logits) a.push_back(std::exp(l));
  auto f = [&](double t) {
    double v = 2.0 * a[k] * boost::math::cyl_bessel_k(0, 2.0 * std::sqrt(t * a[k]));
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (j == k) continue;
      const double x = 2.0 * std::sqrt(t * a[j]);
      v *= x * boost::math::cyl_bessel_k(1, x);
    }
    return v;
  };
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(f);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("semcsi_test_model_" + name);
}

}  // namespace

TEST_CASE("constellations have unit power and distinct points") {
  for (const char* name : {"qpsk", "psk8", "qam16"}) {
    const auto c = Constellation::named(name);
    double p = 0.0;
    for (const auto& z : c.points()) p += std::norm(z);
    CHECK(std::abs(p / static_cast<double>(c.size()) - 1.0) < 1e-12);
  }
  CHECK(Constellation::named("qpsk").size() == 4);
  CHECK(Constellation::named("qam16").size() == 16);
  CHECK_THROWS_AS(Constellation::named("bpsk7"), ConfigError);
  CHECK_THROWS_AS(Constellation({cplx(1, 0), cplx(1, 0)}), ConfigError);
}

TEST_CASE("compression ratio follows M / (N_t N_c)") {
  ModelConfig c;  // 32 x 52 defaults
  CHECK(c.channel_uses == 32 * 52 / 16);
  CHECK(c.compression_ratio() == doctest::Approx(1.0 / 16.0).epsilon(1e-15));
  CHECK(toy::model().compression_ratio() == doctest::Approx(8.0 / 32.0));
}

TEST_CASE("temperature anneals linearly") {
  ModelConfig c;
  c.tau_anneal_steps = 100;
  CHECK(c.tau_at(0) == 1.0);
  CHECK(c.tau_at(50) == doctest::Approx(0.55));
  CHECK(c.tau_at(100) == doctest::Approx(0.1));
  CHECK(c.tau_at(1000) == doctest::Approx(0.1));
}

TEST_CASE("model config validation and JSON round trip") {
  auto c = toy::model(CqiMode::kWideband, ModMode::kAnalog);
  c.hard_decision = HardDecision::kArgmax;
  c.normalization = Normalization::kSample;
  c.tau_end = 0.25;
  const auto back = model_config_from_json(model_config_to_json(c));
  CHECK(model_config_to_json(back) == model_config_to_json(c));
  CHECK(back.mod_mode == ModMode::kAnalog);
  CHECK(back.cqi_mode == CqiMode::kWideband);

  auto bad = toy::model();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy::model();
  bad.channel_uses = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter init follows the stated distributions") {
  const auto cfg = toy::model();
  Rng rng(5);
  const auto p = init_params(cfg, rng);
  CHECK_NOTHROW(check_params(cfg, p));
  const auto& w = p.at("enc.head.w");
  const double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(0)));
  for (double v : w.data()) CHECK(std::abs(v) <= bound);
  for (double v : p.at("enc.head.b").data()) CHECK(v == 0.0);
  for (double v : p.at("dec.block0.ln1.g").data()) CHECK(v == 1.0);
  double s2 = 0.0;
  for (double v : p.at("enc.pos").data()) s2 += v * v;
  const double sd = std::sqrt(s2 / static_cast<double>(p.at("enc.pos").size()));
  CHECK(sd > 0.01);
  CHECK(sd < 0.03);

  auto wrong = p;
  wrong.erase("dec.out.b");
  CHECK_THROWS_AS(check_params(cfg, wrong), ConfigError);
}

TEST_CASE("tokenize_csi shape, zero input and linearity") {
  const auto cfg = toy::model();
  Rng rng(2);
  const auto params = init_params(cfg, rng);  // biases start at zero

  Tape tape;
  ParamBinding p(tape, params, false);
  Tensor zero(Shape{1, cfg.n_c, 2 * cfg.n_t});
  const Var t0 = tokenize_csi(p, "enc", tape.constant(zero));
  CHECK(t0.shape() == Shape{1, cfg.n_c, cfg.embed_dim});
  for (double v : t0.value().data()) CHECK(v == 0.0);

  const auto h1 = oracles::random_channel(rng, cfg.n_t, cfg.n_c);
  const auto h2 = oracles::random_channel(rng, cfg.n_t, cfg.n_c);
  ChannelMatrix hs(cfg.n_t, cfg.n_c);
  for (std::size_t i = 0; i < hs.data().size(); ++i) hs.data()[i] = h1.data()[i] + h2.data()[i];
  auto tok = [&](const ChannelMatrix& h) {
    Tensor x(Shape{1, cfg.n_c, 2 * cfg.n_t}, realify(h));
    return tokenize_csi(p, "enc", tape.constant(x)).value();
  };
  const Tensor a = tok(h1), b = tok(h2), s = tok(hs);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - (a[i] + b[i])) <= 1e-12 * (1.0 + std::abs(s[i])));
}

TEST_CASE("realify and assemble are inverse") {
  Rng rng(9);
  const auto h = oracles::random_channel(rng, 3, 5);
  const auto v = realify(h);
  CHECK(v[0] == h(0, 0).real());
  CHECK(v[3] == h(0, 0).imag());
  CHECK(v[6 + 1] == h(1, 1).real());
  CHECK(assemble(v, 3, 5) == h);
}

TEST_CASE("embed_cqi contracts") {
  Rng rng(4);
  SUBCASE("mode none is all zeros") {
    const auto cfg = toy::model(CqiMode::kNone);
    const auto params = init_params(cfg, rng);
    Tape tape;
    ParamBinding p(tape, params, false);
    const Var e = embed_cqi(p, "enc", cfg, {CqiReport{}, CqiReport{}});
    CHECK(e.shape() == Shape{2, cfg.n_c, cfg.embed_dim});
    for (double v : e.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("wideband rows identical; subband with equal indices matches wideband") {
    auto wide = toy::model(CqiMode::kWideband);
    auto sub = toy::model(CqiMode::kSubband);
    const auto params = init_params(wide, rng);  // same shapes in both modes
    Tape tape;
    ParamBinding p(tape, params, false);
    const Var ew = embed_cqi(p, "enc", wide, {CqiReport{CqiMode::kWideband, {7}}});
    const Tensor& w = ew.value();
    for (std::size_t n = 1; n < wide.n_c; ++n)
      for (std::size_t d = 0; d < wide.embed_dim; ++d) CHECK(w[n * wide.embed_dim + d] == w[d]);
    const Var es = embed_cqi(p, "enc", sub, {CqiReport{CqiMode::kSubband, {7, 7, 7, 7}}});
    CHECK(max_abs_diff(es.value(), w) == 0.0);
    // distinct subband indices land on their own subcarriers
    const Var ed = embed_cqi(p, "enc", sub, {CqiReport{CqiMode::kSubband, {1, 7, 7, 7}}});
    CHECK(ed.value()[0] != w[0]);
    CHECK(ed.value()[2 * sub.embed_dim] == w[2 * sub.embed_dim]);
  }
  SUBCASE("index outside 0..15 is a contract error") {
    const auto cfg = toy::model(CqiMode::kWideband);
    const auto params = init_params(cfg, rng);
    Tape tape;
    ParamBinding p(tape, params, false);
    CHECK_THROWS_AS(embed_cqi(p, "enc", cfg, {CqiReport{CqiMode::kWideband, {16}}}), ContractError);
    CHECK_THROWS_AS(embed_cqi(p, "enc", cfg, {CqiReport{CqiMode::kWideband, {-1}}}), ContractError);
    CHECK_THROWS_AS(embed_cqi(p, "enc", cfg, {CqiReport{CqiMode::kSubband, {3, 3, 3, 3}}}), ContractError);
  }
}

TEST_CASE("encoder output shapes, analog power and CQI sensitivity") {
  Rng rng(6);
  SUBCASE("jcm logits are B x M x K") {
    const auto cfg = toy::model();
    const auto params = init_params(cfg, rng);
    Tape tape;
    ParamBinding p(tape, params, false);
    const auto b = toy::batch(cfg, 3);
    CHECK(encode(p, cfg, b).shape() == Shape{3, cfg.channel_uses, 4});
  }
  SUBCASE("analog output is B x M x 2 with unit batch power") {
    const auto cfg = toy::model(CqiMode::kSubband, ModMode::kAnalog);
    const auto params = init_params(cfg, rng);
    Tape tape;
    ParamBinding p(tape, params, false);
    const auto b = toy::batch(cfg, 5);
    const Var s = encode(p, cfg, b);
    CHECK(s.shape() == Shape{5, cfg.channel_uses, 2});
    double power = 0.0;
    for (std::size_t i = 0; i < s.value().size(); i += 2)
      power += s.value()[i] * s.value()[i] + s.value()[i + 1] * s.value()[i + 1];
    CHECK(std::abs(power / static_cast<double>(5 * cfg.channel_uses) - 1.0) < 1e-9);
  }
  SUBCASE("changing only the CQI index changes the logits") {
    const auto cfg = toy::model(CqiMode::kWideband);
    const auto params = init_params(cfg, rng);
    auto b1 = toy::batch(cfg, 1);
    auto b2 = b1;
    b1.cqi[0].indices = {3};
    b2.cqi[0].indices = {9};
    Tape tape;
    ParamBinding p(tape, params, false);
    CHECK(max_abs_diff(encode(p, cfg, b1).value(), encode(p, cfg, b2).value()) > 1e-6);
  }
}

TEST_CASE("mode none is bitwise equal to wideband with a zeroed CQI table") {
  const auto none = toy::model(CqiMode::kNone);
  const auto wide = toy::model(CqiMode::kWideband);
  Rng rng(8);
  auto params = init_params(none, rng);
  const auto b_none = toy::batch(none, 4);
  auto b_wide = toy::batch(wide, 4);
  for (const char* name : {"enc.cqi.w", "enc.cqi.b", "dec.cqi.w", "dec.cqi.b"})
    for (auto& v : params.at(name).data()) v = 0.0;

  auto run = [&](const ModelConfig& cfg, const Batch& b) {
    Tape tape;
    ParamBinding p(tape, params, false);
    ForwardOptions fo;
    fo.snr_db = 0.0;
    Rng r(77);
    return forward(p, cfg, b, fo, r).output.value();
  };
  const Tensor a = run(none, b_none);
  const Tensor w = run(wide, b_wide);
  CHECK(a.vec() == w.vec());
}

TEST_CASE("encoder tokens are permutation-equivariant") {
  // Permuting subcarriers together with the positional encodings (and, for
  // subband CQI, the subband assignment) permutes z_N the same way.
  for (auto mode : {CqiMode::kWideband, CqiMode::kSubband}) {
    CAPTURE(to_string(mode));
    const auto cfg = toy::model(mode);
    Rng rng(12);
    const auto params = init_params(cfg, rng);
    const auto b = toy::batch(cfg, 2);
    // whole subbands (pairs of subcarriers) move: block order 2,0,3,1
    const std::vector<std::size_t> blocks{2, 0, 3, 1};
    std::vector<std::size_t> perm;  // new token n takes old token perm[n]
    for (auto blk : blocks) perm.insert(perm.end(), {2 * blk, 2 * blk + 1});

    auto pb = b;
    auto pparams = params;
    const std::size_t tw = 2 * cfg.n_t, d = cfg.embed_dim;
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t n = 0; n < cfg.n_c; ++n)
        for (std::size_t j = 0; j < tw; ++j) pb.x[(s * cfg.n_c + n) * tw + j] = b.x[(s * cfg.n_c + perm[n]) * tw + j];
      if (mode == CqiMode::kSubband)
        for (std::size_t k = 0; k < blocks.size(); ++k) pb.cqi[s].indices[k] = b.cqi[s].indices[blocks[k]];
    }
    for (std::size_t n = 0; n < cfg.n_c; ++n)
      for (std::size_t j = 0; j < d; ++j) pparams.at("enc.pos")[n * d + j] = params.at("enc.pos")[perm[n] * d + j];

    Tape tape;
    ParamBinding p(tape, params, false);
    ParamBinding pp(tape, pparams, false);
    const Tensor z = encode_tokens(p, cfg, b).value();
    const Tensor zp = encode_tokens(pp, cfg, pb).value();
    double worst = 0.0;
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t n = 0; n < cfg.n_c; ++n)
        for (std::size_t j = 0; j < d; ++j)
          worst = std::max(worst, std::abs(zp[(s * cfg.n_c + n) * d + j] - z[(s * cfg.n_c + perm[n]) * d + j]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("hard JCM symbols are exact constellation members") {
  const auto cst = Constellation::named("qpsk");
  Rng rng(21);
  Tape tape;
  const Var logits = tape.constant(testing_util::random_tensor(rng, {6, 8, 4}, 2.0));
  for (auto decision : {HardDecision::kSample, HardDecision::kArgmax}) {
    ModulateOptions mo;
    mo.pass = ModPass::kHard;
    mo.decision = decision;
    const auto seq = modulate_jcm(logits, cst, mo, rng);
    const Tensor& s = seq.symbols.value();
    REQUIRE(s.shape() == Shape{6, 8, 2});
    double power = 0.0;
    for (std::size_t i = 0; i < 48; ++i) {
      CHECK(cst.contains(cplx(s[2 * i], s[2 * i + 1])));
      CHECK(cst.points()[seq.hard[i]] == cplx(s[2 * i], s[2 * i + 1]));
      power += s[2 * i] * s[2 * i] + s[2 * i + 1] * s[2 * i + 1];
    }
    CHECK(std::abs(power / 48.0 - 1.0) < 1e-9);
    // distribution rows are valid
    for (std::size_t r = 0; r < 48; ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < 4; ++k) sum += (*seq.probs)[r * 4 + k];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  // argmax decision picks the most likely point
  ModulateOptions mo;
  mo.pass = ModPass::kHard;
  mo.decision = HardDecision::kArgmax;
  const auto seq = modulate_jcm(logits, cst, mo, rng);
  for (std::size_t r = 0; r < 48; ++r) {
    const double* l = logits.value().data().data() + 4 * r;
    CHECK(seq.hard[r] == static_cast<std::size_t>(std::max_element(l, l + 4) - l));
  }
}

TEST_CASE("soft JCM at vanishing temperature without noise picks the argmax point") {
  const auto cst = Constellation::named("qpsk");
  Rng rng(22);
  Tape tape;
  const Var logits = tape.constant(testing_util::random_tensor(rng, {1, 16, 4}));
  ModulateOptions mo;
  mo.tau = 1e-9;
  mo.gumbel_noise = false;
  const auto seq = modulate_jcm(logits, cst, mo, rng);
  for (std::size_t r = 0; r < 16; ++r) {
    const double* l = logits.value().data().data() + 4 * r;
    const auto k = static_cast<std::size_t>(std::max_element(l, l + 4) - l);
    CHECK(seq.symbols.value()[2 * r] == cst.points()[k].real());
    CHECK(seq.symbols.value()[2 * r + 1] == cst.points()[k].imag());
  }
}

TEST_CASE("straight-through forwards hard points and differentiates the soft path") {
  const auto cst = Constellation::named("qpsk");
  Rng rng(23);
  const Tensor l0 = testing_util::random_tensor(rng, {2, 3, 4});
  Tape tape;
  const Var logits = tape.variable(l0);
  ModulateOptions mo;
  mo.straight_through = true;
  mo.tau = 0.5;
  Rng r1(5);
  const auto st = modulate_jcm(logits, cst, mo, r1);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(cst.contains(cplx(st.symbols.value()[2 * i], st.symbols.value()[2 * i + 1])));
  tape.backward(ad::sum(st.symbols));
  const Tensor g_st = tape.grad(logits);

  Tape t2;
  const Var l2 = t2.variable(l0);
  mo.straight_through = false;
  Rng r2(5);
  t2.backward(ad::sum(modulate_jcm(l2, cst, mo, r2).symbols));
  CHECK(g_st.vec() == t2.grad(l2).vec());
}

TEST_CASE("Monte-Carlo symbol means match their exact expectations") {
  const auto cst = Constellation::named("qpsk");
  const std::vector<double> l{1.0, 0.2, -0.5, -1.0};
  const std::size_t n = 10000;
  Tensor rows(Shape{n, 4});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 4; ++k) rows[i * 4 + k] = l[k];
  Tape tape;
  const Var logits = tape.constant(rows);

  auto check_mean = [&](const Tensor& sym, const std::vector<double>& weights) {
    for (std::size_t c = 0; c < 2; ++c) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        expect += weights[k] * (c == 0 ? cst.points()[k].real() : cst.points()[k].imag());
      double m = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        m += sym[2 * i + c];
        m2 += sym[2 * i + c] * sym[2 * i + c];
      }
      m /= static_cast<double>(n);
      const double se = std::sqrt((m2 / static_cast<double>(n) - m * m) / static_cast<double>(n));
      CAPTURE(c);
      CHECK(std::abs(m - expect) < 3.0 * se);
    }
  };

  SUBCASE("hard Gumbel-max samples have mean sum_k p_k c_k") {
    std::vector<double> p(4);
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) z += (p[k] = std::exp(l[k]));
    for (auto& v : p) v /= z;
    Rng rng(31);
    ModulateOptions mo;
    mo.pass = ModPass::kHard;
    check_mean(modulate_jcm(logits, cst, mo, rng).symbols.value(), p);
  }
  SUBCASE("soft tau=1 samples have the exact Concrete mean") {
    std::vector<double> ey(4);
    for (std::size_t k = 0; k < 4; ++k) ey[k] = concrete_mean(l, k);
    CHECK(std::accumulate(ey.begin(), ey.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-8));
    Rng rng(32);
    ModulateOptions mo;
    mo.tau = 1.0;
    check_mean(modulate_jcm(logits, cst, mo, rng).symbols.value(), ey);
  }
}

TEST_CASE("AWGN channel calibration") {
  Rng rng(41);
  SUBCASE("zero variance passes symbols through exactly") {
    Tape tape;
    const Var s = tape.constant(testing_util::random_tensor(rng, {3, 8, 2}));
    CHECK(awgn(s, noise_variance(std::numeric_limits<double>::infinity()), rng).value().vec() == s.value().vec());
    CHECK(awgn(s, 0.0, rng).value().vec() == s.value().vec());
  }
  SUBCASE("noise variance and mean at -10 dB") {
    const double var = noise_variance(-10.0);
    CHECK(var == doctest::Approx(10.0).epsilon(1e-12));
    const std::size_t n = 100000;
    Tensor base(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      base[2 * i] = 0.6;
      base[2 * i + 1] = -0.8;
    }
    Tape tape;
    const Var out = awgn(tape.constant(base), var, rng);
    double p = 0.0, mr = 0.0, mi = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double er = out.value()[2 * i] - 0.6, ei = out.value()[2 * i + 1] + 0.8;
      p += er * er + ei * ei;
      mr += out.value()[2 * i];
      mi += out.value()[2 * i + 1];
    }
    CHECK(std::abs(p / static_cast<double>(n) / var - 1.0) < 0.02);
    const double se = std::sqrt(var / 2.0 / static_cast<double>(n));
    CHECK(std::abs(mr / static_cast<double>(n) - 0.6) < 3.0 * se);
    CHECK(std::abs(mi / static_cast<double>(n) + 0.8) < 3.0 * se);
  }
}

TEST_CASE("decoder shape and zero output head") {
  const auto cfg = toy::model();
  Rng rng(51);
  auto params = init_params(cfg, rng);
  const auto b = toy::batch(cfg, 3);
  {
    Tape tape;
    ParamBinding p(tape, params, false);
    ForwardOptions fo;
    Rng r(1);
    const auto fr = forward(p, cfg, b, fo, r);
    CHECK(fr.output.shape() == Shape{3, cfg.n_c, 2 * cfg.n_t});
    CHECK(fr.tx.symbols.shape() == Shape{3, cfg.channel_uses, 2});
  }
  for (auto& v : params.at("dec.out.w").data()) v = 0.0;
  Tape tape;
  ParamBinding p(tape, params, false);
  ForwardOptions fo;
  fo.pass = ModPass::kHard;
  Rng r(1);
  const auto out = forward(p, cfg, b, fo, r).output.value();
  for (std::size_t s = 0; s < 3; ++s) {
    const auto est = assemble(out.data().subspan(s * 64, 64), cfg.n_t, cfg.n_c);
    const auto truth = assemble(b.x.data().subspan(s * 64, 64), cfg.n_t, cfg.n_c);
    CHECK(nmse_ratio(truth, est) == 1.0);
  }
}

TEST_CASE("mse loss matches brute force") {
  Rng rng(61);
  const Tensor a = testing_util::random_tensor(rng, {3, 8, 8});
  const Tensor b = testing_util::random_tensor(rng, {3, 8, 8});
  Tape tape;
  const double got = mse_loss(tape.constant(a), tape.constant(b)).value().item();
  double brute = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
  brute /= 3.0;
  CHECK(std::abs(got - brute) <= 1e-12 * brute);
  CHECK(mse_loss(tape.constant(a), tape.constant(a)).value().item() == 0.0);
  // zero estimate of one sample: the squared Frobenius norm
  const Tensor one = testing_util::random_tensor(rng, {1, 8, 8});
  double e = 0.0;
  for (double v : one.data()) e += v * v;
  CHECK(mse_loss(tape.constant(Tensor(Shape{1, 8, 8})), tape.constant(one)).value().item() ==
        doctest::Approx(e).epsilon(1e-14));
  CHECK_THROWS_AS(mse_loss(tape.constant(a), tape.constant(one)), ContractError);
}

namespace {

// Loss of the toy model on a fixed batch with all randomness pinned.
struct ToyLoss {
  ModelConfig cfg = toy::model();
  Batch batch = toy::batch(cfg, 2);
  double operator()(const ParamMap& params, ParamMap* grads = nullptr) const {
    Tape tape;
    ParamBinding p(tape, params, grads != nullptr);
    ForwardOptions fo;
    fo.tau = 0.7;
    fo.snr_db = std::numeric_limits<double>::infinity();
    Rng rng(99);
    const auto fr = forward(p, cfg, batch, fo, rng);
    const Var loss = mse_loss(fr.output, tape.constant(batch.x));
    if (grads) {
      tape.backward(loss);
      for (const auto& [name, v] : p.vars()) (*grads)[name] = tape.grad(v);
    }
    return loss.value().item();
  }
};

}  // namespace

TEST_CASE("end-to-end gradient matches finite differences on random parameters") {
  ToyLoss f;
  Rng rng(71);
  auto params = init_params(f.cfg, rng);
  ParamMap grads;
  f(params, &grads);

  std::vector<std::string> names;
  for (const auto& [k, t] : params) names.push_back(k);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  auto check_entry = [&](const std::string& name, std::size_t idx) {
    double& x = params.at(name)[idx];
    const double x0 = x;
    x = x0 + h;
    const double fp = f(params);
    x = x0 - h;
    const double fm = f(params);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = testing_util::rel_error(grads.at(name)[idx], numeric);
    CAPTURE(name);
    CAPTURE(idx);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
    ++checked;
  };
  for (int i = 0; i < 25; ++i) {
    const auto& name = names[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(names.size()) - 1))];
    check_entry(name, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(params.at(name).size()) - 1)));
  }
  // the learnable positional encoding P of the encoder
  for (int i = 0; i < 5; ++i)
    check_entry("enc.pos", static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(params.at("enc.pos").size()) - 1)));
  CHECK(checked == 30);
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("loss times zero gives zero gradients everywhere") {
  const auto cfg = toy::model();
  Rng rng(72);
  const auto params = init_params(cfg, rng);
  const auto b = toy::batch(cfg, 2);
  Tape tape;
  ParamBinding p(tape, params, true);
  ForwardOptions fo;
  Rng r(1);
  const auto fr = forward(p, cfg, b, fo, r);
  tape.backward(ad::scale(mse_loss(fr.output, tape.constant(b.x)), 0.0));
  for (const auto& [name, v] : p.vars())
    for (const Tensor g = tape.grad(v); double x : g.vec()) CHECK(x == 0.0);
}

TEST_CASE("checkpoint files round trip and reject corruption") {
  const auto cfg = toy::model();
  Rng rng(81);
  Checkpoint ck;
  ck.config_json = R"({"model":)" + model_config_to_json(cfg) + "}";
  for (auto& [k, t] : init_params(cfg, rng)) ck.records.emplace(k, t);
  ck.records.emplace("extra/scalar", Tensor::scalar(-0.0));
  const auto path = temp_file("ck.smck");
  write_checkpoint(ck, path);

  const auto back = read_checkpoint(path);
  CHECK(back.config_json == ck.config_json);
  REQUIRE(back.records.size() == ck.records.size());
  for (const auto& [k, t] : ck.records) {
    const auto& u = back.records.at(k);
    CHECK(u.shape() == t.shape());
    CHECK(std::memcmp(u.vec().data(), t.vec().data(), t.size() * sizeof(double)) == 0);
  }
  const auto hdr = read_checkpoint_header(path);
  CHECK(hdr.version == 1);
  CHECK(hdr.records == ck.records.size());

  std::vector<char> bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write_bytes = [&](const std::vector<char>& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto field_of = [&](const std::vector<char>& b) -> std::string {
    write_bytes(b);
    try {
      read_checkpoint(path);
    } catch (const FormatError& e) {
      return e.field();
    }
    return "<accepted>";
  };
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(field_of(bad) == "magic");
  bad = bytes;
  bad[4] = 2;
  CHECK(field_of(bad) == "version");
  bad.assign(bytes.begin(), bytes.begin() + 10);
  CHECK(field_of(bad) == "config_length");
  bad.assign(bytes.begin(), bytes.end() - 3);
  CHECK(field_of(bad) == "record.values");
  std::filesystem::remove(path);
}
