#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ps2/ad/fused.hpp"
#include "ps2/ad/gradcheck.hpp"
#include "ps2/ad/ops.hpp"
#include "ps2/common/error.hpp"
#include "ps2/model/model.hpp"
#include "ps2/model/weights.hpp"
#include "ps2/train/loss.hpp"
#include "support.hpp"

using namespace ps2;
using namespace ps2::ad;
using namespace ps2::model;
using Td = Tensor<double>;
using Store = nn::ParameterStore<double>;

namespace {

void set_prefix(Store& store, const std::string& prefix, double value) {
  for (const auto* e : store.with_prefix(prefix)) {
    Td t = e->tensor;
    for (auto& v : t.mutable_values()) v = value;
  }
}

std::set<std::string> name_set(const Store& s) {
  const auto n = s.names();
  return {n.begin(), n.end()};
}

// Frames permuted along axis 0 of a [T, ...] tensor.
Td permute_frames(const Td& x, const std::vector<std::size_t>& order) {
  const std::size_t stride = x.numel() / x.dim(0);
  std::vector<double> v(x.numel());
  for (std::size_t t = 0; t < order.size(); ++t)
    std::copy_n(x.values().begin() + order[t] * stride, stride, v.begin() + t * stride);
  return Td(x.shape(), std::move(v));
}

Ps2Config small_config() {
  Ps2Config c = Ps2Config::gradcheck();
  c.embed = 4;
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("profiles validate and keep the full-scale hyperparameters") {
    const auto p = Ps2Config::paper();
    CHECK(p.mics == 6);
    CHECK(p.embed == 48);
    CHECK(p.blocks == 8);
    CHECK(p.freq_hidden == 96);
    CHECK(p.mamba_state == 128);
    CHECK(p.mamba_conv == 4);
    CHECK(p.sa_heads == 4);
    CHECK(p.sa_dim == 8);
    CHECK(p.gru_layers == 2);
    CHECK(p.gru_hidden == 96);
    CHECK(p.gru_dropout == 0.05);
    CHECK(p.ca_dim == 8);
    CHECK(p.ca_heads == 4);
    CHECK(p.bins() == 257);
    p.validate();
    Ps2Config::toy().validate();
    Ps2Config::gradcheck().validate();
    Ps2Config bad = p;
    bad.ca_heads = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(Ps2Config::profile("huge"), Error);
    CHECK_THROWS_AS(parse_fusion_mode("concat"), Error);
  }

  TEST_CASE("config json round trip rejects unknown keys") {
    Ps2Config c = Ps2Config::toy();
    c.fusion = FusionMode::kSum;
    CHECK(config_from_json(to_json(c)) == c);
    auto j = to_json(c);
    j["mystery"] = 1;
    CHECK_THROWS_AS(config_from_json(j), Error);
    CHECK(config_from_json({{"blocks", 3}}, Ps2Config::toy()).blocks == 3);
  }

  TEST_CASE("spectral encoder shapes at paper scale") {
    nn::ParameterStore<float> store;
    Rng rng(1);
    const Ps2Model<float> m(Ps2Config::paper(), store, rng);
    NoGradScope ng;
    const auto y = m.spectral_encoder(Tensor<float>::zeros({12, 50, 257}));
    CHECK(y.shape() == Shape{50, 257, 48});
    const auto s = m.spatial_branch(Tensor<float>::zeros({12, 50, 257}), RunMode::eval());
    CHECK(s.shape() == Shape{50, 257, 48});
    const auto d = m.decode(Tensor<float>::zeros({50, 257, 48}));
    CHECK(d.shape() == Shape{4, 50, 257});
    CHECK_THROWS_AS(m.spectral_encoder(Tensor<float>::zeros({10, 50, 257})), Error);
  }

  TEST_CASE("spectral encoder on zero input is a constant grid") {
    Store store;
    Rng rng(2);
    const Ps2Model<double> m(small_config(), store, rng);
    const Td y = m.spectral_encoder(Td::zeros({4, 3, 5}));
    // conv output is the bias everywhere; layer norm maps it to the same vector.
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(y[i % 4]).epsilon(1e-12));
  }

  TEST_CASE("zeroed spectral sub-modules are identities") {
    Store store;
    Rng rng(3);
    const Ps2Model<double> m(small_config(), store, rng);
    set_prefix(store, "spectral.block0.freq", 0.0);
    set_prefix(store, "spectral.block0.temporal", 0.0);
    set_prefix(store, "spectral.block0.attention", 0.0);
    const Td x = test::random_tensor({5, 7, 4}, rng, 1.0, false);
    for (const Td& y : {m.frequency_module(0, x), m.temporal_module(0, x), m.self_attention_module(0, x)})
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }

  TEST_CASE("zeroed spatial recurrence leaves the encoder output") {
    Store store;
    Rng rng(4);
    const Ps2Model<double> m(small_config(), store, rng);
    set_prefix(store, "spatial.gru", 0.0);
    const Td mp = test::random_tensor({4, 6, 9}, rng, 1.0, false);
    const Td y = m.spatial_branch(mp, RunMode::eval());
    Td e;
    {
      // Encoder alone: same conv + norm, reached through a model bound to the store.
      const Ps2Model<double> bound(small_config(), store);
      (void)bound;
    }
    // With remap and PReLU slope zero the branch reduces to its encoder; compare
    // against the spectral-encoder code path by copying the spatial encoder weights.
    set_prefix(store, "spectral.encoder", 0.0);
    Td sw = store.get("spectral.encoder.conv.w");
    Td sb = store.get("spectral.encoder.conv.b");
    std::copy_n(store.get("spatial.encoder.conv.w").values().begin(), sw.numel(), sw.mutable_values().begin());
    std::copy_n(store.get("spatial.encoder.conv.b").values().begin(), sb.numel(), sb.mutable_values().begin());
    set_prefix(store, "spectral.encoder.norm.gain", 1.0);
    e = m.spectral_encoder(mp);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(e[i]).epsilon(1e-14));
  }

  TEST_CASE("sum fusion with zero spatial features returns the spectral features") {
    Ps2Config c = small_config();
    c.fusion = FusionMode::kSum;
    Store store;
    Rng rng(5);
    const Ps2Model<double> m(c, store, rng);
    const Td spec = test::random_tensor({3, 9, 4}, rng, 1.0, false);
    const Td y = m.fuse(spec, Td::zeros({3, 9, 4}), RunMode::eval());
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == spec[i]);
  }

  TEST_CASE("cross-attention fusion with constant spatial frames is constant over time") {
    Store store;
    Rng rng(6);
    const Ps2Model<double> m(small_config(), store, rng);
    const Td spec = test::random_tensor({4, 9, 4}, rng, 1.0, false);
    const Td frame = test::random_tensor({1, 9, 4}, rng, 1.0, false);
    const Td y = m.fuse(spec, broadcast_to(frame, {4, 9, 4}), RunMode::eval());
    for (std::size_t t = 1; t < 4; ++t)
      for (std::size_t i = 0; i < 36; ++i) CHECK(y[t * 36 + i] == doctest::Approx(y[i]).epsilon(1e-12));
  }

  TEST_CASE("cross-attention fusion two-frame oracle") {
    Store store;
    Rng rng(7);
    const Ps2Config c = small_config();  // D = 4, D_CA = 4, 2 heads of 2
    const Ps2Model<double> m(c, store, rng);
    const std::size_t T = 2, F = 3, D = 4, A = 4, H = 2, E = 2;
    const Td spec = test::random_tensor({T, F, D}, rng, 1.0, false);
    const Td spat = test::random_tensor({T, F, D}, rng, 1.0, false);
    const Td y = m.fuse(spec, spat, RunMode::eval());

    auto lin = [&](const std::vector<double>& x, const std::string& name, std::size_t in, std::size_t out) {
      const auto w = store.get(name + ".w").values();
      const bool bias = store.contains(name + ".b");
      std::vector<double> y(x.size() / in * out);
      for (std::size_t p = 0; p < x.size() / in; ++p)
        for (std::size_t o = 0; o < out; ++o) {
          double s = bias ? store.get(name + ".b")[o] : 0.0;
          for (std::size_t i = 0; i < in; ++i) s += x[p * in + i] * w[i * out + o];
          y[p * out + o] = s;
        }
      return y;
    };
    const std::vector<double> sv(spec.values().begin(), spec.values().end());
    const std::vector<double> pv(spat.values().begin(), spat.values().end());
    const auto q = lin(lin(sv, "fusion.reduce_spec", D, A), "fusion.q", A, A);
    const auto k = lin(lin(pv, "fusion.reduce_spat", D, A), "fusion.k", A, A);
    const auto v = lin(lin(pv, "fusion.reduce_spat", D, A), "fusion.v", A, A);
    std::vector<double> att(T * F * A);
    for (std::size_t h = 0; h < H; ++h) {
      double s[2][2];
      for (std::size_t a = 0; a < T; ++a)
        for (std::size_t b = 0; b < T; ++b) {
          double dot = 0;
          for (std::size_t f = 0; f < F; ++f)
            for (std::size_t e = 0; e < E; ++e) dot += q[(a * F + f) * A + h * E + e] * k[(b * F + f) * A + h * E + e];
          s[a][b] = dot / std::sqrt(4.0);
        }
      for (std::size_t a = 0; a < T; ++a) {
        const double w0 = 1.0 / (1.0 + std::exp(s[a][1] - s[a][0]));
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t e = 0; e < E; ++e) {
            const std::size_t j = h * E + e;
            att[(a * F + f) * A + j] = w0 * v[(0 * F + f) * A + j] + (1 - w0) * v[(1 * F + f) * A + j];
          }
      }
    }
    const auto expect = lin(att, "fusion.out", A, D);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  TEST_CASE("decoder zero case and adjointness") {
    Store store;
    Rng rng(8);
    const Ps2Model<double> m(small_config(), store, rng);
    const Td x = test::random_tensor({5, 9, 4}, rng, 1.0, false);
    const Td y = test::random_tensor({4, 5, 9}, rng, 1.0, false);
    const Td dx = m.decode(x);
    CHECK(dx.shape() == Shape{4, 5, 9});
    // The decoder weight [D, 2C, 3, 3] read as [Cout, Cin] kernels gives the adjoint conv.
    const Td back = permute(conv2d(y, store.get("decoder.deconv.w").detached(), Td::zeros({4})), {1, 2, 0});
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < dx.numel(); ++i) lhs += dx[i] * y[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    set_prefix(store, "decoder", 0.0);
    const Td z = m.decode(x);
    for (double v : z.values()) CHECK(v == 0.0);
  }

  TEST_CASE("self-attention is permutation equivariant over frames") {
    Store store;
    Rng rng(9);
    const Ps2Model<double> m(small_config(), store, rng);
    const Td x = test::random_tensor({5, 6, 4}, rng, 1.0, false);
    const std::vector<std::size_t> order{3, 0, 4, 1, 2};
    const Td a = permute_frames(m.self_attention_module(0, x), order);
    const Td b = m.self_attention_module(0, permute_frames(x, order));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    const Td fa = permute_frames(m.frequency_module(0, x), order);
    const Td fb = m.frequency_module(0, permute_frames(x, order));
    for (std::size_t i = 0; i < fa.numel(); ++i) CHECK(fa[i] == doctest::Approx(fb[i]).epsilon(1e-12));
  }

  TEST_CASE("self-attention on one frame is residual plus value path") {
    Store store;
    Rng rng(10);
    const Ps2Model<double> m(small_config(), store, rng);
    const Td x = test::random_tensor({1, 6, 4}, rng, 1.0, false);
    const Td y = m.self_attention_module(0, x);
    const std::string p = "spectral.block0.attention.";
    const Td v = linear(x, store.get(p + "v.w"), store.get(p + "v.b"));
    const Td expect = add(x, linear(v, store.get(p + "out.w"), store.get(p + "out.b")));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  TEST_CASE("temporal module looks ahead at most I_T - 1 frames") {
    Store store;
    Rng rng(11);
    const Ps2Config c = small_config();
    const Ps2Model<double> m(c, store, rng);
    NoGradScope ng;
    const std::size_t T = 8, F = 3, D = 4;
    const Td x = test::random_tensor({T, F, D}, rng, 1.0, false);
    const Td base = sub(m.temporal_module(0, x), x);
    for (std::size_t t = 0; t < T; ++t) {
      Td x2 = x.detached();
      for (std::size_t i = 0; i < F * D; ++i) x2.mutable_values()[t * F * D + i] += 0.3;
      const Td y = sub(m.temporal_module(0, x2), x2);
      for (std::size_t s = 0; s + c.time_block - 1 < t; ++s)
        for (std::size_t i = 0; i < F * D; ++i) CHECK(y[s * F * D + i] == base[s * F * D + i]);
    }
  }

  TEST_CASE("end-to-end shape contract on random geometries") {
    Rng rng(12);
    NoGradScope ng;
    for (int trial = 0; trial < 6; ++trial) {
      Ps2Config c = Ps2Config::gradcheck();
      c.mics = 1 + rng.below(3);
      c.sources = 1 + rng.below(3);
      c.embed = std::size_t{2} << rng.below(2);
      c.blocks = 1 + rng.below(2);
      c.ca_dim = 4;
      c.stft.fft_size = std::size_t{8} << rng.below(3);
      c.stft.hop = c.stft.fft_size / 2;
      const std::size_t len = c.stft.fft_size + rng.below(60);
      INFO("M=" << c.mics << " C=" << c.sources << " D=" << c.embed << " fft=" << c.stft.fft_size << " len=" << len);
      Store store;
      const Ps2Model<double> m(c, store, rng);
      signal::Waveform mix(c.mics, len, c.sample_rate);
      for (auto& v : mix.samples()) v = rng.uniform(-1, 1);
      const auto out = m.forward(mix, RunMode::eval());
      CHECK(out.waveforms.shape() == Shape{c.sources, len});
      CHECK(out.spectra.shape() == Shape{2 * c.sources, c.stft.frames(len), c.bins()});
      for (double v : out.waveforms.values()) CHECK(std::isfinite(v));
      CHECK(store.total_count() == analytic_param_count(c));
    }
  }

  TEST_CASE("inputs are validated") {
    Store store;
    Rng rng(13);
    const Ps2Model<double> m(small_config(), store, rng);
    CHECK_THROWS_AS(m.forward(signal::Waveform(3, 64, 16000), RunMode::eval()), Error);
    CHECK_THROWS_AS(m.forward(signal::Waveform(2, 8, 16000), RunMode::eval()), Error);
    Rng drop(1);
    RunMode bad = RunMode::train(drop);
    bad.rng = nullptr;
    CHECK_THROWS_AS(m.forward(signal::Waveform(2, 40, 16000), bad), Error);
  }

  TEST_CASE("eval forward is deterministic and train forward uses dropout") {
    const Ps2Config c = Ps2Config::gradcheck();
    auto store = init_params<double>(c, 14);
    const Ps2Model<double> m(c, store);
    Rng rng(15);
    signal::Waveform mix(2, 40, c.sample_rate);
    for (auto& v : mix.samples()) v = rng.uniform(-1, 1);
    const auto a = m.forward(mix, RunMode::eval());
    const auto b = m.forward(mix, RunMode::eval());
    for (std::size_t i = 0; i < a.waveforms.numel(); ++i) CHECK(a.waveforms[i] == b.waveforms[i]);
    Rng d1(1), d2(1);
    const auto t1 = m.forward(mix, RunMode::train(d1));
    const auto t2 = m.forward(mix, RunMode::train(d2));
    double diff = 0;
    for (std::size_t i = 0; i < a.waveforms.numel(); ++i) {
      CHECK(t1.waveforms[i] == t2.waveforms[i]);
      diff += std::abs(t1.waveforms[i] - a.waveforms[i]);
    }
    CHECK(diff > 0.0);
  }

  TEST_CASE("init is seeded") {
    const auto c = Ps2Config::toy();
    const auto a = init_params<float>(c, 21), b = init_params<float>(c, 21), d = init_params<float>(c, 22);
    CHECK(a.names() == b.names());
    bool same = true, differs = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const auto& x = a.entries()[k].tensor;
      const auto& y = b.entries()[k].tensor;
      const auto& z = d.entries()[k].tensor;
      same = same && std::equal(x.values().begin(), x.values().end(), y.values().begin());
      differs = differs || !std::equal(x.values().begin(), x.values().end(), z.values().begin());
    }
    CHECK(same);
    CHECK(differs);
  }

  TEST_CASE("parameter counts match the closed form") {
    for (const auto& base : {Ps2Config::paper(), Ps2Config::toy(), Ps2Config::gradcheck()}) {
      for (int variant = 0; variant < 3; ++variant) {
        Ps2Config c = base;
        if (variant == 1) c.fusion = FusionMode::kSum;
        if (variant == 2) c.spatial_branch = false;
        const auto store = init_params<float>(c, 1);
        CHECK(store.total_count() == analytic_param_count(c));
      }
    }
  }

  TEST_CASE("ablation variants differ only in their own parameters") {
    const auto full = name_set(init_params<double>(Ps2Config::gradcheck(), 1));
    Ps2Config sum_cfg = Ps2Config::gradcheck();
    sum_cfg.fusion = FusionMode::kSum;
    const auto summed = name_set(init_params<double>(sum_cfg, 1));
    for (const auto& n : full)
      if (!summed.count(n)) CHECK(nn::has_prefix(n, "fusion"));
    CHECK(summed.size() < full.size());
    for (const auto& n : summed) CHECK(full.count(n) == 1);

    Ps2Config ri = Ps2Config::gradcheck();
    ri.spatial_branch = false;
    const auto single = name_set(init_params<double>(ri, 1));
    for (const auto& n : full)
      if (!single.count(n)) CHECK((nn::has_prefix(n, "fusion") || nn::has_prefix(n, "spatial")));
    for (const auto& n : single) {
      CHECK(full.count(n) == 1);
      CHECK_FALSE(nn::has_prefix(n, "spatial"));
    }
    CHECK(functional_blocks(ri).size() == 1 + 3 + 1);
  }

  TEST_CASE("weights save and load round trip") {
    const auto dir = test::scratch_dir("weights");
    const std::string path = (dir / "toy.ps2w").string();
    const auto c = Ps2Config::toy();
    const auto store = init_params<float>(c, 31);
    save_params(store, path, {{"config", to_json(c)}});
    auto loaded = init_params<float>(c, 99);
    load_params(loaded, path);
    for (std::size_t k = 0; k < store.size(); ++k) {
      const auto& a = store.entries()[k].tensor;
      const auto& b = loaded.entries()[k].tensor;
      CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    }
    const auto side = read_sidecar(path);
    CHECK(side.at("tensors").size() == store.size());
    CHECK(side.at("parameter_count") == store.total_count());
    CHECK(config_from_json(side.at("config")) == c);

    // A different geometry must be rejected with the offenders named.
    Ps2Config other = c;
    other.fusion = FusionMode::kSum;
    other.freq_hidden = 16;
    auto wrong = init_params<float>(other, 1);
    try {
      load_params(wrong, path);
      FAIL("expected manifest error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(e.kind() == ErrorKind::kData);
      CHECK(msg.find("unknown fusion.q.w") != std::string::npos);
      CHECK(msg.find("shape mismatch spectral.block0.freq.blstm.w_hh_fwd") != std::string::npos);
    }
    nn::ParameterStore<float> extra = init_params<float>(c, 1);
    extra.add("spare.w", {2});
    CHECK_THROWS_WITH_AS(load_params(extra, path), doctest::Contains("missing spare.w"), Error);

    std::ofstream(dir / "junk.ps2w") << "PS2X";
    CHECK_THROWS_AS(read_weights((dir / "junk.ps2w").string()), Error);
  }

  TEST_CASE("full toy model gradient check") {
    const Ps2Config c = Ps2Config::gradcheck();
    auto store = init_params<double>(c, 41);
    const Ps2Model<double> m(c, store);
    // Evaluate at a point where the loss is smooth over every stencil and no
    // gradient sits at the roundoff floor: with slope 1 the PReLU has no kink,
    // and the state-space block is moved to a random point (its initial step
    // sizes of 1e-3..1e-1 leave some gradients near 1e-8).
    set_prefix(store, "spatial.gru.prelu.slope", 1.0);
    {
      Rng shift(43);
      for (const auto* e : store.with_prefix("spectral.block0.temporal.mamba")) {
        Td t = e->tensor;
        for (auto& v : t.mutable_values()) v = shift.uniform(-0.5, 0.5);
      }
    }
    Rng rng(42);
    signal::Waveform mix(2, 40, c.sample_rate);
    for (auto& v : mix.samples()) v = rng.uniform(-1, 1);
    const auto features = make_features<double>(mix, c);
    CHECK(features.ri.shape() == Shape{4, 6, 9});
    // References near the network output make one speaker assignment clearly
    // best (about 6 dB against strongly negative), so the permutation cannot
    // flip inside a stencil.
    const auto forward_loss = [&](const Td& refs) {
      Rng drop(7);
      return train::pit_loss(m.forward(features, RunMode::train(drop)).waveforms, refs);
    };
    const Td base = [&] {
      NoGradScope ng;
      Rng drop(7);
      return m.forward(features, RunMode::train(drop)).waveforms;
    }();
    std::vector<double> rv(80);
    for (std::size_t c2 = 0; c2 < 2; ++c2) {
      double energy = 0;
      for (std::size_t i = 0; i < 40; ++i) energy += base[c2 * 40 + i] * base[c2 * 40 + i];
      const double sd = std::sqrt(energy / 40);
      for (std::size_t i = 0; i < 40; ++i) rv[c2 * 40 + i] = base[c2 * 40 + i] + 0.5 * sd * rng.normal();
    }
    const Td refs({2, 40}, rv);
    {
      NoGradScope ng;
      const auto r = forward_loss(refs);
      CHECK(r.perm == std::vector<std::size_t>{0, 1});
      CHECK(r.loss_db < -2.0);
    }
    std::vector<NamedInput> named;
    for (const auto& e : store.entries()) named.push_back({e.name, e.tensor});
    GradCheckOptions opts;
    opts.eps = 1e-2;
    opts.stencil = Stencil::kRidders;
    const auto report = grad_check(
        [&] { return forward_loss(refs).loss; },
        named, opts);
    for (const auto& e : report.inputs) {
      INFO(e.name << " worst index " << e.worst_index << " analytic " << e.worst_analytic << " numeric "
                  << e.worst_numeric);
      CHECK(e.max_rel_error < 1e-5);
    }
    MESSAGE("model gradcheck max relative error " << report.max_rel_error << " over "
                                                  << report.coords_checked << " coordinates");
  }
}
