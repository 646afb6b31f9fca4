#include <cmath>
#include <set>

#include "dmnet/model.hpp"
#include "reference.hpp"
#include "test_util.hpp"

using namespace dmnet;
using dmnet::test::random_tensor;

namespace {

DMNetConfig tiny(std::size_t scale = 2) {
  DMNetConfig c;
  c.channels = 8;
  c.n_groups = 1;
  c.n_blocks = 1;
  c.scale = scale;
  return c;
}

DMNetConfig default_size(std::size_t scale) {
  DMNetConfig c;
  c.scale = scale;
  return c;
}

template <class T>
void randomize(DMNetWeights<T>& w, Rng& rng, double amp) {
  w.visit([&](const std::string&, BasicTensor<T>& t) {
    for (auto& v : t.data()) v = static_cast<T>(amp * (2 * rng.uniform() - 1));
  });
}

}  // namespace

TEST(DmnetForward, ShapeContract) {
  auto cfg = tiny();
  auto w = DMNetWeights<float>::make(cfg, 1);
  Rng rng(70);
  auto out = forward(cfg, w, random_tensor(Shape{1, 3, 32, 32}, rng, 0, 1));
  EXPECT_EQ(out.sr.shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(out.freq.re.shape(), out.sr.shape());
  EXPECT_EQ(out.freq.im.shape(), out.sr.shape());
}

TEST(DmnetForward, FrequencyOutputIsSpectrumOfSpatialOutput) {
  auto cfg = tiny(3);
  auto w = DMNetWeights<float>::make(cfg, 2);
  Rng rng(71);
  auto out = forward(cfg, w, random_tensor(Shape{1, 3, 6, 4}, rng, 0, 1));
  auto f = fft2(out.sr);
  EXPECT_EQ(dmnet::test::max_abs_diff(out.freq.re.data(), f.re.data()), 0.0);
  EXPECT_EQ(dmnet::test::max_abs_diff(out.freq.im.data(), f.im.data()), 0.0);
}

TEST(DmnetForward, ZeroTailGivesZeroOutput) {
  auto cfg = tiny();
  auto w = DMNetWeights<float>::make(cfg, 3);
  for (auto& v : w.tail.weight.data()) v = 0;
  Rng rng(72);
  auto sr = super_resolve(cfg, w, random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1));
  for (float v : sr.data()) EXPECT_EQ(v, 0.0f);
}

TEST(DmnetForward, MatchesStraightLineOracle) {
  auto cfg = tiny();
  auto w = DMNetWeights<double>::make(cfg, 4);
  Rng rng(73);
  randomize(w, rng, 0.3);
  auto x = random_tensor<double>(Shape{1, 3, 8, 8}, rng, 0, 1);
  const auto ref = ref::dmnet(cfg, w, ref::from_tensor(x));
  EXPECT_LT(dmnet::test::max_abs_diff_any(super_resolve(cfg, w, x).data(), ref.v), 1e-9);
  // The f32 production path against the same f64 oracle.
  auto w32 = cast_weights<float>(w, cfg);
  auto y32 = super_resolve(cfg, w32, cast<float>(x));
  EXPECT_LT(dmnet::test::max_abs_diff_any(y32.data(), ref.v), 1e-4);
}

TEST(DmnetForward, OracleAgreesForEveryScaleAndVariant) {
  Rng rng(74);
  for (std::size_t s : {2u, 3u, 4u})
    for (const AblationToggles ab : {AblationToggles{}, AblationToggles{false, FreqDomain::wavelet, FreqLoss::fourier},
                                     AblationToggles{true, FreqDomain::fourier, FreqLoss::fourier}}) {
      auto cfg = tiny(s);
      cfg.ablation = ab;
      cfg.n_blocks = 2;
      auto w = DMNetWeights<double>::make(cfg, s);
      randomize(w, rng, 0.3);
      auto x = random_tensor<double>(Shape{1, 3, 4, 6}, rng, 0, 1);
      EXPECT_LT(dmnet::test::max_abs_diff_any(super_resolve(cfg, w, x).data(),
                                              ref::dmnet(cfg, w, ref::from_tensor(x)).v),
                1e-9);
    }
}

TEST(DmnetForward, RejectsOddInput) {
  auto cfg = tiny();
  auto w = DMNetWeights<float>::make(cfg, 5);
  EXPECT_THROW((void)super_resolve(cfg, w, Tensor(Shape{1, 3, 7, 8})), ShapeError);
  EXPECT_THROW((void)super_resolve(cfg, w, Tensor(Shape{1, 1, 8, 8})), ShapeError);
}

TEST(DmnetForward, UpscaleAnyPadsAndCrops) {
  auto cfg = tiny(3);
  auto w = DMNetWeights<float>::make(cfg, 6);
  Rng rng(75);
  auto x = random_tensor(Shape{1, 3, 7, 5}, rng, 0, 1);
  EXPECT_EQ(upscale_any(cfg, w, x).shape(), (Shape{1, 3, 21, 15}));
  auto padded = reflect_pad_even(x);
  EXPECT_EQ(padded.shape(), (Shape{1, 3, 8, 6}));
  EXPECT_EQ(padded.at(0, 1, 7, 2), x.at(0, 1, 5, 2));
  EXPECT_EQ(padded.at(0, 2, 3, 5), x.at(0, 2, 3, 3));
}

TEST(DmnetForward, DeterministicAndWeightImmutable) {
  auto cfg = tiny();
  auto w = DMNetWeights<float>::make(cfg, 7);
  const auto before = w.parameters();
  std::vector<std::vector<float>> snap;
  for (const auto& p : before) snap.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  Rng rng(76);
  auto x = random_tensor(Shape{2, 3, 8, 8}, rng, 0, 1);
  auto a = super_resolve(cfg, w, x), b = super_resolve(cfg, w, x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_TRUE(std::equal(snap[i].begin(), snap[i].end(), before[i].tensor.data().begin())) << before[i].name;
}

TEST(DmnetForward, EndToEndGradientMatchesFiniteDifferences) {
  auto cfg = tiny();
  auto w = DMNetWeights<double>::make(cfg, 8);
  Rng rng(77);
  randomize(w, rng, 0.3);
  auto x = random_tensor<double>(Shape{1, 3, 4, 4}, rng, 0, 1);
  Rng pr(78);
  auto proj = random_tensor<double>(Shape{1, 3, 8, 8}, pr);
  std::vector<std::pair<std::string, Tensor64>> leaves;
  for (auto& p : w.parameters()) leaves.emplace_back(p.name, p.tensor);
  GradCheckOptions opt;
  opt.max_probes = 24;
  const auto rep = gradcheck([&] { return sum(mul(super_resolve(cfg, w, x), proj)); }, leaves, opt);
  EXPECT_TRUE(rep.attached);
  EXPECT_LT(rep.global(), 1e-3);
}

// The worst per-tensor discrepancy above is central-difference truncation:
// it must shrink quadratically with the step.
TEST(DmnetForward, FiniteDifferenceErrorIsSecondOrder) {
  auto cfg = tiny();
  auto w = DMNetWeights<double>::make(cfg, 8);
  Rng rng(77);
  randomize(w, rng, 0.3);
  auto x = random_tensor<double>(Shape{1, 3, 4, 4}, rng, 0, 1);
  Rng pr(78);
  auto proj = random_tensor<double>(Shape{1, 3, 8, 8}, pr);
  auto leaf = w.groups[0].blocks[0].wmt.attn.dw.bias.value();
  auto err = [&](double step) {
    GradCheckOptions opt;
    opt.step = step;
    return gradcheck([&] { return sum(mul(super_resolve(cfg, w, x), proj)); }, {{"dw.bias", leaf}}, opt).worst();
  };
  const double coarse = err(1e-3), fine = err(1e-4);
  EXPECT_LT(fine, coarse / 50) << coarse << " -> " << fine;
  EXPECT_LT(fine, 1e-4);
}

TEST(DmnetWeights, NamesAreUniqueDottedPaths) {
  auto cfg = tiny();
  cfg.n_groups = 2;
  cfg.n_blocks = 2;
  auto w = DMNetWeights<float>::make(cfg, 9);
  std::set<std::string> names;
  for (const auto& p : w.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_TRUE(names.count("head.weight"));
  EXPECT_TRUE(names.count("groups.1.blocks.0.wmt.attn.dyn.weight"));
  EXPECT_TRUE(names.count("groups.0.conv.bias"));
  EXPECT_TRUE(names.count("tail.weight"));
  EXPECT_FALSE(names.count("tail.bias"));
}

TEST(DmnetWeights, SeededConstructionIsReproducible) {
  auto cfg = tiny();
  auto a = DMNetWeights<float>::make(cfg, 10), b = DMNetWeights<float>::make(cfg, 10);
  auto c = DMNetWeights<float>::make(cfg, 11);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    differs = differs || !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pc[i].tensor.data().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(DmnetConfig, ValidationRejectsBadValues) {
  auto bad = [](auto mutate) {
    DMNetConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  bad([](DMNetConfig& c) { c.channels = 10; });
  bad([](DMNetConfig& c) { c.scale = 5; });
  bad([](DMNetConfig& c) { c.scale = 1; });
  bad([](DMNetConfig& c) { c.n_groups = 0; });
  bad([](DMNetConfig& c) { c.n_blocks = 0; });
  bad([](DMNetConfig& c) { c.ffn_ratio = 0; });
}

TEST(Accounting, CountMatchesInstantiatedWeights) {
  for (auto cfg : {tiny(), tiny(3), default_size(2), default_size(4)}) {
    for (bool dyn : {true, false})
      for (auto dom : {FreqDomain::wavelet, FreqDomain::fourier}) {
        cfg.ablation.dynamic = dyn;
        cfg.ablation.domain = dom;
        EXPECT_EQ(count_params(cfg), DMNetWeights<float>::make(cfg, 0).param_count());
      }
  }
}

TEST(Accounting, TailOnlyDeltasAcrossScales) {
  EXPECT_EQ(count_params(default_size(3)) - count_params(default_size(2)), 6480u);
  EXPECT_EQ(count_params(default_size(4)) - count_params(default_size(2)), 15552u);
}

TEST(Accounting, TotalWithinTwentyPercentOfReference) {
  const double total = double(count_params(default_size(4)));
  EXPECT_LT(std::abs(total - 587e3) / 587e3, 0.20) << total;
}

TEST(Accounting, DynamicBranchRemovalIsExact) {
  auto on = default_size(2), off = default_size(2);
  off.ablation.dynamic = false;
  const std::uint64_t per_block = 48 * 4 * 49 + 48;
  EXPECT_EQ(count_params(on) - count_params(off), 9 * per_block);
}

TEST(Accounting, FlopRatioAcrossScales) {
  const double r = double(count_flops(default_size(2), 720, 1280)) / double(count_flops(default_size(4), 720, 1280));
  EXPECT_LT(std::abs(r - 3.88) / 3.88, 0.15) << r;
}

TEST(Accounting, FlopsScaleWithArea) {
  const auto cfg = default_size(2);
  const double a = double(count_flops(cfg, 360, 640)), b = double(count_flops(cfg, 720, 1280));
  EXPECT_LT(std::abs(b / a - 4.0) / 4.0, 0.01);
}

TEST(Accounting, PointwiseLayerHandCount) {
  const auto cfg = tiny();
  for (const auto& l : layer_costs(cfg, 16, 16)) {
    if (l.name != "groups.0.blocks.0.smt.attn.pw") continue;
    EXPECT_EQ(l.params, 8u * 24u + 24u);
    EXPECT_DOUBLE_EQ(l.flops, 2.0 * 8 * 24 * 8 * 8);
    return;
  }
  FAIL() << "layer not found";
}
