// Runs the nine acceptance criteria and prints one PASS/FAIL line each.

#include <chrono>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "dmnet/checkpoint.hpp"
#include "dmnet/png_io.hpp"
#include "dmnet/selfcheck.hpp"
#include "dmnet/synthetic.hpp"

using namespace dmnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome wavelet_exactness() {
  const auto r = check_wavelet(100, 11);
  return {r[0].pass && r[1].pass, r[0].detail + "; energy " + r[1].detail};
}

// 2 -------------------------------------------------------------------------

using cd = std::complex<double>;

cd twiddle(std::size_t k, std::size_t n) {
  k %= n;
  if (4 * k % n == 0) {
    static const cd quarter[4] = {{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
    return quarter[4 * k / n];
  }
  const double t = -2.0 * std::numbers::pi * double(k) / double(n);
  return {std::cos(t), std::sin(t)};
}

double phase_of(cd z) {
  if (z == cd(0, 0)) return 0;
  const double p = std::atan2(z.imag(), z.real());
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

// Amplitude and phase L1 from an O(N^2) DFT evaluated by definition.
double frequency_loss_oracle(const Tensor& sr, const Tensor& hr) {
  const Shape s = sr.shape();
  double acc = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t u = 0; u < s.h; ++u)
        for (std::size_t v = 0; v < s.w; ++v) {
          cd a = 0, b = 0;
          for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < s.w; ++x) {
              const cd t = twiddle(u * y, s.h) * twiddle(v * x, s.w);
              a += double(sr.at(n, c, y, x)) * t;
              b += double(hr.at(n, c, y, x)) * t;
            }
          acc += std::abs(std::abs(a) - std::abs(b)) + std::abs(phase_of(a) - phase_of(b));
        }
  return acc / double(2 * s.numel());
}

Outcome fourier_correctness() {
  const auto parseval = check_parseval(40, 12);
  Rng rng(13);
  double worst = 0;
  for (const auto& [h, w] : {std::pair{8, 8}, {16, 12}, {7, 9}, {10, 6}, {32, 32}}) {
    auto a = detail::uniform_tensor(Shape{1, 3, std::size_t(h), std::size_t(w)}, rng, 0, 1);
    auto b = detail::uniform_tensor(Shape{1, 3, std::size_t(h), std::size_t(w)}, rng, 0, 1);
    const double ref = frequency_loss_oracle(a, b);
    worst = std::max(worst, std::abs(frequency_loss(a, b).item() - ref) / ref);
  }
  return {parseval.pass && worst < 1e-4,
          parseval.detail + "; frequency_loss vs DFT oracle " + fmt("max relative error %.3g (tol 1e-4)", worst)};
}

// 3 -------------------------------------------------------------------------

Outcome gradient_suite() {
  bool ok = true;
  double worst = 0;
  std::string worst_name;
  for (const auto& r : check_gradients(14)) {
    ok = ok && r.pass;
    const double e = std::stod(r.detail.substr(r.detail.find("error ") + 6));
    if (e >= worst) worst = e, worst_name = r.name;
    if (!r.pass) std::printf("      %s: %s\n", r.name.c_str(), r.detail.c_str());
  }
  return {ok, fmt("12 checks, worst %s relative error %.3g (tol 1e-3)", worst_name.c_str(), worst)};
}

// 4 -------------------------------------------------------------------------

Outcome bookkeeping() {
  auto cfg = [](std::size_t s) {
    DMNetConfig c;
    c.scale = s;
    return c;
  };
  const auto p2 = count_params(cfg(2)), p3 = count_params(cfg(3)), p4 = count_params(cfg(4));
  // The analytic count must agree with the instantiated model.
  auto w4 = DMNetWeights<float>::make(cfg(4), 0);
  const bool counted = w4.param_count() == p4;
  const double rel = (double(p4) - 587e3) / 587e3;
  const double ratio = double(count_flops(cfg(2), 720, 1280)) / double(count_flops(cfg(4), 720, 1280));
  const bool ok = counted && p3 - p2 == 6480 && p4 - p2 == 15552 && std::abs(rel) <= 0.20 &&
                  std::abs(ratio - 3.88) <= 0.15 * 3.88;
  return {ok, fmt("delta3 %llu (want 6480), delta4 %llu (want 15552), params(x4) %llu = 587K %+.1f%% (tol 20%%), "
                  "FLOPs x2/x4 %.3f (want 3.88 +-15%%), instantiated count %s",
                  (unsigned long long)(p3 - p2), (unsigned long long)(p4 - p2), (unsigned long long)p4, 100 * rel,
                  ratio, counted ? "matches" : "DIFFERS")};
}

// 5 -------------------------------------------------------------------------

Outcome wma_locality() {
  Rng rng(15);
  const std::size_t C = 48, h = 24, w = 40;
  auto weights = WMAWeights<float>::make(C, AblationToggles{}, rng);
  auto x = detail::uniform_tensor(Shape{1, C, h, w}, rng);
  AttentionTrace<float> tr;
  (void)wma_forward(x, weights, AblationToggles{}, &tr);
  const bool area = tr.qkv.plane() * 4 == h * w;
  const bool square = tr.attention.shape() == Shape{1, 1, C, C};
  return {area && square, fmt("attention area %zu = %zux%zu/4 %s, matrix %s (want 1x1x%zux%zu)", tr.qkv.plane(), h, w,
                              area ? "ok" : "WRONG", tr.attention.shape().str().c_str(), C, C)};
}

// 6 -------------------------------------------------------------------------

double y_psnr(const Tensor& sr, const Tensor& hr, std::size_t scale) {
  ImagePair p{"patch", Tensor(Shape{1, 3, 1, 1}), hr};
  return evaluate([&](const Tensor&) { return sr; }, {p}, scale, "train").mean_psnr;
}

Outcome overfit() {
  DMNetConfig mc;
  mc.channels = 16;
  mc.n_groups = mc.n_blocks = 1;
  mc.scale = 2;
  TrainConfig tc;
  tc.batch = 1;
  tc.patch = 32;
  tc.total_iters = 2000;
  tc.lr0 = 2e-3;
  tc.log_every = 500;
  tc.seed = 16;
  tc.augment = false;
  SyntheticStyle style;
  style.min_freq = 0.08;
  style.max_freq = 0.22;
  style.discs = 6;
  const Dataset data = synthetic_dataset(1, 64, 64, 2, 17, style);
  TrainHooks hooks;
  hooks.on_log = [](const LossRecord& r) {
    std::printf("      iter %zu l_pixel %.5f l_fre %.5f\n", r.iter, r.l_pixel, r.l_fre);
    std::fflush(stdout);
  };
  auto res = train_loop(mc, tc, data, hooks);
  const Tensor sr = super_resolve(mc, res.weights, data[0].lr);
  const double model = y_psnr(sr, data[0].hr, 2);
  const double bicubic = y_psnr(bicubic_resize(data[0].lr, 2.0), data[0].hr, 2);
  return {model > 40 && model - bicubic >= 5,
          fmt("model %.2f dB (want > 40), bicubic %.2f dB (want <= model - 5)", model, bicubic)};
}

// 7 -------------------------------------------------------------------------

Outcome ablation_ordering() {
  SyntheticStyle style;
  style.discs = 3;
  const Dataset train = synthetic_dataset(20, 48, 48, 2, 18, style);
  const Dataset held_out = synthetic_dataset(5, 48, 48, 2, 19, style);
  struct Variant {
    const char* name;
    AblationToggles ab;
  };
  const Variant variants[] = {
      {"full", {true, FreqDomain::wavelet, FreqLoss::fourier}},
      {"w/o dynamic", {false, FreqDomain::wavelet, FreqLoss::fourier}},
      {"wavelet loss", {true, FreqDomain::wavelet, FreqLoss::wavelet}},
      {"fourier domain", {true, FreqDomain::fourier, FreqLoss::fourier}},
  };
  std::vector<double> score;
  std::string detail;
  for (const auto& v : variants) {
    DMNetConfig mc;
    mc.channels = 16;
    mc.n_groups = mc.n_blocks = 1;
    mc.scale = 2;
    mc.ablation = v.ab;
    TrainConfig tc;
    tc.batch = 4;
    tc.patch = 16;
    tc.total_iters = 5000;
    tc.lr0 = 1e-3;
    tc.log_every = 5000;
    tc.seed = 20;
    auto res = train_loop(mc, tc, train);
    const auto rep =
        evaluate([&](const Tensor& lr) { return super_resolve(mc, res.weights, lr); }, held_out, 2, "held-out");
    score.push_back(rep.mean_psnr);
    detail += fmt("%s%s %.3f dB", detail.empty() ? "" : ", ", v.name, rep.mean_psnr);
    std::printf("      %s: %.3f dB\n", v.name, rep.mean_psnr);
    std::fflush(stdout);
  }
  bool ok = true;
  for (std::size_t i = 1; i < score.size(); ++i) ok = ok && score[0] >= score[i] - 0.05;
  return {ok, detail + " (full must be >= each - 0.05 dB)"};
}

// 8 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism_and_persistence() {
  RunConfig rc;
  rc.model.channels = 8;
  rc.model.n_groups = rc.model.n_blocks = 1;
  rc.train.batch = 2;
  rc.train.patch = 8;
  rc.train.total_iters = 20;
  rc.train.log_every = 5;
  rc.train.seed = 21;
  const Dataset data = synthetic_dataset(3, 32, 32, 2, 22);
  auto log_of = [&](TrainResult& out) {
    std::string log;
    TrainHooks hooks;
    hooks.on_log = [&](const LossRecord& r) { log += format_loss_record(r) + "\n"; };
    out = train_loop(rc.model, rc.train, data, hooks);
    return log;
  };
  TrainResult a{DMNetWeights<float>::make(rc.model, 0), {}, {}}, b = a;
  const std::string la = log_of(a), lb = log_of(b);
  const bool logs = la == lb && !la.empty();

  const fs::path dir = fs::temp_directory_path() / ("dmnet_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_checkpoint((dir / "a.dmn").string(), make_checkpoint(rc, a.weights, &a.optimizer));
  const Checkpoint ck = load_checkpoint((dir / "a.dmn").string());
  auto w = DMNetWeights<float>::make(rc.model, 99);
  load_weights(ck, w);
  auto st = load_optimizer(ck, w);
  bool exact = st.m == a.optimizer.m && st.v == a.optimizer.v && st.step == a.optimizer.step;
  auto pa = a.weights.parameters(), pw = w.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    exact = exact && std::memcmp(pa[i].tensor.ptr(), pw[i].tensor.ptr(), pa[i].tensor.numel() * sizeof(float)) == 0;
  save_checkpoint((dir / "b.dmn").string(), make_checkpoint(ck.config, w, &st));
  exact = exact && slurp(dir / "a.dmn") == slurp(dir / "b.dmn");

  Rng rng(23);
  write_png((dir / "in.png").string(), quantize8(synthetic_image(15, 18, rng)));
  for (const char* out : {"o1.png", "o2.png"}) {
    const Tensor lr = read_png((dir / "in.png").string());
    write_png((dir / out).string(), quantize8(upscale_any(rc.model, w, lr)));
  }
  const bool png = slurp(dir / "o1.png") == slurp(dir / "o2.png") && !slurp(dir / "o1.png").empty();
  fs::remove_all(dir);
  return {logs && exact && png, fmt("loss logs %s, checkpoint round trip %s, inferred PNGs %s",
                                    logs ? "identical" : "DIFFER", exact ? "bit-exact" : "NOT exact",
                                    png ? "byte-identical" : "DIFFER")};
}

// 9 -------------------------------------------------------------------------

Outcome metrics_conformance() {
  Tensor a(Shape{1, 1, 32, 32}, 0.5f), b(Shape{1, 1, 32, 32});
  for (std::size_t i = 0; i < b.numel(); ++i) b.data()[i] = 0.5f + (i % 2 ? 1.0f : -1.0f) / 255.0f;
  const double p = psnr(a, b);
  Rng rng(24);
  auto img = detail::uniform_tensor(Shape{1, 1, 32, 32}, rng, 0, 1);
  const double s = ssim(img, img);
  const Dataset pairs = synthetic_dataset(3, 40, 40, 2, 25);
  std::map<const float*, Tensor> hr_of;
  for (const auto& q : pairs) hr_of[q.lr.ptr()] = q.hr;
  const auto rep = evaluate([&](const Tensor& lr) { return hr_of.at(lr.ptr()); }, pairs, 2, "oracle");
  const bool ok = std::abs(p - 48.13) <= 0.01 && s == 1.0 && std::isinf(rep.mean_psnr) && rep.mean_psnr > 0 &&
                  rep.mean_ssim == 1.0 && rep.images.size() == 3;
  return {ok, fmt("PSNR(1/255 error) %.4f dB (want 48.13 +-0.01), SSIM(a,a) %.17g (want 1 exactly), "
                  "oracle eval %s dB / %.17g",
                  p, s, format_metric(rep.mean_psnr, 2).c_str(), rep.mean_ssim)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMNet acceptance criteria"};
  std::set<int> only;
  app.add_option("--only", only, "Run only these criterion numbers")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const Criterion all[] = {
      {1, "wavelet exactness", 5, wavelet_exactness},
      {2, "fourier correctness", 10, fourier_correctness},
      {3, "gradient suite", 120, gradient_suite},
      {4, "architecture bookkeeping", 0, bookkeeping},
      {5, "WMA locality", 0, wma_locality},
      {6, "overfit convergence", 600, overfit},
      {7, "ablation ordering", 0, ablation_ordering},
      {8, "determinism and persistence", 0, determinism_and_persistence},
      {9, "metrics conformance", 0, metrics_conformance},
  };
  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2f s", secs);
    if (c.budget_s > 0) {
      timing += fmt(" (budget %.0f s)", c.budget_s);
      if (secs >= c.budget_s) {
        o.pass = false;
        timing += " OVER BUDGET";
      }
    }
    std::printf("%s [%d] %s: %s; %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
