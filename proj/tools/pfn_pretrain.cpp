// Maintainer tool: trains the shipped in-context tabular model on synthetic
// prior tasks and writes the weights checkpoint. The committed checkpoint
// under assets/ was produced by this tool; rerun it to regenerate.

#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tme/pfn.hpp"

using namespace tme;

int main(int argc, char** argv) {
  CLI::App app{"pretrain the in-context tabular model"};
  long steps = 4000;
  uint64_t seed = 7;
  std::string out = "assets/pfn_desk.bin";
  long report_every = 100;
  pfn::TrainPfnOptions opts;
  app.add_option("--steps", steps, "training steps (one synthetic task each)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "training seed");
  app.add_option("--out", out, "weights output path");
  app.add_option("--lr", opts.lr, "peak learning rate");
  app.add_option("--report-every", report_every, "progress line interval");
  CLI11_PARSE(app, argc, argv);

  pfn::PriorConfig prior;
  pfn::PFNConfig arch;
  std::printf("architecture: width=%ld layers=%ld heads=%ld ffn=%ld d_max=%ld c_max=%d\n",
              arch.width, arch.layers, arch.heads, arch.ffn, arch.d_max, arch.c_max);

  std::vector<double> hist;
  opts.on_step = [&](long step, double) {
    if ((step + 1) % report_every != 0) return;
    const std::size_t n = std::min<std::size_t>(hist.size(), 100);
    const double avg = std::accumulate(hist.end() - static_cast<long>(n), hist.end(), 0.0) /
                       static_cast<double>(n);
    std::printf("step %ld/%ld loss(avg100) %.4f\n", step + 1, steps, avg);
    std::fflush(stdout);
  };

  try {
    auto w = pfn::train_pfn(prior, arch, steps, seed, &hist, opts);
    pfn::save_pfn(out, w);
    std::printf("wrote %s: steps=%ld seed=%llu wall=%.1fs hash=%s\n", out.c_str(),
                w.trained_steps, static_cast<unsigned long long>(w.trained_seed),
                w.train_wall_seconds, hex64(w.content_hash()).c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
