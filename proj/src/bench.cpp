#include "tme/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tme/common.hpp"

namespace tme::bench {

void SyntheticSpec::validate() const {
  if (n < 8) throw std::invalid_argument("synthetic dataset needs at least 8 samples");
  if (d < 3) throw std::invalid_argument("synthetic dataset needs at least 3 tabular features");
  if (side < 8) throw std::invalid_argument("synthetic image side must be at least 8");
  if (classes != 4) throw std::invalid_argument("synthetic benchmark is defined for 4 classes");
}

namespace {

double gauss(Rng& rng) { return rng.normal(); }

ImageArray patch_image(Rng& rng, int side, bool bright) {
  ImageArray im = ImageArray::zeros(1, side, side);
  for (auto& v : im.data) v = static_cast<float>(rng.uniform() * 0.25);
  int patch = std::max(4, (side * 3) / 8);
  int y0 = static_cast<int>(rng.uniform() * (side - patch));
  int x0 = static_cast<int>(rng.uniform() * (side - patch));
  double lo = bright ? 0.75 : 0.30;
  double hi = bright ? 0.95 : 0.50;
  for (int y = y0; y < y0 + patch; ++y)
    for (int x = x0; x < x0 + patch; ++x)
      im.at(0, y, x) = static_cast<float>(lo + rng.uniform() * (hi - lo));
  return im;
}

}  // namespace

MultimodalDataset make_synthetic_multimodal(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0xbe7c4ULL));

  MultimodalDataset ds;
  ds.task = TaskKind::classification;
  ds.n_classes = spec.classes;
  for (long j = 0; j < spec.d; ++j) {
    ds.schema.names.push_back("x" + std::to_string(j));
    ds.schema.kinds.push_back(ColumnKind::numeric);
  }

  ds.samples.reserve(static_cast<std::size_t>(spec.n));
  for (long i = 0; i < spec.n; ++i) {
    bool tab_bit = rng.uniform() < 0.5;
    bool img_bit = rng.uniform() < 0.5;

    MultimodalSample s;
    s.id = "s" + std::to_string(10000 + i).substr(1);
    s.target = Target::cls(2 * (tab_bit ? 1 : 0) + (img_bit ? 1 : 0));

    Eigen::VectorXd x(spec.d);
    double signal = (tab_bit ? 1.5 : -1.5) + 0.5 * gauss(rng);
    x(0) = signal;
    x(1) = 0.9 * signal + 0.3 * gauss(rng);
    x(2) = 0.8 * signal + 0.4 * gauss(rng);
    for (long j = 3; j < spec.d; ++j) x(j) = gauss(rng);
    s.tabular.values = x;
    s.tabular.missing.assign(static_cast<std::size_t>(spec.d), 0);

    s.image.path = s.id + ".png";
    s.image.loaded = patch_image(rng, spec.side, img_bit);

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

MultimodalDataset inject_mnar(const MultimodalDataset& ds, long column, double fraction) {
  if (column < 0 || column >= ds.d()) throw std::invalid_argument("mnar column out of range");
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("mnar fraction out of range");

  std::vector<long> observed;
  for (long i = 0; i < ds.n(); ++i)
    if (!ds.samples[static_cast<std::size_t>(i)].tabular.missing[static_cast<std::size_t>(column)])
      observed.push_back(i);
  long to_hide = std::lround(fraction * static_cast<double>(observed.size()));
  std::sort(observed.begin(), observed.end(), [&](long a, long b) {
    double va = ds.samples[static_cast<std::size_t>(a)].tabular.values(column);
    double vb = ds.samples[static_cast<std::size_t>(b)].tabular.values(column);
    if (va != vb) return va > vb;
    return a < b;
  });

  MultimodalDataset out = ds;
  for (long r = 0; r < to_hide; ++r) {
    auto& row = out.samples[static_cast<std::size_t>(observed[static_cast<std::size_t>(r)])].tabular;
    row.missing[static_cast<std::size_t>(column)] = 1;
  }
  return out;
}

}  // namespace tme::bench
