#include "cxr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cxr/errors.hpp"
#include "cxr/rng.hpp"

namespace cxr {

namespace {

// Frame geometry in normalized coordinates.
constexpr double kLungTop = 0.15, kLungBottom = 0.91;
constexpr double kBandHeight = (kLungBottom - kLungTop) / 5.0;
constexpr double kLeftLungX = 0.27, kRightLungX = 0.73;
constexpr double kLungRx = 0.17, kLungRy = 0.38, kLungCy = 0.53;

enum Shape { kDisk, kSquare, kRing, kPlus, kHbar, kVbar, kDiag, kChecker };

constexpr double kScales[3] = {0.055, 0.075, 0.11};

struct Signature {
  int shape;
  int scale;
};

// Unique (shape, scale) per pathology within each dataset; repeated shapes
// only at the far-apart scale pair (0, 2) so every pair stays telling under
// global pooling, where the classifier cannot fall back on position.
constexpr Signature kCxr14Sig[14] = {
    {kDisk, 0}, {kDisk, 2}, {kSquare, 0}, {kSquare, 2}, {kRing, 0},
    {kRing, 2}, {kPlus, 0}, {kPlus, 2},   {kHbar, 0},   {kHbar, 2},
    {kVbar, 0}, {kVbar, 2}, {kDiag, 0},   {kDiag, 2}};
constexpr Signature kPlcoSig[12] = {
    {kDisk, 0}, {kDisk, 2},    {kRing, 0}, {kPlus, 2}, {kDiag, 1}, {kVbar, 1},
    {kChecker, 1}, {kSquare, 2}, {kSquare, 0}, {kHbar, 1}, {kRing, 2}, {kPlus, 0}};

constexpr double kCxr14Prev[14] = {0.10, 0.04, 0.12, 0.15, 0.06, 0.07, 0.03,
                                   0.05, 0.05, 0.03, 0.03, 0.03, 0.04, 0.03};
constexpr double kPlcoPrev[12] = {0.08, 0.04, 0.05, 0.06, 0.05, 0.04,
                                  0.04, 0.06, 0.05, 0.04, 0.05, 0.04};

Signature signature(Dataset ds, int slot) {
  return ds == Dataset::kCxr14 ? kCxr14Sig[slot] : kPlcoSig[slot];
}

double intensity(int slot) { return 0.30 + 0.02 * (slot % 5); }

double band_center(int fifth) { return kLungTop + (fifth - 0.5) * kBandHeight; }

bool shape_hit(int shape, double dx, double dy, double r) {
  const double d2 = dx * dx + dy * dy;
  switch (shape) {
    case kDisk: return d2 <= r * r;
    case kSquare: return std::fabs(dx) <= 0.9 * r && std::fabs(dy) <= 0.9 * r;
    case kRing: return d2 <= r * r && d2 >= 0.25 * r * r;
    case kPlus:
      return (std::fabs(dx) <= 0.35 * r && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= 0.35 * r && std::fabs(dx) <= r);
    case kHbar: return std::fabs(dy) <= 0.35 * r && std::fabs(dx) <= 1.2 * r;
    case kVbar: return std::fabs(dx) <= 0.35 * r && std::fabs(dy) <= 1.2 * r;
    case kDiag:
      return std::fabs(dx - dy) <= 0.5 * r && std::fabs(dx) <= 1.2 * r &&
             std::fabs(dy) <= 1.2 * r;
    case kChecker: {
      if (std::fabs(dx) > r || std::fabs(dy) > r) return false;
      const double cell = 0.5 * r;
      const int px = static_cast<int>(std::floor((dx + r) / cell));
      const int py = static_cast<int>(std::floor((dy + r) / cell));
      return (px + py) % 2 == 0;
    }
  }
  return false;
}

void stamp(std::vector<double>& canvas, int size, int shape, double cx, double cy,
           double r, double value) {
  const double extent = 1.3 * r;
  const int x0 = std::max(0, static_cast<int>((cx - extent) * size));
  const int x1 = std::min(size - 1, static_cast<int>((cx + extent) * size) + 1);
  const int y0 = std::max(0, static_cast<int>((cy - extent) * size));
  const int y1 = std::min(size - 1, static_cast<int>((cy + extent) * size) + 1);
  for (int y = y0; y <= y1; ++y) {
    const double ny = (y + 0.5) / size;
    for (int x = x0; x <= x1; ++x) {
      const double nx = (x + 0.5) / size;
      if (shape_hit(shape, nx - cx, ny - cy, r)) {
        canvas[static_cast<std::size_t>(y) * size + x] += value;
      }
    }
  }
}

void stamp_soft_disk(std::vector<double>& canvas, int size, double cx, double cy,
                     double r, double value) {
  const int x0 = std::max(0, static_cast<int>((cx - r) * size));
  const int x1 = std::min(size - 1, static_cast<int>((cx + r) * size) + 1);
  const int y0 = std::max(0, static_cast<int>((cy - r) * size));
  const int y1 = std::min(size - 1, static_cast<int>((cy + r) * size) + 1);
  for (int y = y0; y <= y1; ++y) {
    const double ny = (y + 0.5) / size;
    for (int x = x0; x <= x1; ++x) {
      const double nx = (x + 0.5) / size;
      const double d = std::sqrt((nx - cx) * (nx - cx) + (ny - cy) * (ny - cy));
      if (d < r) {
        canvas[static_cast<std::size_t>(y) * size + x] += value * (1.0 - d / r);
      }
    }
  }
}

// Background with deliberate positional shading: brightness rises toward the
// bottom and the left lung field is brighter than the right, so "where is the
// blob" stays decodable from local context after global pooling.
void paint_background(std::vector<double>& canvas, int size, double offset) {
  for (int y = 0; y < size; ++y) {
    const double ny = (y + 0.5) / size;
    for (int x = 0; x < size; ++x) {
      const double nx = (x + 0.5) / size;
      double v = 0.12 + 0.22 * ny + offset;
      const double lx = (nx - kLeftLungX) / kLungRx;
      const double ly = (ny - kLungCy) / kLungRy;
      const double rx = (nx - kRightLungX) / kLungRx;
      if (lx * lx + ly * ly <= 1.0) v += 0.30;
      if (rx * rx + ly * ly <= 1.0) v += 0.22;
      canvas[static_cast<std::size_t>(y) * size + x] = v;
    }
  }
}

GrayImage quantize(const std::vector<double>& canvas, int size, Dataset ds) {
  if (ds == Dataset::kCxr14) {
    GrayImage img(size, size, 8);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      const double v = std::clamp(canvas[i], 0.0, 1.0);
      img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 255.0));
    }
    return img;
  }
  GrayImage img(size, size, 16);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    // Gamma-style tone curve: rank-preserving, so equalization at load time
    // recovers the contrast.
    const double v = std::pow(std::clamp(canvas[i], 0.0, 1.0), 2.2);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  return img;
}

struct DrawnLocation {
  LocationAnnotation ann;
  std::vector<PlacedBlob> blobs;
};

// Samples an annotation for one located disease and stamps the matching
// blobs. The pixels always honor the sampled location; whether the
// annotation is published is decided by the caller.
DrawnLocation draw_located(std::vector<double>& canvas, int size, int global_idx,
                           const Signature& sig, double inten, Rng& rng) {
  DrawnLocation out;
  const bool left = rng.bernoulli(0.5);
  out.ann.side = left ? LungSide::kLeft : LungSide::kRight;
  const double lung_x = left ? kLeftLungX : kRightLungX;
  const double roll = rng.uniform();
  if (roll < 0.10) {
    out.ann.diffuse = true;
    stamp_soft_disk(canvas, size, lung_x, kLungCy, 0.20, inten * 0.7);
    out.blobs.push_back({global_idx, lung_x, kLungCy, sig.shape, true});
    return out;
  }
  const auto place = [&](int fifth) {
    const double cx = lung_x + rng.uniform(-0.08, 0.08);
    const double cy = band_center(fifth) + rng.uniform(-0.04, 0.04);
    stamp(canvas, size, sig.shape, cx, cy, kScales[sig.scale], inten);
    out.blobs.push_back({global_idx, cx, cy, sig.shape, false});
  };
  if (roll < 0.25) {
    out.ann.fifth = LungFifth::kMultiple;
    const int fa = 1 + static_cast<int>(rng.below(5));
    int fb = 1 + static_cast<int>(rng.below(4));
    if (fb >= fa) ++fb;
    place(fa);
    place(fb);
  } else {
    const int f = 1 + static_cast<int>(rng.below(5));
    out.ann.fifth = static_cast<LungFifth>(static_cast<int>(LungFifth::kF1) + f - 1);
    place(f);
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 16 || image_size % 8 != 0) {
    throw DataError("synth: image_size must be >= 16 and divisible by 8");
  }
  if (cxr14_patients < 0 || plco_patients < 0) {
    throw DataError("synth: patient counts must be non-negative");
  }
  if (images_per_patient_mean < 1.0 || images_per_patient_mean > 6.0) {
    throw DataError("synth: images_per_patient_mean must lie in [1, 6]");
  }
  if (prevalence_scale <= 0.0 || prevalence_scale > 5.0) {
    throw DataError("synth: prevalence_scale must lie in (0, 5]");
  }
  if (location_missing_rate < 0.0 || location_missing_rate > 1.0) {
    throw DataError("synth: location_missing_rate must lie in [0, 1]");
  }
  if (noise_level < 0.0 || noise_level > 0.3) {
    throw DataError("synth: noise_level must lie in [0, 0.3]");
  }
}

double synth_prevalence(Dataset ds, int slot) {
  if (ds == Dataset::kCxr14) return kCxr14Prev[slot];
  return kPlcoPrev[slot];
}

void synth_stream(const SynthConfig& config, Dataset ds,
                  const std::function<void(SynthItem&&)>& sink) {
  config.validate();
  const int size = config.image_size;
  const int patients = ds == Dataset::kCxr14 ? config.cxr14_patients : config.plco_patients;
  const auto& vocab = pathology_names(ds);
  const int nslots = static_cast<int>(vocab.size());
  const char* patient_tag = ds == Dataset::kCxr14 ? "cxr14_patient" : "plco_patient";
  const char id_prefix = ds == Dataset::kCxr14 ? 'C' : 'P';
  const int global_base = ds == Dataset::kCxr14 ? 0 : LabelSpace::kPlcoBase;
  const double q = (config.images_per_patient_mean - 1.0) / 5.0;

  std::vector<double> canvas(static_cast<std::size_t>(size) * size);
  for (int p = 0; p < patients; ++p) {
    Rng rng(derive_seed(config.seed, patient_tag, static_cast<std::uint64_t>(p)));
    char pid[16];
    std::snprintf(pid, sizeof(pid), "%c%05d", id_prefix, p);
    const int n_images = 1 + rng.binomial(5, q);
    const double patient_offset = rng.normal(0.0, 0.02);
    std::vector<std::uint8_t> labels(nslots, 0);
    for (int slot = 0; slot < nslots; ++slot) {
      const double prev = std::min(0.9, synth_prevalence(ds, slot) * config.prevalence_scale);
      labels[slot] = rng.bernoulli(prev) ? 1 : 0;
    }
    for (int k = 0; k < n_images; ++k) {
      if (k > 0) {
        // Findings persist across a patient's images and occasionally appear.
        for (int slot = 0; slot < nslots; ++slot) {
          const double prev =
              std::min(0.9, synth_prevalence(ds, slot) * config.prevalence_scale);
          labels[slot] = labels[slot] ? (rng.bernoulli(0.85) ? 1 : 0)
                                      : (rng.bernoulli(prev * 0.3) ? 1 : 0);
        }
      }
      SynthItem item;
      item.record.patient_id = pid;
      char iid[24];
      std::snprintf(iid, sizeof(iid), "%s_%02d", pid, k);
      item.record.image_id = iid;
      item.record.dataset = ds;
      item.record.pathology.assign(labels.begin(), labels.end());

      paint_background(canvas, size, patient_offset);
      for (int slot = 0; slot < nslots; ++slot) {
        if (!labels[slot]) continue;
        const int global_idx = global_base + slot;
        const Signature sig = signature(ds, slot);
        const double inten = intensity(slot);
        const bool located = ds == Dataset::kPlco && is_located_pathology(vocab[slot]);
        if (located && config.location_correlated) {
          auto drawn = draw_located(canvas, size, global_idx, sig, inten, rng);
          item.record.annotations.emplace_back(vocab[slot], drawn.ann);
          for (auto& b : drawn.blobs) item.blobs.push_back(b);
        } else if (located) {
          const double cx = rng.uniform(0.15, 0.85);
          const double cy = rng.uniform(0.15, 0.85);
          stamp(canvas, size, sig.shape, cx, cy, kScales[sig.scale], inten);
          item.blobs.push_back({global_idx, cx, cy, sig.shape, false});
        } else {
          // Fixed anchor cell in a 6x6 grid, unique per pathology.
          const int row = global_idx / 6, col = global_idx % 6;
          const double cx = (col + 0.5) / 6.0 + rng.uniform(-0.04, 0.04);
          const double cy = (row + 0.5) / 6.0 + rng.uniform(-0.04, 0.04);
          stamp(canvas, size, sig.shape, cx, cy, kScales[sig.scale], inten);
          item.blobs.push_back({global_idx, cx, cy, sig.shape, false});
        }
      }
      if (config.noise_level > 0.0) {
        for (auto& v : canvas) v += rng.normal(0.0, config.noise_level);
      }
      if (ds == Dataset::kPlco) {
        const bool available =
            config.location_correlated && !rng.bernoulli(config.location_missing_rate);
        item.record.location_available = available;
        if (!available) item.record.annotations.clear();
      }
      item.image = quantize(canvas, size, ds);
      sink(std::move(item));
    }
  }
}

SynthCorpus synth_generate(const SynthConfig& config) {
  SynthCorpus corpus;
  corpus.cxr14.dataset = Dataset::kCxr14;
  corpus.plco.dataset = Dataset::kPlco;
  for (const Dataset ds : {Dataset::kCxr14, Dataset::kPlco}) {
    Manifest& mf = ds == Dataset::kCxr14 ? corpus.cxr14 : corpus.plco;
    auto& images = ds == Dataset::kCxr14 ? corpus.cxr14_images : corpus.plco_images;
    auto& blobs = ds == Dataset::kCxr14 ? corpus.cxr14_blobs : corpus.plco_blobs;
    synth_stream(config, ds, [&](SynthItem&& item) {
      mf.records.push_back(std::move(item.record));
      images.push_back(std::move(item.image));
      blobs.push_back(std::move(item.blobs));
    });
    mf.recompute_stats();
  }
  return corpus;
}

void synth_write(const SynthConfig& config, const std::filesystem::path& out_dir) {
  for (const Dataset ds : {Dataset::kCxr14, Dataset::kPlco}) {
    const auto dir = out_dir / (ds == Dataset::kCxr14 ? "cxr14" : "plco");
    std::filesystem::create_directories(dir / "images");
    Manifest mf;
    mf.dataset = ds;
    mf.base_dir = dir;
    synth_stream(config, ds, [&](SynthItem&& item) {
      const char* ext = ds == Dataset::kCxr14 ? ".png" : ".xri";
      const auto path = dir / "images" / (item.record.image_id + ext);
      if (ds == Dataset::kCxr14) {
        write_png(path, item.image);
      } else {
        write_xri(path, item.image);
      }
      mf.records.push_back(std::move(item.record));
    });
    mf.recompute_stats();
    save_manifest(mf, dir / "manifest.csv");
  }
}

}  // namespace cxr
