#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hseg/image_io.hpp"
#include "hseg/ops.hpp"
#include "hseg/tensor.hpp"

namespace hseg {

enum class DatasetKind { drive, chase_db1, hrf, synth };

inline const char* dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::drive: return "drive";
    case DatasetKind::chase_db1: return "chase_db1";
    case DatasetKind::hrf: return "hrf";
    case DatasetKind::synth: return "synth";
  }
  return "?";
}

inline DatasetKind dataset_from_name(const std::string& name) {
  if (name == "drive") return DatasetKind::drive;
  if (name == "chase_db1" || name == "chase") return DatasetKind::chase_db1;
  if (name == "hrf") return DatasetKind::hrf;
  if (name == "synth") return DatasetKind::synth;
  throw std::invalid_argument("unknown dataset '" + name +
                              "' (expected drive, chase_db1, hrf, or synth)");
}

// Resize target (h, w) per dataset; synth passes native dims through.
inline std::pair<int, int> dataset_target(DatasetKind k, int native_h, int native_w) {
  switch (k) {
    case DatasetKind::drive: return {512, 512};
    case DatasetKind::chase_db1: return {960, 960};
    case DatasetKind::hrf: return {784, 1168};
    case DatasetKind::synth: return {native_h, native_w};
  }
  return {0, 0};
}

struct Sample {
  Tensor<float> image;  // (1,3,H,W) in [0,1]
  Tensor<float> mask;   // (1,1,H,W) in {0,1}
  std::string id;
  DatasetKind dataset = DatasetKind::synth;
};

using Dataset = std::vector<Sample>;

inline Tensor<float> image_to_tensor(const Image8& img) {
  Tensor<float> t(1, 3, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) =
            static_cast<float>(img.at(y, x, img.channels == 3 ? c : 0)) / 255.0f;
  return t;
}

// Nearest-neighbour resize for masks (align_corners=false source mapping).
template <class Real>
Tensor<Real> resize_nearest(const Tensor<Real>& x, int oh, int ow) {
  if (oh == x.h && ow == x.w) return x;
  Tensor<Real> y(x.n, x.c, oh, ow);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const Real* xp = x.plane(in, ic);
      Real* yp = y.plane(in, ic);
      for (int oy = 0; oy < oh; ++oy) {
        const int sy = std::min(x.h - 1, static_cast<int>(resize_src_coord(oy, x.h, oh) + 0.5));
        for (int ox = 0; ox < ow; ++ox) {
          const int sx = std::min(x.w - 1, static_cast<int>(resize_src_coord(ox, x.w, ow) + 0.5));
          yp[static_cast<size_t>(oy) * ow + ox] = xp[static_cast<size_t>(sy) * x.w + sx];
        }
      }
    }
  return y;
}

template <class Real>
void binarize_mask(Tensor<Real>& mask) {
  for (auto& v : mask.v) v = v >= Real(0.5) ? Real(1) : Real(0);
}

inline Image8 read_image_checked(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw std::runtime_error("missing file: " + path);
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".jpg" || ext == ".jpeg" || ext == ".tif" || ext == ".tiff")
    throw std::runtime_error("unsupported format '" + ext + "' for " + path +
                             " (this build reads PNG only)");
  return png_read(path);
}

// Ingest one image/mask pair: bilinear resize of the image to the dataset
// target, nearest resize of the mask with re-binarisation, 1/255 scaling.
inline Sample load_sample(const std::string& image_path, const std::string& mask_path,
                          DatasetKind kind) {
  const Image8 img = read_image_checked(image_path);
  const Image8 msk = read_image_checked(mask_path);
  if (img.w != msk.w || img.h != msk.h)
    throw std::runtime_error("image/mask native dims differ: " + image_path + " is " +
                             std::to_string(img.w) + "x" + std::to_string(img.h) + ", " +
                             mask_path + " is " + std::to_string(msk.w) + "x" +
                             std::to_string(msk.h));

  const auto [th, tw] = dataset_target(kind, img.h, img.w);
  require(th % 16 == 0 && tw % 16 == 0,
          "sample dims " + std::to_string(th) + "x" + std::to_string(tw) +
              " must be divisible by 16 (" + image_path + ")");

  Sample s;
  s.dataset = kind;
  s.id = std::filesystem::path(image_path).stem().string();
  s.image = resize_bilinear(image_to_tensor(img), th, tw);

  Tensor<float> mask(1, 1, msk.h, msk.w);
  for (int y = 0; y < msk.h; ++y)
    for (int x = 0; x < msk.w; ++x)
      mask.at(0, 0, y, x) = static_cast<float>(msk.at(y, x, 0)) / 255.0f;
  s.mask = resize_nearest(mask, th, tw);
  binarize_mask(s.mask);
  return s;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  DatasetKind dataset = DatasetKind::synth;
  std::vector<std::string> train_ids, test_ids;

  std::string serialize() const {
    std::string out;
    for (const auto& id : train_ids) out += "train " + id + "\n";
    for (const auto& id : test_ids) out += "test " + id + "\n";
    return out;
  }
};

// Image ids (basenames sans extension) under <root>/images, sorted.
inline std::vector<std::string> list_image_ids(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / "images";
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset layout: missing directory " + dir.string() +
                             " (expected <root>/images and <root>/masks)");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::string find_pair_path(const std::string& root, const std::string& sub,
                                  const std::string& id) {
  namespace fs = std::filesystem;
  for (const char* ext : {".png", ".PNG", ".jpg", ".tif"}) {
    const fs::path p = fs::path(root) / sub / (id + ext);
    if (fs::exists(p)) return p.string();
  }
  throw std::runtime_error("dataset layout: no " + sub + " file for id '" + id + "' under " +
                           root);
}

// HRF ids look like 01_dr / 01_g / 01_h; the category is the trailing token.
inline std::string hrf_category(const std::string& id) {
  const size_t p = id.rfind('_');
  return p == std::string::npos ? std::string() : id.substr(p + 1);
}

// Deterministic split conventions: DRIVE first 20/20, CHASE_DB1 first 8 then
// 20, HRF first 5 per category then the rest. Ids sorted lexicographically
// before "first N" selection.
inline SplitSpec make_splits(DatasetKind kind, const std::string& root) {
  const std::vector<std::string> ids = list_image_ids(root);
  SplitSpec s;
  s.dataset = kind;
  switch (kind) {
    case DatasetKind::drive: {
      require(ids.size() == 40, "drive split: expected 40 images, found " +
                                    std::to_string(ids.size()) + " under " + root);
      s.train_ids.assign(ids.begin(), ids.begin() + 20);
      s.test_ids.assign(ids.begin() + 20, ids.end());
      break;
    }
    case DatasetKind::chase_db1: {
      require(ids.size() == 28, "chase_db1 split: expected 28 images, found " +
                                    std::to_string(ids.size()) + " under " + root);
      s.train_ids.assign(ids.begin(), ids.begin() + 8);
      s.test_ids.assign(ids.begin() + 8, ids.end());
      break;
    }
    case DatasetKind::hrf: {
      std::map<std::string, std::vector<std::string>> by_cat;
      for (const auto& id : ids) by_cat[hrf_category(id)].push_back(id);
      require(by_cat.size() == 3, "hrf split: expected 3 categories, found " +
                                      std::to_string(by_cat.size()) + " under " + root);
      for (auto& [cat, members] : by_cat) {
        require(members.size() == 15, "hrf split: category '" + cat + "' has " +
                                          std::to_string(members.size()) + " images, expected 15");
        for (size_t i = 0; i < members.size(); ++i)
          (i < 5 ? s.train_ids : s.test_ids).push_back(members[i]);
      }
      std::sort(s.train_ids.begin(), s.train_ids.end());
      std::sort(s.test_ids.begin(), s.test_ids.end());
      break;
    }
    case DatasetKind::synth: {
      // held-out half for honest synthetic experiments; the overfit protocol
      // bypasses splits and feeds the same set as train and val directly
      const size_t cut = (ids.size() + 1) / 2;
      s.train_ids.assign(ids.begin(), ids.begin() + static_cast<long>(cut));
      s.test_ids.assign(ids.begin() + static_cast<long>(cut), ids.end());
      break;
    }
  }
  return s;
}

inline Dataset load_split(DatasetKind kind, const std::string& root,
                          const std::vector<std::string>& ids) {
  Dataset out;
  out.reserve(ids.size());
  for (const auto& id : ids)
    out.push_back(load_sample(find_pair_path(root, "images", id),
                              find_pair_path(root, "masks", id), kind));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_jitter = 0.5;
  double p_scale = 0.5;
  double p_shift = 0.5;

  static AugmentConfig none() { return {0, 0, 0, 0, 0}; }
};

template <class Real>
void flip_horizontal(Tensor<Real>& t) {
  for (int in = 0; in < t.n; ++in)
    for (int ic = 0; ic < t.c; ++ic)
      for (int y = 0; y < t.h; ++y) {
        Real* row = t.plane(in, ic) + static_cast<size_t>(y) * t.w;
        std::reverse(row, row + t.w);
      }
}

template <class Real>
void flip_vertical(Tensor<Real>& t) {
  for (int in = 0; in < t.n; ++in)
    for (int ic = 0; ic < t.c; ++ic)
      for (int y = 0; y < t.h / 2; ++y) {
        Real* a = t.plane(in, ic) + static_cast<size_t>(y) * t.w;
        Real* b = t.plane(in, ic) + static_cast<size_t>(t.h - 1 - y) * t.w;
        std::swap_ranges(a, a + t.w, b);
      }
}

// Affine resample about the image centre: zoom by `scale`, translate by
// (shift_y, shift_x) pixels; out-of-frame reads are zero.
template <class Real>
Tensor<Real> affine_resample(const Tensor<Real>& x, double scale, double shift_y, double shift_x,
                             bool nearest) {
  Tensor<Real> y(x.n, x.c, x.h, x.w);
  const double cy = (x.h - 1) / 2.0, cx = (x.w - 1) / 2.0;
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const Real* xp = x.plane(in, ic);
      Real* yp = y.plane(in, ic);
      for (int oy = 0; oy < x.h; ++oy)
        for (int ox = 0; ox < x.w; ++ox) {
          const double sy = (oy - cy - shift_y) / scale + cy;
          const double sx = (ox - cx - shift_x) / scale + cx;
          Real v;
          if (nearest) {
            const int iy = static_cast<int>(std::lround(sy));
            const int ix = static_cast<int>(std::lround(sx));
            v = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                    ? xp[static_cast<size_t>(iy) * x.w + ix]
                    : Real(0);
          } else {
            v = bilinear_tap(xp, x.h, x.w, static_cast<Real>(sx), static_cast<Real>(sy)).value;
          }
          yp[static_cast<size_t>(oy) * x.w + ox] = v;
        }
    }
  return y;
}

// Seed-deterministic augmentation: flips, colour jitter (image only), scale
// and shift (image + mask, mask re-binarised). The random stream is consumed
// identically for every config, so toggling probabilities never shifts the
// draws of later samples.
inline Sample augment(const Sample& in, uint64_t rng_seed, const AugmentConfig& cfg) {
  Rng rng(rng_seed);
  const double u_hflip = rng.uniform();
  const double u_vflip = rng.uniform();
  const double u_jitter = rng.uniform();
  const double brightness = rng.uniform(0.8, 1.2);
  const double contrast = rng.uniform(0.8, 1.2);
  const double u_scale = rng.uniform();
  const double scale = rng.uniform(0.9, 1.1);
  const double u_shift = rng.uniform();
  const double shift_y = rng.uniform(-0.05, 0.05) * in.image.h;
  const double shift_x = rng.uniform(-0.05, 0.05) * in.image.w;

  Sample out = in;
  if (u_hflip < cfg.p_hflip) {
    flip_horizontal(out.image);
    flip_horizontal(out.mask);
  }
  if (u_vflip < cfg.p_vflip) {
    flip_vertical(out.image);
    flip_vertical(out.mask);
  }
  if (u_jitter < cfg.p_jitter) {
    double mean = 0.0;
    for (float v : out.image.v) mean += v;
    mean /= static_cast<double>(out.image.size());
    for (auto& v : out.image.v) {
      double t = v * brightness;
      t = (t - mean) * contrast + mean;
      v = static_cast<float>(std::min(1.0, std::max(0.0, t)));
    }
  }
  const bool do_scale = u_scale < cfg.p_scale;
  const bool do_shift = u_shift < cfg.p_shift;
  if (do_scale || do_shift) {
    const double s = do_scale ? scale : 1.0;
    const double ty = do_shift ? shift_y : 0.0;
    const double tx = do_shift ? shift_x : 0.0;
    out.image = affine_resample(out.image, s, ty, tx, /*nearest=*/false);
    out.mask = affine_resample(out.mask, s, ty, tx, /*nearest=*/true);
    binarize_mask(out.mask);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic vessel generator
// ---------------------------------------------------------------------------

namespace synth_detail {

struct Point {
  double x, y;
};

// Stamp an anti-aliased disc of radius r at p into the coverage plane and the
// exact (pre-anti-aliasing) stencil into the mask plane.
inline void stamp(Tensor<float>& coverage, Tensor<float>& mask, const Point& p, double r) {
  const int w = coverage.w, h = coverage.h;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x - r - 1)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(p.x + r + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y - r - 1)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(p.y + r + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - p.x, y - p.y);
      const float cov = static_cast<float>(std::min(1.0, std::max(0.0, r + 0.5 - d)));
      float& cv = coverage.at(0, 0, y, x);
      cv = std::max(cv, cov);
      if (d <= r) mask.at(0, 0, y, x) = 1.0f;
    }
}

inline Point bezier(const Point& a, const Point& b, const Point& c, double t) {
  const double u = 1.0 - t;
  return {u * u * a.x + 2 * u * t * b.x + t * t * c.x,
          u * u * a.y + 2 * u * t * b.y + t * t * c.y};
}

// One quadratic Bezier branch plus recursive children with thinner widths.
inline void draw_branch(Tensor<float>& coverage, Tensor<float>& mask, Rng& rng, Point from,
                        double angle, double length, double width, int depth) {
  const Point ctrl{from.x + std::cos(angle + rng.uniform(-0.5, 0.5)) * length * 0.5,
                   from.y + std::sin(angle + rng.uniform(-0.5, 0.5)) * length * 0.5};
  const Point to{from.x + std::cos(angle) * length, from.y + std::sin(angle) * length};
  const int steps = std::max(4, static_cast<int>(length * 2));
  for (int i = 0; i <= steps; ++i)
    stamp(coverage, mask, bezier(from, ctrl, to, static_cast<double>(i) / steps), width / 2.0);
  if (depth <= 0) return;
  const int children = 1 + rng.uniform_int(2);
  for (int c = 0; c < children; ++c) {
    const double child_angle = angle + rng.uniform(-0.9, 0.9);
    const double child_len = length * rng.uniform(0.5, 0.8);
    const double child_width = std::max(1.0, width * 0.7);
    draw_branch(coverage, mask, rng, to, child_angle, child_len, child_width, depth - 1);
  }
}

// Bilinearly interpolated low-frequency value noise in [lo, hi].
inline Tensor<float> value_noise(Rng& rng, int h, int w, int cell, double lo, double hi) {
  const int gh = h / cell + 2, gw = w / cell + 2;
  Tensor<float> grid(1, 1, gh, gw);
  fill_uniform(grid, rng, lo, hi);
  Tensor<float> out(1, 1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) / cell;
      const double gx = static_cast<double>(x) / cell;
      out.at(0, 0, y, x) =
          bilinear_tap(grid.plane(0, 0), gh, gw, static_cast<float>(gx), static_cast<float>(gy))
              .value;
    }
  return out;
}

}  // namespace synth_detail

// Deterministic desk-scale dataset: dark low-frequency background, bright
// anti-aliased vessel trees of width 1-4 px; the pre-anti-aliasing stencil is
// the mask. Draws with foreground fraction outside [0.02, 0.25] are redrawn.
inline Dataset synth_vessels(uint64_t seed, int size, int count) {
  require(size % 16 == 0, "synth_vessels: size must be divisible by 16, got " +
                              std::to_string(size));
  using namespace synth_detail;
  Dataset out;
  for (int idx = 0; idx < count; ++idx) {
    for (int attempt = 0;; ++attempt) {
      require(attempt < 64, "synth_vessels: could not hit the foreground-fraction window");
      Rng rng(mix_seed(seed, static_cast<uint64_t>(idx) * 64 + attempt));

      Tensor<float> coverage(1, 1, size, size);
      Tensor<float> mask(1, 1, size, size);
      const int trees = std::max(2, size / 32) + rng.uniform_int(2);
      for (int t = 0; t < trees; ++t) {
        const int side = rng.uniform_int(4);
        Point root;
        double angle;
        const double along = rng.uniform(0.1, 0.9) * size;
        switch (side) {
          case 0: root = {along, 0}; angle = 1.5708; break;
          case 1: root = {along, static_cast<double>(size - 1)}; angle = -1.5708; break;
          case 2: root = {0, along}; angle = 0.0; break;
          default: root = {static_cast<double>(size - 1), along}; angle = 3.1416; break;
        }
        angle += rng.uniform(-0.6, 0.6);
        draw_branch(coverage, mask, rng, root, angle, size * rng.uniform(0.25, 0.45),
                    rng.uniform(2.0, 4.0), 2);
      }

      double fg = 0.0;
      for (float v : mask.v) fg += v;
      fg /= static_cast<double>(mask.size());
      if (fg < 0.02 || fg > 0.25) continue;

      Tensor<float> tint = value_noise(rng, size, size, std::max(8, size / 8), 0.08, 0.32);
      Sample s;
      s.dataset = DatasetKind::synth;
      {
        std::ostringstream os;
        os << "synth_" << std::setw(3) << std::setfill('0') << idx;
        s.id = os.str();
      }
      s.image = Tensor<float>(1, 3, size, size);
      s.mask = mask;
      const double vr = rng.uniform(0.75, 0.95), vg = rng.uniform(0.7, 0.9),
                   vb = rng.uniform(0.65, 0.85);
      const double cr = rng.uniform(0.9, 1.1), cg = rng.uniform(0.85, 1.05),
                   cb = rng.uniform(0.8, 1.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double bg = tint.at(0, 0, y, x);
          const double cov = coverage.at(0, 0, y, x);
          const double chan_bg[3] = {bg * cr, bg * cg, bg * cb};
          const double vessel[3] = {vr, vg, vb};
          for (int c = 0; c < 3; ++c)
            s.image.at(0, c, y, x) = static_cast<float>(
                std::min(1.0, std::max(0.0, chan_bg[c] * (1.0 - cov) + vessel[c] * cov)));
        }
      out.push_back(std::move(s));
      break;
    }
  }
  return out;
}

// Write a dataset in the standard <root>/images + <root>/masks layout.
inline void write_dataset(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  for (const auto& s : ds) {
    Image8 img;
    img.w = s.image.w;
    img.h = s.image.h;
    img.channels = 3;
    img.pix.resize(static_cast<size_t>(img.w) * img.h * 3);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        for (int c = 0; c < 3; ++c)
          img.pix[(static_cast<size_t>(y) * img.w + x) * 3 + c] =
              static_cast<uint8_t>(std::lround(s.image.at(0, c, y, x) * 255.0f));
    png_write((fs::path(root) / "images" / (s.id + ".png")).string(), img);

    Image8 msk;
    msk.w = s.mask.w;
    msk.h = s.mask.h;
    msk.channels = 1;
    msk.pix.resize(static_cast<size_t>(msk.w) * msk.h);
    for (int y = 0; y < msk.h; ++y)
      for (int x = 0; x < msk.w; ++x)
        msk.pix[static_cast<size_t>(y) * msk.w + x] =
            s.mask.at(0, 0, y, x) > 0.5f ? 255 : 0;
    png_write((fs::path(root) / "masks" / (s.id + ".png")).string(), msk);
  }
}

}  // namespace hseg
