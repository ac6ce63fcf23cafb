#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hseg/hseg.hpp"

using namespace hseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hseg_data_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

Image8 checker_image(int w, int h, int channels) {
  Image8 img;
  img.w = w;
  img.h = h;
  img.channels = channels;
  img.pix.resize(static_cast<size_t>(w) * h * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.pix[(static_cast<size_t>(y) * w + x) * channels + c] =
            static_cast<uint8_t>((x * 7 + y * 13 + c * 29) % 256);
  return img;
}

void write_pair(const fs::path& root, const std::string& id, int w, int h) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  png_write((root / "images" / (id + ".png")).string(), checker_image(w, h, 3));
  Image8 mask;
  mask.w = w;
  mask.h = h;
  mask.channels = 1;
  mask.pix.assign(static_cast<size_t>(w) * h, 0);
  for (int y = 0; y < h / 2; ++y)
    for (int x = 0; x < w; ++x) mask.pix[static_cast<size_t>(y) * w + x] = 255;
  png_write((root / "masks" / (id + ".png")).string(), mask);
}

}  // namespace

TEST_CASE("png round trip, gray and rgb") {
  TempDir tmp;
  for (int channels : {1, 3}) {
    const Image8 img = checker_image(37, 23, channels);
    const std::string path = (tmp.path / ("rt" + std::to_string(channels) + ".png")).string();
    png_write(path, img);
    const Image8 back = png_read(path);
    CHECK(back.w == img.w);
    CHECK(back.h == img.h);
    CHECK(back.channels == channels);
    CHECK(back.pix == img.pix);
  }
}

TEST_CASE("png reader rejects non-8-bit depth and junk") {
  TempDir tmp;
  const std::string path = (tmp.path / "depth.png").string();
  png_write(path, checker_image(8, 8, 1));
  {
    // bit depth byte lives at offset 8 (sig) + 8 (IHDR header) + 8 (w,h)
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(24);
    f.put(16);
  }
  CHECK_THROWS_WITH_AS(png_read(path), doctest::Contains("non-8-bit"), std::runtime_error);

  const std::string junk = (tmp.path / "junk.png").string();
  std::ofstream(junk) << "not a png at all";
  CHECK_THROWS_WITH_AS(png_read(junk), doctest::Contains("not a PNG"), std::runtime_error);
  CHECK_THROWS_AS(png_read((tmp.path / "missing.png").string()), std::runtime_error);
}

TEST_CASE("load_sample: DRIVE-sized image lands at 512x512, mask strictly binary") {
  TempDir tmp;
  write_pair(tmp.path, "im1", 565, 584);  // native DRIVE frame
  Sample s = load_sample((tmp.path / "images" / "im1.png").string(),
                         (tmp.path / "masks" / "im1.png").string(), DatasetKind::drive);
  CHECK(s.image.h == 512);
  CHECK(s.image.w == 512);
  CHECK(s.mask.h == 512);
  CHECK(s.mask.w == 512);
  CHECK(s.image.c == 3);
  for (float v : s.image.v) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  for (float v : s.mask.v) CHECK((v == 0.0f || v == 1.0f));
  CHECK(s.id == "im1");
}

TEST_CASE("load_sample: synthetic pass-through only scales by 1/255") {
  TempDir tmp;
  write_pair(tmp.path, "s0", 64, 64);
  Sample s = load_sample((tmp.path / "images" / "s0.png").string(),
                         (tmp.path / "masks" / "s0.png").string(), DatasetKind::synth);
  CHECK(s.image.h == 64);
  const Image8 orig = checker_image(64, 64, 3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      CHECK(s.image.at(0, 0, y, x) == doctest::Approx(orig.at(y, x, 0) / 255.0).epsilon(1e-7));
}

TEST_CASE("load_sample rejects native dim mismatch and unsupported formats") {
  TempDir tmp;
  fs::create_directories(tmp.path / "images");
  fs::create_directories(tmp.path / "masks");
  png_write((tmp.path / "images" / "a.png").string(), checker_image(64, 64, 3));
  Image8 m = checker_image(32, 32, 1);
  png_write((tmp.path / "masks" / "a.png").string(), m);
  CHECK_THROWS_WITH_AS(load_sample((tmp.path / "images" / "a.png").string(),
                                   (tmp.path / "masks" / "a.png").string(), DatasetKind::synth),
                       doctest::Contains("native dims differ"), std::runtime_error);
  std::ofstream(tmp.path / "images" / "b.jpg") << "x";
  CHECK_THROWS_WITH_AS(load_sample((tmp.path / "images" / "b.jpg").string(),
                                   (tmp.path / "masks" / "a.png").string(), DatasetKind::synth),
                       doctest::Contains("unsupported format"), std::runtime_error);
}

TEST_CASE("load_sample rejects dims not divisible by 16 instead of padding") {
  TempDir tmp;
  write_pair(tmp.path, "odd", 20, 20);
  CHECK_THROWS_WITH_AS(load_sample((tmp.path / "images" / "odd.png").string(),
                                   (tmp.path / "masks" / "odd.png").string(),
                                   DatasetKind::synth),
                       doctest::Contains("divisible by 16"), std::invalid_argument);
}

TEST_CASE("resize targets per dataset") {
  CHECK(dataset_target(DatasetKind::drive, 584, 565) == std::pair<int, int>{512, 512});
  CHECK(dataset_target(DatasetKind::chase_db1, 960, 999) == std::pair<int, int>{960, 960});
  CHECK(dataset_target(DatasetKind::hrf, 2336, 3504) == std::pair<int, int>{784, 1168});
  CHECK(dataset_target(DatasetKind::synth, 64, 64) == std::pair<int, int>{64, 64});
}

TEST_CASE("make_splits: DRIVE 20/20, CHASE_DB1 8/20, HRF 15/30") {
  TempDir tmp;
  const fs::path drive = tmp.path / "drive";
  for (int i = 1; i <= 40; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%02d_img", i);
    write_pair(drive, id, 16, 16);
  }
  SplitSpec ds = make_splits(DatasetKind::drive, drive.string());
  CHECK(ds.train_ids.size() == 20);
  CHECK(ds.test_ids.size() == 20);
  CHECK(ds.train_ids.front() == "01_img");
  CHECK(ds.test_ids.front() == "21_img");

  const fs::path chase = tmp.path / "chase";
  for (int i = 1; i <= 28; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "img_%02d", i);
    write_pair(chase, id, 16, 16);
  }
  SplitSpec cs = make_splits(DatasetKind::chase_db1, chase.string());
  CHECK(cs.train_ids.size() == 8);
  CHECK(cs.test_ids.size() == 20);

  const fs::path hrf = tmp.path / "hrf";
  for (const char* cat : {"dr", "g", "h"})
    for (int i = 1; i <= 15; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "%02d_%s", i, cat);
      write_pair(hrf, id, 16, 16);
    }
  SplitSpec hs = make_splits(DatasetKind::hrf, hrf.string());
  CHECK(hs.train_ids.size() == 15);
  CHECK(hs.test_ids.size() == 30);
  // first five of each category train
  for (const char* want : {"01_dr", "05_dr", "01_g", "05_h"})
    CHECK(std::count(hs.train_ids.begin(), hs.train_ids.end(), std::string(want)) == 1);
  CHECK(std::count(hs.test_ids.begin(), hs.test_ids.end(), std::string("06_dr")) == 1);

  // splits are disjoint and stable
  for (const auto& id : hs.train_ids)
    CHECK(std::count(hs.test_ids.begin(), hs.test_ids.end(), id) == 0);
  SplitSpec hs2 = make_splits(DatasetKind::hrf, hrf.string());
  CHECK(hs2.train_ids == hs.train_ids);
  CHECK(hs2.test_ids == hs.test_ids);
}

TEST_CASE("make_splits: synth holds out half, train and test disjoint") {
  TempDir tmp;
  const fs::path root = tmp.path / "synth5";
  for (int i = 0; i < 5; ++i) write_pair(root, "s" + std::to_string(i), 16, 16);
  SplitSpec s = make_splits(DatasetKind::synth, root.string());
  CHECK(s.train_ids.size() == 3);
  CHECK(s.test_ids.size() == 2);
  for (const auto& id : s.train_ids)
    CHECK(std::count(s.test_ids.begin(), s.test_ids.end(), id) == 0);
}

TEST_CASE("make_splits rejects bad counts and missing layout") {
  TempDir tmp;
  const fs::path drive = tmp.path / "short_drive";
  for (int i = 0; i < 5; ++i) write_pair(drive, "im" + std::to_string(i), 16, 16);
  CHECK_THROWS_WITH_AS(make_splits(DatasetKind::drive, drive.string()),
                       doctest::Contains("expected 40"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(make_splits(DatasetKind::drive, (tmp.path / "nowhere").string()),
                       doctest::Contains("images"), std::runtime_error);
}

TEST_CASE("split spec serializes one line per id") {
  SplitSpec s;
  s.train_ids = {"a", "b"};
  s.test_ids = {"c"};
  CHECK(s.serialize() == "train a\ntrain b\ntest c\n");
}

TEST_CASE("augment: zero probabilities are the identity") {
  Dataset ds = synth_vessels(5, 32, 1);
  Sample out = augment(ds[0], 123, AugmentConfig::none());
  CHECK(out.image.v == ds[0].image.v);
  CHECK(out.mask.v == ds[0].mask.v);
}

TEST_CASE("augment: horizontal flip is an involution") {
  Dataset ds = synth_vessels(6, 32, 1);
  Sample a = ds[0];
  flip_horizontal(a.image);
  flip_horizontal(a.image);
  CHECK(a.image.v == ds[0].image.v);
  flip_vertical(a.mask);
  flip_vertical(a.mask);
  CHECK(a.mask.v == ds[0].mask.v);
}

TEST_CASE("augment: deterministic in the seed, dims and binarity preserved") {
  Dataset ds = synth_vessels(7, 32, 1);
  AugmentConfig cfg;  // all probabilities 0.5
  Sample a = augment(ds[0], 99, cfg);
  Sample b = augment(ds[0], 99, cfg);
  CHECK(a.image.v == b.image.v);
  CHECK(a.mask.v == b.mask.v);
  CHECK(a.image.h == ds[0].image.h);
  CHECK(a.image.w == ds[0].image.w);
  for (float v : a.mask.v) CHECK((v == 0.0f || v == 1.0f));
  for (float v : a.image.v) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // different seeds eventually differ
  bool any_diff = false;
  for (uint64_t s = 100; s < 110 && !any_diff; ++s)
    any_diff = augment(ds[0], s, cfg).image.v != a.image.v;
  CHECK(any_diff);
}

TEST_CASE("synth_vessels: deterministic, bounded foreground, both classes") {
  Dataset a = synth_vessels(11, 64, 3);
  Dataset b = synth_vessels(11, 64, 3);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(a[i].image.v == b[i].image.v);
    CHECK(a[i].mask.v == b[i].mask.v);
  }
  CHECK(synth_vessels(11, 64, 0).empty());
  CHECK_THROWS_AS(synth_vessels(1, 60, 1), std::invalid_argument);

  for (uint64_t seed = 0; seed < 100; ++seed) {
    Dataset d = synth_vessels(seed, 64, 1);
    double fg = 0.0;
    for (float v : d[0].mask.v) fg += v;
    fg /= static_cast<double>(d[0].mask.size());
    CHECK(fg >= 0.02);
    CHECK(fg <= 0.25);
  }
}

TEST_CASE("write_dataset emits the documented layout and survives reload") {
  TempDir tmp;
  Dataset ds = synth_vessels(13, 32, 2);
  const std::string root = (tmp.path / "synthset").string();
  write_dataset(ds, root);
  CHECK(fs::exists(fs::path(root) / "images" / "synth_000.png"));
  CHECK(fs::exists(fs::path(root) / "masks" / "synth_001.png"));
  SplitSpec s = make_splits(DatasetKind::synth, root);
  CHECK(s.train_ids.size() == 1);
  CHECK(s.test_ids.size() == 1);
  Dataset back = load_split(DatasetKind::synth, root, {"synth_000", "synth_001"});
  REQUIRE(back.size() == 2);
  CHECK(back[0].mask.v == ds[0].mask.v);  // masks are lossless through PNG
  for (size_t i = 0; i < back[0].image.v.size(); ++i)
    CHECK(std::abs(back[0].image.v[i] - ds[0].image.v[i]) <= 0.5f / 255.0f + 1e-6f);
}
