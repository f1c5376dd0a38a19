#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hypercut/binary_io.hpp"
#include "hypercut/scenes/dataset.hpp"
#include "oracles.hpp"

using namespace hypercut;
using scenes::Image;

namespace {

scenes::SceneSpec square_spec(double x, double vx) {
  scenes::SceneSpec s;
  s.frames = 7;
  s.background = {0.2f};
  scenes::SceneObject o;
  o.kind = scenes::ShapeKind::kRectangle;
  o.size = 4;
  o.x = x;
  o.y = 10;
  o.vx = vx;
  o.color = {0.9f};
  s.objects.push_back(o);
  s.directional = vx != 0.0;
  return s;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_SUITE("scenes") {
  TEST_CASE("zero velocity gives identical frames") {
    const auto seq = scenes::render_sequence(square_spec(8, 0), 0);
    REQUIRE(seq.count() == 7);
    for (const Image& f : seq.frames) CHECK(f == seq.frames.front());
  }

  TEST_CASE("square at column 8 with velocity 2 covers columns 14..17 in frame 3") {
    const auto seq = scenes::render_sequence(square_spec(8, 2), 0);
    const Image& f = seq.frames[3];
    for (int col = 0; col < 32; ++col) {
      const float v = f[static_cast<std::size_t>(11) * 32 + col];
      if (col >= 14 && col <= 17) {
        CHECK(v == doctest::Approx(0.9f));
      } else {
        CHECK(v == doctest::Approx(0.2f));
      }
    }
  }

  TEST_CASE("sampled scenes match the brute-force rasterizer") {
    std::mt19937_64 rng(0);
    scenes::SceneDistribution dist;
    dist.background_gradient = true;
    for (int channels : {1, 3}) {
      dist.channels = channels;
      for (int i = 0; i < 5; ++i) {
        const auto spec = scenes::sample_scene(dist, rng);
        const auto seq = scenes::render_sequence(spec, 0);
        for (int k = 0; k < spec.frames; ++k) {
          const auto ref = oracle::rasterize(spec, k);
          double worst = 0;
          for (std::size_t q = 0; q < ref.size(); ++q) {
            worst = std::max(worst, std::abs(ref[q] - seq.frames[static_cast<std::size_t>(k)][q]));
          }
          CHECK(worst < 1e-6);
        }
      }
    }
  }

  TEST_CASE("spec validation") {
    auto s = square_spec(8, 2);
    s.frames = 1;
    CHECK_THROWS(s.validate());
    s = square_spec(8, 0);
    s.directional = true;
    CHECK_THROWS(s.validate());
    s = square_spec(100, 0);
    CHECK_THROWS(s.validate());
    s = square_spec(8, 2);
    s.height = 4;
    CHECK_THROWS(s.validate());
  }

  TEST_CASE("directional samples differ from their reverse") {
    std::mt19937_64 rng(1);
    scenes::SceneDistribution dist;
    for (int i = 0; i < 20; ++i) {
      const auto seq = scenes::render_sequence(scenes::sample_scene(dist, rng), 0);
      CHECK_FALSE(seq == scenes::reverse_sequence(seq));
    }
  }

  TEST_CASE("blur of a constant sequence is that frame") {
    const auto seq = scenes::render_sequence(square_spec(8, 0), 0);
    CHECK(scenes::synth_blur(seq).image == seq.frames.front());
  }

  TEST_CASE("pixel active in 3 of 7 frames blurs to 3/7") {
    scenes::FrameSequence seq;
    for (int k = 0; k < 7; ++k) seq.frames.push_back(Image({1, 1, 1}, k < 3 ? 1.0f : 0.0f));
    CHECK(scenes::synth_blur(seq).image[0] == doctest::Approx(3.0 / 7.0).epsilon(1e-7));
  }

  TEST_CASE("blur stays within the per-pixel frame range") {
    std::mt19937_64 rng(2);
    scenes::FrameSequence seq;
    for (int k = 0; k < 7; ++k) seq.frames.push_back(oracle::random_image(rng, 5, 4, 3));
    const Image b = scenes::synth_blur(seq).image;
    for (std::size_t q = 0; q < b.size(); ++q) {
      float lo = 1, hi = 0;
      for (const auto& f : seq.frames) {
        lo = std::min(lo, f[q]);
        hi = std::max(hi, f[q]);
      }
      CHECK(b[q] >= lo);
      CHECK(b[q] <= hi);
    }
  }

  TEST_CASE("reverse swaps borders and is an involution") {
    std::mt19937_64 rng(3);
    scenes::FrameSequence seq;
    for (int k = 0; k < 5; ++k) seq.frames.push_back(oracle::random_image(rng, 3, 3, 1));
    const auto rev = scenes::reverse_sequence(seq);
    CHECK(rev.frames.front() == seq.frames.back());
    CHECK(scenes::reverse_sequence(rev) == seq);
    scenes::FrameSequence pal;
    pal.frames = {seq.frames[0], seq.frames[1], seq.frames[0]};
    CHECK(scenes::reverse_sequence(pal) == pal);
  }

  TEST_CASE("b2v layout") {
    oracle::TempDir dir("b2v");
    std::mt19937_64 rng(4);
    const Image blurry = oracle::random_image(rng, 2, 3, 1);
    std::vector<Image> frames{oracle::random_image(rng, 2, 3, 1), oracle::random_image(rng, 2, 3, 1)};
    const auto path = dir.path() / "x.b2v";
    scenes::write_b2v(path, blurry, frames);
    const std::string bytes = read_all(path);
    CHECK(bytes.size() == 4 + 16 + 3 * 6 * 4);
    CHECK(bytes.substr(0, 4) == "B2V1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 2);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    CHECK(static_cast<unsigned char>(bytes[12]) == 3);
    CHECK(static_cast<unsigned char>(bytes[16]) == 1);
    float first = 0;
    std::memcpy(&first, bytes.data() + 20, 4);
    CHECK(first == blurry[0]);
    const auto back = scenes::read_b2v(path);
    CHECK(back.blurry.image == blurry);
    CHECK(back.sequence.frames == frames);
    {
      std::ofstream os(dir.path() / "short.b2v", std::ios::binary);
      os << bytes.substr(0, 30);
    }
    CHECK_THROWS(scenes::read_b2v(dir.path() / "short.b2v"));
  }

  TEST_CASE("dataset with one sample") {
    scenes::DatasetConfig cfg;
    cfg.count = 1;
    const auto ds = scenes::generate_dataset(cfg);
    CHECK(ds.samples.size() == 1);
    CHECK(ds.manifest.count == 1);
  }

  TEST_CASE("same seed gives bit-identical store files and sizes follow the manifest") {
    scenes::DatasetConfig cfg;
    cfg.count = 2000;
    cfg.seed = 17;
    oracle::TempDir a("ds_a"), b("ds_b");
    const auto ds = scenes::generate_dataset(cfg);
    scenes::write_dataset(ds, a.path());
    scenes::write_dataset(scenes::generate_dataset(cfg), b.path());
    // 4 magic + 4 x u32 + (1 blurry + 7 frames) x 32 x 32 x 1 x f32
    CHECK(ds.manifest.sample_bytes() == 4 + 16 + 8 * 32 * 32 * 4);
    for (std::size_t i = 0; i < ds.samples.size(); i += 97) {
      const auto name = scenes::sample_file_name(i);
      CHECK(std::filesystem::file_size(a.path() / name) == ds.manifest.sample_bytes());
      CHECK(read_all(a.path() / name) == read_all(b.path() / name));
    }
    CHECK(read_all(a.path() / "manifest.json") == read_all(b.path() / "manifest.json"));
    const auto back = scenes::read_dataset(a.path());
    CHECK(back.samples.size() == 2000);
    CHECK(back.samples[5].sequence == ds.samples[5].sequence);
    CHECK(back.manifest.split == ds.manifest.split);
  }

  TEST_CASE("blurry observations are the mean of their sequence") {
    scenes::DatasetConfig cfg;
    cfg.count = 20;
    const auto ds = scenes::generate_dataset(cfg);
    for (const auto& s : ds.samples) CHECK(scenes::synth_blur(s.sequence).image == s.blurry.image);
  }

  TEST_CASE("static distribution produces palindromic sequences") {
    scenes::DatasetConfig cfg;
    cfg.count = 10;
    cfg.scenes.directional = false;
    const auto ds = scenes::generate_dataset(cfg);
    for (const auto& s : ds.samples) CHECK(s.sequence == scenes::reverse_sequence(s.sequence));
  }
}
