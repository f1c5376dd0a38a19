#include "hypercut/scenes/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "hypercut/binary_io.hpp"
#include "hypercut/diffcore/parameters.hpp"

namespace hypercut::scenes {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Manifest::sample_bytes() const {
  const std::size_t image = static_cast<std::size_t>(height) * width * channels * sizeof(float);
  return 4 + 4 * sizeof(std::uint32_t) + image * static_cast<std::size_t>(frames + 1);
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.split.size(); ++i) {
    if (manifest.split[i] == which) out.push_back(i);
  }
  return out;
}

std::vector<const Sample*> Dataset::subset(Split which) const {
  std::vector<const Sample*> out;
  for (std::size_t i : indices(which)) out.push_back(&samples[i]);
  return out;
}

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.count < 1) throw std::invalid_argument("dataset needs at least one sample");
  if (!(config.train_fraction >= 0.0 && config.train_fraction <= 1.0)) {
    throw std::invalid_argument("split ratio must lie in [0, 1], got " + std::to_string(config.train_fraction));
  }
  Dataset ds;
  Manifest& m = ds.manifest;
  m.count = config.count;
  m.frames = config.scenes.frames;
  m.height = config.scenes.height;
  m.width = config.scenes.width;
  m.channels = config.scenes.channels;
  m.seed = config.seed;
  m.train_fraction = config.train_fraction;

  ds.samples.resize(static_cast<std::size_t>(config.count));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < config.count; ++i) {
    const std::uint64_t sample_seed = diff::derive_seed(config.seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(sample_seed);
    const SceneSpec spec = sample_scene(config.scenes, rng);
    Sample& s = ds.samples[static_cast<std::size_t>(i)];
    s.sequence = render_sequence(spec, sample_seed);
    s.blurry = synth_blur(s.sequence);
  }

  const auto train_count = static_cast<std::size_t>(std::llround(config.train_fraction * config.count));
  std::vector<std::size_t> order(static_cast<std::size_t>(config.count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(diff::derive_seed(config.seed, 0xC0FFEEull));
  std::shuffle(order.begin(), order.end(), split_rng);
  m.split.assign(order.size(), Split::kTest);
  for (std::size_t j = 0; j < train_count; ++j) m.split[order[j]] = Split::kTrain;
  return ds;
}

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06zu.b2v", index);
  return buf;
}

void write_b2v(const fs::path& path, const Image& blurry, const std::vector<Image>& frames) {
  if (blurry.rank() != 3) throw diff::ShapeError("B2V images must be H x W x C");
  for (const Image& f : frames) {
    if (f.shape() != blurry.shape()) throw diff::ShapeError("B2V frames must match the blurry image shape");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FormatError("cannot open " + path.string() + " for writing");
  io::write_magic(os, "B2V1");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.size()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(blurry.dim(0)));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(blurry.dim(1)));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(blurry.dim(2)));
  io::write_f32_array(os, blurry.data(), blurry.size());
  for (const Image& f : frames) io::write_f32_array(os, f.data(), f.size());
  if (!os) throw io::FormatError("write failed: " + path.string());
}

Sample read_b2v(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open " + path.string());
  io::expect_magic(is, "B2V1");
  const auto count = io::read_le<std::uint32_t>(is);
  const auto h = static_cast<int>(io::read_le<std::uint32_t>(is));
  const auto w = static_cast<int>(io::read_le<std::uint32_t>(is));
  const auto c = static_cast<int>(io::read_le<std::uint32_t>(is));
  Sample s;
  s.blurry.image = Image({h, w, c});
  io::read_f32_array(is, s.blurry.image.data(), s.blurry.image.size());
  for (std::uint32_t k = 0; k < count; ++k) {
    Image f({h, w, c});
    io::read_f32_array(is, f.data(), f.size());
    s.sequence.frames.push_back(std::move(f));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes in " + path.string());
  return s;
}

namespace {

json manifest_json(const Manifest& m) {
  json split = json::array();
  for (Split s : m.split) split.push_back(s == Split::kTrain ? "train" : "test");
  json j;
  j["format"] = "B2V1";
  j["count"] = m.count;
  j["frames"] = m.frames;
  j["height"] = m.height;
  j["width"] = m.width;
  j["channels"] = m.channels;
  j["seed"] = m.seed;
  j["train_fraction"] = m.train_fraction;
  j["sample_bytes"] = m.sample_bytes();
  j["split"] = std::move(split);
  return j;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    os << manifest_json(dataset.manifest).dump(2) << '\n';
    if (!os) throw io::FormatError("cannot write manifest in " + dir.string());
  }
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    write_b2v(dir / sample_file_name(i), s.blurry.image, s.sequence.frames);
  }
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw io::FormatError("no manifest.json in " + dir.string());
  const json j = json::parse(is);
  Dataset ds;
  Manifest& m = ds.manifest;
  m.count = j.at("count").get<int>();
  m.frames = j.at("frames").get<int>();
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.channels = j.at("channels").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.train_fraction = j.value("train_fraction", 0.8);
  for (const auto& s : j.at("split")) m.split.push_back(s.get<std::string>() == "train" ? Split::kTrain : Split::kTest);
  if (static_cast<int>(m.split.size()) != m.count) throw io::FormatError("manifest split length differs from count");

  ds.samples.reserve(static_cast<std::size_t>(m.count));
  for (int i = 0; i < m.count; ++i) {
    Sample s = read_b2v(dir / sample_file_name(static_cast<std::size_t>(i)));
    if (s.sequence.count() != m.frames || s.blurry.image.shape() != diff::Shape{m.height, m.width, m.channels}) {
      throw io::FormatError(sample_file_name(static_cast<std::size_t>(i)) + " does not match the manifest");
    }
    s.sequence.seed = diff::derive_seed(m.seed, static_cast<std::uint64_t>(i));
    s.blurry.source_seed = s.sequence.seed;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace hypercut::scenes
