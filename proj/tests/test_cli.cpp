#include <doctest.h>

#include <fstream>

#include "hypercut/cli/cli.hpp"
#include "json.hpp"
#include "oracles.hpp"

using hypercut::cli::dispatch;

namespace {

std::string read_all(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and argument errors") {
    CHECK(dispatch({"hypercut", "--help"}) == 0);
    CHECK(dispatch({"hypercut", "gen-data", "--no-such-flag"}) == 2);
    CHECK(dispatch({"hypercut", "no-such-command"}) == 2);
    CHECK(dispatch({"hypercut"}) == 2);
  }

  TEST_CASE("gen-data is reproducible and echoes its config") {
    oracle::TempDir a("cli_a"), b("cli_b");
    for (const auto* d : {&a, &b}) {
      REQUIRE(dispatch({"hypercut", "gen-data", "--count", "6", "--size", "16", "--seed", "4", "--out",
                        d->path().string()}) == 0);
    }
    for (const auto& e : std::filesystem::directory_iterator(a.path())) {
      CHECK(read_all(e.path()) == read_all(b.path() / e.path().filename()));
    }
    const auto cfg = nlohmann::json::parse(read_all(a.path() / "config.json"));
    CHECK(cfg.at("seed") == 4);
    CHECK(cfg.at("count") == 6);
    CHECK(std::filesystem::exists(a.path() / "manifest.json"));
  }

  TEST_CASE("empty alpha list is a usage error") {
    oracle::TempDir d("cli_alpha");
    CHECK(dispatch({"hypercut", "ablate-alpha", "--alphas", "", "--out", d.path().string()}) == 2);
  }

  TEST_CASE("align on a synthetic fixture") {
    oracle::TempDir d("cli_align");
    REQUIRE(dispatch({"hypercut", "align", "--seed", "2", "--size", "16", "--out", d.path().string()}) == 0);
    const auto truth = nlohmann::json::parse(read_all(d.path() / "fixture.json"));
    const auto got = nlohmann::json::parse(read_all(d.path() / "alignment.json"));
    CHECK(got.at("p") == truth.at("p"));
    CHECK(truth.at("max_abs_M_error").get<double>() < 1e-3);
  }
}
