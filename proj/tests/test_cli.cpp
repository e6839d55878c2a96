#include "doctest.h"
#include "oracles.hpp"

#include "khm/ensemble.hpp"
#include "khm/kernel_selection.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + KHM_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = oracle::slurp(out);
  r.err = oracle::slurp(err);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("toy-generate and fit-kernel") {
  const auto dir = oracle::scratch("cli_fit");
  const auto ens = dir / "ens";
  auto r = cli("--seed 3 toy-generate --out \"" + ens.string() + "\" --n 12 --rows 8 --cols 2", dir);
  REQUIRE(r.code == 0);
  const auto e = khm::load_ensemble(ens);
  CHECK(e.outputs.size() == 12);
  CHECK(e.outputs.length() == 16);
  CHECK(fs::exists(ens / "classification.csv"));
  CHECK(khm::load_classification(ens / "classification.csv", 12).labels.size() == 12);

  r = cli("fit-kernel --ensemble \"" + ens.string() + "\" --classification \"" + (ens / "classification.csv").string() +
              "\" --out \"" + (dir / "fit").string() + "\" --budget 40",
          dir);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "fit" / "kernel.txt"));
  CHECK(fs::exists(dir / "fit" / "kernel_fit.json"));
}

TEST_CASE("usage errors exit with status 2") {
  const auto dir = oracle::scratch("cli_errors");
  const auto ens = dir / "ens";
  REQUIRE(cli("toy-generate --out \"" + ens.string() + "\" --n 6 --rows 4 --cols 1", dir).code == 0);

  auto r = cli("fit-kernel --ensemble \"" + ens.string() + "\" --out \"" + (dir / "fit").string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(contains(r.err, "--classification"));

  r = cli("fit-kernel --ensemble \"" + ens.string() + "\" --classification \"" + (dir / "missing.csv").string() +
              "\" --out \"" + (dir / "fit").string() + "\"",
          dir);
  CHECK(r.code == 2);
  CHECK(contains(r.err, "missing.csv"));

  r = cli("frobnicate", dir);
  CHECK(r.code == 2);
  r = cli("", dir);
  CHECK(r.code == 2);
  r = cli("report --store \"" + ens.string() + "\" --no-such-flag", dir);
  CHECK(r.code == 2);
}

TEST_CASE("toy waves are reproducible from the command line") {
  const auto dir = oracle::scratch("cli_waves");
  const std::string opts =
      " --waves 2 --runs 14 --budget 40 --gp-starts 2 --nroy-samples 500 --no-coverage --q 3";
  const auto a = dir / "a";
  const auto b = dir / "b";
  auto r = cli("--seed 5 wave-run --toy --store \"" + a.string() + "\"" + opts, dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = cli("--seed 5 wave-run --toy --store \"" + b.string() + "\"" + opts, dir);
  REQUIRE(r.code == 0);
  CHECK(oracle::tree(a) == oracle::tree(b));
  CHECK(fs::exists(a / "wave_2"));

  r = cli("report --store \"" + a.string() + "\"", dir);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "NROY"));
  CHECK(contains(r.out, "\n1 "));
  CHECK(contains(r.out, "\n2 "));

  r = cli("nroy-sample --store \"" + a.string() + "\" --samples 300", dir);
  CHECK(r.code == 0);

  r = cli("next-design --store \"" + a.string() + "\" --n 3 --budget 3000 --out \"" + (dir / "next").string() + "\"",
          dir);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "next" / "design.csv"));

  r = cli("--seed 5 wave-run --toy --store \"" + a.string() + "\"" + opts, dir);
  CHECK(r.code == 2);
}
