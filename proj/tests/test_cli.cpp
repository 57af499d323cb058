#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("dase_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const char* exe = std::getenv("DASE_CLI");
  REQUIRE(exe != nullptr);
  const auto log = work_dir() / "stdout.txt";
  const std::string cmd = std::string("'") + exe + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// A small synthetic dataset shared by the tests below.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const auto spec = work_dir() / "spec.json";
    spit(spec, json{{"volumes_per_class", 4}, {"T", 8}, {"seed", 11}}.dump());
    const auto d = work_dir() / "data";
    const auto r = cli("synth --spec " + q(spec) + " --out " + q(d));
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

fs::path small_config(const std::string& name, const json& extra = json::object()) {
  json c = {{"seed", 3}, {"epochs", 2}, {"batch_size", 4}, {"period", 2}, {"data", dataset().string()}};
  c.update(extra);
  const auto p = work_dir() / name;
  spit(p, c.dump());
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gradcheck --colour red").code == 2);
  CHECK(cli("encode --input x.dase --out y.pfm").code == 2);
  const auto bad = small_config("noseed.json");
  auto j = json::parse(slurp(bad));
  j.erase("seed");
  spit(bad, j.dump());
  const auto r = cli("train --config " + q(bad) + " --out " + q(work_dir() / "never"));
  CHECK(r.code == 2);
  CHECK(r.out.find("usage error") != std::string::npos);
}

TEST_CASE("synth writes volumes, labels and a manifest") {
  const auto& d = dataset();
  CHECK(fs::exists(d / "subject_0000.dase"));
  CHECK(fs::exists(d / "subject_0011.dase"));
  CHECK(slurp(d / "labels.csv").rfind("file,label\nsubject_0000.dase,0\nsubject_0001.dase,1\n", 0) == 0);
  const auto m = json::parse(slurp(d / "manifest.json"));
  CHECK(m.at("command") == "synth");
  CHECK(m.at("spec").at("T") == 8);
}

TEST_CASE("encode writes a PFM and sidecar") {
  const auto out = work_dir() / "enc" / "d.pfm";
  const auto r = cli("encode --input " + q(dataset() / "subject_0000.dase") + " --method arp --out " + q(out));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out));
  const auto side = json::parse(slurp(work_dir() / "enc" / "d.json"));
  CHECK(side.at("method") == "arp");
  CHECK(side.at("T") == 8);
  CHECK(fs::exists(work_dir() / "enc" / "manifest.json"));

  CHECK(cli("encode --input " + q(dataset() / "subject_0000.dase") + " --method median --out " + q(out)).code == 2);
  CHECK(cli("encode --input " + q(work_dir() / "missing.dase") + " --method arp --out " + q(out)).code == 3);
  spit(work_dir() / "bad.dase", "NOPE");
  CHECK(cli("encode --input " + q(work_dir() / "bad.dase") + " --method arp --out " + q(out)).code == 3);
}

TEST_CASE("inspect prints a JSON summary") {
  const auto r = cli("inspect --input " + q(dataset() / "subject_0001.dase"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"T\"") != std::string::npos);
}

TEST_CASE("gradcheck passes") {
  const auto r = cli("gradcheck --seed 7");
  CHECK(r.code == 0);
  CHECK(r.out.find("dgm_block.x") != std::string::npos);
}

TEST_CASE("train is reproducible and feeds eval and predict") {
  const auto cfg = small_config("train.json");
  const auto a = work_dir() / "run_a", b = work_dir() / "run_b";
  REQUIRE(cli("train --config " + q(cfg) + " --out " + q(a)).code == 0);
  REQUIRE(cli("train --config " + q(cfg) + " --out " + q(b)).code == 0);
  for (const char* f : {"metrics.json", "model.json", "model.bin", "fold0.bin", "history.csv", "curriculum.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto metrics = json::parse(slurp(a / "metrics.json"));
  CHECK(metrics.at("folds").size() == 3);
  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("config").at("seed") == 3);
  CHECK(manifest.at("thresholds").at("folds").size() == 3);
  CHECK(manifest.at("inputs").size() >= 1);

  const auto ev = work_dir() / "eval";
  const auto e = cli("eval --model " + q(a / "model.json") + " --data " + q(dataset()) + " --out " + q(ev));
  REQUIRE(e.code == 0);
  CHECK(json::parse(slurp(ev / "metrics.json")).contains("acc"));

  const auto p = cli("predict --model " + q(a / "model.json") + " --volume " + q(dataset() / "subject_0002.dase"));
  REQUIRE(p.code == 0);
  const auto pj = json::parse(p.out.substr(p.out.find('{')));
  CHECK(pj.at("scores").size() == 3);
  CHECK(pj.at("label").get<int>() >= 0);

  CHECK(cli("eval --model " + q(work_dir() / "nothing.json") + " --data " + q(dataset()) + " --out " + q(ev)).code ==
        3);
}

TEST_CASE("divergence exits with 4 and keeps the last good model") {
  const auto cfg = small_config("diverge.json", {{"lr", 1e30}, {"epochs", 3}});
  const auto out = work_dir() / "run_div";
  const auto r = cli("train --config " + q(cfg) + " --out " + q(out));
  CHECK(r.code == 4);
  CHECK(r.out.find("numeric error") != std::string::npos);
  CHECK(fs::exists(out / "fold0_last_good.json"));
}
