#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "vtfuse/commands.hpp"
#include "vtfuse/config.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/gan.hpp"
#include "vtfuse/synthetic.hpp"

using namespace vtfuse;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "vtfuse_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

Run cli(const std::string& args) {
  const std::string cmd = "cd '" + workdir().string() + "' && '" VTFUSE_CLI_PATH "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Value printed on a "name = value" line of command output.
std::string field(const std::string& text, const std::string& name) {
  for (const std::string& l : lines(text))
    if (l.rfind(name + " = ", 0) == 0) return l.substr(name.size() + 3);
  FAIL("no '" << name << "' line in output:\n" << text);
  return {};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("run config") {
  RunConfig c({{"n", "10", ""}, {"out", "", ""}, {"rate", "0.5", ""}, {"flag", "false", ""}});
  SUBCASE("defaults and seed") {
    CHECK(c.get_size("n") == 10);
    CHECK(c.get_u64("seed") == 0);
    CHECK(!c.has("out"));
    CHECK_THROWS_AS(c.require("out"), ConfigError);
  }
  SUBCASE("file values with comments") {
    c.load_text("# header\n n = 25  # trailing\n\nrate=0.125\nflag = yes\nseed = 9\n");
    CHECK(c.get_size("n") == 25);
    CHECK(c.get_double("rate") == 0.125);
    CHECK(c.get_bool("flag"));
    CHECK(c.get_u64("seed") == 9);
  }
  SUBCASE("later sources win") {
    c.load_text("n = 25\n");
    c.set("n", "30");
    CHECK(c.get_size("n") == 30);
  }
  SUBCASE("fail closed") {
    CHECK_THROWS_AS(c.load_text("colour = red\n"), ConfigError);
    CHECK_THROWS_AS(c.load_text("n = 1\nn = 2\n"), ConfigError);
    CHECK_THROWS_AS(c.load_text("n 5\n"), ConfigError);
    CHECK_THROWS_AS(c.load_text(" = 5\n"), ConfigError);
    CHECK_THROWS_AS(c.set("colour", "red"), ConfigError);
    CHECK_THROWS_AS(c.load_file(at("missing.cfg")), IoError);
  }
  SUBCASE("typed values") {
    c.set("n", "-3");
    CHECK_THROWS_AS(c.get_size("n"), ConfigError);
    c.set("n", "4x");
    CHECK_THROWS_AS(c.get_size("n"), ConfigError);
    c.set("rate", "fast");
    CHECK_THROWS_AS(c.get_double("rate"), ConfigError);
    c.set("rate", "inf");
    CHECK_THROWS_AS(c.get_double("rate"), ConfigError);
    c.set("flag", "maybe");
    CHECK_THROWS_AS(c.get_bool("flag"), ConfigError);
  }
  SUBCASE("echo lists every key in order") {
    c.set("out", "x.bin");
    std::ostringstream s;
    c.echo(s);
    CHECK(s.str() == "n = 10\nout = x.bin\nrate = 0.5\nflag = false\nseed = 0\n");
  }
  SUBCASE("every command declares a seed") {
    CHECK(commands().size() == 8);
    for (const Command& cmd : commands()) CHECK(RunConfig(cmd.keys).knows("seed"));
  }
}

TEST_CASE("exit codes") {
  CHECK(cli("--help").code == kExitOk);
  CHECK(cli("").code == kExitUsage);
  CHECK(cli("frobnicate").code == kExitUsage);
  CHECK(cli("gen-data --colour red").code == kExitUsage);
  const Run zero = cli("gen-data --n 0 --out zero.vtg");
  CHECK(zero.code == kExitUsage);
  CHECK(!fs::exists(at("zero.vtg")));
  CHECK(cli("gen-data --n 5").code == kExitUsage);
  CHECK(cli("gen-data --n five --out x.vtg").code == kExitUsage);
  std::ofstream(at("bad.cfg")) << "n = 5\nout = y.vtg\ncolour = red\n";
  CHECK(cli("gen-data --config bad.cfg").code == kExitUsage);
  CHECK(cli("gen-data --config nowhere.cfg --out y.vtg").code == kExitIo);
  CHECK(cli("eval --data nowhere.vtg --model nowhere.xmf").code == kExitIo);
  CHECK(cli("gen-data --n 5 --out no_such_dir/x.vtg").code == kExitIo);
}

TEST_CASE("gen-data") {
  const Run a = cli("gen-data --n 2000 --seed 7 --out a.vtg");
  REQUIRE(a.code == kExitOk);
  const Run b = cli("gen-data --n 2000 --seed 7 --out b.vtg");
  REQUIRE(b.code == kExitOk);
  CHECK(slurp(at("a.vtg")) == slurp(at("b.vtg")));
  CHECK(a.out.find("seed = 7") != std::string::npos);

  const std::vector<Sample> data = read_dataset(at("a.vtg"));
  REQUIRE(data.size() == 2000);
  std::size_t pos = 0;
  for (const Sample& s : data) pos += s.label == 1;
  const double frac = static_cast<double>(pos) / 2000.0;
  CHECK(frac >= 0.55);
  CHECK(frac <= 0.65);
  CHECK(std::stod(field(a.out, "positive fraction").substr(0, 19)) == doctest::Approx(frac).epsilon(1e-12));

  SUBCASE("config file with flag override") {
    std::ofstream(at("gen.cfg")) << "n = 40\nseed = 7\nout = c.vtg\n";
    REQUIRE(cli("gen-data --config gen.cfg --n 30").code == kExitOk);
    const std::vector<Sample> c = read_dataset(at("c.vtg"));
    REQUIRE(c.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) CHECK(c[i].force == data[i].force);
  }
  SUBCASE("corrupt magic") {
    std::string bytes = slurp(at("a.vtg"));
    bytes[1] = 'X';
    std::ofstream(at("corrupt.vtg"), std::ios::binary) << bytes;
    std::ofstream(at("dummy.xmf"), std::ios::binary) << "nothing";
    const Run r = cli("train --data corrupt.vtg --out m.xmf --epochs 1");
    CHECK(r.code == kExitIo);
    CHECK(r.out.find("bad file format") != std::string::npos);
  }
}

TEST_CASE("train and eval") {
  REQUIRE(cli("gen-data --n 48 --seed 3 --out small.vtg").code == kExitOk);
  const std::string args = "train --data small.vtg --variant ours --layers 1 --epochs 2 --batch 16 --seed 4 ";
  const Run t1 = cli(args + "--out m1.xmf --history h1.csv");
  REQUIRE(t1.code == kExitOk);
  const Run t2 = cli(args + "--out m2.xmf --history h2.csv");
  REQUIRE(t2.code == kExitOk);
  CHECK(slurp(at("h1.csv")) == slurp(at("h2.csv")));
  CHECK(slurp(at("m1.xmf")) == slurp(at("m2.xmf")));

  const std::vector<std::string> history = lines(slurp(at("h1.csv")));
  REQUIRE(history.size() == 4);
  CHECK(history[0] == "run,fold,epoch,loss,accuracy,precision,recall");
  const std::vector<std::string> final_row = split_csv(history.back());
  CHECK(final_row[2] == "final");

  const Run e = cli("eval --data small.vtg --model m1.xmf --out e.csv");
  REQUIRE(e.code == kExitOk);
  CHECK(std::abs(std::stod(field(e.out, "accuracy")) - std::stod(final_row[4])) <= 1e-9);
  CHECK(std::abs(std::stod(field(e.out, "loss")) - std::stod(final_row[3])) <= 1e-9);
  CHECK(split_csv(lines(slurp(at("e.csv")))[1]) == final_row);

  CHECK(cli("train --data small.vtg --variant fancy --out x.xmf").code == kExitUsage);
  CHECK(cli("train --data small.vtg --batch 100 --out x.xmf").code == kExitUsage);
  CHECK(cli("eval --data small.vtg --model h1.csv").code == kExitIo);
}

TEST_CASE("ablate") {
  REQUIRE(cli("gen-data --n 30 --seed 5 --out tiny.vtg").code == kExitOk);
  const std::string args = "ablate --data tiny.vtg --folds 2 --epochs 1 --batch 15 --layers 1 --seed 2 ";
  const Run a = cli(args + "--table t1.csv --out m1.csv");
  REQUIRE(a.code == kExitOk);
  REQUIRE(cli(args + "--table t2.csv --out m2.csv").code == kExitOk);
  CHECK(slurp(at("t1.csv")) == slurp(at("t2.csv")));
  CHECK(slurp(at("m1.csv")) == slurp(at("m2.csv")));
  const std::vector<std::string> table = lines(slurp(at("t1.csv")));
  REQUIRE(table.size() == 6);
  const std::vector<std::string> expected{"visual-only", "tactile-only", "concat", "ours-m", "ours"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(split_csv(table[i + 1])[0] == expected[i]);
  // 5 variants x 2 folds x (1 epoch row + 1 final row), plus the header.
  CHECK(lines(slurp(at("m1.csv"))).size() == 21);
}

TEST_CASE("gan commands") {
  SUBCASE("identity generator on identical pairs") {
    REQUIRE(cli("gen-pairs --n 20 --identical true --out same.vtp").code == kExitOk);
    const Run r = cli("eval-gan --data same.vtp --model identity --subset all");
    REQUIRE(r.code == kExitOk);
    CHECK(std::abs(std::stod(field(r.out, "mean ssim")) - 1.0) < 1e-9);
  }
  SUBCASE("train then evaluate the held-out split") {
    REQUIRE(cli("gen-pairs --n 20 --seed 1 --out pairs.vtp").code == kExitOk);
    const Run t = cli("train-gan --data pairs.vtp --epochs 1 --width 4 --out g.xmf --history gh.csv");
    REQUIRE(t.code == kExitOk);
    CHECK(lines(slurp(at("gh.csv"))).size() == 2);
    const Run e = cli("eval-gan --data pairs.vtp --model g.xmf --out s.csv");
    REQUIRE(e.code == kExitOk);
    CHECK(field(e.out, "mean ssim") == field(t.out, "held-out mean ssim"));
    const std::vector<std::string> rows = lines(slurp(at("s.csv")));
    REQUIRE(rows.size() == 5);
    double total = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) total += std::stod(split_csv(rows[i])[1]);
    CHECK(std::abs(total / 4.0 - std::stod(field(e.out, "mean ssim"))) < 1e-12);
    CHECK(cli("eval-gan --data pairs.vtp --model g.xmf --subset train").code == kExitUsage);
  }
  SUBCASE("wrong checkpoint kind") {
    REQUIRE(cli("gen-pairs --n 5 --out five.vtp").code == kExitOk);
    REQUIRE(cli("gen-data --n 20 --out d20.vtg").code == kExitOk);
    REQUIRE(cli("train --data d20.vtg --variant concat --epochs 1 --batch 10 --out f.xmf").code == kExitOk);
    const Run r = cli("eval-gan --data five.vtp --model f.xmf");
    CHECK(r.code == kExitIo);
    CHECK(r.out.find("bad file format") != std::string::npos);
  }
  CHECK(cli("gen-pairs --n 5 --size 30 --out odd.vtp").code == kExitUsage);
}

TEST_CASE("policy-demo") {
  const Run r = cli("policy-demo --model oracle --grasps 100 --seed 11 --out policy.csv");
  REQUIRE(r.code == kExitOk);
  const std::vector<std::string> rows = lines(slurp(at("policy.csv")));
  REQUIRE(rows.size() == 101);
  CHECK(rows[0] == "grasp,chosen_force,predicted,actual");
  const DataConfig dc;
  for (std::size_t g = 0; g < 100; ++g) {
    Rng rng = Rng::derive(11, g);
    const SceneParams scene = sample_scene(dc, rng);
    const std::vector<std::string> cells = split_csv(rows[g + 1]);
    CHECK(cells[0] == std::to_string(g));
    CHECK(std::stod(cells[1]) == std::max(10.0, std::ceil(scene.force_threshold)));
    CHECK(cells[2] == "1");
    CHECK(std::stoi(cells[3]) == label_rule(scene, std::stod(cells[1]), dc.margin));
  }
  REQUIRE(cli("policy-demo --model oracle --grasps 100 --seed 11 --out policy2.csv").code == kExitOk);
  CHECK(slurp(at("policy.csv")) == slurp(at("policy2.csv")));
  CHECK(r.out.find("fixed-30N,30,") != std::string::npos);
  CHECK(cli("policy-demo --model oracle --grasps 0 --out p.csv").code == kExitUsage);
  CHECK(cli("policy-demo --model nowhere.xmf --out p.csv").code == kExitIo);
}
