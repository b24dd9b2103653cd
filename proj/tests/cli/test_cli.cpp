#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "clsr/image.hpp"

namespace clsr {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(CLSR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("--definitely-not-a-flag"), 2);
  EXPECT_EQ(run("infer --box 0,0,4,4"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, InferWritesScaledRoi) {
  const fs::path dir = fs::temp_directory_path() / "clsr_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Image img = Image::chw(3, 40, 48);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 17) / 16.0f;
  save_png(img, dir / "in.png");
  ASSERT_EQ(run("infer --image " + (dir / "in.png").string() + " --box 0,0,24,24 --scale 4 --out " +
                (dir / "out").string()),
            0);
  const Image sr = load_png(dir / "out" / "sr.png");
  EXPECT_EQ(sr.height(), 96);
  EXPECT_EQ(sr.width(), 96);
  EXPECT_TRUE(fs::exists(dir / "out" / "diagnostics.json"));
  EXPECT_NE(run("infer --image " + (dir / "in.png").string() + " --box 30,0,24,24 --out " +
                (dir / "out").string()),
            0);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace clsr
