#include "support.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>
#include <sys/wait.h>

namespace pep::test {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("pep_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CommandResult run_cli(const std::string& args, const TempDir& dir) {
  const std::string out = dir.file(".stdout"), err = dir.file(".stderr");
  const std::string cmd = "cd '" + dir.path().string() + "' && { '" PEP_CLI "' " + args + "; } >'" + out + "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  CommandResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void oracle_project(const Calibration& c, double x, double y, double z, double& u, double& v, double& depth) {
  const double p[4] = {x, y, z, 1.0};
  double cam[4] = {0, 0, 0, 0}, rect[4] = {0, 0, 0, 0}, img[3] = {0, 0, 0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cam[i] += c.T_velo_cam(i, j) * p[j];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) rect[i] += c.R_rect(i, j) * cam[j];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) img[i] += c.P(i, j) * rect[j];
  depth = img[2];
  u = img[0] / img[2];
  v = img[1] / img[2];
}

}  // namespace pep::test
