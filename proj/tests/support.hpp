#pragma once

// Shared helpers for the unit and acceptance tests.

#include <filesystem>
#include <string>
#include <vector>

#include "pep/core.hpp"
#include "pep/geometry.hpp"

namespace pep::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the pep CLI with `args` (already shell-quoted where needed).
CommandResult run_cli(const std::string& args, const TempDir& dir);

std::string slurp(const std::string& path);

// Independent 3x4 homogeneous projection: P * R_rect * T_velo_cam * [x y z 1]^T,
// each matrix product written out as explicit loops.
void oracle_project(const Calibration& c, double x, double y, double z, double& u, double& v, double& depth);

}  // namespace pep::test
