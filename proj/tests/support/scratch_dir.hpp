#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace geomatch::testing {

// Fresh per-test directory under $GEOMATCH_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("GEOMATCH_TEST_TMP");
  const std::filesystem::path root =
      env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "geomatch_tests";
  const auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace geomatch::testing
