#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mashost/roles.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) { return std::string(MASHOST_DATA_DIR) + "/" + name; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mashost-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name) << content;
    return file(name);
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline mashost::RolePool small_pool(std::size_t k) {
  std::vector<mashost::RoleCard> cards;
  for (std::size_t i = 0; i < k; ++i) {
    mashost::RoleCard c;
    c.name = "Role " + std::to_string(i);
    c.responsibilities = {"handle part " + std::to_string(i)};
    cards.push_back(c);
  }
  return mashost::RolePool(cards);
}

}  // namespace testutil
