#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace kanforget::runner {

struct RemoteFile {
  std::string name;
  std::string md5;
};

/// The four canonical MNIST archives and their published MD5 sums.
[[nodiscard]] const std::vector<RemoteFile>& mnist_files();

[[nodiscard]] std::string md5_hex_file(const std::filesystem::path& path);

/// Downloads each file from `base_url` into `dir` (skipping files already
/// present with the right checksum). Throws IoError on transfer or checksum
/// failure; a bad download is removed.
void fetch_mnist(const std::filesystem::path& dir, const std::string& base_url, std::ostream* log);

inline constexpr const char* kDefaultMnistMirror = "https://ossci-datasets.s3.amazonaws.com/mnist/";

}  // namespace kanforget::runner
