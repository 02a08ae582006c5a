#include "kanforget/runner/fetch.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "kanforget/errors.hpp"

namespace kanforget::runner {

namespace fs = std::filesystem;

const std::vector<RemoteFile>& mnist_files() {
  static const std::vector<RemoteFile> files{
      {"train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"},
      {"train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"},
      {"t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"},
      {"t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"},
  };
  return files;
}

std::string md5_hex_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr) != 1) throw IoError("md5 init failed");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

namespace {

std::size_t write_cb(char* data, std::size_t size, std::size_t n, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * n));
  return *out ? size * n : 0;
}

void download(const std::string& url, const fs::path& target) {
  std::ofstream out(target, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + target.string());
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw IoError("curl init failed");
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_cb);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &out);
  const CURLcode rc = curl_easy_perform(curl.get());
  out.close();
  if (rc != CURLE_OK) {
    std::error_code ec;
    fs::remove(target, ec);
    throw IoError("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
}

}  // namespace

void fetch_mnist(const fs::path& dir, const std::string& base_url, std::ostream* log) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  curl_global_init(CURL_GLOBAL_DEFAULT);
  for (const auto& f : mnist_files()) {
    const fs::path target = dir / f.name;
    if (fs::exists(target, ec) && md5_hex_file(target) == f.md5) {
      if (log) *log << f.name << ": present, checksum ok\n";
      continue;
    }
    const fs::path part = dir / (f.name + ".part");
    if (log) *log << f.name << ": downloading\n";
    download(base_url + f.name, part);
    const std::string got = md5_hex_file(part);
    if (got != f.md5) {
      fs::remove(part, ec);
      throw IoError(f.name + ": md5 " + got + " does not match " + f.md5);
    }
    fs::rename(part, target, ec);
    if (ec) throw IoError("cannot move " + part.string() + ": " + ec.message());
    if (log) *log << f.name << ": ok\n";
  }
}

}  // namespace kanforget::runner
