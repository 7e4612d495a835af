#include "rpd/model_io.hpp"

#include <cstring>
#include <fstream>

#include "rpd/common.hpp"

namespace rpd {

namespace {

constexpr char kMagic[8] = {'R', 'P', 'D', 'M', 'O', 'D', 'E', 'L'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(in.gcount() == sizeof(T), path + ": truncated model file");
  return v;
}

}  // namespace

void save_model_file(const std::string& path, const ModelFile& mf) {
  require(mf.kind == "embedding" || mf.kind == "detector", "model file: bad kind " + mf.kind);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), path + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kModelFormatVersion);
  write_pod<uint32_t>(out, uint32_t(mf.kind.size()));
  out.write(mf.kind.data(), std::streamsize(mf.kind.size()));
  const std::string header = mf.header.dump();
  write_pod<uint64_t>(out, header.size());
  out.write(header.data(), std::streamsize(header.size()));
  write_pod<uint64_t>(out, mf.params.size());
  out.write(reinterpret_cast<const char*>(mf.params.data()),
            std::streamsize(mf.params.size() * sizeof(double)));
  require(out.good(), path + ": write failed");
}

ModelFile load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), path + ": cannot open model file");
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.gcount() == sizeof(magic) && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          path + ": not a model file");
  const auto version = read_pod<uint32_t>(in, path);
  require(version == kModelFormatVersion,
          path + ": model format version " + std::to_string(version) + " unsupported (want " +
              std::to_string(kModelFormatVersion) + ")");
  const auto kind_len = read_pod<uint32_t>(in, path);
  require(kind_len <= 64, path + ": implausible kind length");
  ModelFile mf;
  mf.kind.resize(kind_len);
  in.read(mf.kind.data(), kind_len);
  require(size_t(in.gcount()) == kind_len, path + ": truncated model file");
  const auto header_len = read_pod<uint64_t>(in, path);
  require(header_len <= (1ull << 24), path + ": implausible header length");
  std::string header(header_len, '\0');
  in.read(header.data(), std::streamsize(header_len));
  require(size_t(in.gcount()) == header_len, path + ": truncated model file");
  try {
    mf.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& ex) {
    fail(path + ": bad model header: " + ex.what());
  }
  const auto n_params = read_pod<uint64_t>(in, path);
  require(n_params <= (1ull << 28), path + ": implausible parameter count");
  mf.params.resize(n_params);
  in.read(reinterpret_cast<char*>(mf.params.data()), std::streamsize(n_params * sizeof(double)));
  require(size_t(in.gcount()) == n_params * sizeof(double), path + ": truncated model file");
  return mf;
}

}  // namespace rpd
