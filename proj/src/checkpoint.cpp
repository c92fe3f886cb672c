#include "mua/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mua/errors.hpp"

namespace fs = std::filesystem;

namespace mua {

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, nn::Value>>& params,
                     const std::map<std::string, std::string>& meta) {
  fs::create_directories(dir);
  std::ofstream mf(fs::path(dir) / "meta.txt");
  if (!mf) throw ArtifactError("save_checkpoint: cannot write meta in " + dir);
  for (const auto& [k, v] : meta) mf << k << " = " << v << "\n";
  for (const auto& [name, value] : params) {
    mf << "tensor " << name << " " << value->val.rank();
    for (int d : value->val.shape()) mf << " " << d;
    mf << "\n";
    std::ofstream bf(fs::path(dir) / (name + ".bin"), std::ios::binary);
    if (!bf) throw ArtifactError("save_checkpoint: cannot write blob " + name + " in " + dir);
    bf.write(reinterpret_cast<const char*>(value->val.data()),
             static_cast<std::streamsize>(value->val.numel() * sizeof(double)));
  }
}

std::map<std::string, std::string> read_checkpoint_meta(const std::string& dir) {
  fs::path metapath = fs::path(dir) / "meta.txt";
  std::ifstream mf(metapath);
  if (!mf) throw ArtifactError("missing checkpoint: " + metapath.string());
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    if (line.rfind("tensor ", 0) == 0) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CorruptDataError("corrupt checkpoint meta line in " + dir + ": " + line);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return meta;
}

void load_checkpoint_params(const std::string& dir,
                            const std::vector<std::pair<std::string, nn::Value>>& params) {
  fs::path metapath = fs::path(dir) / "meta.txt";
  std::ifstream mf(metapath);
  if (!mf) throw ArtifactError("missing checkpoint: " + metapath.string());
  std::map<std::string, std::vector<int>> declared;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.rfind("tensor ", 0) != 0) continue;
    std::istringstream ss(line);
    std::string tag, name;
    int rank = 0;
    ss >> tag >> name >> rank;
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) ss >> shape[static_cast<std::size_t>(i)];
    if (!ss) throw CorruptDataError("corrupt tensor line in " + metapath.string());
    declared[name] = shape;
  }

  for (const auto& [name, value] : params) {
    auto it = declared.find(name);
    if (it == declared.end())
      throw CorruptDataError("checkpoint " + dir + " lacks tensor '" + name + "'");
    if (it->second != value->val.shape())
      throw CorruptDataError("checkpoint tensor '" + name + "' shape mismatch in " + dir);
    fs::path blob = fs::path(dir) / (name + ".bin");
    std::ifstream bf(blob, std::ios::binary);
    if (!bf) throw ArtifactError("missing checkpoint blob: " + blob.string());
    bf.read(reinterpret_cast<char*>(value->val.data()),
            static_cast<std::streamsize>(value->val.numel() * sizeof(double)));
    if (bf.gcount() != static_cast<std::streamsize>(value->val.numel() * sizeof(double)))
      throw CorruptDataError("checkpoint blob truncated: " + blob.string());
  }
}

}  // namespace mua
