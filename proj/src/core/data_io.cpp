// SPDX-License-Identifier: Apache-2.0
#include "data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "error.hpp"

namespace zsmil {
namespace {

static_assert(std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::string& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

EmbeddingHeader parse_header(const unsigned char* h) {
  if (std::memcmp(h, kEmbeddingMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "expected \"ZSML\"");
  }
  const auto version = get_le<std::uint16_t>(h + 4);
  if (version != kEmbeddingVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(version));
  }
  const auto dtype = h[6];
  if (dtype != kDtypeFloat32) {
    throw Error(ErrorCode::UnsupportedVersion, "dtype code " + std::to_string(dtype));
  }
  EmbeddingHeader hdr;
  hdr.rows = get_le<std::uint64_t>(h + 7);
  hdr.cols = get_le<std::uint64_t>(h + 15);
  if (hdr.cols != 0 && hdr.rows > std::numeric_limits<std::uint64_t>::max() / 4 / hdr.cols) {
    throw Error(ErrorCode::TruncatedPayload, "payload size overflows");
  }
  return hdr;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void write_embeddings(std::ostream& out, const Matrix& m) {
  std::string buf;
  buf.reserve(kEmbeddingHeaderBytes + m.size() * 4);
  buf.append(kEmbeddingMagic, 4);
  put_le<std::uint16_t>(buf, kEmbeddingVersion);
  put_le<std::uint8_t>(buf, kDtypeFloat32);
  put_le<std::uint64_t>(buf, m.rows());
  put_le<std::uint64_t>(buf, m.cols());
  for (double v : m.data()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteValue, "cannot store " + std::to_string(v));
    put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed");
}

void write_embeddings(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  write_embeddings(out, m);
}

Matrix read_embeddings(std::istream& in) {
  unsigned char h[kEmbeddingHeaderBytes];
  in.read(reinterpret_cast<char*>(h), sizeof h);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(h, kEmbeddingMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "expected \"ZSML\"");
  }
  if (got < sizeof h) throw Error(ErrorCode::TruncatedPayload, "header is " + std::to_string(got) + " bytes");
  const EmbeddingHeader hdr = parse_header(h);

  const std::size_t count = hdr.rows * hdr.cols;
  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw Error(ErrorCode::TruncatedPayload, "expected " + std::to_string(payload.size()) +
                                                 " payload bytes, got " + std::to_string(in.gcount()));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i));
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::NonFiniteValue, "element " + std::to_string(i));
    }
    values[i] = f;
  }
  return Matrix(hdr.rows, hdr.cols, std::move(values));
}

Matrix read_embeddings(const std::filesystem::path& path) {
  auto in = open_in(path);
  Matrix m = read_embeddings(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::ParseError, path.string() + ": trailing bytes after payload");
  }
  return m;
}

EmbeddingHeader read_embedding_header(const std::filesystem::path& path) {
  auto in = open_in(path);
  unsigned char h[kEmbeddingHeaderBytes];
  in.read(reinterpret_cast<char*>(h), sizeof h);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(h, kEmbeddingMagic, 4) != 0) throw Error(ErrorCode::BadMagic, path.string());
  if (got < sizeof h) throw Error(ErrorCode::TruncatedPayload, path.string());
  const EmbeddingHeader hdr = parse_header(h);
  const auto size = std::filesystem::file_size(path);
  if (size < kEmbeddingHeaderBytes + hdr.rows * hdr.cols * 4) {
    throw Error(ErrorCode::TruncatedPayload, path.string());
  }
  return hdr;
}

const char* split_name(Split s) noexcept {
  switch (s) {
    case Split::TrainPool: return "train_pool";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) noexcept {
  if (name == "train_pool") return Split::TrainPool;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::vector<ManifestEntry> Manifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [s](const ManifestEntry& e) { return e.split == s; });
  return out;
}

const ManifestEntry* Manifest::find(std::string_view slide_id) const {
  for (const auto& e : entries) {
    if (e.slide_id == slide_id) return &e;
  }
  return nullptr;
}

Manifest load_manifest(const std::filesystem::path& path, std::optional<std::size_t> n_classes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());

  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);

    ManifestEntry e;
    try {
      const auto j = nlohmann::json::parse(text);
      e.slide_id = j.at("slide_id").get<std::string>();
      const auto label = j.at("label").get<std::int64_t>();
      if (label < 0 || (n_classes && static_cast<std::size_t>(label) >= *n_classes)) {
        throw Error(ErrorCode::LabelOutOfRange, where + ": label " + std::to_string(label));
      }
      e.label = static_cast<std::size_t>(label);
      const auto split = parse_split(j.at("split").get<std::string>());
      if (!split) throw Error(ErrorCode::ParseError, where + ": unknown split");
      e.split = *split;
      e.path = j.at("path").get<std::string>();
      const auto n = j.at("n_patches").get<std::int64_t>();
      if (n < 0) throw Error(ErrorCode::ParseError, where + ": negative n_patches");
      e.n_patches = static_cast<std::size_t>(n);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::ParseError, where + ": " + ex.what());
    }
    if (!seen.insert(e.slide_id).second) {
      throw Error(ErrorCode::ParseError, where + ": duplicate slide_id " + e.slide_id);
    }
    const auto file = manifest.base_dir / e.path;
    if (!std::filesystem::is_regular_file(file)) {
      throw Error(ErrorCode::MissingFile, where + ": " + file.string());
    }
    const auto hdr = read_embedding_header(file);
    if (hdr.rows != e.n_patches) {
      throw Error(ErrorCode::ShapeMismatch, where + ": file has " + std::to_string(hdr.rows) +
                                                " rows, manifest says " + std::to_string(e.n_patches));
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["slide_id"] = e.slide_id;
    j["label"] = e.label;
    j["split"] = split_name(e.split);
    j["path"] = e.path;
    j["n_patches"] = e.n_patches;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<Bag> load_bags(const Manifest& manifest, Split split) {
  std::vector<Bag> bags;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    bags.push_back({e, read_embeddings(manifest.resolve(e))});
  }
  return bags;
}

}  // namespace zsmil
