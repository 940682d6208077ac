#include "pathlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace pathlab {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr const char* kMagic = "pathlab-checkpoint 1";

template <class T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

std::string expect_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path.string() + ": manifest ends early");
  return line;
}

template <class Stored, class T>
void copy_payload(const std::vector<char>& bytes, GptParams<T>& params) {
  std::size_t off = 0;
  params.for_each([&](const std::string&, Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      Stored v;
      std::memcpy(&v, bytes.data() + off, sizeof(Stored));
      off += sizeof(Stored);
      m.data()[i] = static_cast<T>(v);
    }
  });
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void save_checkpoint(const GptParams<T>& params, const std::filesystem::path& path, const CheckpointMeta& meta) {
  const GptConfig& c = params.config;
  std::vector<char> payload;
  payload.reserve(params.parameter_count() * sizeof(T));
  std::ostringstream head;
  head << kMagic << '\n'
       << "dtype " << dtype_name<T>() << '\n'
       << "config layers " << c.layers << " heads " << c.heads << " d_model " << c.d_model << " vocab "
       << c.vocab << " max_len " << c.max_len << " identity_norm " << c.identity_norm << " construction "
       << c.construction << '\n'
       << "meta seed " << meta.seed << " step " << meta.step << '\n';
  std::size_t offset = 0;
  params.for_each([&](const std::string& name, const Matrix<T>& m) {
    head << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
    offset += static_cast<std::size_t>(m.size());
    auto* p = reinterpret_cast<const char*>(m.data());
    payload.insert(payload.end(), p, p + m.size() * static_cast<Eigen::Index>(sizeof(T)));
  });
  head << "checksum " << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(payload.data(), payload.size())
       << std::dec << '\n'
       << "end\n";

  // write to a sibling temp file, then rename, so readers never see a partial checkpoint
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  if (expect_line(in, path) != kMagic) throw CheckpointError(path.string() + ": not a pathlab checkpoint");

  std::string word, dtype;
  std::istringstream dl(expect_line(in, path));
  if (!(dl >> word >> dtype) || word != "dtype" || (dtype != "f32" && dtype != "f64"))
    throw CheckpointError(path.string() + ": bad dtype line");

  GptConfig c;
  {
    std::istringstream cl(expect_line(in, path));
    std::string k[8];
    int idn = 0, con = 0;
    cl >> k[0] >> k[1] >> c.layers >> k[2] >> c.heads >> k[3] >> c.d_model >> k[4] >> c.vocab >> k[5] >> c.max_len >>
        k[6] >> idn >> k[7] >> con;
    if (!cl || k[0] != "config" || k[1] != "layers" || k[7] != "construction")
      throw CheckpointError(path.string() + ": bad config line");
    c.identity_norm = idn != 0;
    c.construction = con != 0;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
  }
  Checkpoint<T> ck;
  {
    std::istringstream ml(expect_line(in, path));
    std::string a, b, d;
    ml >> a >> b >> ck.meta.seed >> d >> ck.meta.step;
    if (!ml || a != "meta" || b != "seed" || d != "step") throw CheckpointError(path.string() + ": bad meta line");
  }

  ck.params = GptParams<T>::zeros(c);
  std::vector<std::string> expected;
  std::size_t total = 0;
  ck.params.for_each([&](const std::string& name, const Matrix<T>& m) {
    std::ostringstream os;
    os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << total;
    expected.push_back(os.str());
    total += static_cast<std::size_t>(m.size());
  });
  for (const auto& want : expected) {
    const std::string got = expect_line(in, path);
    if (got != want)
      throw CheckpointError(path.string() + ": tensor manifest mismatch, expected '" + want + "', found '" + got + "'");
  }
  std::uint64_t checksum = 0;
  {
    std::istringstream cl(expect_line(in, path));
    cl >> word >> std::hex >> checksum;
    if (!cl || word != "checksum") throw CheckpointError(path.string() + ": bad checksum line");
  }
  if (expect_line(in, path) != "end") throw CheckpointError(path.string() + ": missing end marker");

  const std::size_t width = dtype == "f32" ? 4 : 8;
  // widening f32 -> f64 is exact; narrowing would silently lose bits
  if (width > sizeof(T)) throw CheckpointError(path.string() + ": stored f64 checkpoint cannot be loaded at f32");
  std::vector<char> bytes(total * width);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw CheckpointError(path.string() + ": truncated payload (" + std::to_string(in.gcount()) + " of " +
                          std::to_string(bytes.size()) + " bytes)");
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes after payload");
  if (fnv1a64(bytes.data(), bytes.size()) != checksum) throw CheckpointError(path.string() + ": payload checksum mismatch");

  if (width == 4)
    copy_payload<float>(bytes, ck.params);
  else
    copy_payload<double>(bytes, ck.params);
  return ck;
}

template void save_checkpoint<float>(const GptParams<float>&, const std::filesystem::path&, const CheckpointMeta&);
template void save_checkpoint<double>(const GptParams<double>&, const std::filesystem::path&, const CheckpointMeta&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace pathlab
