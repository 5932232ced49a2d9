#include "qotr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qotr/errors.hpp"

namespace qotr {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename U>
  U get(const char* what) {
    U v{};
    bytes(reinterpret_cast<char*>(&v), sizeof(U), what);
    return v;
  }

  void bytes(char* dst, std::size_t n, const std::string& what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointError("truncated checkpoint while reading " + what);
    }
  }

 private:
  std::istream& in_;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + t.name.substr(0, 64));
    if (t.value.rank() > 0xff) throw CheckpointError("tensor rank too large: " + t.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put<std::uint64_t>(out, d);
    put<std::uint8_t>(out, 0);
    out.write(reinterpret_cast<const char*>(t.value.ptr()),
              static_cast<std::streamsize>(t.value.numel() * sizeof(float)));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
  out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
}

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(ckpt, out);
  return out.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(ckpt, out);
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("bad magic: not a QOTR checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>((where + " name length").c_str());
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, where + " name");
    const auto rank = r.get<std::uint8_t>((name + " rank").c_str());
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>((name + " dims").c_str()));
      if (d != 0 && numel > (std::size_t{1} << 40) / d) throw CheckpointError("implausible dims for " + name);
      numel *= d;
    }
    const auto dtype = r.get<std::uint8_t>((name + " dtype").c_str());
    if (dtype != 0) throw CheckpointError("unsupported dtype " + std::to_string(dtype) + " for " + name);
    std::vector<float> data(numel);
    r.bytes(reinterpret_cast<char*>(data.data()), numel * sizeof(float), name + " data");
    ckpt.tensors.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  const auto cfg_len = r.get<std::uint32_t>("config length");
  ckpt.config_text.assign(cfg_len, '\0');
  r.bytes(ckpt.config_text.data(), cfg_len, "config text");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace qotr
