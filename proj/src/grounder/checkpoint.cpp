#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seqground/grounder/training.hpp"

namespace seqground::grounder {

// Layout: "SGCK" | u32 version | u64 header length | JSON header | raw little-endian doubles,
// tensors in the order the header lists them.
namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& at) {
  if (at + sizeof(T) > bytes.size()) throw GrounderError(GrounderErrc::BadCheckpoint, "truncated checkpoint");
  T value;
  std::memcpy(&value, bytes.data() + at, sizeof(T));
  at += sizeof(T);
  return value;
}

}  // namespace

std::string checkpoint_bytes(const GroundingModelState& state) {
  json tensors = json::array();
  state.params.for_each([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  const json header{{"format", "seqground-checkpoint"},
                    {"tool_version", std::string(tool_version())},
                    {"config", state.config.to_json()},
                    {"vocab", state.vocab.words()},
                    {"categories", state.categories.names()},
                    {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  state.params.for_each([&](const std::string&, const Matrix& m) {
    out.append(reinterpret_cast<const char*>(m.data().data()), m.size() * sizeof(double));
  });
  return out;
}

GroundingModelState checkpoint_from_bytes(std::string_view bytes) {
  auto bad = [](const std::string& what) { throw GrounderError(GrounderErrc::BadCheckpoint, what); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) bad("not a checkpoint file");
  std::size_t at = 4;
  const auto version = take<std::uint32_t>(bytes, at);
  if (version != kVersion) bad("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, at);
  if (at + header_len > bytes.size()) bad("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(at, header_len));
  } catch (const json::exception& e) {
    bad(std::string("unreadable header: ") + e.what());
  }
  at += header_len;

  GroundingModelState state;
  try {
    state.config = ModelConfig::from_json(header.at("config"));
    state.vocab = Vocabulary::from_words(header.at("vocab").get<std::vector<std::string>>());
    auto cats = header.at("categories").get<std::vector<std::string>>();
    if (!cats.empty()) cats.erase(cats.begin());  // reserved unknown slot is re-added
    state.categories = CategoryTable::from_names(cats);
  } catch (const json::exception& e) {
    bad(std::string("bad header: ") + e.what());
  }
  // Shapes come from a fresh init so a mismatched header is caught below.
  try {
    state.params = GroundingModelState::create(state.config, state.vocab, state.categories).params;
  } catch (const GrounderError& e) {
    bad(std::string("config in checkpoint is invalid: ") + e.what());
  }
  const auto& listed = header.at("tensors");
  std::size_t k = 0;
  state.params.for_each([&](const std::string& name, Matrix& m) {
    if (k >= listed.size()) bad("checkpoint lists too few tensors");
    const auto& entry = listed[k++];
    if (entry.value("name", "") != name || entry.value("rows", 0u) != m.rows() || entry.value("cols", 0u) != m.cols()) {
      bad("tensor " + name + " missing or misshapen");
    }
    const std::size_t n = m.size() * sizeof(double);
    if (at + n > bytes.size()) bad("truncated tensor data for " + name);
    std::memcpy(m.data().data(), bytes.data() + at, n);
    at += n;
    if (!m.all_finite()) bad("non-finite values in " + name);
  });
  if (k != listed.size()) bad("checkpoint lists unexpected tensors");
  if (at != bytes.size()) bad("trailing bytes after tensor data");
  return state;
}

void save_checkpoint(const GroundingModelState& state, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_bytes(state));
}

GroundingModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GrounderError(GrounderErrc::BadCheckpoint, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

}  // namespace seqground::grounder
