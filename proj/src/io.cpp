#include "untwin/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

constexpr char kMagic[8] = {'U', 'N', 'T', 'W', 'H', 'I', 'S', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw StateError("history file truncated");
  return value;
}

void put_params(std::ofstream& out, const std::vector<double>& params) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
}

std::vector<double> get_params(std::ifstream& in) {
  const auto d = get<std::uint32_t>(in);
  std::vector<double> params(d);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(d * sizeof(double)));
  if (!in) throw StateError("history file truncated");
  return params;
}

}  // namespace

void save_history(const std::filesystem::path& path, const TwinHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, history.config_hash);
  put<std::uint64_t>(out, history.seed);
  const TwinModel& init = history.initial_model;
  put<std::uint32_t>(out, init.arch == Arch::kLinear ? 0 : 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(init.input_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(init.hidden_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(history.num_ndts));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(history.rounds()));
  put_params(out, init.params);
  for (const auto& rec : history.records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.round));
    put_params(out, rec.global_model.params);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.participating.size()));
    for (int id : rec.participating) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(id));
    }
    for (const auto& local : rec.local_models) put_params(out, local.params);
  }
  if (!out) throw StateError("failed writing " + path.string());
}

TwinHistory load_history(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw StateError("not a history file: " + path.string());
  }
  TwinHistory h;
  h.config_hash = get<std::uint64_t>(in);
  h.seed = get<std::uint64_t>(in);
  TwinModel proto;
  proto.arch = get<std::uint32_t>(in) == 0 ? Arch::kLinear : Arch::kMlp;
  proto.input_dim = static_cast<int>(get<std::uint32_t>(in));
  proto.hidden_width = static_cast<int>(get<std::uint32_t>(in));
  h.num_ndts = static_cast<int>(get<std::uint32_t>(in));
  const auto rounds = get<std::uint32_t>(in);
  h.initial_model = proto;
  h.initial_model.params = get_params(in);
  h.records.reserve(rounds);
  for (std::uint32_t t = 0; t < rounds; ++t) {
    RoundRecord rec;
    rec.round = static_cast<int>(get<std::uint32_t>(in));
    rec.global_model = proto;
    rec.global_model.params = get_params(in);
    const auto participants = get<std::uint32_t>(in);
    rec.participating.resize(participants);
    for (auto& id : rec.participating) {
      id = static_cast<int>(get<std::uint32_t>(in));
    }
    rec.local_models.reserve(participants);
    for (std::uint32_t p = 0; p < participants; ++p) {
      TwinModel local = proto;
      local.params = get_params(in);
      rec.local_models.push_back(std::move(local));
    }
    h.records.push_back(std::move(rec));
  }
  return h;
}

void save_model(const std::filesystem::path& path, const TwinModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write " + path.string());
  std::ostringstream tag;
  tag << to_string(model.arch) << ':' << model.input_dim;
  if (model.arch == Arch::kMlp) tag << ':' << model.hidden_width;
  out << "model " << tag.str() << ' ' << model.params.size() << ' '
      << model.params.size() * 8 << '\n';
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(model.params.size() * 8));
}

TwinModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream head(line);
  std::string word, tag;
  std::size_t d = 0, bytes = 0;
  head >> word >> tag >> d >> bytes;
  if (!head || word != "model" || bytes != d * 8) {
    throw StateError("bad model manifest in " + path.string());
  }
  TwinModel m;
  std::istringstream tags(tag);
  std::string name, field;
  std::getline(tags, name, ':');
  m.arch = arch_from_string(name);
  if (!std::getline(tags, field, ':')) throw StateError("bad arch tag");
  m.input_dim = std::stoi(field);
  if (m.arch == Arch::kMlp) {
    if (!std::getline(tags, field, ':')) throw StateError("bad arch tag");
    m.hidden_width = std::stoi(field);
  }
  m.params.resize(d);
  in.read(reinterpret_cast<char*>(m.params.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw StateError("model file truncated");
  return m;
}

}  // namespace untwin
