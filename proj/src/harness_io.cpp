#include <array>
#include <bit>
#include <fstream>
#include <sstream>

#include "ired/harness.hpp"

namespace ired {

namespace {

constexpr std::string_view kDatasetTag = "# ired-dataset 1 ";
constexpr std::array<char, 8> kMagic = {'I', 'R', 'E', 'D', 'C', 'K', 'P', 'T'};

json kind_json(const TaskKind& k) {
  return {{"family", to_string(k.family)}, {"n", k.n}, {"rank", k.rank}, {"order", k.order}, {"horizon", k.horizon}};
}

TaskKind kind_from_json(const json& j) {
  TaskKind k;
  k.family = task_family_from_string(j.at("family").get<std::string>());
  k.n = j.at("n").get<std::size_t>();
  k.rank = j.at("rank").get<std::size_t>();
  k.order = j.at("order").get<std::size_t>();
  k.horizon = j.at("horizon").get<std::size_t>();
  k.validate();
  return k;
}

json spec_json(const ModelSpec& s) {
  return {{"arch", to_string(s.arch)}, {"width", s.width}, {"depth", s.depth},          {"x_dim", s.x_dim},
          {"y_dim", s.y_dim},          {"levels", s.levels}, {"board_size", s.board_size}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.arch = architecture_from_string(j.at("arch").get<std::string>());
  s.width = j.at("width").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.x_dim = j.at("x_dim").get<std::size_t>();
  s.y_dim = j.at("y_dim").get<std::size_t>();
  s.levels = j.at("levels").get<int>();
  s.board_size = j.at("board_size").get<std::size_t>();
  s.validate();
  return s;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_doubles(std::ostream& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, fs::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    for (double& v : out) v = std::bit_cast<double>(u(8));
  }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw CommandError("checkpoint " + path_.string() + ": " + what, {{"path", path_.string()}});
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
  fs::path path_;
};

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw CommandError("cannot create " + path.parent_path().string() + ": " + ec.message(),
                               {{"path", path.parent_path().string()}});
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CommandError("cannot write " + path.string(), {{"path", path.string()}});
    out << text;
    if (!out) throw CommandError("write failed for " + path.string(), {{"path", path.string()}});
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError("cannot open " + path.string(), {{"path", path.string()}});
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- datasets ---------------------------------------------------------------------------

json instance_to_json(const ProblemInstance& inst) {
  json meta = json::object();
  const auto& m = inst.meta;
  if (!m.givens.empty()) meta["givens"] = m.givens;
  if (!m.adjacency.empty()) meta["adjacency"] = m.adjacency;
  if (!m.coords.empty()) meta["coords"] = m.coords;
  if (!m.distances.empty()) meta["distances"] = m.distances;
  if (m.start >= 0) meta["start"] = m.start;
  if (m.goal >= 0) meta["goal"] = m.goal;
  meta["parameter"] = m.parameter;
  return {{"kind", kind_json(inst.kind)},
          {"difficulty", to_string(inst.difficulty)},
          {"shapes", {{"x", {inst.x.size()}}, {"y_star", {inst.y_star.size()}}}},
          {"x", inst.x},
          {"y_star", inst.y_star},
          {"meta", meta}};
}

ProblemInstance instance_from_json(const json& j) {
  ProblemInstance inst;
  inst.kind = kind_from_json(j.at("kind"));
  inst.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  inst.x = j.at("x").get<std::vector<double>>();
  inst.y_star = j.at("y_star").get<std::vector<double>>();
  const auto& shapes = j.at("shapes");
  if (shapes.at("x").at(0).get<std::size_t>() != inst.x.size() ||
      shapes.at("y_star").at(0).get<std::size_t>() != inst.y_star.size()) {
    throw std::invalid_argument("declared shapes do not match the stored values");
  }
  if (inst.x.size() != inst.kind.x_dim() || inst.y_star.size() != inst.kind.y_dim()) {
    throw std::invalid_argument("value sizes do not match the task kind");
  }
  const auto& meta = j.at("meta");
  auto& m = inst.meta;
  if (meta.contains("givens")) m.givens = meta["givens"].get<std::vector<int>>();
  if (meta.contains("adjacency")) m.adjacency = meta["adjacency"].get<std::vector<int>>();
  if (meta.contains("coords")) m.coords = meta["coords"].get<std::vector<double>>();
  if (meta.contains("distances")) m.distances = meta["distances"].get<std::vector<int>>();
  m.start = meta.value("start", -1);
  m.goal = meta.value("goal", -1);
  m.parameter = meta.value("parameter", 0.0);
  return inst;
}

void write_dataset(const fs::path& path, std::span<const ProblemInstance> instances, const json& header) {
  std::string text(kDatasetTag);
  text += header.dump();
  text += '\n';
  for (const auto& inst : instances) {
    text += instance_to_json(inst).dump();
    text += '\n';
  }
  write_text(path, text);
}

std::vector<ProblemInstance> read_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CommandError("dataset not found: " + path.string(), {{"path", path.string()}});
  std::string line;
  if (!std::getline(in, line) || line.rfind(kDatasetTag, 0) != 0) {
    throw CommandError("dataset " + path.string() + ": missing '# ired-dataset 1' header", {{"path", path.string()}});
  }
  std::vector<ProblemInstance> out;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(instance_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw CommandError("dataset " + path.string() + ":" + std::to_string(number) + ": " + e.what(),
                         {{"path", path.string()}, {"line", number}});
    }
  }
  return out;
}

// ---- checkpoints ------------------------------------------------------------------------

std::string Checkpoint::rng_digest() const {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << derive_seed(seed, {iteration});
  return s.str();
}

void save_checkpoint(const fs::path& path, const NetworkEnergy& model, const NoiseSchedule& schedule,
                     std::uint64_t iteration, std::uint64_t seed, const std::string& config_hash,
                     const AdamState* adam) {
  json tensors = json::array();
  for (const auto& p : model.parameters()) tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  Checkpoint digest;
  digest.seed = seed;
  digest.iteration = iteration;
  json header = {{"format", "ired-checkpoint"},
                 {"version", Checkpoint::kVersion},
                 {"model_spec", spec_json(model.spec())},
                 {"alpha_bar", schedule.alpha_bars()},
                 {"iteration", iteration},
                 {"seed", seed},
                 {"config_hash", config_hash},
                 {"rng_digest", digest.rng_digest()},
                 {"tensors", tensors},
                 {"adam", adam ? json{{"step", adam->step}} : json(nullptr)}};
  const std::string text = header.dump();

  std::ostringstream out;
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, Checkpoint::kVersion);
  put_u64(out, text.size());
  out << text;
  for (const auto& p : model.parameters()) put_doubles(out, p.value.data());
  if (adam) {
    for (const auto& m : adam->first) put_doubles(out, m);
    for (const auto& v : adam->second) put_doubles(out, v);
  }
  write_text(path, out.str());
}

Checkpoint load_checkpoint(const fs::path& path) {
  ByteReader in(read_text(path), path);
  if (in.text(kMagic.size()) != std::string(kMagic.data(), kMagic.size())) in.fail("not a checkpoint (bad magic)");
  const auto version = static_cast<std::uint32_t>(in.u(4));
  if (version != Checkpoint::kVersion) in.fail("unsupported version " + std::to_string(version));
  const std::uint64_t header_size = in.u(8);
  json header;
  try {
    header = json::parse(in.text(header_size));
  } catch (const json::exception& e) {
    in.fail(std::string("bad header: ") + e.what());
  }

  Checkpoint c;
  try {
    c.spec = spec_from_json(header.at("model_spec"));
    c.alpha_bar = header.at("alpha_bar").get<std::vector<double>>();
    NoiseSchedule::from_alpha_bar(c.alpha_bar);
    c.iteration = header.at("iteration").get<std::uint64_t>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.config_hash = header.at("config_hash").get<std::string>();
  } catch (const std::exception& e) {
    in.fail(std::string("bad header: ") + e.what());
  }
  c.model = build(c.spec, 0, Init::kZero);
  auto& params = c.model->parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size()) in.fail("parameter count does not match the architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].at("name") != params[i].name || tensors[i].at("shape").get<Shape>() != params[i].value.shape()) {
      in.fail("parameter " + tensors[i].at("name").get<std::string>() + " does not match the architecture");
    }
    in.doubles(params[i].value.mutable_data());
  }
  if (!header.at("adam").is_null()) {
    AdamState adam = AdamState::for_model(*c.model);
    adam.step = header["adam"].at("step").get<std::uint64_t>();
    for (auto& m : adam.first) in.doubles(m);
    for (auto& v : adam.second) in.doubles(v);
    c.adam = std::move(adam);
  }
  if (!in.done()) in.fail("trailing bytes");
  return c;
}

}  // namespace ired
