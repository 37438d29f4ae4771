#include "untwin/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

std::size_t checkpoint_bytes(const TwinModel& m, const ConnectivityMatrix& c) {
  return m.params.size() * 8 + static_cast<std::size_t>(c.n) * c.n * 8;
}

void write_raw(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* data, std::size_t bytes) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!in) throw StateError("checkpoint file truncated");
}

std::string arch_tag(const TwinModel& m) {
  std::ostringstream tag;
  tag << to_string(m.arch) << ':' << m.input_dim;
  if (m.arch == Arch::kMlp) tag << ':' << m.hidden_width;
  return tag.str();
}

void parse_arch_tag(const std::string& tag, TwinModel& m) {
  std::istringstream in(tag);
  std::string name;
  std::getline(in, name, ':');
  m.arch = arch_from_string(name);
  std::string field;
  if (!std::getline(in, field, ':')) throw StateError("bad arch tag: " + tag);
  m.input_dim = std::stoi(field);
  if (m.arch == Arch::kMlp) {
    if (!std::getline(in, field, ':')) throw StateError("bad arch tag: " + tag);
    m.hidden_width = std::stoi(field);
  } else {
    m.hidden_width = 0;
  }
}

}  // namespace

std::string to_string(StoreMode m) {
  switch (m) {
    case StoreMode::kNaive: return "naive";
    case StoreMode::kFixed: return "fixed";
    case StoreMode::kAtac: return "atac";
  }
  return "atac";
}

StoreMode store_mode_from_string(const std::string& s) {
  if (s == "naive") return StoreMode::kNaive;
  if (s == "fixed") return StoreMode::kFixed;
  if (s == "atac") return StoreMode::kAtac;
  throw InvalidInput("unknown store mode: " + s);
}

std::vector<int> coarsen_pass(const std::map<int, bool>& rounds_with_anchor,
                              int last_round, int recent_window,
                              int width_multiplier) {
  const int edge = last_round - recent_window;
  // group key -> (has protected, best unprotected round)
  struct Slot {
    bool has_protected = false;
    std::vector<int> unprotected;
  };
  std::map<std::pair<int, long long>, Slot> slots;
  for (const auto& [round, anchor] : rounds_with_anchor) {
    if (round > edge) continue;  // recent window stays dense
    const long long age = static_cast<long long>(edge) - round;
    int band = 0;
    while (age >= ((2LL << band) - 1) * recent_window) ++band;
    const long long width =
        std::max<long long>(1, (1LL << band) * width_multiplier);
    const auto key = std::make_pair(band, round / width);
    Slot& slot = slots[key];
    if (anchor || round == 0) {
      slot.has_protected = true;
    } else {
      slot.unprotected.push_back(round);
    }
  }
  std::vector<int> evict;
  for (auto& [key, slot] : slots) {
    if (slot.unprotected.empty()) continue;
    std::sort(slot.unprotected.begin(), slot.unprotected.end());
    // Keep the newest unprotected round unless a protected one owns the slot.
    const std::size_t keep_from =
        slot.has_protected ? slot.unprotected.size() : slot.unprotected.size() - 1;
    for (std::size_t i = 0; i < keep_from; ++i) evict.push_back(slot.unprotected[i]);
  }
  std::sort(evict.begin(), evict.end());
  return evict;
}

CheckpointStore::CheckpointStore(StorePolicy policy) : policy_(policy) {
  if (policy_.p_min < 1.0 || policy_.p_min > policy_.p_max) {
    throw InvalidInput("store policy: need 1 <= p_min <= p_max");
  }
  if (policy_.budget < 2) throw InvalidInput("store policy: budget must be >= 2");
  if (policy_.tau_drift <= 0.0 || policy_.kappa <= 0.0) {
    throw InvalidInput("store policy: tau_drift and kappa must be positive");
  }
  if (policy_.mode == StoreMode::kFixed && policy_.fixed_interval < 1) {
    throw InvalidInput("store policy: fixed interval must be >= 1");
  }
  p_t_ = policy_.p_min;
}

void CheckpointStore::init(const TwinModel& w0, const ConnectivityMatrix& c0,
                           const ClusterAssignment& a0) {
  if (initialized_) throw StateError("checkpoint store already initialized");
  Checkpoint ckpt;
  ckpt.round = 0;
  ckpt.model = w0;
  ckpt.connectivity = c0;
  ckpt.clusters = a0;
  ckpt.anchor = false;
  ckpt.bytes = checkpoint_bytes(w0, c0);
  checkpoints_.emplace(0, std::move(ckpt));
  last_model_ = w0;
  last_connectivity_ = c0;
  last_round_ = 0;
  initialized_ = true;
}

double CheckpointStore::utility(double dw, double dc) const {
  if (dw < 0.0 || dc < 0.0) throw InvalidInput("utility: negative drift");
  return policy_.lambda_w * dw + policy_.lambda_c * dc;
}

double CheckpointStore::update_interval(double p_t, double u,
                                        const StorePolicy& policy) {
  const double next = p_t * std::exp(policy.kappa * (policy.tau_drift - u));
  return std::clamp(next, policy.p_min, policy.p_max);
}

bool CheckpointStore::observe(int t, const TwinModel& model,
                              const ConnectivityMatrix& conn,
                              const ClusterAssignment& clusters,
                              bool reclustered) {
  if (!initialized_) throw StateError("checkpoint store not initialized");
  if (!writable_) throw StateError("checkpoint store loaded read-only");
  if (t <= last_round_) throw InvalidInput("observe: out-of-order round");

  const double dw = l2_distance(model.params, last_model_->params);
  const double dc = topology_drift(conn, *last_connectivity_);
  const double u = utility(dw, dc);
  rounds_since_save_ += t - last_round_;

  bool save = false;
  switch (policy_.mode) {
    case StoreMode::kNaive:
      save = true;
      break;
    case StoreMode::kFixed:
      save = rounds_since_save_ >= policy_.fixed_interval;
      break;
    case StoreMode::kAtac:
      save = u >= policy_.tau_drift || reclustered ||
             rounds_since_save_ >= static_cast<int>(std::ceil(p_t_));
      break;
  }

  if (save) {
    Checkpoint ckpt;
    ckpt.round = t;
    ckpt.model = model;
    ckpt.connectivity = conn;
    ckpt.clusters = clusters;
    ckpt.anchor = reclustered;
    ckpt.bytes = checkpoint_bytes(model, conn);
    insert(std::move(ckpt));
    rounds_since_save_ = 0;
  }
  if (policy_.mode == StoreMode::kAtac) {
    p_t_ = update_interval(p_t_, u, policy_);
  }
  last_model_ = model;
  last_connectivity_ = conn;
  last_round_ = t;
  if (count() > policy_.budget) coarsen();
  return save;
}

void CheckpointStore::insert(Checkpoint ckpt) {
  checkpoints_.insert_or_assign(ckpt.round, std::move(ckpt));
}

void CheckpointStore::coarsen() {
  for (int mult = 1; count() > policy_.budget && mult > 0; mult *= 2) {
    std::map<int, bool> rounds;
    for (const auto& [round, ckpt] : checkpoints_) rounds.emplace(round, ckpt.anchor);
    const auto evict = coarsen_pass(rounds, last_round_, policy_.recent_window, mult);
    for (int r : evict) checkpoints_.erase(r);
    if (evict.empty() &&
        static_cast<long long>(mult) * 2 > static_cast<long long>(last_round_) + 1) {
      break;  // only protected or recent checkpoints remain
    }
  }
  over_budget_ = count() > policy_.budget;
}

const Checkpoint& CheckpointStore::retrieve_proximal(int target_round) const {
  if (!initialized_) throw StateError("checkpoint store not initialized");
  if (target_round < 0) throw InvalidInput("retrieve_proximal: negative round");
  auto it = checkpoints_.upper_bound(target_round);
  // Round 0 is always present, so there is a predecessor.
  --it;
  return it->second;
}

StorageReport CheckpointStore::storage_report() const {
  StorageReport r;
  r.count = count();
  for (const auto& [round, ckpt] : checkpoints_) r.bytes += ckpt.bytes;
  const int total = std::max(1, last_round_);
  r.reduction_vs_naive = 1.0 - static_cast<double>(r.count) / total;
  r.over_budget = over_budget_;
  return r;
}

std::vector<int> CheckpointStore::stored_rounds() const {
  std::vector<int> out;
  out.reserve(checkpoints_.size());
  for (const auto& [round, ckpt] : checkpoints_) out.push_back(round);
  return out;
}

const Checkpoint& CheckpointStore::at(int round) const {
  auto it = checkpoints_.find(round);
  if (it == checkpoints_.end()) throw InvalidInput("no checkpoint at that round");
  return it->second;
}

int CheckpointStore::count() const {
  return static_cast<int>(checkpoints_.size()) - (checkpoints_.count(0) ? 1 : 0);
}

void CheckpointStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["schema"] = 1;
  index["p_t"] = p_t_;
  index["last_round"] = last_round_;
  index["rounds_since_save"] = rounds_since_save_;
  index["over_budget"] = over_budget_;
  index["policy"] = {{"mode", to_string(policy_.mode)},
                     {"fixed_interval", policy_.fixed_interval},
                     {"lambda_w", policy_.lambda_w},
                     {"lambda_c", policy_.lambda_c},
                     {"tau_drift", policy_.tau_drift},
                     {"kappa", policy_.kappa},
                     {"p_min", policy_.p_min},
                     {"p_max", policy_.p_max},
                     {"budget", policy_.budget},
                     {"recent_window", policy_.recent_window}};
  auto rounds = nlohmann::json::array();
  auto anchors = nlohmann::json::array();
  auto bytes = nlohmann::json::array();
  for (const auto& [round, ckpt] : checkpoints_) {
    rounds.push_back(round);
    if (ckpt.anchor) anchors.push_back(round);
    bytes.push_back(ckpt.bytes);

    std::ofstream out(dir / ("ckpt_" + std::to_string(round) + ".bin"),
                      std::ios::binary);
    if (!out) throw StateError("cannot write checkpoint file");
    const std::size_t param_bytes = ckpt.model.params.size() * 8;
    out << round << ' ' << ckpt.model.params.size() << ' ' << arch_tag(ckpt.model)
        << ' ' << param_bytes << '\n';
    write_raw(out, ckpt.model.params.data(), param_bytes);
    out << "topo " << ckpt.connectivity.n << ' ' << (ckpt.anchor ? 1 : 0) << ' '
        << ckpt.clusters.num_clusters << '\n';
    write_raw(out, ckpt.connectivity.values.data(),
              ckpt.connectivity.values.size() * 8);
    std::vector<std::int32_t> members(ckpt.clusters.member_of.begin(),
                                      ckpt.clusters.member_of.end());
    write_raw(out, members.data(), members.size() * 4);
  }
  index["rounds"] = rounds;
  index["anchors"] = anchors;
  index["bytes"] = bytes;
  std::ofstream out(dir / "store_index.json");
  if (!out) throw StateError("cannot write store index");
  out << index.dump(2) << '\n';
}

CheckpointStore CheckpointStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "store_index.json");
  if (!in) throw StateError("missing store index: " + dir.string());
  nlohmann::json index = nlohmann::json::parse(in);

  StorePolicy policy;
  const auto& p = index.at("policy");
  policy.mode = store_mode_from_string(p.at("mode").get<std::string>());
  policy.fixed_interval = p.at("fixed_interval").get<int>();
  policy.lambda_w = p.at("lambda_w").get<double>();
  policy.lambda_c = p.at("lambda_c").get<double>();
  policy.tau_drift = p.at("tau_drift").get<double>();
  policy.kappa = p.at("kappa").get<double>();
  policy.p_min = p.at("p_min").get<double>();
  policy.p_max = p.at("p_max").get<double>();
  policy.budget = p.at("budget").get<int>();
  policy.recent_window = p.at("recent_window").get<int>();

  CheckpointStore store(policy);
  store.p_t_ = index.at("p_t").get<double>();
  store.last_round_ = index.at("last_round").get<int>();
  store.rounds_since_save_ = index.at("rounds_since_save").get<int>();
  store.over_budget_ = index.at("over_budget").get<bool>();
  store.initialized_ = true;
  store.writable_ = false;

  for (const auto& round_json : index.at("rounds")) {
    const int round = round_json.get<int>();
    std::ifstream ck(dir / ("ckpt_" + std::to_string(round) + ".bin"),
                     std::ios::binary);
    if (!ck) throw StateError("missing checkpoint file for round " +
                              std::to_string(round));
    Checkpoint ckpt;
    {
      std::string line;
      std::getline(ck, line);
      std::istringstream head(line);
      int file_round = -1;
      std::size_t d = 0, param_bytes = 0;
      std::string tag;
      head >> file_round >> d >> tag >> param_bytes;
      if (!head || file_round != round || param_bytes != d * 8) {
        throw StateError("bad checkpoint manifest for round " +
                         std::to_string(round));
      }
      ckpt.round = round;
      parse_arch_tag(tag, ckpt.model);
      ckpt.model.params.resize(d);
    }
    std::ifstream& raw = ck;
    read_raw(raw, ckpt.model.params.data(), ckpt.model.params.size() * 8);
    {
      std::string line;
      std::getline(raw, line);
      std::istringstream head(line);
      std::string word;
      int n = 0, anchor = 0, clusters = 0;
      head >> word >> n >> anchor >> clusters;
      if (!head || word != "topo") {
        throw StateError("bad topology section for round " + std::to_string(round));
      }
      ckpt.anchor = anchor != 0;
      ckpt.connectivity.n = n;
      ckpt.connectivity.round_tag = round;
      ckpt.connectivity.values.resize(static_cast<std::size_t>(n) * n);
      read_raw(raw, ckpt.connectivity.values.data(),
               ckpt.connectivity.values.size() * 8);
      std::vector<std::int32_t> members(n);
      read_raw(raw, members.data(), members.size() * 4);
      ckpt.clusters.num_clusters = clusters;
      ckpt.clusters.member_of.assign(members.begin(), members.end());
      ckpt.clusters.round_tag = round;
    }
    ckpt.bytes = checkpoint_bytes(ckpt.model, ckpt.connectivity);
    store.checkpoints_.emplace(round, std::move(ckpt));
  }
  if (!store.checkpoints_.count(0)) {
    throw StateError("store index lacks the pinned round-0 checkpoint");
  }
  return store;
}

}  // namespace untwin
