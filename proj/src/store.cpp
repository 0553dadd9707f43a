// Copyright 2026 The AnnoLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "annolab/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "annolab/error.hpp"

namespace annolab {

namespace fs = std::filesystem;

std::string_view to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::kModel: return "model";
    case EntityKind::kJob: return "job";
    case EntityKind::kDataset: return "dataset";
    case EntityKind::kUser: return "user";
    case EntityKind::kToken: return "token";
  }
  return "?";
}

StoreOp StoreOp::put(EntityKind kind, std::string id,
                     std::optional<std::uint64_t> expected, Json payload) {
  StoreOp op;
  op.type = Type::kPut;
  op.kind = kind;
  op.id = std::move(id);
  op.expected_version = expected;
  op.payload = std::move(payload);
  return op;
}

StoreOp StoreOp::get(EntityKind kind, std::string id) {
  StoreOp op;
  op.type = Type::kGet;
  op.kind = kind;
  op.id = std::move(id);
  return op;
}

StoreOp StoreOp::remove(EntityKind kind, std::string id,
                        std::optional<std::uint64_t> expected) {
  StoreOp op;
  op.type = Type::kDelete;
  op.kind = kind;
  op.id = std::move(id);
  op.expected_version = expected;
  return op;
}

StoreOp StoreOp::list(ListFilter filter) {
  StoreOp op;
  op.type = Type::kList;
  op.kind = filter.kind;
  op.filter = std::move(filter);
  return op;
}

namespace {

constexpr EntityKind kAllKinds[] = {EntityKind::kModel, EntityKind::kJob,
                                    EntityKind::kDataset, EntityKind::kUser,
                                    EntityKind::kToken};

EntityKind kind_from_string(std::string_view s) {
  for (auto k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::kCorrupted, "unknown entity kind in journal: " + std::string(s));
}

void check_id(const std::string& id) {
  const bool ok = !id.empty() && id.size() <= 200 && id != "." && id != ".." &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) ||
                           c == '-' || c == '_' || c == '.';
                  });
  if (!ok) fail(ErrorCode::kInvalidArgument, "invalid record id '" + id + "'");
}

bool matches(const ListFilter& f, const VersionedRecord& r) {
  if (r.kind != f.kind) return false;
  if (f.owner && r.payload.value("owner", std::string{}) != *f.owner) return false;
  if (f.visibility &&
      r.payload.value("visibility", std::string{}) != to_string(*f.visibility)) {
    return false;
  }
  return !f.where || f.where(r.payload);
}

void write_all(int fd, std::string_view data, const fs::path& path) {
  std::size_t written = 0;
  while (written < data.size()) {
    const ssize_t n = ::write(fd, data.data() + written, data.size() - written);
    if (n < 0) {
      ::close(fd);
      fail(ErrorCode::kIo, "write failed: " + path.string());
    }
    written += static_cast<std::size_t>(n);
  }
}

void write_file_atomic(const fs::path& path, std::string_view data, bool sync) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) fail(ErrorCode::kIo, "cannot open " + tmp.string());
  write_all(fd, data, tmp);
  if (sync) ::fsync(fd);
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "rename failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

using Key = std::pair<EntityKind, std::string>;

}  // namespace

struct Store::Impl {
  std::optional<fs::path> root;
  bool fsync_writes = true;

  mutable std::shared_mutex mu;
  std::map<EntityKind, std::map<std::string, VersionedRecord>> records;

  mutable std::mutex blob_mu;
  std::map<std::string, std::string> mem_blobs;

  mutable std::mutex log_mu;
  std::map<std::string, std::string> mem_logs;
  std::map<std::string, std::int64_t> log_lengths;

  fs::path record_path(EntityKind kind, const std::string& id) const {
    return *root / "records" / std::string(to_string(kind)) / (id + ".json");
  }
  fs::path blob_file(const std::string& id) const {
    return *root / "blobs" / id.substr(0, 2) / id;
  }
  fs::path log_file(const std::string& job_id) const {
    return *root / "logs" / (job_id + ".log");
  }

  const VersionedRecord* find_locked(EntityKind kind, const std::string& id) const {
    auto k = records.find(kind);
    if (k == records.end()) return nullptr;
    auto it = k->second.find(id);
    return it == k->second.end() ? nullptr : &it->second;
  }

  // Writes a set of staged changes to disk, then to memory. Caller holds mu.
  void commit(const std::map<Key, std::optional<VersionedRecord>>& staged) {
    if (staged.empty()) return;
    if (root) {
      const fs::path journal = *root / "journal.json";
      const bool use_journal = staged.size() > 1;
      if (use_journal) {
        Json entries = Json::array();
        for (const auto& [key, rec] : staged) {
          Json e{{"kind", to_string(key.first)}, {"id", key.second}};
          if (rec) {
            e["version"] = rec->version;
            e["payload"] = rec->payload;
          }
          entries.push_back(std::move(e));
        }
        write_file_atomic(journal, entries.dump(), fsync_writes);
      }
      for (const auto& [key, rec] : staged) apply_file(key, rec);
      if (use_journal) fs::remove(journal);
    }
    for (const auto& [key, rec] : staged) {
      if (rec) {
        records[key.first][key.second] = *rec;
      } else {
        records[key.first].erase(key.second);
      }
    }
  }

  void apply_file(const Key& key, const std::optional<VersionedRecord>& rec) {
    const fs::path path = record_path(key.first, key.second);
    if (rec) {
      Json doc{{"version", rec->version}, {"payload", rec->payload}};
      write_file_atomic(path, doc.dump(), fsync_writes);
    } else {
      std::error_code ec;
      fs::remove(path, ec);
    }
  }

  void load() {
    for (auto kind : kAllKinds) {
      fs::create_directories(*root / "records" / std::string(to_string(kind)));
    }
    fs::create_directories(*root / "blobs");
    fs::create_directories(*root / "logs");

    const fs::path journal = *root / "journal.json";
    if (fs::exists(journal)) {
      Json entries = Json::parse(read_file(journal));
      for (const auto& e : entries) {
        const Key key{kind_from_string(e.at("kind").get<std::string>()),
                      e.at("id").get<std::string>()};
        std::optional<VersionedRecord> rec;
        if (e.contains("payload")) {
          rec = VersionedRecord{key.first, key.second,
                                e.at("version").get<std::uint64_t>(),
                                e.at("payload")};
        }
        apply_file(key, rec);
      }
      fs::remove(journal);
    }

    for (auto kind : kAllKinds) {
      for (const auto& entry : fs::directory_iterator(
               *root / "records" / std::string(to_string(kind)))) {
        if (entry.path().extension() != ".json") continue;
        Json doc = Json::parse(read_file(entry.path()));
        const std::string id = entry.path().stem().string();
        records[kind][id] = VersionedRecord{kind, id,
                                            doc.at("version").get<std::uint64_t>(),
                                            doc.at("payload")};
      }
    }
    for (const auto& entry : fs::directory_iterator(*root / "logs")) {
      if (entry.path().extension() == ".log") {
        log_lengths[entry.path().stem().string()] =
            static_cast<std::int64_t>(entry.file_size());
      }
    }
  }

  bool blob_exists_locked(const std::string& id) const {
    if (!root) return mem_blobs.count(id) > 0;
    return fs::exists(blob_file(id));
  }

  void blob_delete_locked(const std::string& id) {
    if (!root) {
      mem_blobs.erase(id);
      return;
    }
    std::error_code ec;
    fs::remove(blob_file(id), ec);
  }

  void log_delete_locked(const std::string& job_id) {
    mem_logs.erase(job_id);
    log_lengths.erase(job_id);
    if (root) {
      std::error_code ec;
      fs::remove(log_file(job_id), ec);
    }
  }
};

Store::Store(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Store::~Store() = default;

std::unique_ptr<Store> Store::open(const fs::path& root, bool fsync_writes) {
  auto impl = std::make_unique<Impl>();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) {
    fail(ErrorCode::kIo, "cannot create data directory " + root.string());
  }
  impl->root = root;
  impl->fsync_writes = fsync_writes;
  impl->load();
  return std::unique_ptr<Store>(new Store(std::move(impl)));
}

std::unique_ptr<Store> Store::in_memory() {
  return std::unique_ptr<Store>(new Store(std::make_unique<Impl>()));
}

std::vector<OpResult> Store::transact(std::span<const StoreOp> ops) {
  std::unique_lock lock(impl_->mu);
  std::map<Key, std::optional<VersionedRecord>> staged;

  auto lookup = [&](EntityKind kind, const std::string& id)
      -> std::optional<VersionedRecord> {
    auto it = staged.find({kind, id});
    if (it != staged.end()) return it->second;
    const auto* rec = impl_->find_locked(kind, id);
    if (!rec) return std::nullopt;
    return *rec;
  };

  std::vector<OpResult> results;
  results.reserve(ops.size());
  for (const auto& op : ops) {
    OpResult res;
    switch (op.type) {
      case StoreOp::Type::kPut: {
        check_id(op.id);
        auto cur = lookup(op.kind, op.id);
        if (op.expected_version) {
          const std::uint64_t have = cur ? cur->version : 0;
          if (have != *op.expected_version) {
            fail(ErrorCode::kVersionConflict,
                 std::string(to_string(op.kind)) + " " + op.id + " is at version " +
                     std::to_string(have) + ", expected " +
                     std::to_string(*op.expected_version));
          }
        }
        VersionedRecord rec{op.kind, op.id, cur ? cur->version + 1 : 1, op.payload};
        staged[{op.kind, op.id}] = rec;
        res.record = std::move(rec);
        break;
      }
      case StoreOp::Type::kGet: {
        auto cur = lookup(op.kind, op.id);
        if (!cur) {
          fail(ErrorCode::kNotFound,
               std::string(to_string(op.kind)) + " " + op.id + " not found");
        }
        res.record = std::move(cur);
        break;
      }
      case StoreOp::Type::kDelete: {
        auto cur = lookup(op.kind, op.id);
        if (!cur) {
          fail(ErrorCode::kNotFound,
               std::string(to_string(op.kind)) + " " + op.id + " not found");
        }
        if (op.expected_version && cur->version != *op.expected_version) {
          fail(ErrorCode::kVersionConflict,
               std::string(to_string(op.kind)) + " " + op.id + " version mismatch");
        }
        staged[{op.kind, op.id}] = std::nullopt;
        break;
      }
      case StoreOp::Type::kList: {
        std::map<std::string, VersionedRecord> merged;
        if (auto k = impl_->records.find(op.filter.kind); k != impl_->records.end()) {
          merged = k->second;
        }
        for (const auto& [key, rec] : staged) {
          if (key.first != op.filter.kind) continue;
          if (rec) {
            merged[key.second] = *rec;
          } else {
            merged.erase(key.second);
          }
        }
        for (auto& [id, rec] : merged) {
          if (matches(op.filter, rec)) res.records.push_back(std::move(rec));
        }
        break;
      }
    }
    results.push_back(std::move(res));
  }
  impl_->commit(staged);
  return results;
}

std::optional<VersionedRecord> Store::find(EntityKind kind,
                                           const std::string& id) const {
  std::shared_lock lock(impl_->mu);
  const auto* rec = impl_->find_locked(kind, id);
  if (!rec) return std::nullopt;
  return *rec;
}

VersionedRecord Store::get(EntityKind kind, const std::string& id) const {
  auto rec = find(kind, id);
  if (!rec) {
    fail(ErrorCode::kNotFound, std::string(to_string(kind)) + " " + id + " not found");
  }
  return *rec;
}

std::uint64_t Store::put(EntityKind kind, const std::string& id,
                         std::optional<std::uint64_t> expected, Json payload) {
  const StoreOp op = StoreOp::put(kind, id, expected, std::move(payload));
  return transact({&op, 1}).front().record->version;
}

void Store::remove(EntityKind kind, const std::string& id) {
  const StoreOp op = StoreOp::remove(kind, id);
  transact({&op, 1});
}

std::vector<VersionedRecord> Store::list(const ListFilter& filter) const {
  std::shared_lock lock(impl_->mu);
  std::vector<VersionedRecord> out;
  auto k = impl_->records.find(filter.kind);
  if (k == impl_->records.end()) return out;
  for (const auto& [id, rec] : k->second) {
    if (matches(filter, rec)) out.push_back(rec);
  }
  return out;
}

VersionedRecord Store::update(EntityKind kind, const std::string& id,
                              const std::function<void(Json&)>& mutate) {
  while (true) {
    VersionedRecord rec = get(kind, id);
    mutate(rec.payload);
    try {
      const StoreOp op = StoreOp::put(kind, id, rec.version, rec.payload);
      return *transact({&op, 1}).front().record;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kVersionConflict) throw;
    }
  }
}

// ---------------------------------------------------------------------------
// Blobs

BlobRef Store::blob_put(std::string_view bytes) {
  const std::string id = sha256_hex(bytes);
  std::lock_guard lock(impl_->blob_mu);
  if (!impl_->root) {
    auto it = impl_->mem_blobs.find(id);
    if (it != impl_->mem_blobs.end() && it->second != bytes &&
        sha256_hex(it->second) == id) {
      fail(ErrorCode::kCorrupted, "digest collision on blob " + id);
    }
    impl_->mem_blobs[id] = std::string(bytes);
    return {id, bytes.size()};
  }
  const fs::path path = impl_->blob_file(id);
  if (fs::exists(path)) {
    const std::string existing = read_file(path);
    if (existing == bytes) return {id, bytes.size()};
    // A differing file with a matching digest would be a genuine collision;
    // a mismatching digest means the stored copy is damaged and is replaced.
    if (sha256_hex(existing) == id) {
      fail(ErrorCode::kCorrupted, "digest collision on blob " + id);
    }
  }
  fs::create_directories(path.parent_path());
  write_file_atomic(path, bytes, impl_->fsync_writes);
  return {id, bytes.size()};
}

Bytes Store::blob_get(const std::string& blob_id) const {
  std::string bytes;
  {
    std::lock_guard lock(impl_->blob_mu);
    if (!impl_->root) {
      auto it = impl_->mem_blobs.find(blob_id);
      if (it == impl_->mem_blobs.end()) {
        fail(ErrorCode::kNotFound, "blob " + blob_id + " not found");
      }
      bytes = it->second;
    } else {
      if (blob_id.size() < 2 || !fs::exists(impl_->blob_file(blob_id))) {
        fail(ErrorCode::kNotFound, "blob " + blob_id + " not found");
      }
      bytes = read_file(impl_->blob_file(blob_id));
    }
  }
  if (sha256_hex(bytes) != blob_id) {
    fail(ErrorCode::kCorrupted, "blob " + blob_id + " failed digest verification");
  }
  return bytes;
}

bool Store::blob_exists(const std::string& blob_id) const {
  std::lock_guard lock(impl_->blob_mu);
  return blob_id.size() >= 2 && impl_->blob_exists_locked(blob_id);
}

void Store::blob_delete(const std::string& blob_id) {
  if (blob_id.size() < 2) return;
  std::lock_guard lock(impl_->blob_mu);
  impl_->blob_delete_locked(blob_id);
}

std::vector<std::string> Store::blob_ids() const {
  std::lock_guard lock(impl_->blob_mu);
  std::vector<std::string> out;
  if (!impl_->root) {
    for (const auto& [id, _] : impl_->mem_blobs) out.push_back(id);
    return out;
  }
  for (const auto& entry : fs::recursive_directory_iterator(*impl_->root / "blobs")) {
    if (entry.is_regular_file() && entry.path().extension() != ".tmp") {
      out.push_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path Store::blob_path(const std::string& blob_id) const {
  if (!impl_->root) return {};
  return impl_->blob_file(blob_id);
}

// ---------------------------------------------------------------------------
// Logs

void Store::append_log(const std::string& job_id, std::int64_t offset,
                       std::string_view payload) {
  check_id(job_id);
  std::lock_guard lock(impl_->log_mu);
  const std::int64_t length = impl_->log_lengths[job_id];
  if (offset != length) {
    fail(ErrorCode::kContiguity, "log offset " + std::to_string(offset) +
                                     " does not match current length " +
                                     std::to_string(length) + " for job " + job_id);
  }
  if (impl_->root) {
    const fs::path path = impl_->log_file(job_id);
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) fail(ErrorCode::kIo, "cannot open " + path.string());
    write_all(fd, payload, path);
    if (impl_->fsync_writes) ::fsync(fd);
    ::close(fd);
  } else {
    impl_->mem_logs[job_id].append(payload);
  }
  impl_->log_lengths[job_id] = length + static_cast<std::int64_t>(payload.size());
}

LogRead Store::read_log(const std::string& job_id, std::int64_t offset) const {
  if (offset < 0) fail(ErrorCode::kInvalidArgument, "negative log offset");
  LogRead out;
  {
    std::shared_lock lock(impl_->mu);
    const auto* job = impl_->find_locked(EntityKind::kJob, job_id);
    if (!job) fail(ErrorCode::kNotFound, "job " + job_id + " not found");
    out.finished = is_terminal(
        parse_enum<JobStatus>(job->payload.at("status").get<std::string>()));
  }
  std::lock_guard lock(impl_->log_mu);
  auto len_it = impl_->log_lengths.find(job_id);
  const std::int64_t length = len_it == impl_->log_lengths.end() ? 0 : len_it->second;
  if (offset >= length) {
    out.next_offset = offset;
    return out;
  }
  if (impl_->root) {
    std::ifstream in(impl_->log_file(job_id), std::ios::binary);
    in.seekg(offset);
    out.payload.resize(static_cast<std::size_t>(length - offset));
    in.read(out.payload.data(), static_cast<std::streamsize>(out.payload.size()));
    out.payload.resize(static_cast<std::size_t>(in.gcount()));
  } else {
    out.payload = impl_->mem_logs.at(job_id).substr(static_cast<std::size_t>(offset));
  }
  out.next_offset = offset + static_cast<std::int64_t>(out.payload.size());
  return out;
}

std::int64_t Store::log_length(const std::string& job_id) const {
  std::lock_guard lock(impl_->log_mu);
  auto it = impl_->log_lengths.find(job_id);
  return it == impl_->log_lengths.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// Purge

namespace {

void collect_refs(const VersionedRecord& rec, std::set<std::string>& out) {
  static constexpr const char* kBlobFields[] = {"artifact", "result", "input_ref",
                                                "model_artifact_ref", "blob"};
  for (const char* field : kBlobFields) {
    if (rec.payload.contains(field) && rec.payload.at(field).is_string()) {
      out.insert(rec.payload.at(field).get<std::string>());
    }
  }
}

}  // namespace

std::vector<std::string> Store::purge_model_cascade(const std::string& model_id) {
  std::unique_lock lock(impl_->mu);
  const auto* model = impl_->find_locked(EntityKind::kModel, model_id);
  if (!model) fail(ErrorCode::kNotFound, "model " + model_id + " not found");
  const ModelRecord record = model->payload.get<ModelRecord>();

  std::map<Key, std::optional<VersionedRecord>> staged;
  std::set<std::string> candidate_blobs;
  std::vector<std::string> deleted;
  std::vector<std::string> purged_jobs;

  staged[{EntityKind::kModel, model_id}] = std::nullopt;
  deleted.push_back(model_id);
  collect_refs(*model, candidate_blobs);

  for (const auto& [id, rec] : impl_->records[EntityKind::kJob]) {
    const bool for_model = rec.payload.value("model_id", Json()) == Json(model_id);
    const bool is_training_job =
        record.training_job_id && *record.training_job_id == id;
    if ((for_model && rec.payload.value("owner", std::string{}) == record.owner) ||
        is_training_job) {
      staged[{EntityKind::kJob, id}] = std::nullopt;
      collect_refs(rec, candidate_blobs);
      purged_jobs.push_back(id);
      deleted.push_back(id);
    }
  }

  for (const auto& ds_id : record.dataset_ids) {
    const auto* ds = impl_->find_locked(EntityKind::kDataset, ds_id);
    if (!ds) continue;
    bool referenced = false;
    for (const auto& [id, rec] : impl_->records[EntityKind::kModel]) {
      if (id == model_id) continue;
      const auto ids = rec.payload.value("dataset_ids", std::vector<std::string>{});
      if (std::find(ids.begin(), ids.end(), ds_id) != ids.end()) {
        referenced = true;
        break;
      }
    }
    if (!referenced) {
      staged[{EntityKind::kDataset, ds_id}] = std::nullopt;
      collect_refs(*ds, candidate_blobs);
      deleted.push_back(ds_id);
    }
  }

  impl_->commit(staged);

  // Blobs are content addressed and may be shared; keep any still referenced.
  std::set<std::string> live;
  for (const auto& [kind, recs] : impl_->records) {
    for (const auto& [id, rec] : recs) collect_refs(rec, live);
  }
  {
    std::lock_guard log_lock(impl_->log_mu);
    for (const auto& job_id : purged_jobs) impl_->log_delete_locked(job_id);
  }
  std::lock_guard blob_lock(impl_->blob_mu);
  for (const auto& blob : candidate_blobs) {
    if (live.count(blob)) continue;
    impl_->blob_delete_locked(blob);
    deleted.push_back("blob:" + blob);
  }
  return deleted;
}

}  // namespace annolab
