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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "annolab/domain.hpp"
#include "annolab/util.hpp"

namespace annolab {

enum class EntityKind { kModel, kJob, kDataset, kUser, kToken };

std::string_view to_string(EntityKind kind);

struct VersionedRecord {
  EntityKind kind = EntityKind::kModel;
  std::string id;
  std::uint64_t version = 0;
  Json payload;
};

struct ListFilter {
  EntityKind kind = EntityKind::kModel;
  std::optional<std::string> owner;
  std::optional<Visibility> visibility;
  /// Extra predicate over the payload, applied after owner/visibility.
  std::function<bool(const Json&)> where;
};

struct StoreOp {
  enum class Type { kPut, kGet, kDelete, kList };

  Type type = Type::kGet;
  EntityKind kind = EntityKind::kModel;
  std::string id;
  /// kPut: version the record must currently have (0 = must not exist);
  /// absent means an unconditional write by the entity's sole owner.
  /// kDelete: optional precondition.
  std::optional<std::uint64_t> expected_version;
  Json payload;
  ListFilter filter;

  static StoreOp put(EntityKind kind, std::string id,
                     std::optional<std::uint64_t> expected, Json payload);
  static StoreOp get(EntityKind kind, std::string id);
  static StoreOp remove(EntityKind kind, std::string id,
                        std::optional<std::uint64_t> expected = std::nullopt);
  static StoreOp list(ListFilter filter);
};

struct OpResult {
  /// kGet: the record. kPut: the record as written (new version).
  std::optional<VersionedRecord> record;
  /// kList only.
  std::vector<VersionedRecord> records;
};

struct BlobRef {
  std::string blob_id;
  std::uint64_t size = 0;
};

struct LogRead {
  std::string payload;
  std::int64_t next_offset = 0;
  bool finished = false;
};

/// Records, blobs and job logs for a single node.
///
/// File layout under the root directory:
///   records/<kind>/<id>.json   {"version": N, "payload": {...}}
///   blobs/<d0d1>/<sha256>      raw bytes
///   logs/<job_id>.log          raw bytes
///   journal.json               present only while a commit is in flight
///
/// Every transaction is staged in memory, written to the journal, then
/// applied file by file; a journal found at open() is replayed, so a crash
/// never leaves a partially applied transaction visible.
class Store {
 public:
  static std::unique_ptr<Store> open(const std::filesystem::path& root,
                                     bool fsync_writes = true);
  static std::unique_ptr<Store> in_memory();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store();

  /// All-or-nothing. Throws kVersionConflict / kNotFound / kDuplicate without
  /// partial effects. Reads inside a transaction observe earlier writes of
  /// the same transaction.
  std::vector<OpResult> transact(std::span<const StoreOp> ops);

  std::optional<VersionedRecord> find(EntityKind kind, const std::string& id) const;
  VersionedRecord get(EntityKind kind, const std::string& id) const;
  /// Returns the new version.
  std::uint64_t put(EntityKind kind, const std::string& id,
                    std::optional<std::uint64_t> expected, Json payload);
  void remove(EntityKind kind, const std::string& id);
  std::vector<VersionedRecord> list(const ListFilter& filter) const;

  /// Read-modify-write retried on version conflicts.
  VersionedRecord update(EntityKind kind, const std::string& id,
                         const std::function<void(Json&)>& mutate);

  BlobRef blob_put(std::string_view bytes);
  /// Throws kNotFound, or kCorrupted when the stored bytes no longer match
  /// their digest.
  Bytes blob_get(const std::string& blob_id) const;
  bool blob_exists(const std::string& blob_id) const;
  /// Idempotent.
  void blob_delete(const std::string& blob_id);
  std::vector<std::string> blob_ids() const;
  /// Only meaningful for file-backed stores.
  std::filesystem::path blob_path(const std::string& blob_id) const;

  /// `offset` must equal the current log length (kContiguity otherwise).
  void append_log(const std::string& job_id, std::int64_t offset,
                  std::string_view payload);
  /// kNotFound when the job record does not exist. `finished` reports
  /// whether the job is in a terminal state.
  LogRead read_log(const std::string& job_id, std::int64_t offset) const;
  std::int64_t log_length(const std::string& job_id) const;

  /// Deletes a model, its artifact, the owner's jobs against it with their
  /// logs and result blobs, and its datasets that no surviving model still
  /// references. Descendant models are left in place. Returns the deleted
  /// ids; blob ids are prefixed "blob:".
  std::vector<std::string> purge_model_cascade(const std::string& model_id);

 private:
  struct Impl;
  explicit Store(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace annolab
