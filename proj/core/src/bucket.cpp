// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/bucket.hpp"

#include "paving/errors.hpp"

namespace paving {

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::edit: return "edit";
    case Bucket::benign_keep: return "benign_keep";
    case Bucket::harmful_keep: return "harmful_keep";
  }
  return "unknown";
}

Bucket parse_bucket(const std::string& name) {
  if (name == "edit") return Bucket::edit;
  if (name == "benign_keep" || name == "benign") return Bucket::benign_keep;
  if (name == "harmful_keep" || name == "harmful") return Bucket::harmful_keep;
  throw ConfigError("unknown bucket '" + name + "'");
}

}  // namespace paving
