// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace paving {

enum class Bucket { edit, benign_keep, harmful_keep };

std::string to_string(Bucket b);
/// Accepts "edit", "benign_keep"/"benign", "harmful_keep"/"harmful".
Bucket parse_bucket(const std::string& name);

/// Route label g*: 1 for the edit set, 0 for keeps.
inline int route_label(Bucket b) { return b == Bucket::edit ? 1 : 0; }

}  // namespace paving
