// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tape {

// Root of every error thrown by the library. Each contract violation gets a
// distinct type so callers and tests can catch precisely what they expect.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define TAPE_DEFINE_ERROR(NAME)                                 \
  struct NAME : Error {                                         \
    explicit NAME(const std::string& msg) : Error(msg) {}       \
  }

// numeric core
TAPE_DEFINE_ERROR(ShapeMismatch);
TAPE_DEFINE_ERROR(FullyMaskedRow);
TAPE_DEFINE_ERROR(NonFiniteValue);

// synthetic data
TAPE_DEFINE_ERROR(TopologyMismatch);
TAPE_DEFINE_ERROR(OutOfFrame);
TAPE_DEFINE_ERROR(InsufficientEmbodiments);

// model
TAPE_DEFINE_ERROR(UnknownEmbodiment);
TAPE_DEFINE_ERROR(DuplicateEmbodiment);
TAPE_DEFINE_ERROR(AdapterShapeMismatch);
TAPE_DEFINE_ERROR(EmptyLayout);
TAPE_DEFINE_ERROR(LayoutMismatch);

// training
TAPE_DEFINE_ERROR(EmptyDataset);
TAPE_DEFINE_ERROR(MixedEmbodimentData);
TAPE_DEFINE_ERROR(MissingAdapter);
TAPE_DEFINE_ERROR(EmbodimentAlreadyKnown);

// streaming
TAPE_DEFINE_ERROR(InvalidLength);
TAPE_DEFINE_ERROR(CacheLedgerMismatch);
TAPE_DEFINE_ERROR(FrozenTeacherViolation);

// cli / io
TAPE_DEFINE_ERROR(MissingPrerequisite);
TAPE_DEFINE_ERROR(ConfigError);
TAPE_DEFINE_ERROR(IoError);

#undef TAPE_DEFINE_ERROR

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace tape
