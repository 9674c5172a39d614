// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpose/cli.hpp"

int main(int argc, char** argv) { return tensorpose::cli::run(argc, argv); }
