// Copyright 2026 The SDDG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "sddg/fourier.hpp"

namespace sddg {

/// 8-bit grayscale PNG I/O. Color inputs are converted with the usual
/// luma weights; values map linearly between [0,1] and [0,255].
Image read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Image& image);

}  // namespace sddg
