#pragma once

// Result rendering: CSV dumps, markdown tables with best-per-column
// marking and per-encoder mean rows, ranking bars, and masking
// sensitivity curves as static SVG.

#include <string>
#include <vector>

#include "tme/protocol.hpp"

namespace tme::report {

// Flat per-cell table; one row per grid cell, RFC 4180 quoting. Every
// row carries its seed list and the config hash for traceability.
std::string cells_csv(const std::vector<proto::ResultCell>& cells,
                      const std::string& config_hex = "");

// Sectioned per (mode, policy): model rows x dataset columns, values
// rendered mean±std (accuracy in percent), column best in bold, and one
// mean row per tabular encoder averaging its fused variants.
std::string benchmark_markdown(const std::vector<proto::ResultCell>& cells,
                               const std::string& config_hex = "");

// Horizontal mean-rank bars over models that have complete cells on every
// dataset (rank 1 = best). Empty string when fewer than two models rank.
std::string ranking_svg(const std::vector<proto::ResultCell>& cells,
                        const std::string& config_hex = "");

// Score-vs-mask-ratio curves for fused models plus dashed horizontal
// reference lines for unimodal baselines.
std::string sweep_svg(const std::vector<proto::ResultCell>& cells,
                      const std::string& config_hex = "");

void write_text_file(const std::string& path, const std::string& content);

}  // namespace tme::report
