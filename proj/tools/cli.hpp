// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/dataio.hpp"
#include "gstrack/pipeline.hpp"

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace gstrack::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3 };

/// Everything a track run depends on. Written as run_config.json next to
/// the artifacts; passing that file back via --config repeats the run.
struct RunConfig {
    PipelineConfig pipeline;
    /// Extra noise applied to frames as they are loaded.
    std::optional<NoiseSpec> noise;
    std::string seq;
    std::string out;
    bool gt_init = false;
    bool deterministic = false;
    std::size_t chamfer_samples = 20000;
    /// Only the first max_frames frames are used; 0 means all.
    int max_frames = 0;

    bool operator==(const RunConfig &) const = default;
};

std::string run_config_to_json(const RunConfig &cfg);
/// Missing fields keep their defaults; unknown fields throw
/// std::invalid_argument.
RunConfig run_config_from_json(const std::string &text);

/// Runs one subcommand. args excludes the program name.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace gstrack::cli
