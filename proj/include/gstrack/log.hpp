// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

namespace gstrack {

using WarningSink = std::function<void(const std::string &)>;

/// Routes a warning to the current sink (stderr by default).
void warn(const std::string &message);

/// Replaces the sink and returns the previous one. An empty sink restores stderr.
WarningSink set_warning_sink(WarningSink sink);

} // namespace gstrack
