// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/log.hpp"

#include <iostream>
#include <mutex>

namespace gstrack {
namespace {

std::mutex &sink_mutex() {
    static std::mutex m;
    return m;
}

WarningSink &sink() {
    static WarningSink s;
    return s;
}

} // namespace

void warn(const std::string &message) {
    std::lock_guard lock(sink_mutex());
    if (sink()) {
        sink()(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

WarningSink set_warning_sink(WarningSink s) {
    std::lock_guard lock(sink_mutex());
    WarningSink old = std::move(sink());
    sink() = std::move(s);
    return old;
}

} // namespace gstrack
