#pragma once

#include <string_view>

namespace rclarc {

// Warnings go to stderr unless silenced. Numeric code never aborts on a warning.
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();

}  // namespace rclarc
