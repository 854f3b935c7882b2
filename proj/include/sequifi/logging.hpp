#pragma once

namespace sequifi {

/// Sets the spdlog level from SEQUIFI_LOG (error, info or debug; default info).
void configure_logging_from_env();

}  // namespace sequifi
