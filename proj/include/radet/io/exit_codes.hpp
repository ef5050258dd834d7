#pragma once

#include <exception>
#include <new>

#include <nlohmann/json.hpp>

#include "radet/core/errors.hpp"

namespace radet::io {

enum ExitCode : int {
  kExitOk = 0,
  kExitNumeric = 1,  // also a FAILED bound report
  kExitConfig = 2,
  kExitIo = 3,
};

/// Maps the in-flight exception to an exit code. Call inside a catch block.
inline int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const NumericError&) {
    return kExitNumeric;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const DomainError&) {
    return kExitConfig;
  } catch (const nlohmann::json::exception&) {
    return kExitConfig;
  } catch (const IoError&) {
    return kExitIo;
  } catch (...) {
    return kExitNumeric;
  }
}

}  // namespace radet::io
