#pragma once

namespace tpaws::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error. Failures are written
/// to standard error as `ERROR <code>: <message>`.
int run(int argc, char** argv);

}  // namespace tpaws::cli
