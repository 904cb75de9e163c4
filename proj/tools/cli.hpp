#pragma once

namespace cme::cli {

//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
int run(int argc, char** argv);

}  // namespace cme::cli
