#pragma once

#include <functional>

namespace cme {

//! Worker count used when a caller passes threads <= 0.
int default_threads();
void set_default_threads(int threads);

//! Runs fn(i) for i in [0, n); nested calls run serially. Each index is executed exactly once; callers
//! write results into per-index slots so the outcome is order independent.
void parallel_for(int n, const std::function<void(int)>& fn, int threads = 0);

//! While alive, parallel_for on this thread runs serially.
class SerialScope {
 public:
  SerialScope();
  ~SerialScope();
  SerialScope(const SerialScope&) = delete;
  SerialScope& operator=(const SerialScope&) = delete;

 private:
  bool previous_;
};

}  // namespace cme
