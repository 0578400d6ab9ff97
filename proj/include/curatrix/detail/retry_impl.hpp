#pragma once

#include <thread>

namespace curatrix {

template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> std::pair<decltype(fn(1)), int> {
  for (int attempt = 1;; ++attempt) {
    try {
      return {fn(attempt), attempt};
    } catch (const AttemptError& e) {
      if (!e.retryable() || attempt >= policy.max_attempts) throw;
    }
    std::this_thread::sleep_for(backoff_delay(policy, attempt));
  }
}

}  // namespace curatrix
