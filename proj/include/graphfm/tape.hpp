#pragma once

#include <functional>
#include <vector>

#include "graphfm/tensor.hpp"

namespace graphfm {

/// Ordered record of executed operations. Ops append a backward closure as
/// they run, so the record is topologically sorted by construction; backward
/// replays it once, in reverse, accumulating gradients in a fixed order.
/// A tape is confined to one executing context from forward through backward;
/// distinct tapes may run concurrently.
class Tape {
  public:
    Tape() = default;
    /// A disabled tape records nothing; ops run forward-only (inference mode).
    explicit Tape(bool enabled) : enabled_(enabled) {}

    bool enabled() const { return enabled_; }

    void record(std::function<void()> backward_fn);

    /// Seed d(loss)/d(loss) = 1 and replay the record in reverse. The loss
    /// must be scalar, and each tape may run backward only once.
    void backward(Tensor loss);

    size_t size() const { return nodes_.size(); }

  private:
    std::vector<std::function<void()>> nodes_;
    bool enabled_ = true;
    bool used_ = false;
};

}  // namespace graphfm
