#include "graphfm/tape.hpp"

#include "graphfm/error.hpp"

namespace graphfm {

void Tape::record(std::function<void()> backward_fn) {
    if (!enabled_) throw ContractError("record on a disabled tape");
    nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(Tensor loss) {
    if (!enabled_) throw ContractError("backward on a disabled tape");
    if (used_) throw ContractError("backward called twice on one tape; run a new forward first");
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? loss.shape_str() : std::string("<undefined>")));
    used_ = true;
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace graphfm
