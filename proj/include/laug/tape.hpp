#pragma once

#include <functional>
#include <initializer_list>

#include "laug/tensor.hpp"

namespace laug {

// Reverse-mode tape. One tape is active per thread; ops record a backward
// closure whenever any input is grad-tracked. A tape supports exactly one
// backward pass over the recorded graph and is cleared afterwards.
template <class Scalar>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  bool recording() const { return !paused_ && !consumed_; }
  std::size_t step_count() const { return steps_.size(); }

  void push(std::shared_ptr<TensorNode<Scalar>> out, std::function<void()> back) {
    steps_.push_back(Step{std::move(out), std::move(back)});
  }

  void backward(const Tensor<Scalar>& loss) {
    if (consumed_) throw ValueError("tape already consumed: re-record the forward graph before calling backward again");
    if (!loss.node()->tracked) throw ValueError("backward called on a tensor not recorded on the tape");
    if (loss.size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
    grad_buffer(*loss.node())[0] = Scalar(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // no downstream contribution
      it->back();
    }
    consumed_ = true;
    steps_.clear();
  }

  // Suppresses recording for the current scope (constant/no-grad forwards).
  class Pause {
   public:
    Pause() : tape_(Tape::active()) {
      if (tape_) {
        prev_ = tape_->paused_;
        tape_->paused_ = true;
      }
    }
    ~Pause() {
      if (tape_) tape_->paused_ = prev_;
    }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* tape_;
    bool prev_ = false;
  };

 private:
  struct Step {
    std::shared_ptr<TensorNode<Scalar>> out;
    std::function<void()> back;
  };

  std::vector<Step> steps_;
  bool paused_ = false;
  bool consumed_ = false;
  Tape* prev_;
  static thread_local Tape* active_;
};

template <class Scalar>
thread_local Tape<Scalar>* Tape<Scalar>::active_ = nullptr;

// Records `back` for `out` if a tape is live and any input carries gradient.
template <class Scalar, class Back>
void maybe_record(std::initializer_list<const Tensor<Scalar>*> inputs, Tensor<Scalar>& out,
                  Back&& back) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (!tape || !tape->recording()) return;
  bool track = false;
  for (const Tensor<Scalar>* in : inputs)
    track = track || in->node()->requires_grad || in->node()->tracked;
  if (!track) return;
  out.node()->tracked = true;
  tape->push(out.node(), std::function<void()>(std::forward<Back>(back)));
}

}  // namespace laug
