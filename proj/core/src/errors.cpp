#include "glcal/errors.hpp"

#include <sstream>

namespace glcal {

namespace {

std::string diverged_message(int epoch, double learning_rate) {
  std::ostringstream os;
  os << "training diverged at epoch " << epoch << " (learning rate " << learning_rate
     << "): loss is not finite or exploded";
  return os.str();
}

}  // namespace

TrainingDiverged::TrainingDiverged(int epoch, double learning_rate)
    : Error(diverged_message(epoch, learning_rate)), epoch_(epoch), learning_rate_(learning_rate) {}

}  // namespace glcal
