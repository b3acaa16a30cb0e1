#include "mgtraj/baselines.hpp"

namespace mgtraj::train {

TrainConfig build_baseline(const std::string& kind, TrainConfig base) {
  base.model = kind;
  switch (net::model_kind_from_string(kind)) {
    case net::ModelKind::gan:
      base.n_gens = 1;
      base.lambda_traj = 0.0;
      base.lambda_cl = 0.0;
      base.q = 1;  // no variety loss, one adversarial sample suffices
      break;
    case net::ModelKind::gan_l2:
      base.n_gens = 1;
      base.lambda_traj = 1.0;
      base.lambda_cl = 0.0;
      break;
    case net::ModelKind::infogan:
      base.n_gens = 1;
      base.lambda_traj = 0.0;
      base.lambda_cl = 1.0;  // weights the mutual-information (code) term
      base.q = 1;
      break;
    case net::ModelKind::mgan:
      base.lambda_traj = 1.0;
      base.lambda_cl = 1.0;
      break;
    case net::ModelKind::mg_gan:
      break;
  }
  base.validate();
  return base;
}

}  // namespace mgtraj::train
