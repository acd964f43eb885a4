#pragma once

#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Dense>

#include "tpaws/core.hpp"

namespace tpaws {

/// Gaussian state of a dynamic linear model.
template <typename Scalar>
struct KalmanState {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Vector mean;
  Matrix covariance;
};

template <typename Scalar>
struct KalmanStep {
  using Vector = typename KalmanState<Scalar>::Vector;
  using Matrix = typename KalmanState<Scalar>::Matrix;

  KalmanState<Scalar> prior;      ///< one-step state prediction (a, R)
  KalmanState<Scalar> posterior;  ///< filtered state (m, C)
  Vector forecast_mean;           ///< one-step predictive f = F a
  Matrix forecast_covariance;     ///< Q = F R F' + V
  bool updated = false;
};

/// One predict/update cycle of the model
///
///   state_t = G state_{t-1} + w,  w ~ N(0, W)
///   obs_t   = F state_t + v,      v ~ N(0, V)
///
/// Missing observations skip the update. The covariance update uses the
/// Joseph form and is re-symmetrised.
template <typename Scalar>
KalmanStep<Scalar> kalman_step(const KalmanState<Scalar>& state,
                               const typename KalmanState<Scalar>::Matrix& F,
                               const typename KalmanState<Scalar>::Matrix& G,
                               const typename KalmanState<Scalar>::Matrix& W,
                               const typename KalmanState<Scalar>::Matrix& V,
                               const std::optional<typename KalmanState<Scalar>::Vector>& obs) {
  using Matrix = typename KalmanState<Scalar>::Matrix;
  if (F.cols() != state.mean.size() || G.rows() != G.cols() || G.cols() != state.mean.size() ||
      W.rows() != G.rows() || V.rows() != F.rows() || V.cols() != F.rows())
    throw Error(ErrorCode::InvalidArgument, "kalman_step: non-conformable dimensions");

  KalmanStep<Scalar> out;
  out.prior.mean = G * state.mean;
  Matrix R = G * state.covariance * G.transpose() + W;
  R = (R + R.transpose()) * Scalar(0.5);
  out.prior.covariance = R;
  out.forecast_mean = F * out.prior.mean;
  Matrix Q = F * R * F.transpose() + V;
  Q = (Q + Q.transpose()) * Scalar(0.5);
  out.forecast_covariance = Q;

  if (!obs) {
    out.posterior = out.prior;
    return out;
  }
  if (obs->size() != F.rows())
    throw Error(ErrorCode::InvalidArgument, "kalman_step: observation size mismatch");

  Eigen::LDLT<Matrix> ldlt(Q);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > Scalar(0)).all())
    throw Error(ErrorCode::NumericalBreakdown, "innovation covariance not invertible");

  const Matrix K = ldlt.solve(F * R).transpose();  // R F' Q^-1
  const auto n = state.mean.size();
  const Matrix IKF = Matrix::Identity(n, n) - K * F;
  Matrix C = IKF * R * IKF.transpose() + K * V * K.transpose();
  C = (C + C.transpose()) * Scalar(0.5);
  out.posterior.mean = out.prior.mean + K * (*obs - out.forecast_mean);
  out.posterior.covariance = C;
  out.updated = true;
  return out;
}

/// Log density of obs under N(mean, cov).
template <typename Scalar>
Scalar gaussian_log_density(const typename KalmanState<Scalar>::Vector& obs,
                            const typename KalmanState<Scalar>::Vector& mean,
                            const typename KalmanState<Scalar>::Matrix& cov) {
  Eigen::LDLT<typename KalmanState<Scalar>::Matrix> ldlt(cov);
  const auto r = (obs - mean).eval();
  const Scalar quad = r.dot(ldlt.solve(r));
  const Scalar logdet = ldlt.vectorD().array().log().sum();
  return Scalar(-0.5) * (quad + logdet +
                         Scalar(obs.size()) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>));
}

}  // namespace tpaws
