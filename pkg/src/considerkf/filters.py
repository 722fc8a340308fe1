"""Step functions for the standard, consider, desensitized and
sensitivity-based consider Kalman filters.

Every step function is pure: it takes a state and returns a new one. State
estimates may carry a leading batch axis, ``(n,)`` or ``(batch, n)``, so a
Monte Carlo campaign can push many trajectories through one covariance
recursion (covariances and gains never depend on the measurements).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs, dsyevd

from .model import ParameterPrior, SensitivityWeight, StepMatrices, symmetrize

PD_RELATIVE_FLOOR = 1e-12
_TINY = np.finfo(float).tiny


class FilterError(RuntimeError):
    """Raised when a filter step cannot be carried out."""


class SingularInnovationError(FilterError):
    pass


@dataclass(frozen=True)
class KfState:
    x_hat: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class CkfState:
    x_hat: np.ndarray
    p: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class SdkfState:
    # p excludes the parameter contribution; see full_covariance in bridge
    x_hat: np.ndarray
    p: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class SmckfState:
    x_hat: np.ndarray
    gamma: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class MeasurementOutcome:
    """Result of a measurement update.

    ``full_cov`` is the recovered total error covariance for the SMCKF and
    ``None`` for the other filters.
    """

    state: KfState | CkfState | SdkfState | SmckfState
    gain: np.ndarray
    innovation: np.ndarray
    innovation_cov: np.ndarray
    full_cov: np.ndarray | None = None


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise ValueError(f"dimension mismatch: {what}")


def _propagate_mean(x_hat: np.ndarray, mats: StepMatrices, p_hat: np.ndarray) -> np.ndarray:
    _check(x_hat.shape[-1] == mats.phi.shape[1], "state estimate vs phi")
    return x_hat @ mats.phi.T + mats.psi @ p_hat


def _innovation(z, x_prior: np.ndarray, mats: StepMatrices, p_hat: np.ndarray | None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    pred = x_prior @ mats.h.T
    if p_hat is not None:
        pred = pred + mats.nmat @ p_hat
    _check(z.shape[-1] == mats.h.shape[0], "measurement vs h")
    return z - pred


def _solve_gain(numerator: np.ndarray, denominator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``numerator @ inv(denominator)`` and the symmetrized denominator.

    Raises:
        SingularInnovationError: if the denominator's smallest eigenvalue is
            not above ``PD_RELATIVE_FLOOR`` times its trace.
    """
    denominator = symmetrize(denominator)
    eigs, _, info = dsyevd(denominator, compute_v=0)
    scale = max(float(denominator.trace()), _TINY)
    if info != 0 or eigs[0] <= PD_RELATIVE_FLOOR * scale:
        raise SingularInnovationError("innovation covariance is not positive definite")
    chol, info = dpotrf(denominator, lower=1, clean=0)
    if info != 0:
        raise SingularInnovationError("innovation covariance is not positive definite")
    gain_t, info = dpotrs(chol, numerator.T, lower=1)
    if info != 0:
        raise SingularInnovationError("innovation covariance solve failed")
    return gain_t.T, denominator


@lru_cache(maxsize=32)
def _identity(n: int) -> np.ndarray:
    eye = np.eye(n)
    eye.setflags(write=False)
    return eye


def _process_cov(mats: StepMatrices) -> np.ndarray:
    return mats.g @ mats.q @ mats.g.T


def sensitivity_residual(s_minus: np.ndarray, mats: StepMatrices) -> np.ndarray:
    """The measurement sensitivity ``gamma = H S^- + N``."""
    return mats.h @ s_minus + mats.nmat


# -- standard Kalman filter (ignores the parameter entirely) ------------------

def kf_time_update(state: KfState, mats: StepMatrices) -> KfState:
    _check(state.p.shape == mats.phi.shape, "covariance vs phi")
    x = state.x_hat @ mats.phi.T
    p = mats.phi @ state.p @ mats.phi.T + _process_cov(mats)
    return KfState(x, symmetrize(p))


def kf_measurement_update(state: KfState, z, mats: StepMatrices) -> MeasurementOutcome:
    h = mats.h
    innov = _innovation(z, state.x_hat, mats, None)
    omega = h @ state.p @ h.T + mats.r
    k, omega = _solve_gain(state.p @ h.T, omega)
    i_kh = _identity(state.p.shape[0]) - k @ h
    p = symmetrize(i_kh @ state.p)
    return MeasurementOutcome(KfState(state.x_hat + innov @ k.T, p), k, innov, omega)


# -- consider Kalman filter ---------------------------------------------------

def ckf_time_update(state: CkfState, mats: StepMatrices, prior: ParameterPrior) -> CkfState:
    phi, psi = mats.phi, mats.psi
    _check(state.p.shape == phi.shape, "covariance vs phi")
    _check(state.c.shape == (phi.shape[0], prior.l) and psi.shape == state.c.shape, "cross-covariance vs psi")
    x = _propagate_mean(state.x_hat, mats, prior.p_hat)
    phi_c_psi = phi @ state.c @ psi.T
    p = (
        phi @ state.p @ phi.T
        + phi_c_psi
        + phi_c_psi.T
        + psi @ prior.p_pp @ psi.T
        + _process_cov(mats)
    )
    c = phi @ state.c + psi @ prior.p_pp
    return CkfState(x, symmetrize(p), c)


def ckf_measurement_update(state: CkfState, z, mats: StepMatrices, prior: ParameterPrior) -> MeasurementOutcome:
    h, nmat = mats.h, mats.nmat
    _check(h.shape[1] == state.p.shape[0] and nmat.shape == (h.shape[0], prior.l), "measurement matrices")
    innov = _innovation(z, state.x_hat, mats, prior.p_hat)
    h_c_n = h @ state.c @ nmat.T
    omega = h @ state.p @ h.T + h_c_n + h_c_n.T + nmat @ prior.p_pp @ nmat.T + mats.r
    k, omega = _solve_gain(state.p @ h.T + state.c @ nmat.T, omega)
    i_kh = _identity(state.p.shape[0]) - k @ h
    p = i_kh @ state.p - k @ nmat @ state.c.T
    c = i_kh @ state.c - k @ nmat @ prior.p_pp
    new = CkfState(state.x_hat + innov @ k.T, symmetrize(p), c)
    return MeasurementOutcome(new, k, innov, omega)


# -- special desensitized Kalman filter ----------------------------------------

def sdkf_time_update(state: SdkfState, mats: StepMatrices, prior: ParameterPrior) -> SdkfState:
    phi, psi = mats.phi, mats.psi
    _check(state.p.shape == phi.shape, "covariance vs phi")
    _check(state.s.shape == psi.shape, "sensitivity vs psi")
    x = _propagate_mean(state.x_hat, mats, prior.p_hat)
    s = phi @ state.s + psi
    p = phi @ state.p @ phi.T + _process_cov(mats)
    return SdkfState(x, symmetrize(p), s)


def _desensitized_gain(p_minus, s_minus, mats: StepMatrices, w: np.ndarray):
    h = mats.h
    gamma = sensitivity_residual(s_minus, mats)
    denom = h @ p_minus @ h.T + gamma @ w @ gamma.T + mats.r
    k, denom = _solve_gain(p_minus @ h.T + s_minus @ w @ gamma.T, denom)
    return k, gamma, denom


def sdkf_gain(state: SdkfState, mats: StepMatrices, w: SensitivityWeight) -> np.ndarray:
    """Analytical gain minimizing the sensitivity-penalized posterior trace."""
    _check(w.w.shape == (state.s.shape[1],) * 2, "weight vs sensitivity")
    return _desensitized_gain(state.p, state.s, mats, w.w)[0]


def sdkf_measurement_update(
    state: SdkfState, z, mats: StepMatrices, prior: ParameterPrior, w: SensitivityWeight
) -> MeasurementOutcome:
    _check(w.w.shape == (state.s.shape[1],) * 2, "weight vs sensitivity")
    innov = _innovation(z, state.x_hat, mats, prior.p_hat)
    k, gamma, denom = _desensitized_gain(state.p, state.s, mats, w.w)
    s = state.s - k @ gamma
    i_kh = _identity(state.p.shape[0]) - k @ mats.h
    p = i_kh @ state.p + s @ w.w @ gamma.T @ k.T
    new = SdkfState(state.x_hat + innov @ k.T, symmetrize(p), s)
    return MeasurementOutcome(new, k, innov, denom)


# -- consider Kalman filter in sensitivity form --------------------------------

def smckf_time_update(state: SmckfState, mats: StepMatrices, prior: ParameterPrior) -> SmckfState:
    phi, psi = mats.phi, mats.psi
    _check(state.gamma.shape == phi.shape, "reduced covariance vs phi")
    _check(state.s.shape == psi.shape, "sensitivity vs psi")
    x = _propagate_mean(state.x_hat, mats, prior.p_hat)
    s = phi @ state.s + psi
    gamma = phi @ state.gamma @ phi.T + _process_cov(mats)
    return SmckfState(x, symmetrize(gamma), s)


def smckf_measurement_update(
    state: SmckfState, z, mats: StepMatrices, prior: ParameterPrior
) -> MeasurementOutcome:
    p_pp = prior.p_pp
    innov = _innovation(z, state.x_hat, mats, prior.p_hat)
    k, gamma_meas, denom = _desensitized_gain(state.gamma, state.s, mats, p_pp)
    s = state.s - k @ gamma_meas
    i_kh = _identity(state.gamma.shape[0]) - k @ mats.h
    cross = s @ p_pp @ gamma_meas.T @ k.T
    gamma = i_kh @ state.gamma + cross
    full = i_kh @ state.gamma + s @ p_pp @ s.T + cross
    new = SmckfState(state.x_hat + innov @ k.T, symmetrize(gamma), s)
    return MeasurementOutcome(new, k, innov, denom, full_cov=symmetrize(full))


# -- desensitized cost ---------------------------------------------------------

def desensitized_cost(p_minus, s_minus, k_gain, mats: StepMatrices, w: SensitivityWeight) -> float:
    """Posterior trace (Joseph form) plus the weighted sensitivity trace for an arbitrary gain."""
    k = np.asarray(k_gain, dtype=float)
    h = mats.h
    i_kh = _identity(p_minus.shape[0]) - k @ h
    p_plus = i_kh @ p_minus @ i_kh.T + k @ mats.r @ k.T
    s_plus = s_minus - k @ sensitivity_residual(s_minus, mats)
    return float(np.trace(p_plus) + np.trace(s_plus @ w.w @ s_plus.T))


def desensitized_cost_gradient(p_minus, s_minus, k_gain, mats: StepMatrices, w: SensitivityWeight) -> np.ndarray:
    k = np.asarray(k_gain, dtype=float)
    h = mats.h
    gamma = sensitivity_residual(s_minus, mats)
    return 2.0 * (
        k @ (h @ p_minus @ h.T + mats.r)
        - p_minus @ h.T
        - s_minus @ w.w @ gamma.T
        + k @ gamma @ w.w @ gamma.T
    )
