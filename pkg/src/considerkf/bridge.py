"""Identities linking sensitivity matrices and cross-covariances, and a
lockstep runner demonstrating that the consider filter, its sensitivity form
and the desensitized filter weighted by the parameter covariance coincide.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import filters as F
from .model import ParameterPrior, Scenario, SensitivityWeight, symmetrize

_TINY = 1e-30


def cross_cov_from_sensitivity(s: np.ndarray, prior: ParameterPrior) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[1] != prior.l:
        raise ValueError(f"dimension mismatch: sensitivity {s.shape} vs parameter dimension {prior.l}")
    return s @ prior.p_pp


def recover_full_covariance(gamma: np.ndarray, s: np.ndarray, prior: ParameterPrior) -> np.ndarray:
    """Total error covariance ``Gamma + S Ppp S^T``."""
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1] or s.shape != (gamma.shape[0], prior.l):
        raise ValueError(f"dimension mismatch: gamma {gamma.shape}, sensitivity {s.shape}")
    return symmetrize(gamma + s @ prior.p_pp @ s.T)


def relative_deviation(a, b) -> float:
    """Max-abs difference scaled by the larger max-abs magnitude."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), _TINY)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def covariance_hygiene(p: np.ndarray) -> tuple[float, float]:
    """Return (max asymmetry, min eigenvalue relative to trace scale)."""
    return _stepwise_hygiene(np.asarray(p, dtype=float)[None])


@dataclass(frozen=True)
class StepDeviation:
    k: int
    dev_state: float
    dev_gain: float
    dev_cov: float
    dev_cross: float


@dataclass
class EquivalenceReport:
    steps: int
    max_rel_dev_state: float = 0.0
    max_rel_dev_gain: float = 0.0
    max_rel_dev_cov: float = 0.0
    max_rel_dev_cross: float = 0.0
    # internal SDKF covariance vs SMCKF reduced covariance
    max_rel_dev_reduced_cov: float = 0.0
    max_asymmetry: float = 0.0
    min_eig_ratio: float = float("inf")
    per_step_trace: list[StepDeviation] | None = field(default=None, repr=False)

    @property
    def max_deviation(self) -> float:
        return max(self.max_rel_dev_state, self.max_rel_dev_gain, self.max_rel_dev_cov, self.max_rel_dev_cross)

    def within(self, tolerance: float) -> bool:
        return self.max_deviation <= tolerance


def _stepwise_deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Relative deviation of each leading-axis slice of ``a`` and ``b``."""
    axes = tuple(range(1, a.ndim))
    scale = np.maximum(np.maximum(np.abs(a).max(axis=axes), np.abs(b).max(axis=axes)), _TINY)
    return np.abs(a - b).max(axis=axes) / scale


def _stepwise_hygiene(covs: np.ndarray) -> tuple[float, float]:
    asym = float(np.abs(covs - np.swapaxes(covs, -1, -2)).max())
    scale = np.maximum(np.abs(np.trace(covs, axis1=-2, axis2=-1)), _TINY)
    ratio = float((np.linalg.eigvalsh(0.5 * (covs + np.swapaxes(covs, -1, -2)))[..., 0] / scale).min())
    return asym, ratio


def run_equivalence(
    scenario: Scenario,
    measurements,
    weight: SensitivityWeight | None = None,
    keep_trace: bool = False,
) -> EquivalenceReport:
    """Run CKF, SMCKF and SDKF side by side on one measurement sequence.

    Args:
        scenario: model, prior and initial conditions shared by all filters.
        measurements: array of shape (steps, m); its length must equal
            ``scenario.steps``.
        weight: sensitivity weight for the SDKF. Defaults to the parameter
            covariance, which is the setting under which all three agree.
        keep_trace: also return per-step deviations.

    Raises:
        FilterError: wrapping any filter failure, with the step index.
    """
    prior = scenario.prior
    z_all = np.asarray(measurements, dtype=float)
    if z_all.ndim == 1:
        z_all = z_all.reshape(-1, 1)
    if z_all.shape[0] != scenario.steps:
        raise ValueError(f"expected {scenario.steps} measurements, got {z_all.shape[0]}")
    w = weight if weight is not None else SensitivityWeight.from_prior(prior)

    s0 = scenario.s0
    gamma0 = symmetrize(scenario.p0 - s0 @ prior.p_pp @ s0.T)
    ckf = F.CkfState(scenario.x0_hat, scenario.p0, scenario.c0)
    smckf = F.SmckfState(scenario.x0_hat, gamma0, s0)
    sdkf = F.SdkfState(scenario.x0_hat, gamma0, s0)

    # per step: prior then posterior snapshot of every covariance-like quantity
    ckf_p, ckf_c, sm_gamma, sm_s, sd_p, sd_s = [], [], [], [], [], []
    states, gains, sm_full = [], [], []

    def snapshot():
        ckf_p.append(ckf.p)
        ckf_c.append(ckf.c)
        sm_gamma.append(smckf.gamma)
        sm_s.append(smckf.s)
        sd_p.append(sdkf.p)
        sd_s.append(sdkf.s)

    for k in range(scenario.steps):
        mats = scenario.model.at(k)
        try:
            ckf = F.ckf_time_update(ckf, mats, prior)
            smckf = F.smckf_time_update(smckf, mats, prior)
            sdkf = F.sdkf_time_update(sdkf, mats, prior)
            snapshot()
            out_c = F.ckf_measurement_update(ckf, z_all[k], mats, prior)
            out_m = F.smckf_measurement_update(smckf, z_all[k], mats, prior)
            out_d = F.sdkf_measurement_update(sdkf, z_all[k], mats, prior, w)
        except (F.FilterError, ValueError, np.linalg.LinAlgError) as exc:
            raise F.FilterError(f"step {k}: {exc}") from exc
        ckf, smckf, sdkf = out_c.state, out_m.state, out_d.state
        snapshot()
        states.append((ckf.x_hat, smckf.x_hat, sdkf.x_hat))
        gains.append((out_c.gain, out_m.gain, out_d.gain))
        sm_full.append(out_m.full_cov)

    p_pp = prior.p_pp
    ckf_p, ckf_c = np.asarray(ckf_p), np.asarray(ckf_c)
    sm_gamma, sm_s = np.asarray(sm_gamma), np.asarray(sm_s)
    sd_p, sd_s = np.asarray(sd_p), np.asarray(sd_s)
    sm_recovered = sm_gamma + sm_s @ p_pp @ np.swapaxes(sm_s, -1, -2)
    # posterior SMCKF covariance is the one the filter itself reports
    sm_recovered[1::2] = np.asarray(sm_full)
    sd_recovered = sd_p + sd_s @ p_pp @ np.swapaxes(sd_s, -1, -2)

    def per_step(dev: np.ndarray) -> np.ndarray:
        return dev.reshape(-1, 2).max(axis=1)

    def pairwise(rows) -> np.ndarray:
        a = np.asarray(rows)
        return np.maximum.reduce([
            _stepwise_deviation(a[:, 0], a[:, 1]),
            _stepwise_deviation(a[:, 0], a[:, 2]),
            _stepwise_deviation(a[:, 1], a[:, 2]),
        ])

    dev_state = pairwise(states)
    dev_gain = pairwise(gains)
    dev_cov = per_step(np.maximum(_stepwise_deviation(ckf_p, sm_recovered),
                                  _stepwise_deviation(ckf_p, sd_recovered)))
    dev_cross = per_step(np.maximum(_stepwise_deviation(ckf_c, sm_s @ p_pp),
                                    _stepwise_deviation(ckf_c, sd_s @ p_pp)))
    asym, ratio = _stepwise_hygiene(np.concatenate([ckf_p, sm_recovered, sd_recovered, sm_gamma, sd_p]))

    report = EquivalenceReport(
        steps=scenario.steps,
        max_rel_dev_state=float(dev_state.max()),
        max_rel_dev_gain=float(dev_gain.max()),
        max_rel_dev_cov=float(dev_cov.max()),
        max_rel_dev_cross=float(dev_cross.max()),
        max_rel_dev_reduced_cov=float(_stepwise_deviation(sm_gamma, sd_p).max()),
        max_asymmetry=asym,
        min_eig_ratio=ratio,
    )
    if keep_trace:
        report.per_step_trace = [
            StepDeviation(k + 1, float(a), float(b), float(c), float(d))
            for k, (a, b, c, d) in enumerate(zip(dev_state, dev_gain, dev_cov, dev_cross))
        ]
    return report
