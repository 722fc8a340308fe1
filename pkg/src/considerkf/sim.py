"""Truth simulation and Monte Carlo consistency campaigns.

Randomness is organized as independent substreams keyed by
``(seed, run, channel)``, so a run's draws never depend on how many other
runs exist or in which order they are processed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import filters as F
from .model import ParameterPrior, Scenario, SensitivityWeight, StepMatrices, as_vector

CHANNELS = {"parameter": 0, "initial": 1, "process": 2, "measurement": 3}
FILTER_IDS = ("KF", "CKF", "SDKF", "SMCKF")


def substream(seed: int, run: int, channel: str) -> np.random.Generator:
    """Counter-based generator for one (run, channel) pair of a master seed."""
    key = np.random.SeedSequence(int(seed), spawn_key=(int(run), CHANNELS[channel]))
    return np.random.Generator(np.random.Philox(key))


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Return L with L @ L.T == cov; tolerates singular PSD matrices."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_parameter(prior: ParameterPrior, rng: np.random.Generator) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(prior.p_pp)
    except np.linalg.LinAlgError as exc:
        raise ValueError("parameter covariance factorization failed") from exc
    return prior.p_hat + chol @ rng.standard_normal(prior.l)


def _advance(x, p, mats: StepMatrices, w_std, v_std, q_factor, r_factor):
    # batched over a leading axis when x, p, w_std, v_std are 2-D
    x_next = x @ mats.phi.T + p @ mats.psi.T + w_std @ (mats.g @ q_factor).T
    z = x_next @ mats.h.T + p @ mats.nmat.T + v_std @ r_factor.T
    return x_next, z


def step_truth(
    x, p, mats: StepMatrices, w_rng: np.random.Generator, v_rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the true state one step and take a noisy measurement.

    Process and measurement noise come from the two separate generators.
    """
    x = as_vector(x, "x")
    p = as_vector(p, "p")
    if x.size != mats.phi.shape[1] or p.size != mats.psi.shape[1]:
        raise ValueError("dimension mismatch: state or parameter vs model")
    w_std = w_rng.standard_normal(mats.q.shape[0])
    v_std = v_rng.standard_normal(mats.r.shape[0])
    return _advance(x, p, mats, w_std, v_std, noise_factor(mats.q), noise_factor(mats.r))


@dataclass(frozen=True)
class TruthRecord:
    k: int
    x_true: np.ndarray
    z: np.ndarray
    p_true: np.ndarray


def simulate(scenario: Scenario, run: int = 0) -> list[TruthRecord]:
    """Simulate one truth trajectory with its measurements.

    The initial true state is drawn from ``N(x0_hat, p0)`` and the parameter
    from its prior; records cover steps ``1..scenario.steps``.
    """
    seed = scenario.seed
    p_true = sample_parameter(scenario.prior, substream(seed, run, "parameter"))
    init = substream(seed, run, "initial")
    x = scenario.x0_hat + noise_factor(scenario.p0) @ init.standard_normal(scenario.model.n)
    w_rng = substream(seed, run, "process")
    v_rng = substream(seed, run, "measurement")
    records = []
    for k in range(scenario.steps):
        x, z = step_truth(x, p_true, scenario.model.at(k), w_rng, v_rng)
        records.append(TruthRecord(k + 1, x, z, p_true))
    return records


def measurements_of(records: Iterable[TruthRecord]) -> np.ndarray:
    return np.array([r.z for r in records])


def nees(error, p) -> float:
    """Normalized estimation error squared ``e^T P^-1 e``."""
    e = as_vector(error, "error")
    try:
        chol = np.linalg.cholesky(np.asarray(p, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular or not positive definite") from exc
    y = np.linalg.solve(chol, e)
    return float(y @ y)


def _nees_rows(errors: np.ndarray, p: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular or not positive definite") from exc
    y = np.linalg.solve(chol, errors.T)
    return np.einsum("ij,ij->j", y, y)


@dataclass
class FilterMetrics:
    rmse: np.ndarray
    mean_nees: np.ndarray
    avg_nees: float
    calibrated: bool = True
    note: str = ""


@dataclass
class McReport:
    runs: int
    steps: int
    filters: dict[str, FilterMetrics] = field(default_factory=dict)


class FilterTracker:
    """One filter advanced step by step; estimates may carry a run axis."""

    def __init__(self, name: str, scenario: Scenario, x0: np.ndarray, weight: SensitivityWeight):
        self.name = name
        self.prior = scenario.prior
        self.weight = weight
        s0, p0 = scenario.s0, scenario.p0
        p_pp = self.prior.p_pp
        if name == "KF":
            self.state = F.KfState(x0, p0)
        elif name == "CKF":
            self.state = F.CkfState(x0, p0, scenario.c0)
        elif name == "SMCKF":
            self.state = F.SmckfState(x0, p0 - s0 @ p_pp @ s0.T, s0)
        elif name == "SDKF":
            self.state = F.SdkfState(x0, p0 - s0 @ p_pp @ s0.T, s0)
        else:
            raise ValueError(f"unknown filter {name!r}; expected one of {FILTER_IDS}")
        self.calibrated = name != "SDKF" or bool(np.allclose(weight.w, p_pp, rtol=0.0, atol=1e-15))

    def step(self, z: np.ndarray, mats: StepMatrices) -> np.ndarray:
        """Advance one step and return the covariance used for NEES."""
        prior = self.prior
        if self.name == "KF":
            out = F.kf_measurement_update(F.kf_time_update(self.state, mats), z, mats)
            self.state = out.state
            return out.state.p
        if self.name == "CKF":
            out = F.ckf_measurement_update(F.ckf_time_update(self.state, mats, prior), z, mats, prior)
            self.state = out.state
            return out.state.p
        if self.name == "SMCKF":
            out = F.smckf_measurement_update(F.smckf_time_update(self.state, mats, prior), z, mats, prior)
            self.state = out.state
            return out.full_cov
        out = F.sdkf_measurement_update(F.sdkf_time_update(self.state, mats, prior), z, mats, prior, self.weight)
        self.state = out.state
        if self.calibrated:
            s = out.state.s
            return out.state.p + s @ prior.p_pp @ s.T
        return out.state.p


def run_monte_carlo(
    scenario: Scenario,
    runs: int,
    filters: Iterable[str] = ("CKF",),
    weight: SensitivityWeight | None = None,
) -> McReport:
    """Run every requested filter on identical simulated measurements.

    All runs advance together: the covariance recursions are shared and the
    estimates carry a leading run axis. Per-run randomness comes from
    :func:`substream`, so results depend only on (scenario, runs, filters).

    Raises:
        ValueError: on ``runs < 1`` or an unknown filter identifier.
        FilterError: on any filter failure, naming the run and step.
    """
    if runs < 1:
        raise ValueError("runs must be ≥ 1")
    names = list(dict.fromkeys(filters))
    if not names:
        raise ValueError("at least one filter is required")
    weight = weight if weight is not None else SensitivityWeight.from_prior(scenario.prior)
    model, prior, seed = scenario.model, scenario.prior, scenario.seed
    n, steps = model.n, scenario.steps

    p_true = np.array([sample_parameter(prior, substream(seed, r, "parameter")) for r in range(runs)])
    x0_std = np.array([substream(seed, r, "initial").standard_normal(n) for r in range(runs)])
    first = model.at(0)
    qdim, m = first.q.shape[0], first.r.shape[0]
    w_std = np.array([substream(seed, r, "process").standard_normal((steps, qdim)) for r in range(runs)])
    v_std = np.array([substream(seed, r, "measurement").standard_normal((steps, m)) for r in range(runs)])

    x_true = scenario.x0_hat + x0_std @ noise_factor(scenario.p0).T
    x0_hat = np.broadcast_to(scenario.x0_hat, (runs, n)).copy()
    trackers = [FilterTracker(name, scenario, x0_hat, weight) for name in names]

    sq_err = {name: np.zeros(n) for name in names}
    mean_nees = {name: np.zeros(steps) for name in names}
    factors = (noise_factor(first.q), noise_factor(first.r)) if model.is_constant else None
    for k in range(steps):
        mats = model.at(k)
        q_factor, r_factor = factors or (noise_factor(mats.q), noise_factor(mats.r))
        x_true, z = _advance(x_true, p_true, mats, w_std[:, k], v_std[:, k], q_factor, r_factor)
        for tracker in trackers:
            try:
                cov = tracker.step(z, mats)
                err = tracker.state.x_hat - x_true
                mean_nees[tracker.name][k] = _nees_rows(err, cov).mean()
            except (F.FilterError, ValueError) as exc:
                raise F.FilterError(f"{tracker.name} failed at step {k} (run 0; covariance shared by all runs): {exc}") from exc
            sq_err[tracker.name] += (err * err).sum(axis=0)

    report = McReport(runs=runs, steps=steps)
    for tracker in trackers:
        name = tracker.name
        note = "" if tracker.calibrated else "not a calibrated covariance"
        report.filters[name] = FilterMetrics(
            rmse=np.sqrt(sq_err[name] / (runs * steps)),
            mean_nees=mean_nees[name],
            avg_nees=float(mean_nees[name].mean()),
            calibrated=tracker.calibrated,
            note=note,
        )
    return report
