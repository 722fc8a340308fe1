"""Linear state-space models with an uncertain constant parameter.

The system is

    x_k = Phi x_{k-1} + Psi p + G w_{k-1}
    z_k = H x_k + N p + v_k

with zero-mean white Gaussian ``w ~ N(0, Q)``, ``v ~ N(0, R)`` and a random
constant parameter ``p`` whose prior mean and covariance are carried by
:class:`ParameterPrior`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

PSD_FLOOR = -1e-10
SYMMETRY_TOL = 1e-10


class StepMatrices(NamedTuple):
    """Matrices governing one filter step.

    ``phi``, ``psi``, ``g`` and ``q`` drive the propagation into step k;
    ``h``, ``nmat`` and ``r`` define the measurement taken at step k.
    """

    phi: np.ndarray
    psi: np.ndarray
    g: np.ndarray
    q: np.ndarray
    h: np.ndarray
    nmat: np.ndarray
    r: np.ndarray


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce scalars, vectors and nested lists into a 2-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be at most 2-D, got shape {arr.shape}")
    return arr


def as_vector(value, name: str = "vector") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    elif arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    elif arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def max_asymmetry(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.T))) if a.size else 0.0


def min_eigenvalue(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def _is_psd(a: np.ndarray, floor: float = PSD_FLOOR) -> bool:
    return min_eigenvalue(a) >= floor


@dataclass(frozen=True)
class SystemModel:
    """Per-step provider of the system matrices.

    Use :meth:`constant` for time-invariant systems or :meth:`from_function`
    when the matrices depend on the step index.
    """

    n: int
    m: int
    l: int
    provider: Callable[[int], StepMatrices] = field(repr=False, compare=False)
    is_constant: bool = False

    def at(self, k: int) -> StepMatrices:
        return self.provider(k)

    @classmethod
    def constant(cls, phi, psi, g, q, h, nmat, r) -> SystemModel:
        """Build a time-invariant model.

        Dimensions are read from ``phi`` (n), ``r`` (m) and ``psi`` (l); the
        remaining shapes are not checked here, see :func:`validate_model`.
        """
        mats = StepMatrices(
            phi=as_matrix(phi, "phi"),
            psi=as_matrix(psi, "psi"),
            g=as_matrix(g, "g"),
            q=as_matrix(q, "q"),
            h=as_matrix(h, "h"),
            nmat=as_matrix(nmat, "nmat"),
            r=as_matrix(r, "r"),
        )
        for a in mats:
            a.setflags(write=False)
        return cls(
            n=mats.phi.shape[0],
            m=mats.r.shape[0],
            l=mats.psi.shape[1],
            provider=lambda k: mats,
            is_constant=True,
        )

    @classmethod
    def from_function(cls, fn: Callable[[int], StepMatrices], n: int, m: int, l: int) -> SystemModel:
        def provider(k: int) -> StepMatrices:
            return StepMatrices(*(as_matrix(a, name) for a, name in zip(fn(k), StepMatrices._fields)))

        return cls(n=n, m=m, l=l, provider=provider, is_constant=False)

    def replace_parameter_coupling(self, psi=None, nmat=None) -> SystemModel:
        """Return a model identical to this one but with new Psi and/or N."""
        base = self.provider
        l = self.l if psi is None else as_matrix(psi).shape[1]

        def provider(k: int) -> StepMatrices:
            mats = base(k)
            return mats._replace(
                psi=mats.psi if psi is None else as_matrix(psi),
                nmat=mats.nmat if nmat is None else as_matrix(nmat),
            )

        return SystemModel(self.n, self.m, l, provider, self.is_constant)


@dataclass(frozen=True)
class ParameterPrior:
    """Reference value and covariance of the uncertain parameter."""

    p_hat: np.ndarray
    p_pp: np.ndarray

    def __post_init__(self):
        p_hat = as_vector(self.p_hat, "p_hat")
        p_pp = as_matrix(self.p_pp, "p_pp")
        if p_pp.shape != (p_hat.size, p_hat.size):
            raise ValueError(f"p_pp must be {p_hat.size}x{p_hat.size}, got {p_pp.shape}")
        if max_asymmetry(p_pp) > SYMMETRY_TOL:
            raise ValueError("p_pp is not symmetric")
        try:
            np.linalg.cholesky(p_pp)
        except np.linalg.LinAlgError:
            raise ValueError("p_pp is not positive definite") from None
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "p_pp", p_pp)

    @property
    def l(self) -> int:
        return self.p_hat.size


@dataclass(frozen=True)
class SensitivityWeight:
    """Symmetric positive semi-definite weight on the sensitivity penalty."""

    w: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.w, "w")
        if w.shape[0] != w.shape[1]:
            raise ValueError(f"weight must be square, got {w.shape}")
        if max_asymmetry(w) > SYMMETRY_TOL:
            raise ValueError("weight is not symmetric")
        if not _is_psd(w):
            raise ValueError("weight is not positive semi-definite")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_prior(cls, prior: ParameterPrior) -> SensitivityWeight:
        return cls(prior.p_pp)


@dataclass(frozen=True)
class Scenario:
    model: SystemModel
    prior: ParameterPrior
    x0_hat: np.ndarray
    p0: np.ndarray
    s0: np.ndarray | None = None
    steps: int = 100
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        n, l = self.model.n, self.prior.l
        x0 = as_vector(self.x0_hat, "x0_hat")
        p0 = as_matrix(self.p0, "p0")
        s0 = np.zeros((n, l)) if self.s0 is None else as_matrix(self.s0, "s0")
        if x0.shape != (n,) or p0.shape != (n, n) or s0.shape != (n, l):
            raise ValueError("scenario initial conditions inconsistent with model dimensions")
        if max_asymmetry(p0) > SYMMETRY_TOL or not _is_psd(p0):
            raise ValueError("p0 must be symmetric positive semi-definite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        object.__setattr__(self, "x0_hat", x0)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "s0", s0)

    @property
    def c0(self) -> np.ndarray:
        """Initial cross-covariance consistent with the initial sensitivity."""
        return self.s0 @ self.prior.p_pp

    def with_steps(self, steps: int) -> Scenario:
        return Scenario(self.model, self.prior, self.x0_hat, self.p0, self.s0, steps, self.seed, self.name)

    def with_seed(self, seed: int) -> Scenario:
        return Scenario(self.model, self.prior, self.x0_hat, self.p0, self.s0, self.steps, seed, self.name)


@dataclass(frozen=True)
class ValidationIssue:
    k: int
    message: str

    def __str__(self) -> str:
        return f"{self.message} at k={self.k}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.issues)

    def __len__(self) -> int:
        return len(self.issues)

    def messages(self) -> list[str]:
        return [str(i) for i in self.issues]


def validate_model(model: SystemModel, horizon: int) -> ValidationReport:
    """Check shapes, symmetry and definiteness of every step in the horizon.

    Never raises on a bad model; the returned report is empty iff valid.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    report = ValidationReport()
    n, m, l = model.n, model.m, model.l
    steps = [0] if model.is_constant else range(horizon)
    for k in steps:
        try:
            mats = model.at(k)
        except Exception as exc:  # provider failures are reported, not raised
            report.issues.append(ValidationIssue(k, f"model query failed: {exc}"))
            continue
        qdim = mats.g.shape[1]
        expected = {
            "phi": (n, n),
            "psi": (n, l),
            "g": (n, qdim),
            "q": (qdim, qdim),
            "h": (m, n),
            "nmat": (m, l),
            "r": (m, m),
        }
        shapes_ok = True
        for name, shape in expected.items():
            actual = getattr(mats, name).shape
            if actual != shape:
                shapes_ok = False
                report.issues.append(
                    ValidationIssue(k, f"dimension mismatch: {name} has shape {actual}, expected {shape}")
                )
        for name in ("phi", "psi", "g", "q", "h", "nmat", "r"):
            if not np.all(np.isfinite(getattr(mats, name))):
                report.issues.append(ValidationIssue(k, f"{name} has non-finite entries"))
        if not shapes_ok:
            continue
        for name in ("q", "r"):
            a = getattr(mats, name)
            if max_asymmetry(a) > SYMMETRY_TOL:
                report.issues.append(ValidationIssue(k, f"{name.upper()} not symmetric"))
        if not _is_psd(mats.q):
            report.issues.append(ValidationIssue(k, "Q not positive semi-definite"))
        if min_eigenvalue(mats.r) <= 0.0:
            report.issues.append(ValidationIssue(k, "R not positive definite"))
    return report


# -- builtin fixtures ---------------------------------------------------------

_RANDOM_STABLE = re.compile(r"^RANDOM-STABLE\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)$")

FIXTURE_NAMES = ("SCALAR-1", "SCALAR-2", "KF-REDUCTION", "RANDOM-STABLE(seed,n,m,l)")


def _scalar_fixture(name: str, psi: float, nmat: float) -> Scenario:
    model = SystemModel.constant(phi=1.0, psi=psi, g=1.0, q=0.0, h=1.0, nmat=nmat, r=1.0)
    prior = ParameterPrior(p_hat=[0.0], p_pp=[[1.0]])
    return Scenario(model, prior, x0_hat=[0.0], p0=[[1.0]], steps=100, seed=0, name=name)


def random_stable(seed: int, n: int, m: int, l: int, steps: int = 1000) -> Scenario:
    """Seeded random system with a stable transition matrix.

    Phi has spectral radius 0.95; Q = A A^T / n with G = I; R, Ppp and P0 are
    random Gram matrices plus 0.1 I.
    """
    if min(n, m, l) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    rho = np.max(np.abs(np.linalg.eigvals(a)))
    phi = 0.95 * a / rho
    psi = rng.standard_normal((n, l))
    g = np.eye(n)
    qa = rng.standard_normal((n, n))
    q = qa @ qa.T / n
    h = rng.standard_normal((m, n))
    nmat = rng.standard_normal((m, l))
    b = rng.standard_normal((m, m))
    r = b @ b.T + 0.1 * np.eye(m)
    c = rng.standard_normal((l, l))
    p_pp = c @ c.T + 0.1 * np.eye(l)
    p_hat = rng.standard_normal(l)
    d = rng.standard_normal((n, n))
    p0 = d @ d.T / n + 0.1 * np.eye(n)
    x0_hat = rng.standard_normal(n)
    model = SystemModel.constant(phi, psi, g, symmetrize(q), h, nmat, symmetrize(r))
    prior = ParameterPrior(p_hat, symmetrize(p_pp))
    return Scenario(
        model, prior, x0_hat, symmetrize(p0), steps=steps, seed=seed,
        name=f"RANDOM-STABLE({seed},{n},{m},{l})",
    )


def builtin_fixture(name: str) -> Scenario:
    """Look up a builtin scenario by name.

    Accepts ``SCALAR-1``, ``SCALAR-2``, ``KF-REDUCTION`` and
    ``RANDOM-STABLE(seed,n,m,l)``.
    """
    key = name.strip()
    if key == "SCALAR-1":
        return _scalar_fixture(key, psi=1.0, nmat=0.0)
    if key == "SCALAR-2":
        return _scalar_fixture(key, psi=0.0, nmat=1.0)
    if key == "KF-REDUCTION":
        return _scalar_fixture(key, psi=0.0, nmat=0.0)
    match = _RANDOM_STABLE.match(key)
    if match:
        return random_stable(*(int(v) for v in match.groups()))
    raise KeyError(f"unknown fixture {name!r}")
