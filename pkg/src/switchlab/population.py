"""Fixed finite populations of potential outcomes.

All randomness in a design-based analysis comes from the assignment; the
potential outcomes below are drawn once, from keyed streams, and frozen.

Periods are 0-based throughout the package: period ``t`` here is period
``t + 1`` in the usual 1-based notation. A treatment path prefix for unit
``i`` at period ``t`` is ``w[0..t]`` (length ``t + 1``).

Three outcome structures are supported:

``"none"``
    ``Y[i, t]`` depends on ``w[t]`` only.
``"first"``
    ``Y[i, t]`` depends on ``(w[t-1], w[t])``; before the first period the
    unit is taken to be in control (``w[-1] = 0``).
``"full"``
    Any dependence on the prefix (latent-state carryover).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .streams import POPULATION, stream

SNAPSHOT_FORMAT = "switchlab.population"
SNAPSHOT_VERSION = 1

CARRYOVER_KINDS = ("none", "first", "full")

# Quantity ids used as the third stream-key component.
_U0, _X, _EPS, _B1, _B2, _B3, _LOAD, _FACTOR, _RESID, _NU, _XI = range(11)


@dataclass(frozen=True)
class TrueEstimands:
    """Per-period effects and their average.

    ``per_period`` covers every period for ``regime == "none"`` and periods
    ``1..T-1`` (0-based) otherwise. For ``"full"`` populations the effect is
    the all-treated path against the all-control path.
    """

    regime: str
    per_period: np.ndarray
    sate: float


def _unit_normals(seed, quantity, n_units, size):
    out = np.empty((n_units, size))
    for i in range(n_units):
        out[i] = stream(seed, POPULATION, quantity, i).standard_normal(size)
    return out


def _unit_bernoulli(seed, quantity, n_units, size, p=0.5):
    out = np.empty((n_units, size))
    for i in range(n_units):
        out[i] = stream(seed, POPULATION, quantity, i).random(size) < p
    return out


def _check_dims(n_units, n_periods, *, multiple=2, min_units=2, min_periods=1):
    if int(n_units) != n_units or int(n_periods) != n_periods:
        raise ValueError("population dimensions must be integers")
    if n_units < min_units or n_units % multiple:
        raise ValueError(f"n_units must be a multiple of {multiple} and at least {min_units}, got {n_units}")
    if n_periods < min_periods:
        raise ValueError(f"n_periods must be at least {min_periods}, got {n_periods}")


class PotentialOutcomes:
    """Base class for frozen populations.

    Subclasses implement :meth:`observe` (vectorized over units) and
    :meth:`_tables`; :meth:`outcome` is the single-query form.
    """

    carryover = "none"
    kind = "base"

    def __init__(self, n_units, n_periods, covariates=None, params=None):
        self.n_units = int(n_units)
        self.n_periods = int(n_periods)
        if covariates is None:
            covariates = np.zeros((self.n_units, self.n_periods, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 2:
            covariates = covariates[:, :, None]
        if covariates.shape[:2] != (self.n_units, self.n_periods):
            raise ValueError(f"covariates must have shape (N, T, d_x), got {covariates.shape}")
        covariates.setflags(write=False)
        self.covariates = covariates
        self.params = dict(params or {})

    @property
    def covariate_dim(self) -> int:
        return self.covariates.shape[2]

    def outcome(self, i: int, t: int, path) -> float:
        """Potential outcome of unit ``i`` at period ``t`` under the prefix ``path = w[0..t]``."""
        path = np.asarray(path, dtype=np.int8).reshape(-1)
        if not 0 <= t < self.n_periods:
            raise IndexError(f"period {t} outside 0..{self.n_periods - 1}")
        if path.shape[0] != t + 1:
            raise ValueError(f"path prefix for period {t} must have length {t + 1}, got {path.shape[0]}")
        W = np.zeros((self.n_units, t + 1), dtype=np.int8)
        W[i] = path
        return float(self._observe_units(t, W, np.array([i]))[0])

    def observe(self, t: int, W) -> np.ndarray:
        """Outcomes of all units at period ``t`` given assignments ``W[:, :t+1]``."""
        W = np.asarray(W)
        if W.shape[0] != self.n_units or W.shape[1] < t + 1:
            raise ValueError(f"need assignments for periods 0..{t}, got shape {W.shape}")
        return self._observe_units(t, W[:, : t + 1], np.arange(self.n_units))

    def observe_path(self, W) -> np.ndarray:
        W = np.asarray(W)
        return np.column_stack([self.observe(t, W) for t in range(W.shape[1])])

    def _observe_units(self, t, W, units):
        raise NotImplementedError

    def _tables(self) -> dict:
        raise NotImplementedError

    @property
    def truth(self) -> TrueEstimands:
        if not hasattr(self, "_truth"):
            self._truth = self._estimands()
        return self._truth

    def _estimands(self) -> TrueEstimands:
        raise NotImplementedError

    def snapshot(self) -> dict:
        """JSON-ready description that :func:`from_snapshot` restores exactly."""
        arrays = {name: np.asarray(a).tolist() for name, a in self._tables().items()}
        arrays["covariates"] = self.covariates.tolist()
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": self.kind,
            "carryover": self.carryover,
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "covariate_dim": self.covariate_dim,
            "params": self.params,
            "arrays": arrays,
        }

    def digest(self) -> str:
        payload = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


class NoCarryoverOutcomes(PotentialOutcomes):
    """Outcomes ``y0[i, t]`` and ``y1[i, t]``."""

    carryover = "none"
    kind = "no_carryover"

    def __init__(self, y0, y1, covariates=None, params=None):
        y0 = np.array(y0, dtype=float)
        y1 = np.array(y1, dtype=float)
        if y0.shape != y1.shape or y0.ndim != 2:
            raise ValueError("y0 and y1 must be N x T arrays of equal shape")
        super().__init__(y0.shape[0], y0.shape[1], covariates, params)
        y0.setflags(write=False)
        y1.setflags(write=False)
        self.y0, self.y1 = y0, y1

    def _observe_units(self, t, W, units):
        w = W[units, t].astype(bool)
        return np.where(w, self.y1[units, t], self.y0[units, t])

    def _tables(self):
        return {"y0": self.y0, "y1": self.y1}

    def _estimands(self):
        tau_t = (self.y1 - self.y0).mean(axis=0)
        return TrueEstimands("none", tau_t, float(tau_t.mean()))


class FirstOrderOutcomes(PotentialOutcomes):
    """Outcomes ``table[prev, cur, i, t]`` for first-order carryover."""

    carryover = "first"
    kind = "first_order"

    def __init__(self, table, covariates=None, params=None):
        table = np.array(table, dtype=float)
        if table.ndim != 4 or table.shape[:2] != (2, 2):
            raise ValueError(f"table must have shape (2, 2, N, T), got {table.shape}")
        super().__init__(table.shape[2], table.shape[3], covariates, params)
        table.setflags(write=False)
        self.table = table

    def _observe_units(self, t, W, units):
        cur = W[units, t].astype(np.intp)
        prev = W[units, t - 1].astype(np.intp) if t > 0 else np.zeros_like(cur)
        return self.table[prev, cur, units, t]

    def _tables(self):
        return {"table": self.table}

    def _estimands(self):
        tau_t = (self.table[1, 1] - self.table[0, 0]).mean(axis=0)[1:]
        return TrueEstimands("first", tau_t, float(tau_t.mean()) if tau_t.size else math.nan)


class LatentStateOutcomes(PotentialOutcomes):
    """Markov latent-state carryover.

    ``S[0] = 0``, ``S[t] = rho * S[t-1] + w[t-1] + state_shock[t]`` and
    ``Y[t] = base[t] + 0.5 tanh(S[t]) + 0.5 w[t] tanh(S[t]) + outcome_shock[t]``.
    """

    carryover = "full"
    kind = "latent_state"

    def __init__(self, base, state_shock, outcome_shock, rho, params=None):
        base = np.array(base, dtype=float)
        state_shock = np.array(state_shock, dtype=float)
        outcome_shock = np.array(outcome_shock, dtype=float)
        if not base.shape == state_shock.shape == outcome_shock.shape or base.ndim != 2:
            raise ValueError("base and shocks must be N x T arrays of equal shape")
        if not abs(rho) < 1:
            raise ValueError(f"rho must satisfy |rho| < 1, got {rho}")
        super().__init__(base.shape[0], base.shape[1], None, params)
        for a in (base, state_shock, outcome_shock):
            a.setflags(write=False)
        self.base, self.state_shock, self.outcome_shock = base, state_shock, outcome_shock
        self.rho = float(rho)

    def states(self, W, units=None) -> np.ndarray:
        """Latent states for periods ``0..W.shape[1]-1``."""
        W = np.asarray(W, dtype=float)
        units = np.arange(self.n_units) if units is None else units
        S = np.zeros((len(units), W.shape[1]))
        for s in range(1, W.shape[1]):
            S[:, s] = self.rho * S[:, s - 1] + W[units, s - 1] + self.state_shock[units, s]
        return S

    def _observe_units(self, t, W, units):
        S = self.states(W[:, : t + 1], units)[:, t]
        g = np.tanh(S)
        return self.base[units, t] + 0.5 * g + 0.5 * W[units, t] * g + self.outcome_shock[units, t]

    def _tables(self):
        return {"base": self.base, "state_shock": self.state_shock,
                "outcome_shock": self.outcome_shock, "rho": self.rho}

    def _estimands(self):
        shape = (self.n_units, self.n_periods)
        ones = self.observe_path(np.ones(shape, dtype=np.int8))
        zeros = self.observe_path(np.zeros(shape, dtype=np.int8))
        tau_t = (ones - zeros).mean(axis=0)[1:]
        return TrueEstimands("full", tau_t, float(tau_t.mean()) if tau_t.size else math.nan)


def from_snapshot(snap: dict) -> PotentialOutcomes:
    if snap.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"not a population snapshot: format={snap.get('format')!r}")
    if snap.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported population snapshot version {snap.get('version')}")
    a = snap["arrays"]
    cov = np.array(a["covariates"], dtype=float).reshape(snap["n_units"], snap["n_periods"],
                                                          snap["covariate_dim"])
    kind, params = snap["kind"], snap.get("params", {})
    if kind == NoCarryoverOutcomes.kind:
        return NoCarryoverOutcomes(a["y0"], a["y1"], cov, params)
    if kind == FirstOrderOutcomes.kind:
        return FirstOrderOutcomes(a["table"], cov, params)
    if kind == LatentStateOutcomes.kind:
        return LatentStateOutcomes(a["base"], a["state_shock"], a["outcome_shock"], a["rho"], params)
    raise ValueError(f"unknown population kind {kind!r}")


def save_population(oracle: PotentialOutcomes, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(oracle.snapshot()))
    return path


def load_population(path) -> PotentialOutcomes:
    return from_snapshot(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Data-generating processes


def _ar1_paths(seed, n_units, n_periods, ar, rho_x, noise_sd, covariate_sd, initial):
    X = covariate_sd * _unit_normals(seed, _X, n_units, n_periods)
    eps = noise_sd * _unit_normals(seed, _EPS, n_units, n_periods)
    if initial == "stationary":
        stationary_var = (rho_x**2 * covariate_sd**2 + noise_sd**2) / (1.0 - ar**2)
        u_prev = math.sqrt(stationary_var) * _unit_normals(seed, _U0, n_units, 1)[:, 0]
    elif initial == "zero":
        u_prev = np.zeros(n_units)
    else:
        raise ValueError(f"initial must be 'stationary' or 'zero', got {initial!r}")
    U = np.empty((n_units, n_periods))
    for t in range(n_periods):
        u_prev = ar * u_prev + rho_x * X[:, t] + eps[:, t]
        U[:, t] = u_prev
    return U, X


def make_ar1_no_carryover(n_units, n_periods, rho_x=1.0, seed=0, *, effect=0.5, ar=0.8,
                          noise_sd=0.5, covariate_sd=1.0, initial="stationary") -> NoCarryoverOutcomes:
    """AR(1) outcomes with a contemporaneous covariate and a constant effect.

    ``U[t] = ar * U[t-1] + rho_x * X[t] + eps[t]`` with ``X ~ N(0, covariate_sd^2)``
    and ``eps ~ N(0, noise_sd^2)``; ``Y(0) = U`` and ``Y(1) = U + effect``.
    ``U[-1]`` is drawn from the stationary law (``initial="stationary"``) or
    set to zero.
    """
    _check_dims(n_units, n_periods)
    if not abs(ar) < 1:
        raise ValueError(f"ar must satisfy |ar| < 1, got {ar}")
    U, X = _ar1_paths(seed, n_units, n_periods, ar, rho_x, noise_sd, covariate_sd, initial)
    params = dict(dgp="ar1", rho_x=rho_x, seed=seed, effect=effect, ar=ar, noise_sd=noise_sd,
                  covariate_sd=covariate_sd, initial=initial)
    return NoCarryoverOutcomes(U, U + effect, X, params)


def make_ar1_first_order_carryover(n_units, n_periods, seed=0, *, offsets=(0.0, 1.0, 0.5, 3.5), ar=0.7,
                                   rho_x=1.0, noise_sd=0.5, covariate_sd=1.0,
                                   initial="stationary") -> FirstOrderOutcomes:
    """AR(1) base with arm offsets ``(Y(0,0), Y(0,1), Y(1,0), Y(1,1)) - U``.

    Arms are indexed ``(previous, current)``.
    """
    _check_dims(n_units, n_periods, multiple=4, min_units=4, min_periods=2)
    U, X = _ar1_paths(seed, n_units, n_periods, ar, rho_x, noise_sd, covariate_sd, initial)
    o00, o01, o10, o11 = offsets
    table = np.stack([np.stack([U + o00, U + o01]), np.stack([U + o10, U + o11])])
    params = dict(dgp="ar1_first_order", seed=seed, offsets=list(offsets), ar=ar, rho_x=rho_x,
                  noise_sd=noise_sd, covariate_sd=covariate_sd, initial=initial)
    return FirstOrderOutcomes(table, X, params)


def make_heterogeneous_carryover(n_units, n_periods, seed=0, *, bernoulli=None, ar=0.7, noise_sd=0.5,
                                 covariate_sd=1.0, initial="stationary") -> FirstOrderOutcomes:
    """First-order carryover with unit-period Bernoulli(1/2) effect multipliers.

    Offsets are ``0, 2 B1, B2, 7 B3`` for ``(0,0), (0,1), (1,0), (1,1)``.
    ``bernoulli`` forces every ``B`` to 0 or 1 (for probes).
    """
    _check_dims(n_units, n_periods, multiple=4, min_units=4, min_periods=2)
    U, X = _ar1_paths(seed, n_units, n_periods, ar, 1.0, noise_sd, covariate_sd, initial)
    if bernoulli is None:
        B1, B2, B3 = (_unit_bernoulli(seed, q, n_units, n_periods) for q in (_B1, _B2, _B3))
    elif bernoulli in (0, 1):
        B1 = B2 = B3 = np.full((n_units, n_periods), float(bernoulli))
    else:
        raise ValueError(f"bernoulli override must be None, 0 or 1, got {bernoulli!r}")
    table = np.stack([np.stack([U, U + 2.0 * B1]), np.stack([U + B2, U + 7.0 * B3])])
    params = dict(dgp="heterogeneous", seed=seed, bernoulli=bernoulli, ar=ar, noise_sd=noise_sd,
                  covariate_sd=covariate_sd, initial=initial)
    return FirstOrderOutcomes(table, X, params)


def factor_base_outcomes(n_units, n_periods, seed=0, *, n_factors=2, ar2_coeffs=(0.5, 0.2),
                         innovation_sd=0.1, factor_persistence=0.9, burn_in=100):
    """Low-rank plus AR(2) baseline panel.

    Returns ``(L, e)`` with ``L = u v^T`` of rank ``n_factors`` and ``e`` an
    AR(2) path per unit. Loadings ``u_i ~ N(0, I)``; time factors follow a
    stationary AR(1) with unit marginal variance, so each ``v_t ~ N(0, I)``
    and ``factor_persistence = 0`` gives independent factors.
    """
    if not 0 <= factor_persistence < 1:
        raise ValueError(f"factor_persistence must lie in [0, 1), got {factor_persistence}")
    phi1, phi2 = ar2_coeffs
    if not (phi1 + phi2 < 1 and phi2 - phi1 < 1 and abs(phi2) < 1):
        raise ValueError(f"AR(2) coefficients {ar2_coeffs} are not stationary")
    u = _unit_normals(seed, _LOAD, n_units, n_factors)
    g = stream(seed, POPULATION, _FACTOR, 0)
    innov = g.standard_normal((n_periods, n_factors))
    v = np.empty((n_periods, n_factors))
    v[0] = innov[0]
    scale = math.sqrt(1.0 - factor_persistence**2)
    for t in range(1, n_periods):
        v[t] = factor_persistence * v[t - 1] + scale * innov[t]
    L = u @ v.T

    shocks = innovation_sd * _unit_normals(seed, _RESID, n_units, n_periods + burn_in)
    e = np.zeros((n_units, n_periods + burn_in))
    for t in range(n_periods + burn_in):
        e[:, t] = shocks[:, t]
        if t >= 1:
            e[:, t] += phi1 * e[:, t - 1]
        if t >= 2:
            e[:, t] += phi2 * e[:, t - 2]
    return L, e[:, burn_in:]


def make_synthetic_factor_model(n_units, n_periods, n_factors=2, ar2_coeffs=(0.5, 0.2), tau=0.0,
                                carryover="none", seed=0, *, innovation_sd=0.1,
                                factor_persistence=0.9) -> PotentialOutcomes:
    """Semi-synthetic panel ``Y_base = L + e`` with an additive effect.

    ``carryover="none"``: ``Y(1) = Y_base + tau``. ``carryover="first"``:
    ``Y(0,1) = Y_base + tau``, ``Y(1,0) = Y_base``, ``Y(1,1) = Y_base + 2 tau``,
    so the average effect is ``2 tau``.
    """
    multiple = 4 if carryover == "first" else 2
    _check_dims(n_units, n_periods, multiple=multiple, min_units=4, min_periods=2)
    L, e = factor_base_outcomes(n_units, n_periods, seed, n_factors=n_factors, ar2_coeffs=ar2_coeffs,
                                innovation_sd=innovation_sd, factor_persistence=factor_persistence)
    base = L + e
    params = dict(dgp="factor", seed=seed, n_factors=n_factors, ar2_coeffs=list(ar2_coeffs), tau=tau,
                  carryover=carryover, innovation_sd=innovation_sd, factor_persistence=factor_persistence)
    if carryover == "none":
        return NoCarryoverOutcomes(base, base + tau, None, params)
    if carryover == "first":
        table = np.stack([np.stack([base, base + tau]), np.stack([base, base + 2.0 * tau])])
        return FirstOrderOutcomes(table, None, params)
    raise ValueError(f"carryover must be 'none' or 'first', got {carryover!r}")


def make_markov_latent_carryover(n_units, n_periods, rho, seed=0, *, base_params=None, shock_sd=0.4,
                                 zero_shocks=False) -> LatentStateOutcomes:
    """Latent-state carryover on top of the factor-model baseline.

    ``base_params`` is passed to :func:`factor_base_outcomes`. State and
    outcome shocks are ``N(0, shock_sd^2)``; ``zero_shocks`` sets both to zero.
    """
    _check_dims(n_units, n_periods, multiple=2, min_units=4, min_periods=2)
    base_params = dict(base_params or {})
    L, e = factor_base_outcomes(n_units, n_periods, seed, **base_params)
    if zero_shocks:
        nu = np.zeros((n_units, n_periods))
        xi = np.zeros((n_units, n_periods))
    else:
        nu = shock_sd * _unit_normals(seed, _NU, n_units, n_periods)
        xi = shock_sd * _unit_normals(seed, _XI, n_units, n_periods)
    params = dict(dgp="markov", seed=seed, rho=rho, base_params=base_params, shock_sd=shock_sd,
                  zero_shocks=zero_shocks)
    return LatentStateOutcomes(L + e, nu, xi, rho, params)


DGP_BUILDERS = {
    "ar1": make_ar1_no_carryover,
    "ar1_first_order": make_ar1_first_order_carryover,
    "heterogeneous": make_heterogeneous_carryover,
    "factor": make_synthetic_factor_model,
    "markov": make_markov_latent_carryover,
}
