"""Optimizer step rules and runners.

Implements spectral subgradient descent (specGD), its momentum form (Muon),
the nuclear-norm rescaled variant (regMuon), elementwise sign methods
(signGD, signMomentum), the error-feedback loop EF-M with its specializations
EF-Muon and EF-MuonMax, the product-norm method MuonMax, stepsize schedules,
and the convergence-bound evaluator for the error-feedback method.

Step functions are pure: they take a state and return (new_state, StepInfo).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg, norms


# ---------------------------------------------------------------------------
# Stepsize schedules


@dataclass(frozen=True)
class Constant:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("stepsize must be positive")

    def value(self, t: int, momentum=None) -> float:
        return self.lam

    def limit(self) -> float:
        return self.lam


@dataclass(frozen=True)
class InvT:
    """lambda_t = 1 / (t + 1)."""

    def value(self, t: int, momentum=None) -> float:
        return 1.0 / (t + 1)

    def limit(self) -> float:
        return 0.0


@dataclass(frozen=True)
class InvSqrtT:
    """lambda_t = 1 / sqrt(t + 1)."""

    def value(self, t: int, momentum=None) -> float:
        return 1.0 / math.sqrt(t + 1)

    def limit(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Table:
    """Explicit stepsize list; steps past the end clamp to the last value."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 1:
            raise ValueError("Table needs at least one stepsize")
        if any(not v > 0 for v in vals):
            raise ValueError("stepsize must be positive")

    def value(self, t: int, momentum=None) -> float:
        return self.values[min(t, len(self.values) - 1)]

    def limit(self) -> float:
        return self.values[-1]


@dataclass(frozen=True)
class AdaptiveNuclear:
    """lambda_t = base * ||M_t||_nuc, an offline function of past subgradients."""

    base: float

    def __post_init__(self):
        if not self.base > 0:
            raise ValueError("base stepsize must be positive")

    def value(self, t: int, momentum=None) -> float:
        if momentum is None:
            raise ValueError("AdaptiveNuclear needs the momentum buffer")
        return self.base * linalg.norm(momentum, "nuc")

    def limit(self) -> float:
        raise ValueError("AdaptiveNuclear has no offline limit")


def schedule_is_offline(schedule) -> bool:
    return not isinstance(schedule, AdaptiveNuclear)


# ---------------------------------------------------------------------------
# Oracles


class FunctionOracle:
    """Deterministic subgradient oracle from a value and subgradient callable."""

    def __init__(self, fn, subgrad):
        self.fn = fn
        self.subgrad = subgrad

    def evaluate(self, W):
        return float(self.fn(W)), self.subgrad(W)


class NoisyOracle:
    """Wraps a base oracle with seeded additive Gaussian noise on the subgradient."""

    def __init__(self, base, noise_std: float, seed: int = 0):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.base = base
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)

    def evaluate(self, W):
        value, G = self.base.evaluate(W)
        if self.noise_std == 0:
            return value, G
        if isinstance(G, norms.ParamPoint):
            noisy = norms.ParamPoint(
                [M + self.noise_std * self.rng.standard_normal(M.shape) for M in G.matrices],
                G.theta + self.noise_std * self.rng.standard_normal(G.theta.shape),
            )
            return value, noisy
        return value, G + self.noise_std * self.rng.standard_normal(np.shape(G))


# ---------------------------------------------------------------------------
# State and steps


@dataclass
class OptimizerState:
    """Iterate plus momentum / error-feedback buffers and method config."""

    W: object
    beta: float = 0.0
    schedule: object = None
    spec: object = None
    M: object = None
    E: object = None
    t: int = 0
    polar: object = linalg.polar_exact

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.M is None:
            self.M = norms.zeros_like(self.W)
        if self.E is None:
            self.E = norms.zeros_like(self.W)


def _advance(state: OptimizerState, **fields) -> "OptimizerState":
    # Hot path: clone without re-running __post_init__ validation.
    new = OptimizerState.__new__(OptimizerState)
    new.__dict__.update(state.__dict__)
    new.__dict__.update(fields)
    return new


@dataclass(frozen=True)
class StepInfo:
    value: float
    grad: object
    lam: float


def _momentum(state: OptimizerState, G):
    if state.beta == 0.0:
        return G
    return state.beta * state.M + (1.0 - state.beta) * G


def _lam(state: OptimizerState, M) -> float:
    return state.schedule.value(state.t, momentum=M)


def step_specgd(state, oracle):
    """W' = W - lambda_t polar(G_t)."""
    value, G = oracle.evaluate(state.W)
    lam = _lam(state, G)
    W = state.W - lam * state.polar(G)
    return _advance(state, W=W, M=G, t=state.t + 1), StepInfo(value, G, lam)


def step_muon(state, oracle):
    """M' = beta M + (1-beta) G; W' = W - lambda_t polar(M')."""
    value, G = oracle.evaluate(state.W)
    M = _momentum(state, G)
    lam = _lam(state, M)
    W = state.W - lam * state.polar(M)
    return _advance(state, W=W, M=M, t=state.t + 1), StepInfo(value, G, lam)


def step_regmuon(state, oracle):
    """Muon step rescaled by the nuclear norm of the momentum."""
    value, G = oracle.evaluate(state.W)
    M = _momentum(state, G)
    lam = state.schedule.value(state.t, momentum=M)
    lam_eff = lam if isinstance(state.schedule, AdaptiveNuclear) else lam * linalg.norm(M, "nuc")
    W = state.W - lam_eff * state.polar(M)
    return _advance(state, W=W, M=M, t=state.t + 1), StepInfo(value, G, lam_eff)


def step_signgd(state, oracle):
    value, G = oracle.evaluate(state.W)
    lam = _lam(state, G)
    W = state.W - lam * np.sign(G)
    return _advance(state, W=W, M=G, t=state.t + 1), StepInfo(value, G, lam)


def step_signmomentum(state, oracle):
    value, G = oracle.evaluate(state.W)
    M = _momentum(state, G)
    lam = _lam(state, M)
    W = state.W - lam * np.sign(M)
    return _advance(state, W=W, M=M, t=state.t + 1), StepInfo(value, G, lam)


def identity_compressor(W):
    return W


def step_efm(state, oracle, compressor):
    """Error-feedback momentum step.

    P_t = E_t + lambda_t M_t; W' = W - C(P_t); E' = P_t - C(P_t).
    """
    value, G = oracle.evaluate(state.W)
    M = _momentum(state, G)
    lam = _lam(state, M)
    P = state.E + lam * M
    C = compressor(P)
    W = state.W - C
    E = P - C
    return _advance(state, W=W, M=M, E=E, t=state.t + 1), StepInfo(value, G, lam)


def _operator_compressor(P):
    r = min(np.shape(P))
    return (linalg.norm(P, "nuc") / r) * linalg.polar_exact(P)


def step_efmuon(state, oracle):
    """EF-M with the operator-norm compressor (1/r) ||P||_nuc polar(P)."""
    return step_efm(state, oracle, _operator_compressor)


def step_muonmax(state, oracle):
    """Product-norm regularized step: W' = W - lambda_t ||M||_* lmo_min(M)."""
    if not isinstance(state.spec, norms.ProductNormSpec):
        raise ValueError("step_muonmax requires a ProductNormSpec")
    value, G = oracle.evaluate(state.W)
    M = _momentum(state, G)
    lam = _lam(state, M)
    dn = norms.dual_norm(M, state.spec)
    W = state.W - (lam * dn) * norms.lmo_min(M, state.spec)
    return _advance(state, W=W, M=M, t=state.t + 1), StepInfo(value, G, lam)


def step_efmuonmax(state, oracle):
    """EF-M with the product-norm compressor."""
    if not isinstance(state.spec, norms.ProductNormSpec):
        raise ValueError("step_efmuonmax requires a ProductNormSpec")
    spec = state.spec
    return step_efm(state, oracle, lambda P: norms.compress(P, spec))


STEP_FUNCTIONS = {
    "specgd": step_specgd,
    "muon": step_muon,
    "regmuon": step_regmuon,
    "signgd": step_signgd,
    "signmomentum": step_signmomentum,
    "efmuon": step_efmuon,
    "muonmax": step_muonmax,
    "efmuonmax": step_efmuonmax,
}


# ---------------------------------------------------------------------------
# Runner and trace


def _readout(W):
    """First two diagonal entries (matrix), first two entries (vector)."""
    if isinstance(W, norms.ParamPoint):
        W = W.matrices[0]
    W = np.asarray(W, float)
    if W.ndim == 1:
        w1 = float(W[0])
        w2 = float(W[1]) if W.size > 1 else 0.0
    else:
        w1 = float(W[0, 0])
        w2 = float(W[1, 1]) if min(W.shape) > 1 else 0.0
    return w1, w2


@dataclass
class Trace:
    """Per-step records of a run; row 0 is the initial point, length T + 1.

    The stepsize and gradient norm of the final row are NaN since no step is
    taken from the last iterate.  ``favg`` is the objective at the running
    mean of the iterates, used to check the averaged-iterate bound.
    """

    t: np.ndarray
    lam: np.ndarray
    f: np.ndarray
    w11: np.ndarray
    w22: np.ndarray
    grad_fro: np.ndarray
    favg: np.ndarray

    @property
    def sum_diag(self) -> np.ndarray:
        return self.w11 + self.w22

    @property
    def diff_diag(self) -> np.ndarray:
        return self.w11 - self.w22

    def __len__(self) -> int:
        return len(self.t)


def run(method, oracle, state0, T: int, compressor=None, track_average: bool = True) -> Trace:
    """Run ``T`` steps of a named method (or a step callable) from state0.

    Records T + 1 rows.  ``compressor`` is only consulted by "efm".  With
    ``track_average`` off the favg column is NaN, which skips one oracle
    evaluation per step.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if callable(method):
        step = method
    elif method == "efm":
        comp = identity_compressor if compressor is None else compressor
        step = lambda s, o: step_efm(s, o, comp)
    else:
        try:
            step = STEP_FUNCTIONS[method]
        except KeyError:
            raise ValueError(f"unknown method {method!r}") from None

    n = T + 1
    tr = Trace(
        t=np.arange(n, dtype=float),
        lam=np.full(n, np.nan),
        f=np.full(n, np.nan),
        w11=np.full(n, np.nan),
        w22=np.full(n, np.nan),
        grad_fro=np.full(n, np.nan),
        favg=np.full(n, np.nan),
    )
    state = state0
    mean = state.W  # running mean of W_0 .. W_t
    for i in range(n):
        tr.w11[i], tr.w22[i] = _readout(state.W)
        if track_average:
            tr.favg[i] = oracle.evaluate(mean)[0]
        if i == T:
            tr.f[i] = oracle.evaluate(state.W)[0]
            break
        try:
            state, info = step(state, oracle)
        except linalg.NumericalError as exc:
            raise linalg.NumericalError(f"step t={i} failed: {exc}") from exc
        tr.f[i] = info.value
        tr.lam[i] = info.lam
        tr.grad_fro[i] = norms.fro(info.grad)
        if track_average:
            mean = mean + (1.0 / (i + 2)) * (state.W - mean)
    return tr


# ---------------------------------------------------------------------------
# Convergence bound


def _check_bound_domain(delta, beta, sigma, dist0):
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if dist0 < 0:
        raise ValueError("dist0 must be nonnegative")


def efm_bound(T: int, delta: float, beta: float, sigma: float, dist0: float) -> float:
    """Averaged-iterate suboptimality bound for EF-M with lambda_t = 1/sqrt(t+1).

    dist0^2 / (2 sqrt(T+1))
      + sigma^2 (2 sqrt(1-delta)/delta + beta/(1-beta) + 1/2) (1 + log(T+1)) / sqrt(T+1)
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    _check_bound_domain(delta, beta, sigma, dist0)
    coeff = 2.0 * math.sqrt(1.0 - delta) / delta + beta / (1.0 - beta) + 0.5
    root = math.sqrt(T + 1.0)
    return dist0**2 / (2.0 * root) + sigma**2 * coeff * (1.0 + math.log(T + 1.0)) / root


def efm_bound_schedule(lams, delta: float, beta: float, sigma: float, dist0: float) -> float:
    """General-schedule form of the bound with nonincreasing stepsizes lams[0..T].

    dist0^2 / (2 lam_T (T+1))
      + sigma^2 (2 sqrt(1-delta)/delta + beta/(1-beta) + 1/2) sum(lam_t^2) / (lam_T (T+1))
    """
    _check_bound_domain(delta, beta, sigma, dist0)
    lams = np.asarray(lams, float)
    if lams.ndim != 1 or lams.size < 1:
        raise ValueError("lams must be a nonempty 1-d sequence")
    if np.any(lams <= 0):
        raise ValueError("stepsize must be positive")
    coeff = 2.0 * math.sqrt(1.0 - delta) / delta + beta / (1.0 - beta) + 0.5
    T1 = lams.size
    tail = lams[-1] * T1
    return dist0**2 / (2.0 * tail) + sigma**2 * coeff * float(np.sum(lams**2)) / tail
