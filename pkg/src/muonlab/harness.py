"""Experiment configuration, CSV trace emission, and the property-check
suites behind the command line interface and the acceptance tests.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import counterexample as cex
from . import linalg, norms, optim

CSV_COLUMNS = ("t", "lambda", "f", "w11", "w22", "sum_diag", "diff_diag",
               "grad_fro", "favg", "bound")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _preset_cex1():
    return {
        "method": "muon",
        "beta": 0.9,
        "c": "auto",
        "style": "appendix_e",
        "schedule": {"kind": "invt"},
        "T": 5000,
        "init": {"kind": "cex1", "r": 1.0, "delta": 0.0},
        "m": 2, "n": 2,
        "seed": 0,
        "polar": "exact",
        "track_average": True,
    }


def _preset_efm():
    return {
        "method": "efmuon",
        "beta": 0.9,
        "c": "auto",
        "style": "appendix_e",
        "schedule": {"kind": "invsqrt"},
        "T": 5000,
        "init": {"kind": "explicit", "diag": [1.0 + math.log(2.0), 1.0 - math.log(2.0)]},
        "m": 2, "n": 2,
        "seed": 0,
        "polar": "exact",
        "track_average": True,
        "bound": {},
    }


PRESETS = {
    "cex1-appendixE": _preset_cex1,
    "efm-appendixE": _preset_efm,
}

_AUTO_C = {
    "cex1": lambda beta: (1.0 - beta) / 2.0,
    "cex2": lambda beta: 0.5 - beta,
    "appendix_e": lambda beta: (1.0 - beta) / (2.0 * (1.0 + beta)),
}


def build_schedule(spec: dict):
    try:
        kind = spec["kind"]
    except (TypeError, KeyError):
        raise ConfigError("schedule needs a 'kind' field") from None
    try:
        if kind == "constant":
            return optim.Constant(float(spec["lam"]))
        if kind == "invt":
            return optim.InvT()
        if kind == "invsqrt":
            return optim.InvSqrtT()
        if kind == "table":
            return optim.Table(tuple(spec["values"]))
        if kind == "adaptive_nuclear":
            return optim.AdaptiveNuclear(float(spec["base"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad schedule spec: {exc}") from exc
    raise ConfigError(f"unknown schedule kind {kind!r}")


def resolve_config(raw: dict) -> dict:
    """Fill defaults and resolve 'auto' fields into a fully explicit config."""
    cfg = dict(raw)
    for key, default in (("beta", 0.0), ("c", "auto"), ("style", "cex1"),
                         ("m", 2), ("n", 2), ("seed", 0), ("polar", "exact"),
                         ("track_average", True)):
        cfg.setdefault(key, default)
    for key in ("method", "schedule", "T", "init"):
        if key not in cfg:
            raise ConfigError(f"config is missing {key!r}")
    if cfg["method"] not in optim.STEP_FUNCTIONS and cfg["method"] != "efm":
        raise ConfigError(f"unknown method {cfg['method']!r}")
    beta = float(cfg["beta"])
    if not 0.0 <= beta < 1.0:
        raise ConfigError("beta must lie in [0, 1)")
    cfg["beta"] = beta
    if cfg["c"] == "auto":
        try:
            cfg["c"] = _AUTO_C[cfg["style"]](beta)
        except KeyError:
            raise ConfigError(f"unknown style {cfg['style']!r}") from None
    cfg["c"] = float(cfg["c"])
    if not 0.0 < cfg["c"] < 1.0:
        raise ConfigError("c must lie in (0, 1)")
    cfg["T"] = int(cfg["T"])
    if cfg["T"] < 0:
        raise ConfigError("T must be nonnegative")
    if cfg["polar"] not in ("exact", "ns"):
        raise ConfigError("polar must be 'exact' or 'ns'")
    build_schedule(cfg["schedule"])  # validate early
    return cfg


def _build_init(cfg: dict, schedule):
    init = cfg["init"]
    m, n = cfg["m"], cfg["n"]
    kind = init.get("kind")
    if kind == "cex1":
        _, W0, _ = cex.cex1_build(
            cfg["beta"], schedule,
            r=float(init.get("r", 1.0)), delta=float(init.get("delta", 0.0)),
            c=cfg["c"], m=m, n=n, horizon=cfg["T"],
        )
        return W0
    if kind == "random":
        rng = np.random.default_rng(cfg["seed"])
        return float(init.get("scale", 1.0)) * rng.standard_normal((m, n))
    if kind == "explicit":
        if "matrix" in init:
            W0 = linalg.as_matrix(init["matrix"])
            if W0.shape != (m, n):
                raise ConfigError("explicit matrix shape mismatch")
            return W0
        if "diag" in init:
            d1, d2 = init["diag"]
            W0 = np.zeros((m, n))
            W0[0, 0] = float(d1)
            W0[1, 1] = float(d2)
            return W0
        raise ConfigError("explicit init needs 'matrix' or 'diag'")
    raise ConfigError(f"unknown init kind {kind!r}")


def run_experiment(raw_config: dict):
    """Run a configured experiment; returns (Trace, bound column, resolved config)."""
    cfg = resolve_config(raw_config)
    schedule = build_schedule(cfg["schedule"])
    W0 = _build_init(cfg, schedule)
    fn = cex.KinkyFunction(c=cfg["c"], m=cfg["m"], n=cfg["n"])
    polar = linalg.polar_exact if cfg["polar"] == "exact" else linalg.polar_newton_schulz
    state = optim.OptimizerState(W=W0, beta=cfg["beta"], schedule=schedule, polar=polar)
    trace = optim.run(cfg["method"], fn.oracle(), state, cfg["T"],
                      track_average=cfg["track_average"])
    bound = np.full(len(trace), np.nan)
    if "bound" in cfg:
        b = dict(cfg["bound"] or {})
        b.setdefault("delta", 1.0 / min(cfg["m"], cfg["n"]))
        b.setdefault("sigma", cex.lipschitz_bound(cfg["c"]))
        b.setdefault("dist0", math.hypot(W0[0, 0], W0[1, 1]))
        cfg["bound"] = b
        for t in range(len(trace)):
            bound[t] = optim.efm_bound(t, b["delta"], cfg["beta"], b["sigma"], b["dist0"])
    return trace, bound, cfg


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_csv(path: str, trace: optim.Trace, bound: np.ndarray):
    """CSV with fixed columns, 17 significant digits, LF endings."""
    rows = [",".join(CSV_COLUMNS)]
    for i in range(len(trace)):
        rows.append(",".join(_fmt(v) for v in (
            trace.t[i], trace.lam[i], trace.f[i], trace.w11[i], trace.w22[i],
            trace.sum_diag[i], trace.diff_diag[i], trace.grad_fro[i],
            trace.favg[i], bound[i],
        )))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def write_sidecar(path: str, cfg: dict):
    root, _ = os.path.splitext(path)
    with open(root + ".config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Property suites


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    observed: float
    required: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: observed {self.observed:.3e}, required <= {self.required:.3e}"


def _random_well_conditioned(rng, m, n):
    # Singular values in [0.5, 2] keep the condition number under 4.
    r = min(m, n)
    U = np.linalg.qr(rng.standard_normal((m, r)))[0]
    V = np.linalg.qr(rng.standard_normal((n, r)))[0]
    s = rng.uniform(0.5, 2.0, r)
    return (U * s) @ V.T


def suite_polar(trials: int = 500) -> list:
    rng = np.random.default_rng(7)
    worst_ns = 0.0
    for _ in range(trials):
        m, n = rng.integers(2, 9, 2)
        A = _random_well_conditioned(rng, m, n)
        err = float(np.linalg.norm(
            linalg.polar_newton_schulz(A) - linalg.polar_exact(A)))
        worst_ns = max(worst_ns, err)
    worst_diag = 0.0
    for _ in range(200):
        m, n = rng.integers(2, 7, 2)
        D = np.zeros((m, n))
        d = min(m, n)
        vals = rng.standard_normal(d)
        vals[rng.random(d) < 0.3] = 0.0
        D[np.arange(d), np.arange(d)] = vals
        worst_diag = max(worst_diag, float(np.max(np.abs(
            linalg.polar_exact(D) - np.sign(D)))))
    return [
        CheckResult("newton-schulz vs exact polar", worst_ns <= 1e-4, worst_ns, 1e-4),
        CheckResult("polar of diagonal equals sign", worst_diag == 0.0, worst_diag, 0.0),
    ]


def _random_piecewise_linear_oracle(rng, d):
    """Convex f(w) = sum_j a_j |<u_j, w> + b_j| with its subgradient."""
    k = int(rng.integers(2, 6))
    a = rng.uniform(0.2, 2.0, k)
    U = rng.standard_normal((k, d))
    b = rng.standard_normal(k)

    def fn(w):
        return float(a @ np.abs(U @ w + b))

    def grad(w):
        return (a * np.sign(U @ w + b)) @ U

    return optim.FunctionOracle(fn, grad)


def suite_reduction(trials: int = 50, steps: int = 100) -> list:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 5))
        beta = float(rng.uniform(0.0, 0.99))
        schedule = [optim.Constant(float(rng.uniform(0.01, 0.5))),
                    optim.InvT(), optim.InvSqrtT()][int(rng.integers(0, 3))]
        vec = _random_piecewise_linear_oracle(rng, d)
        idx = np.arange(d)
        mat = optim.FunctionOracle(
            lambda W, o=vec: o.fn(np.diagonal(W)),
            lambda W, o=vec, d=d: np.diag(o.subgrad(np.diagonal(W))),
        )
        w0 = rng.standard_normal(d)
        sm = optim.OptimizerState(W=w0.copy(), beta=beta, schedule=schedule)
        mu = optim.OptimizerState(W=np.diag(w0), beta=beta, schedule=schedule)
        for _ in range(steps):
            sm, _ = optim.step_signmomentum(sm, vec)
            mu, _ = optim.step_muon(mu, mat)
            worst = max(worst, float(np.max(np.abs(np.diagonal(mu.W) - sm.W))))
            off = mu.W - np.diag(np.diagonal(mu.W))
            worst = max(worst, float(np.max(np.abs(off))))
    return [CheckResult("momentum spectral vs signed momentum on diagonals",
                        worst <= 1e-12, worst, 1e-12)]


def _spec_samples(rng, spec, trials):
    for _ in range(trials):
        if isinstance(spec, (norms.L1, norms.L2, norms.Linf, norms.Lp)):
            d = int(rng.integers(2, 21))
            yield rng.standard_normal(d), d
        elif isinstance(spec, (norms.OperatorNorm, norms.NuclearNorm)):
            m, n = rng.integers(2, 8, 2)
            yield rng.standard_normal((m, n)), (int(m), int(n))
        else:
            yield ParamPointSampler(rng, spec)(), None


class ParamPointSampler:
    def __init__(self, rng, spec):
        self.rng = rng
        self.spec = spec

    def __call__(self):
        return norms.ParamPoint(
            [self.rng.standard_normal(dims) for dims in self.spec.layer_dims],
            self.rng.standard_normal(self.spec.k),
        )


def _basic_specs():
    return [norms.L1(), norms.L2(), norms.Linf(), norms.Lp(1.5), norms.Lp(3.0),
            norms.OperatorNorm(), norms.NuclearNorm()]


def _product_spec():
    return norms.ProductNormSpec(layer_dims=((3, 4), (2, 2)), s=1.5, k=3)


def suite_compressor(trials: int = 1000) -> list:
    rng = np.random.default_rng(13)
    results = []
    for spec in _basic_specs():
        worst = -np.inf
        for W, dims in _spec_samples(rng, spec, trials):
            delta = norms.compressor_constants(spec, dims).delta
            C = norms.compress(W, spec)
            lhs = norms.fro(W - C) ** 2
            rhs = (1.0 - delta) * norms.fro(W) ** 2
            worst = max(worst, lhs - rhs)
        results.append(CheckResult(
            f"compression contraction [{type(spec).__name__}]",
            worst <= 1e-8, worst, 1e-8))
    spec = _product_spec()
    alpha = min(1.0, 1.0 / math.sqrt(spec.s * spec.num_layers))
    worst = -np.inf
    for W, _ in _spec_samples(rng, spec, trials):
        C = norms.compress(W, spec)
        lhs = norms.fro(W - C) ** 2
        rhs = norms.fro(W) ** 2 - alpha**2 * norms.dual_norm(W, spec) ** 2
        worst = max(worst, lhs - rhs)
    results.append(CheckResult(
        "compression contraction [Product, proof-line]",
        worst <= 1e-8, worst, 1e-8))
    return results


def suite_lmo(trials: int = 1000) -> list:
    rng = np.random.default_rng(17)
    results = []
    for spec in _basic_specs() + [_product_spec()]:
        worst_pair = 0.0
        worst_primal = 0.0
        for W, _ in _spec_samples(rng, spec, trials):
            X = norms.lmo_min(W, spec)
            dn = norms.dual_norm(W, spec)
            worst_pair = max(worst_pair, abs(norms.inner(W, X) - dn))
            worst_primal = max(worst_primal, norms.primal_norm(X, spec))
        results.append(CheckResult(
            f"lmo pairing equals dual norm [{type(spec).__name__}]",
            worst_pair <= 1e-8, worst_pair, 1e-8))
        results.append(CheckResult(
            f"lmo stays in the unit ball [{type(spec).__name__}]",
            worst_primal <= 1.0 + 1e-10, worst_primal, 1.0 + 1e-10))

    # Least-Frobenius optimality on rank-deficient 3x3 inputs: brute-force
    # the argmax set U_r V_r^T + U_perp E V_perp^T over a grid of E.
    spec = norms.OperatorNorm()
    worst_gap = 0.0
    for _ in range(20):
        rank = int(rng.integers(1, 3))
        U = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        V = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        s = np.sort(rng.uniform(0.5, 2.0, rank))[::-1]
        A = (U[:, :rank] * s) @ V[:, :rank].T
        X = norms.lmo_min(A, spec)
        base = U[:, :rank] @ V[:, :rank].T
        Up, Vp = U[:, rank:], V[:, rank:]
        k = 3 - rank
        best = np.inf
        for _ in range(400):
            E = rng.uniform(-1.0, 1.0, (k, k))
            op = np.linalg.norm(E, 2)
            if op > 1.0:
                E = E / op
            cand = base + Up @ E @ Vp.T
            best = min(best, float(np.linalg.norm(cand)))
        worst_gap = max(worst_gap, float(np.linalg.norm(X)) - best)
    results.append(CheckResult(
        "lmo least-Frobenius vs brute force (rank-deficient 3x3)",
        worst_gap <= 1e-8, worst_gap, 1e-8))
    return results


def suite_cex1(T: int = 5000) -> list:
    results = []
    rng = np.random.default_rng(19)
    table = optim.Table(tuple(np.sort(rng.uniform(0.05, 0.4, 64))[::-1]))
    for beta in (0.0, 0.5, 0.9):
        for label, schedule in (("Constant(0.2)", optim.Constant(0.2)),
                                ("InvT", optim.InvT()),
                                ("Table", table)):
            fn, W0, init = cex.cex1_build(beta, schedule, horizon=T)
            state = optim.OptimizerState(W=W0, beta=beta, schedule=schedule)
            tr = optim.run("muon", fn.oracle(), state, T, track_average=False)
            pred = cex.cex1_predicted_sequence(init, T)
            dev = max(float(np.max(np.abs(tr.w11 - pred[:, 0]))),
                      float(np.max(np.abs(tr.w22 - pred[:, 1]))))
            floor = (1.0 - beta) * init.r
            fmin = float(np.min(tr.f))
            results.append(CheckResult(
                f"oscillation matches closed form [beta={beta}, {label}]",
                dev <= 1e-10, dev, 1e-10))
            results.append(CheckResult(
                f"suboptimality floor {floor:.3g} [beta={beta}, {label}]",
                fmin >= floor - 1e-12, floor - fmin, 1e-12))
    return results


def suite_cex2(n_inits: int = 100, T: int = 2000) -> list:
    rng = np.random.default_rng(23)
    results = []
    for beta in (0.0, 0.2, 0.4):
        c = 0.5 - beta
        fn = cex.KinkyFunction(c=c)
        oracle = fn.oracle()
        table = optim.Table(tuple(rng.uniform(0.01, 0.3, T)))
        for label, method, schedule in (
                ("regmuon+adaptive", "regmuon", optim.AdaptiveNuclear(0.05)),
                ("muon+table", "muon", table)):
            worst_p = 0.0
            q_ok = True
            worst_floor = np.inf
            passes = 0
            for _ in range(n_inits):
                W0 = rng.standard_normal((2, 2))
                p0 = W0[0, 0] + W0[1, 1]
                state = optim.OptimizerState(W=W0, beta=beta, schedule=schedule)
                tr = optim.run(method, oracle, state, T, track_average=False)
                p, q = cex.cex2_track(tr)
                dp = float(np.max(np.abs(p - p0)))
                worst_p = max(worst_p, dp)
                ok_q = bool(np.all(q != 0.0))
                q_ok = q_ok and ok_q
                margin = float(np.min(tr.f)) - c * abs(p0)
                worst_floor = min(worst_floor, margin)
                if dp <= 1e-12 and ok_q and margin >= -1e-12:
                    passes += 1
            results.append(CheckResult(
                f"invariant p constant [beta={beta}, {label}]",
                worst_p <= 1e-12, worst_p, 1e-12))
            results.append(CheckResult(
                f"q never hits zero [beta={beta}, {label}]",
                q_ok, 0.0 if q_ok else 1.0, 0.0))
            results.append(CheckResult(
                f"floor c|p0| holds in {passes}/{n_inits} runs [beta={beta}, {label}]",
                passes == n_inits, float(n_inits - passes), 0.0))
    return results


def suite_ef_bound(T: int = 5000) -> list:
    cfg = PRESETS["efm-appendixE"]()
    cfg["T"] = T
    trace, bound, rcfg = run_experiment(cfg)
    final = float(trace.f[-1])
    gap = float(np.max(trace.favg - bound))
    return [
        CheckResult("error feedback reaches f < 0.05", final < 0.05, final, 0.05),
        CheckResult("averaged suboptimality under the bound", gap <= 0.0, gap, 0.0),
    ]


SUITES = {
    "polar": suite_polar,
    "reduction": suite_reduction,
    "compressor": suite_compressor,
    "lmo": suite_lmo,
    "cex1": suite_cex1,
    "cex2": suite_cex2,
    "ef-bound": suite_ef_bound,
}
