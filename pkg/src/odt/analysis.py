"""Obliviousness statistics, memory-preservation bounds and timing benches."""
from __future__ import annotations

import csv
import json
import random
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import mpmath
import numpy as np
from scipy import stats
from sklearn.linear_model import LogisticRegression

from . import elligator, ppet
from .device import DeviceSim, Omega, load_process
from .endpoints import AggressorSession, Otee, OteeIdentity, Registry, ServerSession, run_loopback
from .group import CURVE
from .handshake import ClientHello
from .witness import DEFAULT_LOCATIONS

MIN_SAMPLES = 1000
NONCE_SIZE = 32
BENCH_TARGETS = ("commitment", "elligator", "full_handshake")
# a 4096-word agent keeps image construction out of the way of everything else
SMALL_OMEGA = Omega(((0x100_0000_0000, 0x100_0000_0000 + 8 * 4096),))


class InsufficientSamples(ValueError):
    pass


class DomainError(ValueError):
    pass


# --- uniformity -------------------------------------------------------------

@dataclass
class SampleSet:
    label: str
    samples: list[bytes]

    def __post_init__(self):
        if self.samples and len({len(s) for s in self.samples}) != 1:
            raise ValueError("samples must all have the same length")

    def __len__(self):
        return len(self.samples)

    def array(self) -> np.ndarray:
        return np.frombuffer(b"".join(self.samples), dtype=np.uint8).reshape(len(self), -1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["label", "nonce"])
            out.writerows((self.label, s.hex()) for s in self.samples)

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        label = rows[0]["label"] if rows else "unknown"
        return cls(label, [bytes.fromhex(r["nonce"]) for r in rows])


@dataclass
class UniformityReport:
    bit_z: np.ndarray
    byte_chi2: float
    byte_p: float
    position_p: np.ndarray
    advantage: float
    n: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.bit_z)))

    @property
    def min_position_p(self) -> float:
        return float(np.min(self.position_p))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "max_abs_bit_z": self.max_abs_z,
            "bit_z": [round(float(z), 4) for z in self.bit_z],
            "byte_chi2": self.byte_chi2,
            "byte_p": self.byte_p,
            "min_position_p": self.min_position_p,
            "advantage": self.advantage,
        }


def _bit_z(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    # two-proportion z per bit position, pooled variance
    ba = np.unpackbits(xa, axis=1, bitorder="little").mean(axis=0)
    bb = np.unpackbits(xb, axis=1, bitorder="little").mean(axis=0)
    n = len(xa)
    pooled = (ba + bb) / 2
    se = np.sqrt(pooled * (1 - pooled) * 2 / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (ba - bb) / se, 0.0)
    return z


def _chi2(counts_a: np.ndarray, counts_b: np.ndarray) -> tuple[float, float]:
    table = np.vstack([counts_a, counts_b])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 0.0, 1.0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue)


def _features(x: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(x, axis=1, bitorder="little").astype(np.float32)
    hist = np.zeros((len(x), 256), dtype=np.float32)
    np.add.at(hist, (np.repeat(np.arange(len(x)), x.shape[1]), x.ravel()), 1.0)
    return np.hstack([bits, hist / x.shape[1]])


def _advantage(xa: np.ndarray, xb: np.ndarray, seed: int) -> float:
    """Two-fold cross-fitted logistic distinguisher; every prediction is held out.

    Advantage is Pr[D = a | a] - Pr[D = a | b].
    """
    X = np.vstack([_features(xa), _features(xb)])
    y = np.concatenate([np.ones(len(xa)), np.zeros(len(xb))])
    perm = np.random.default_rng(seed).permutation(len(y))
    folds = np.array_split(perm, 2)
    pred = np.empty(len(y))
    for test, train in (folds, folds[::-1]):
        model = LogisticRegression(max_iter=500, tol=1e-6)
        model.fit(X[train], y[train])
        pred[test] = model.predict(X[test])
    return float(pred[y == 1].mean() - pred[y == 0].mean())


def uniformity_test(a: SampleSet, b: SampleSet, seed: int = 0) -> UniformityReport:
    """Compare two nonce sources. Deterministic for fixed inputs and seed."""
    if len(a) != len(b):
        raise ValueError("sample sets must have the same size")
    if len(a) < MIN_SAMPLES:
        raise InsufficientSamples(f"need >= {MIN_SAMPLES} samples, got {len(a)}")
    xa, xb = a.array(), b.array()
    if xa.shape != xb.shape:
        raise ValueError("samples in the two sets differ in length")

    pooled_a = np.bincount(xa.ravel(), minlength=256)
    pooled_b = np.bincount(xb.ravel(), minlength=256)
    chi2, p = _chi2(pooled_a, pooled_b)
    position_p = np.array([
        _chi2(np.bincount(xa[:, j], minlength=256), np.bincount(xb[:, j], minlength=256))[1]
        for j in range(xa.shape[1])
    ])
    return UniformityReport(
        bit_z=_bit_z(xa, xb),
        byte_chi2=chi2,
        byte_p=p,
        position_p=position_p,
        advantage=_advantage(xa, xb, seed),
        n=len(a),
    )


def advantage_threshold(n: int, floor: float = 0.01) -> float:
    """Largest advantage still called noise for n samples per source.

    Four null standard errors of the cross-fitted estimate, never below
    ``floor``; at 10^5 samples the floor is what binds.
    """
    return max(floor, 4 / (2 * n) ** 0.5)


def plain_nonces(n: int, rng) -> SampleSet:
    """ServerHello.random values from a standard server."""
    server = ServerSession(rng=rng)
    return SampleSet("plain", [server.server_random(None, None) for _ in range(n)])


def aggressor_nonces(
    n: int,
    rng,
    m: int = DEFAULT_LOCATIONS,
    omega: Omega = SMALL_OMEGA,
) -> SampleSet:
    """ServerHello.random values from an aggressor answering fresh O-TEE hellos."""
    image = load_process(DeviceSim("aggressor"), 1, omega.total_words, "expected", omega)
    session = AggressorSession(image, Registry(), rng=rng, m=m, omega=omega)
    out = []
    for _ in range(n):
        u = ppet.prover_init(rng)
        hello = ClientHello(CURVE.to_bytes(u), rng.getrandbits(256).to_bytes(32, "little"))
        out.append(session.server_random(hello, rng.getrandbits(256).to_bytes(32, "little")))
    return SampleSet("aggressor", out)


def biased_nonces(n: int, rng) -> SampleSet:
    """Uniform nonces with the top bit cleared, a planted signal."""
    return SampleSet(
        "biased", [(rng.getrandbits(255)).to_bytes(32, "little") for _ in range(n)]
    )


# --- preservation bounds ----------------------------------------------------

PRECISION_DPS = 60


@dataclass(frozen=True)
class PreservationParams:
    X_size: int
    known_bits: int
    C: int
    I_size: int
    q: int

    def __post_init__(self):
        if min(self.X_size, self.C, self.I_size) < 1 or self.known_bits < 0:
            raise DomainError("sizes must be positive and known_bits non-negative")
        if self.q < 1:
            raise DomainError("q must be >= 1")
        if self.C > self.I_size:
            raise DomainError("cannot measure more locations than exist")


@dataclass(frozen=True)
class PreservationBound:
    probability: mpmath.mpf
    simplified_bound: mpmath.mpf

    def to_dict(self) -> dict:
        return {
            "probability": float(self.probability),
            "log2_probability": log2_prob(self.probability),
            "simplified_bound": float(self.simplified_bound),
            "log2_simplified_bound": log2_prob(self.simplified_bound),
        }


def log2_prob(x) -> Optional[float]:
    if x == 0:
        return None
    if mpmath.isinf(x):
        return float("inf")
    return float(mpmath.log(x, 2))


def _one_minus_pow(e, n):
    # 1 - (1 - e)^n without cancellation when e is tiny
    return -mpmath.expm1(n * mpmath.log1p(-e))


def preservation_bound_general(p: PreservationParams) -> PreservationBound:
    """Chance of guessing the measured words within q queries.

    The returned simplified bound q / (2^C - q) is infinite when q >= 2^C.
    """
    with mpmath.workdps(PRECISION_DPS):
        unknown = mpmath.mpf(p.X_size) - mpmath.mpf(2) ** p.known_bits
        if unknown <= 0:
            raise DomainError("2^known_bits must be smaller than X_size")
        base = unknown ** p.C - mpmath.mpf(p.q) / mpmath.binomial(p.I_size, p.C)
        if base <= 0:
            raise DomainError("formula domain: (X - 2^k)^C <= q / binom(I, C)")
        if base < 1:
            raise DomainError("per-query guess probability would exceed 1")
        prob = _one_minus_pow(1 / base, p.q)
        denom = mpmath.mpf(2) ** p.C - p.q
        bound = p.q / denom if denom > 0 else mpmath.inf
        return PreservationBound(+prob, +bound)


def preservation_bound_key(I_size: int, X_size: int, q: float) -> mpmath.mpf:
    """Chance that q chosen-key queries reveal a full measured word."""
    if I_size < 1 or X_size < 1 or q < 0:
        raise DomainError("I_size and X_size must be positive, q non-negative")
    with mpmath.workdps(PRECISION_DPS):
        per_loc = mpmath.mpf(q) / I_size
        if per_loc >= X_size:
            raise DomainError("q / I_size must be below X_size")
        if q == 0:
            return mpmath.mpf(0)
        remaining = X_size - per_loc
        if remaining < 1:
            raise DomainError("per-query guess probability would exceed 1")
        return +_one_minus_pow(1 / remaining, 4 * per_loc)


# --- partial clones ----------------------------------------------------------

@dataclass(frozen=True)
class CloneModel:
    analytic: float
    successes: int = 0
    trials: int = 0
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    @property
    def empirical(self) -> Optional[float]:
        return self.successes / self.trials if self.trials else None

    @property
    def consistent(self) -> Optional[bool]:
        if not self.trials:
            return None
        return self.ci_low <= self.analytic <= self.ci_high


PARTIAL_CLONE_TEMPLATE = """\
omega words={words}
locations m={m}
device id=host otee=yes
device id=home
process id=agent device=home seed=1 size={words}
clone id=mirror src=agent device=host fraction={f!r}
route process=agent via=host proxy=mirror
server mode=aggressor expect_seed=1 expect_size={words}
connect process=agent
expect rate={rate!r}
"""


def partial_clone_scenario(f: float, m: int, words: int = 4096):
    from .scenario import ScenarioSpec

    text = PARTIAL_CLONE_TEMPLATE.format(f=f, m=m, words=words, rate=f**m)
    return ScenarioSpec.parse(text, "partial_clone")


def clone_success_model(
    f: float,
    m: int,
    runs: int = 0,
    seed: int = 0,
    trial: Optional[Callable[[], bool]] = None,
    level: float = 0.95,
) -> CloneModel:
    """f^m, optionally next to an empirical rate with an exact binomial CI.

    By default each run is a full partial-clone scenario; ``trial`` swaps in
    any other Bernoulli experiment.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError("f must lie in [0, 1]")
    if m < 1:
        raise ValueError("m must be >= 1")
    analytic = f**m
    if runs <= 0:
        return CloneModel(analytic)
    if trial is None:
        from .scenario import run_scenario

        result = run_scenario(partial_clone_scenario(f, m), runs=runs, seed=seed)
        successes = result.protected
    else:
        successes = sum(bool(trial()) for _ in range(runs))
    ci = stats.binomtest(successes, runs).proportion_ci(level, "exact")
    return CloneModel(analytic, successes, runs, ci.low, ci.high)


# --- benchmarks ---------------------------------------------------------------

def _timed(fn: Callable[[], object], n_iters: int) -> list[float]:
    out = []
    for _ in range(n_iters):
        t0 = time.perf_counter_ns()
        fn()
        out.append((time.perf_counter_ns() - t0) / 1e6)
    return out


def _bench_commitment(rng, n):
    us = [CURVE.random_element(rng) for _ in range(n)]
    ws = [CURVE.random_scalar(rng) for _ in range(n)]
    it = iter(zip(us, ws))

    def step():
        u, w = next(it)
        ppet.verifier_commit(u, w, rng, require_encodable=True)

    return step


def _bench_elligator(rng, n):
    nonces = [
        ppet.verifier_commit(CURVE.random_element(rng), 1, rng, require_encodable=True).nonce
        for _ in range(n)
    ]
    it = iter(nonces)
    return lambda: elligator.decode_uniform(next(it))


def _bench_full_handshake(rng, n):
    omega = SMALL_OMEGA
    device = DeviceSim("host", has_otee=True)
    agent = load_process(device, 1, omega.total_words, "agent", omega)
    identity = OteeIdentity.generate("host", rng)
    registry = Registry()
    registry.register(identity)
    otee = Otee(identity, device, omega=omega)

    def step():
        session = AggressorSession(agent, registry, rng=rng, omega=omega)
        run_loopback(otee.connect(agent, rng), session)

    return step


def bench(target: str, n_iters: int = 1000, seed: int = 0) -> dict:
    """Wall-clock statistics in milliseconds; inputs are prepared untimed."""
    if target not in BENCH_TARGETS:
        raise ValueError(f"target must be one of {BENCH_TARGETS}")
    if n_iters < 100:
        raise ValueError("n_iters must be >= 100")
    rng = random.Random(seed)
    step = globals()[f"_bench_{target}"](rng, n_iters)
    times = _timed(step, n_iters)
    return {
        "target": target,
        "n_iters": n_iters,
        "median_ms": statistics.median(times),
        "mean_ms": statistics.fmean(times),
        "stddev_ms": statistics.stdev(times),
    }


def write_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n")
