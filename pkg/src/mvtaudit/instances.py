"""Seeded synthetic mean-variance-turnover instances.

Three covariance-density families are supported:

* ``diagonal`` - per-asset variances plus +/- epsilon noise on the first
  super/sub-diagonal (off-diagonal density exactly 2/n).
* ``block`` - equicorrelated blocks, zero cross-block entries.
* ``dense`` - Wishart draw rescaled to the target per-asset variances.

Seeding scheme
--------------
Every random field draws from its own PCG64 stream built from
``SeedSequence(seed, spawn_key=(stream_id, n))`` with stream ids
``mu=0, variances=1, structure=2, z_prev=3``.  The family is deliberately not
part of the key, so at fixed ``(n, seed)`` all three families share the same
returns, variances and previous portfolio and differ only in structure.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidDimensionError, ParseError

SCHEMA_VERSION = 1
FAMILIES = ("diagonal", "block", "dense")
ZERO_TOL = 1e-12

_STREAM_MU = 0
_STREAM_VAR = 1
_STREAM_STRUCTURE = 2
_STREAM_ZPREV = 3

# density band for the block family; only enforced on the benchmark grid (n >= 10)
BLOCK_DENSITY_BAND = (0.11, 0.25)
BLOCK_BAND_MIN_N = 10


@dataclass(frozen=True)
class GeneratorConfig:
    epsilon_nn: float = 0.02
    mu_mean: float = 0.05
    mu_std: float = 0.02
    var_low: float = 0.02
    var_high: float = 0.08
    # None -> default rule clamp(round(0.15 n) + 1, 3, n // 2)
    block_size: int | None = None
    block_corr_low: float = 0.1
    block_corr_high: float = 0.5
    # None -> 2 n
    wishart_df: int | None = None
    tau_const: float = 0.005
    risk_aversion: float = 0.5
    cardinality_fraction: float = 0.3

    def validate(self, n: int | None = None) -> None:
        if self.epsilon_nn < 0:
            raise ConfigurationError("epsilon_nn must be >= 0")
        if not self.var_low < self.var_high:
            raise ConfigurationError("var_low must be < var_high")
        if self.var_low <= 0:
            raise ConfigurationError("var_low must be > 0")
        if self.tau_const < 0:
            raise ConfigurationError("tau_const must be >= 0")
        if not -1.0 < self.block_corr_low <= self.block_corr_high < 1.0:
            raise ConfigurationError("block correlations must satisfy -1 < low <= high < 1")
        if n is not None and self.wishart_df is not None and self.wishart_df < n:
            raise ConfigurationError(
                f"wishart_df={self.wishart_df} < n={n}: Wishart draw is not positive definite"
            )

    def block_size_for(self, n: int) -> int:
        if self.block_size is not None:
            return int(self.block_size)
        return default_block_size(n)

    def wishart_df_for(self, n: int) -> int:
        return 2 * n if self.wishart_df is None else int(self.wishart_df)


def default_block_size(n: int) -> int:
    """``clamp(round(0.15 n) + 1, 3, n // 2)``; the upper bound wins when they cross."""
    b = math.floor(0.15 * n + 0.5) + 1
    return int(min(max(b, 3), n // 2))


def cardinality(n: int, fraction: float = 0.3) -> int:
    """Round-half-up ``fraction * n`` clamped to ``[1, n]``."""
    return int(min(max(math.floor(fraction * n + 0.5), 1), n))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One cardinality-constrained MVT problem.

    ``lam`` is the risk-aversion scalar (``lambda`` in serialized form).
    """

    n: int
    k: int
    mu: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    z_prev: np.ndarray
    lam: float
    family: str
    seed: int
    instance_id: str
    generator_config: GeneratorConfig | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "sigma", _frozen(np.asarray(self.sigma, dtype=float)))
        object.__setattr__(self, "tau", _frozen(np.asarray(self.tau, dtype=float)))
        object.__setattr__(self, "z_prev", _frozen(np.asarray(self.z_prev, dtype=np.int8)))

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            self.n == other.n
            and self.k == other.k
            and self.lam == other.lam
            and self.family == other.family
            and self.seed == other.seed
            and self.instance_id == other.instance_id
            and self.generator_config == other.generator_config
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and np.array_equal(self.tau, other.tau)
            and np.array_equal(self.z_prev, other.z_prev)
        )

    __hash__ = None

    def validate(self) -> None:
        """Raise if any structural invariant is violated."""
        n = self.n
        if self.mu.shape != (n,) or self.tau.shape != (n,) or self.z_prev.shape != (n,):
            raise InvalidDimensionError("mu, tau and z_prev must have length n")
        if self.sigma.shape != (n, n):
            raise InvalidDimensionError("sigma must be n x n")
        if not 1 <= self.k <= n:
            raise InvalidDimensionError(f"k={self.k} outside [1, {n}]")
        if np.max(np.abs(self.sigma - self.sigma.T)) > ZERO_TOL:
            raise ConfigurationError("sigma is not symmetric")
        if np.any(self.tau < 0):
            raise ConfigurationError("tau must be nonnegative")
        if not np.all((self.z_prev == 0) | (self.z_prev == 1)):
            raise ConfigurationError("z_prev must be binary")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("sigma is not positive definite") from exc

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "instance_id": self.instance_id,
            "family": self.family,
            "n": self.n,
            "k": self.k,
            "seed": self.seed,
            "lambda": self.lam,
            "mu": self.mu.tolist(),
            "tau": self.tau.tolist(),
            "z_prev": [int(v) for v in self.z_prev],
            "sigma": self.sigma.tolist(),
            "generator_config": None if self.generator_config is None else asdict(self.generator_config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        cfg = d.get("generator_config")
        n = int(d["n"])
        sigma = np.asarray(d["sigma"], dtype=float)
        if sigma.ndim == 1:
            sigma = sigma.reshape(n, n)
        return cls(
            n=n,
            k=int(d["k"]),
            mu=d["mu"],
            sigma=sigma,
            tau=d["tau"],
            z_prev=d["z_prev"],
            lam=float(d["lambda"]),
            family=str(d["family"]),
            seed=int(d["seed"]),
            instance_id=str(d["instance_id"]),
            generator_config=None if cfg is None else GeneratorConfig(**cfg),
        )


def _rng(seed: int, stream: int, n: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, n))))


def _common_fields(n: int, seed: int, cfg: GeneratorConfig):
    mu = _rng(seed, _STREAM_MU, n).normal(cfg.mu_mean, cfg.mu_std, size=n)
    variances = _rng(seed, _STREAM_VAR, n).uniform(cfg.var_low, cfg.var_high, size=n)
    k = cardinality(n, cfg.cardinality_fraction)
    chosen = _rng(seed, _STREAM_ZPREV, n).choice(n, size=k, replace=False)
    z_prev = np.zeros(n, dtype=np.int8)
    z_prev[chosen] = 1
    tau = np.full(n, cfg.tau_const)
    return mu, variances, k, z_prev, tau


def _assemble(family, n, seed, cfg, sigma, mu, k, z_prev, tau) -> ProblemInstance:
    sigma = 0.5 * (sigma + sigma.T)
    inst = ProblemInstance(
        n=n,
        k=k,
        mu=mu,
        sigma=sigma,
        tau=tau,
        z_prev=z_prev,
        lam=cfg.risk_aversion,
        family=family,
        seed=int(seed),
        instance_id=f"{family}-n{n}-s{seed}",
        generator_config=cfg,
    )
    inst.validate()
    return inst


def gen_diagonal(n: int, seed: int, cfg: GeneratorConfig | None = None) -> ProblemInstance:
    """Variances on the diagonal, +/- ``epsilon_nn`` on the first off-diagonal.

    If the tridiagonal matrix is not positive definite the whole diagonal is
    shifted up by ``|lambda_min| + 1e-8``.
    """
    cfg = cfg or GeneratorConfig()
    if n < 2:
        raise InvalidDimensionError(f"diagonal family needs n >= 2, got {n}")
    cfg.validate(n)
    mu, variances, k, z_prev, tau = _common_fields(n, seed, cfg)
    signs = _rng(seed, _STREAM_STRUCTURE, n).choice([-1.0, 1.0], size=n - 1)
    off = cfg.epsilon_nn * signs
    sigma = np.diag(variances) + np.diag(off, 1) + np.diag(off, -1)
    lam_min = np.linalg.eigvalsh(sigma)[0]
    if lam_min <= 0:
        sigma = sigma + (abs(lam_min) + 1e-8) * np.eye(n)
    return _assemble("diagonal", n, seed, cfg, sigma, mu, k, z_prev, tau)


def block_partition(n: int, b: int) -> list[range]:
    """Consecutive blocks of size ``b``; a shorter trailing block takes the remainder."""
    return [range(start, min(start + b, n)) for start in range(0, n, b)]


def gen_block(n: int, seed: int, cfg: GeneratorConfig | None = None) -> ProblemInstance:
    cfg = cfg or GeneratorConfig()
    if n < 4:
        raise InvalidDimensionError(f"block family needs n >= 4, got {n}")
    cfg.validate(n)
    b = cfg.block_size_for(n)
    if b < 2:
        raise ConfigurationError(f"block size {b} < 2 for n={n}")
    mu, variances, k, z_prev, tau = _common_fields(n, seed, cfg)
    rng = _rng(seed, _STREAM_STRUCTURE, n)
    corr = np.eye(n)
    for blk in block_partition(n, b):
        rho = rng.uniform(cfg.block_corr_low, cfg.block_corr_high)
        idx = np.array(blk)
        if len(idx) > 1:
            corr[np.ix_(idx, idx)] = rho
            corr[idx, idx] = 1.0
    sd = np.sqrt(variances)
    sigma = corr * np.outer(sd, sd)
    inst = _assemble("block", n, seed, cfg, sigma, mu, k, z_prev, tau)
    if n >= BLOCK_BAND_MIN_N:
        lo, hi = BLOCK_DENSITY_BAND
        rho_off = offdiag_density(inst)
        if not lo <= rho_off <= hi:
            raise ConfigurationError(
                f"block family density {rho_off:.4f} outside [{lo}, {hi}] at n={n}, b={b}"
            )
    return inst


def gen_dense(n: int, seed: int, cfg: GeneratorConfig | None = None) -> ProblemInstance:
    """Wishart ``G G^T / m`` with ``m = wishart_df``, rescaled to the drawn variances."""
    cfg = cfg or GeneratorConfig()
    if n < 2:
        raise InvalidDimensionError(f"dense family needs n >= 2, got {n}")
    m = cfg.wishart_df_for(n)
    if m < n:
        raise ConfigurationError(f"wishart_df={m} < n={n}: Wishart draw is not positive definite")
    cfg.validate(n)
    mu, variances, k, z_prev, tau = _common_fields(n, seed, cfg)
    g = _rng(seed, _STREAM_STRUCTURE, n).standard_normal((n, m))
    w = g @ g.T / m
    d = np.sqrt(np.diag(w))
    corr = w / np.outer(d, d)
    sd = np.sqrt(variances)
    sigma = corr * np.outer(sd, sd) + 1e-8 * np.eye(n)
    return _assemble("dense", n, seed, cfg, sigma, mu, k, z_prev, tau)


_GENERATORS = {"diagonal": gen_diagonal, "block": gen_block, "dense": gen_dense}


def generate(family: str, n: int, seed: int, cfg: GeneratorConfig | None = None) -> ProblemInstance:
    try:
        gen = _GENERATORS[family]
    except KeyError:
        raise ConfigurationError(f"unknown family {family!r}; expected one of {FAMILIES}") from None
    return gen(n, seed, cfg)


def offdiag_density(instance_or_sigma, tol: float = ZERO_TOL) -> float:
    """Fraction of strictly-upper entries of sigma with ``|entry| > tol``."""
    sigma = instance_or_sigma.sigma if isinstance(instance_or_sigma, ProblemInstance) else np.asarray(instance_or_sigma)
    n = sigma.shape[0]
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    return float(np.count_nonzero(np.abs(sigma[iu]) > tol)) / (n * (n - 1) / 2)


def dumps_instance(inst: ProblemInstance) -> str:
    return json.dumps(inst.to_dict(), separators=(",", ":"))


def save_instances(instances: Iterable[ProblemInstance], path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(dumps_instance(inst))
            fh.write("\n")


def load_instances(path: str | PathLike) -> list[ProblemInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(ProblemInstance.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad instance record ({exc})", line=lineno, path=str(path)) from exc
    return out


def parse_seed_range(text: str) -> list[int]:
    """``"0..2"`` -> [0, 1, 2]; ``"1,4,5"`` -> [1, 4, 5]."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def generate_many(families: Sequence[str], ns: Sequence[int], seeds: Sequence[int],
                  cfg: GeneratorConfig | None = None) -> list[ProblemInstance]:
    return [generate(f, n, s, cfg) for f in families for n in ns for s in seeds]
