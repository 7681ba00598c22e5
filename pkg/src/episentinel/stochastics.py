"""Label-derived random streams and validated distribution sampling.

Every stochastic component draws from a stream derived from the pair
(master_seed, label). The label is hashed (SHA-256) into spawn-key words for
a counter-based Philox generator, so:

* the same (master_seed, label) always reproduces the same sequence,
* distinct labels yield statistically independent streams, and
* results never depend on scheduling, because streams for parallel units of
  work are derived up front from their labels rather than handed out in
  completion order.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import InvalidParameterError

#: Families accepted by DistributionSpec, with their required parameter names.
FAMILIES: dict[str, tuple[str, ...]] = {
    "normal": ("mean", "sd"),
    "gamma": ("shape", "rate"),
    "poisson": ("rate",),
    "exponential": ("rate",),
    "binomial": ("n", "p"),
    "categorical": ("probs",),
    "uniform": ("low", "high"),
}

_PROB_TOL = 1e-9


def _label_words(label: str) -> tuple[int, ...]:
    """Hash a label into eight 32-bit words for use as a spawn key."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4))


class RngStream:
    """A named, reproducible random stream.

    Streams form a tree: ``child(suffix)`` derives a stream whose label is
    ``"{label}/{suffix}"`` under the same master seed. Derivation is pure, so
    any subtree can be re-created without drawing from the parent.
    """

    __slots__ = ("master_seed", "label", "generator")

    def __init__(self, master_seed: int, label: str):
        if not isinstance(master_seed, (int, np.integer)) or isinstance(master_seed, bool):
            raise InvalidParameterError(f"master_seed must be an integer (got {master_seed!r})")
        if master_seed < 0:
            raise InvalidParameterError(f"master_seed must be >= 0 (got {master_seed})")
        self.master_seed = int(master_seed)
        self.label = label
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=_label_words(label))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, suffix: str) -> "RngStream":
        return RngStream(self.master_seed, f"{self.label}/{suffix}")

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(master_seed={self.master_seed}, label={self.label!r})"


def derive_stream(master_seed: int, label: str) -> RngStream:
    """Create the stream for (master_seed, label)."""
    return RngStream(master_seed, label)


class DistributionSpec:
    """A declarative distribution: family name plus parameter dict.

    Validation raises :class:`InvalidParameterError` naming the offending
    field. Degenerate distributions are allowed where they make sense
    (normal with sd=0 is a point mass; binomial with p=0 is all zeros).
    """

    __slots__ = ("family", "params")

    def __init__(self, family: str, params: dict):
        self.family = family
        self.params = dict(params)
        self.validate()

    def validate(self) -> None:
        fam = self.family
        if fam not in FAMILIES:
            raise InvalidParameterError(
                f"unknown distribution family {fam!r}; expected one of {sorted(FAMILIES)}"
            )
        required = FAMILIES[fam]
        for name in required:
            if name not in self.params:
                raise InvalidParameterError(f"{fam}: missing parameter {name!r}")
        extra = set(self.params) - set(required)
        if extra:
            raise InvalidParameterError(f"{fam}: unexpected parameters {sorted(extra)}")
        p = self.params
        if fam == "normal":
            self._finite(fam, "mean")
            if self._finite(fam, "sd") < 0:
                raise InvalidParameterError(f"normal: sd must be >= 0 (got {p['sd']})")
        elif fam == "gamma":
            if self._finite(fam, "shape") <= 0:
                raise InvalidParameterError(f"gamma: shape must be > 0 (got {p['shape']})")
            if self._finite(fam, "rate") <= 0:
                raise InvalidParameterError(f"gamma: rate must be > 0 (got {p['rate']})")
        elif fam == "poisson":
            if self._finite(fam, "rate") < 0:
                raise InvalidParameterError(f"poisson: rate must be >= 0 (got {p['rate']})")
        elif fam == "exponential":
            if self._finite(fam, "rate") <= 0:
                raise InvalidParameterError(f"exponential: rate must be > 0 (got {p['rate']})")
        elif fam == "binomial":
            n = p["n"]
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 0:
                raise InvalidParameterError(f"binomial: n must be an integer >= 0 (got {n!r})")
            prob = self._finite(fam, "p")
            if not 0.0 <= prob <= 1.0:
                raise InvalidParameterError(f"binomial: p must be in [0, 1] (got {prob})")
        elif fam == "categorical":
            probs = np.asarray(p["probs"], dtype=float)
            if probs.ndim != 1 or probs.size == 0:
                raise InvalidParameterError("categorical: probs must be a non-empty 1-d sequence")
            if not np.all(np.isfinite(probs)):
                raise InvalidParameterError("categorical: probs must be finite")
            if np.any(probs < 0):
                raise InvalidParameterError(f"categorical: probs must be >= 0 (got {probs.tolist()})")
            total = float(probs.sum())
            if abs(total - 1.0) > _PROB_TOL:
                raise InvalidParameterError(
                    f"categorical: probs must sum to 1 within {_PROB_TOL} (got {total!r})"
                )
        elif fam == "uniform":
            low = self._finite(fam, "low")
            high = self._finite(fam, "high")
            if low > high:
                raise InvalidParameterError(f"uniform: low must be <= high (got low={low}, high={high})")

    def _finite(self, fam: str, name: str) -> float:
        value = self.params[name]
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise InvalidParameterError(f"{fam}: {name} must be a number (got {value!r})") from None
        if not math.isfinite(value):
            raise InvalidParameterError(f"{fam}: {name} must be finite (got {value})")
        return value

    def to_dict(self) -> dict:
        params = {
            k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
            for k, v in self.params.items()
        }
        return {"family": self.family, "params": params}

    @classmethod
    def from_dict(cls, obj: dict) -> "DistributionSpec":
        if not isinstance(obj, dict) or "family" not in obj or "params" not in obj:
            raise InvalidParameterError(
                f"distribution spec must be an object with 'family' and 'params' (got {obj!r})"
            )
        return cls(obj["family"], obj["params"])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"DistributionSpec({self.family!r}, {self.params!r})"


def sample(spec: DistributionSpec, n: int, stream: RngStream) -> np.ndarray:
    """Draw ``n`` variates from ``spec`` using ``stream``.

    Continuous families return float64 arrays; counting families (poisson,
    binomial, categorical) return int64. Categorical outcomes are 0-based
    indices into ``probs``.
    """
    if n < 0:
        raise InvalidParameterError(f"sample size must be >= 0 (got {n})")
    gen = stream.generator
    p = spec.params
    fam = spec.family
    if fam == "normal":
        sd = float(p["sd"])
        if sd == 0.0:
            return np.full(n, float(p["mean"]))
        return gen.normal(float(p["mean"]), sd, size=n)
    if fam == "gamma":
        return gen.gamma(float(p["shape"]), 1.0 / float(p["rate"]), size=n)
    if fam == "poisson":
        return gen.poisson(float(p["rate"]), size=n).astype(np.int64)
    if fam == "exponential":
        return gen.exponential(1.0 / float(p["rate"]), size=n)
    if fam == "binomial":
        return gen.binomial(int(p["n"]), float(p["p"]), size=n).astype(np.int64)
    if fam == "categorical":
        probs = np.asarray(p["probs"], dtype=float)
        edges = np.cumsum(probs)
        edges[-1] = 1.0  # guard the top edge against rounding
        return np.searchsorted(edges, gen.random(n), side="right").astype(np.int64)
    if fam == "uniform":
        low = float(p["low"])
        high = float(p["high"])
        if low == high:
            return np.full(n, low)
        return gen.uniform(low, high, size=n)
    raise InvalidParameterError(f"unknown distribution family {fam!r}")  # pragma: no cover
