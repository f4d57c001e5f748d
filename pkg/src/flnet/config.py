"""Network parameters for the federated-learning channel/energy MDP.

Parameters live in a flat YAML mapping whose keys are the field names of
:class:`EnvConfig`.  The default file ships with the package and holds the
reference setting (three workers, three channels, three energy units).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

DEFAULT_CONFIG = "reference.yaml"

# Sweep aliases: shorthand name -> field replaced uniformly across workers.
_UNIFORM_ALIASES = {
    "q_mo": "p_in_coverage",
    "p_en": "p_energy_two",
}


def _as_tuple(values: Any) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(values))


@dataclass(frozen=True)
class EnvConfig:
    """All parameters of the network model.

    Channels are indexed ``1..N`` with 1 the free default channel and
    ``2..N`` the paid special channels, so ``channel_cost`` and
    ``p_success_special`` both have length ``N - 1``.  Per-worker vectors
    (``recharge_weight``, ``p_energy_two``, ``p_in_coverage``) have length
    ``num_workers``.
    """

    num_workers: int = 3
    num_channels: int = 3
    max_energy: int = 3
    utility_delta: float = 5.0
    recharge_weight: tuple[float, ...] = (0.1, 0.2, 0.3)
    recharge_weight_out: float = 0.8
    channel_cost: tuple[float, ...] = (2.0, 3.0)
    p_success_default: float = 0.5
    p_success_special: tuple[float, ...] = (0.95, 0.98)
    p_energy_two: tuple[float, ...] = (0.5, 0.5, 0.5)
    p_in_coverage: tuple[float, ...] = (0.8, 0.8, 0.8)
    scale_utility: float = 3.0
    scale_channel: float = 1.0
    scale_energy: float = 1.0
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("recharge_weight", "channel_cost", "p_success_special",
                     "p_energy_two", "p_in_coverage"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        self.validate()
        # Lookup tables used by the vectorized dynamics.
        costs = np.zeros(self.num_channels + 1)
        costs[2:] = self.channel_cost
        p_chan = np.zeros(self.num_channels + 1)
        p_chan[1] = self.p_success_default
        p_chan[2:] = self.p_success_special
        self._arrays.update(
            channel_cost=costs,
            p_channel=p_chan,
            mu=np.asarray(self.recharge_weight),
            p_two=np.asarray(self.p_energy_two),
            q=np.asarray(self.p_in_coverage),
        )

    def validate(self) -> None:
        L, N = self.num_workers, self.num_channels
        if L < 1:
            raise ValueError(f"num_workers must be >= 1, got {L}")
        if N < 2:
            raise ValueError(f"num_channels must be >= 2, got {N}")
        if self.max_energy < 0:
            raise ValueError(f"max_energy must be >= 0, got {self.max_energy}")
        if self.utility_delta <= 0:
            raise ValueError("utility_delta must be positive")
        for name, n in (("recharge_weight", L), ("p_energy_two", L), ("p_in_coverage", L),
                        ("channel_cost", N - 1), ("p_success_special", N - 1)):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have length {n}, got {len(getattr(self, name))}")
        mu = self.recharge_weight
        if any(m <= 0 for m in mu) or any(a > b for a, b in zip(mu, mu[1:])):
            raise ValueError(f"recharge_weight must be positive and non-decreasing, got {mu}")
        if not self.recharge_weight_out > mu[-1]:
            raise ValueError("recharge_weight_out must exceed every in-coverage weight")
        lam = self.channel_cost
        if any(c <= 0 for c in lam) or any(a >= b for a, b in zip(lam, lam[1:])):
            raise ValueError(f"channel_cost must be positive and strictly increasing, got {lam}")
        probs = (self.p_success_default, *self.p_success_special,
                 *self.p_energy_two, *self.p_in_coverage)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("all probabilities must lie in [0, 1]")
        if min(self.scale_utility, self.scale_channel, self.scale_energy) < 0:
            raise ValueError("scale factors must be nonnegative")

    def array(self, name: str) -> np.ndarray:
        """Cached numpy view of a lookup table (read-only by convention)."""
        return self._arrays[name]

    # Normalizers of the per-step reward.
    @property
    def utility_max(self) -> float:
        return self.utility_delta * self.num_workers

    @property
    def channel_cost_max(self) -> float:
        return float(self.num_channels * self.num_workers)

    @property
    def energy_cost_max(self) -> float:
        return self.recharge_weight_out * self.max_energy * self.num_workers

    @property
    def reward_bounds(self) -> tuple[float, float]:
        """Closed interval that every per-step reward lies in."""
        return -(self.scale_channel + self.scale_energy), self.scale_utility

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            if not f.init:
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def replace(self, **changes: Any) -> "EnvConfig":
        """Copy with fields replaced.

        ``q_mo`` and ``p_en`` set the coverage / two-unit probability of
        every worker at once.
        """
        kw = self.to_dict()
        for key, value in changes.items():
            if key in _UNIFORM_ALIASES:
                kw[_UNIFORM_ALIASES[key]] = [float(value)] * self.num_workers
            elif key in kw:
                kw[key] = value
            else:
                raise KeyError(f"unknown parameter {key!r}")
        return EnvConfig(**kw)

    def with_workers(self, num_workers: int) -> "EnvConfig":
        """Resize to ``num_workers`` workers.

        Existing per-worker entries are kept; new workers continue the
        recharge weights in steps of the first weight and reuse the last
        worker's probabilities.
        """
        L0 = self.num_workers
        mu = list(self.recharge_weight[:num_workers])
        p_two = list(self.p_energy_two[:num_workers])
        q = list(self.p_in_coverage[:num_workers])
        step = self.recharge_weight[0]
        for _ in range(L0, num_workers):
            mu.append(round(mu[-1] + step, 12))
            p_two.append(self.p_energy_two[-1])
            q.append(self.p_in_coverage[-1])
        kw = self.to_dict()
        kw.update(num_workers=num_workers, recharge_weight=mu,
                  p_energy_two=p_two, p_in_coverage=q)
        return EnvConfig(**kw)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EnvConfig":
        known = {f.name for f in dataclasses.fields(cls) if f.init}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "EnvConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        return cls.from_dict(data)

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def default_config(num_workers: int | None = None) -> EnvConfig:
    """Reference parameters, optionally resized to ``num_workers`` workers."""
    text = resources.files("flnet").joinpath("data", DEFAULT_CONFIG).read_text()
    cfg = EnvConfig.from_dict(yaml.safe_load(text))
    if num_workers is not None and num_workers != cfg.num_workers:
        cfg = cfg.with_workers(num_workers)
    return cfg


def load_config(path: str | Path | None = None) -> EnvConfig:
    return default_config() if path is None else EnvConfig.from_yaml(path)


def parse_values(text: str | Sequence[float]) -> list[float]:
    """Parse ``"0.1,0.2"`` or ``"0.1:0.9:0.1"`` (inclusive) into floats."""
    if not isinstance(text, str):
        return [float(v) for v in text]
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(t) for t in text.split(",") if t.strip()]
