# src/sampling.py
import math
from abc import ABC, abstractmethod

import numpy as np

from data_models import SamplingScheme
from exceptions import BandOverflow, ConfigError


def _check_bands(bands, n: int | None = None) -> list[tuple[int, int]]:
    bands = [(int(a), int(b)) for a, b in bands]
    for a, b in bands:
        if not 0 <= a < b or (n is not None and b > n):
            raise BandOverflow(f"Band [{a}, {b}) is empty or outside [0, {n})")
    return bands


def multilevel_scheme(bands, m, seed: int, n: int | None = None) -> SamplingScheme:
    """
    Draws m[j] indices uniformly without replacement inside each band [a_j, b_j).
    One PCG64 stream (numpy default_rng) serves all bands in order.
    """
    bands = _check_bands(bands, n)
    if len(m) != len(bands):
        raise BandOverflow(f"Got {len(m)} counts for {len(bands)} bands")
    rng = np.random.default_rng(seed)
    indices = []
    for (a, b), count in zip(bands, m):
        if not 0 <= count <= b - a:
            raise BandOverflow(f"Cannot draw {count} samples from band [{a}, {b})")
        indices.extend((a + rng.choice(b - a, size=count, replace=False)).tolist())
    n = n if n is not None else (max(b for _, b in bands) if bands else 1)
    return SamplingScheme(n=n, indices=tuple(sorted(indices)), bands=tuple(bands), counts=tuple(int(c) for c in m), seed=seed)


def counts_from_fractions(bands, fractions) -> list[int]:
    """m_j = ceil(f_j * width_j)."""
    return [min(b - a, math.ceil(f * (b - a) - 1e-12)) for (a, b), f in zip(bands, fractions)]


def bands_from_boundaries(M) -> list[tuple[int, int]]:
    return [(M[i], M[i + 1]) for i in range(len(M) - 1)]


class SamplingStrategy(ABC):
    """Abstract base class for all sampling strategies."""
    def __init__(self, scheme: str):
        self.scheme = scheme

    @abstractmethod
    def draw(self, n: int) -> SamplingScheme:
        pass

    def __repr__(self) -> str:
        params = self._get_params_for_repr()
        param_str = ", ".join(f"{k}={v}" for k, v in params.items())
        return f"{self.scheme}({param_str})"

    @abstractmethod
    def _get_params_for_repr(self) -> dict:
        pass


class FullSampling(SamplingStrategy):
    """Keeps every row."""
    def __init__(self):
        super().__init__("full")

    def draw(self, n: int) -> SamplingScheme:
        return SamplingScheme(n=n, indices=tuple(range(n)), bands=((0, n),), counts=(n,))

    def _get_params_for_repr(self) -> dict:
        return {}


class MultilevelSampling(SamplingStrategy):
    """Fixed per-band counts, or per-band fractions rounded up."""
    def __init__(self, boundaries, seed: int, counts=None, fractions=None):
        super().__init__("multilevel")
        if (counts is None) == (fractions is None):
            raise ConfigError("Multilevel sampling needs exactly one of 'counts' or 'fractions'")
        self.bands = bands_from_boundaries(boundaries)
        self.seed = seed
        self.counts = list(counts) if counts is not None else counts_from_fractions(self.bands, fractions)
        self.fractions = fractions

    def draw(self, n: int) -> SamplingScheme:
        return multilevel_scheme(self.bands, self.counts, self.seed, n=n)

    def _get_params_for_repr(self) -> dict:
        return {"seed": self.seed, "counts": self.counts}


def get_sampling_strategy(config: dict, boundaries, master_seed: int) -> SamplingStrategy:
    """Builds one sampling strategy from its configuration block."""
    scheme = config.get("scheme", "full")
    if scheme == "full":
        return FullSampling()
    if scheme == "multilevel":
        return MultilevelSampling(
            boundaries=config.get("boundaries", boundaries),
            seed=master_seed + config.get("seed", 0),
            counts=config.get("counts"),
            fractions=config.get("fractions"),
        )
    raise NotImplementedError(f"Sampling scheme '{scheme}' is not implemented.")
