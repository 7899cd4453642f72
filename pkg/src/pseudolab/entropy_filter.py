"""Entropy-based screening and weighting of pseudo-label probability maps.

A candidate pseudo-label is scored by comparing per-pixel local entropy
(binary entropy of a windowed mean) against the map's global entropy; the
fraction of pixels whose local entropy exceeds half the global entropy is
the sample's uncertainty score. Low-uncertainty samples are retained,
damped pixel-wise by an entropy weight map, and ranked by mean local
entropy to schedule expansion from easy to hard samples.

Windowed means use mirror padding (boundary reflected without repeating
the edge pixel), which adds no artificial entropy at image borders.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import xlogy

from .pixmap import EntropyMap, ProbMap, normalize

LOG_BASES = ("two", "natural")
RANK_ORDERS = ("low_to_high", "high_to_low", "random")


@dataclass(frozen=True)
class EdfConfig:
    """Knobs for uncertainty scoring, retention, and entropy weighting.

    window: side of the square mean filter, odd.
    tau_alpha: retention threshold on the uncertainty score, in (0, 1).
    global_factor: local entropy must exceed global_factor * global
        entropy to count as uncertain.
    decay_k: exponent of the entropy weight decay, >= 0.
    log_base: entropy log base; "two" keeps entropy in [0, 1].
    norm_mode: normalization applied to incoming maps ("clamp"/"minmax").
    """

    window: int = 7
    tau_alpha: float = 0.3
    global_factor: float = 0.5
    decay_k: float = 1.0
    log_base: str = "two"
    norm_mode: str = "clamp"

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if not 0.0 < self.tau_alpha < 1.0:
            raise ValueError(f"tau_alpha must lie in (0, 1), got {self.tau_alpha}")
        if self.decay_k < 0.0:
            raise ValueError(f"decay_k must be >= 0, got {self.decay_k}")
        if self.log_base not in LOG_BASES:
            raise ValueError(f"log_base must be one of {LOG_BASES}, got {self.log_base!r}")
        if self.norm_mode not in ("clamp", "minmax"):
            raise ValueError(f"norm_mode must be 'clamp' or 'minmax', got {self.norm_mode!r}")

    @property
    def entropy_ceiling(self) -> float:
        """Maximum attainable binary entropy under the configured base."""
        return 1.0 if self.log_base == "two" else math.log(2.0)


@dataclass(frozen=True)
class EdfVerdict:
    """Per-sample screening outcome.

    weighted is the entropy-damped map used for prompting and fusion;
    mean_local_entropy is recomputed on the weighted map and drives
    curriculum ranking.
    """

    u_alpha: float
    retained: bool
    mean_local_entropy: float
    weighted: ProbMap

    def __post_init__(self):
        if not 0.0 <= self.u_alpha <= 1.0:
            raise ValueError(f"u_alpha must lie in [0, 1], got {self.u_alpha}")


def _binary_entropy(p: np.ndarray | float, log_base: str):
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
    e = -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))
    if log_base == "two":
        e = e / math.log(2.0)
    # Guard against ulp-level overshoot near the entropy peak.
    return np.clip(e, 0.0, 1.0)


def local_entropy(pmap: ProbMap, cfg: EdfConfig = EdfConfig()) -> EntropyMap:
    """Binary entropy of the window-mean foreground probability per pixel."""
    norm = normalize(pmap, cfg.norm_mode)
    p_f = ndimage.uniform_filter(norm.data, size=cfg.window, mode="mirror")
    return EntropyMap(_binary_entropy(p_f, cfg.log_base))


def global_entropy(pmap: ProbMap, cfg: EdfConfig = EdfConfig()) -> float:
    """Binary entropy of the mean foreground probability of the whole map."""
    norm = normalize(pmap, cfg.norm_mode)
    return float(_binary_entropy(float(norm.data.mean()), cfg.log_base))


def uncertainty_score(pmap: ProbMap, cfg: EdfConfig = EdfConfig()) -> float:
    """Fraction of pixels whose local entropy exceeds the global cutoff."""
    e_local = local_entropy(pmap, cfg).data
    cutoff = cfg.global_factor * global_entropy(pmap, cfg)
    return float(np.count_nonzero(e_local > cutoff) / e_local.size)


def retain(pmap: ProbMap, cfg: EdfConfig = EdfConfig()) -> bool:
    """True iff the sample's uncertainty score is below tau_alpha."""
    return uncertainty_score(pmap, cfg) < cfg.tau_alpha


def entropy_weight(pmap: ProbMap, e: EntropyMap, cfg: EdfConfig = EdfConfig()) -> ProbMap:
    """Damp a map pixel-wise by 0.5 + 0.5 * (1 - E)^k.

    The entropy is rescaled by the base's ceiling before weighting, so the
    damping range is [0.5, 1] regardless of log base and the weighted map
    is identical under base-two and natural logs.
    """
    if e.data.shape != pmap.data.shape:
        raise ValueError(f"dimension mismatch: map {pmap.data.shape} vs entropy {e.data.shape}")
    norm = normalize(pmap, cfg.norm_mode)
    e_unit = np.clip(e.data / cfg.entropy_ceiling, 0.0, 1.0)
    weight = 0.5 + 0.5 * (1.0 - e_unit) ** cfg.decay_k
    return ProbMap(norm.data * weight)


def evaluate_sample(pmap: ProbMap, cfg: EdfConfig = EdfConfig()) -> EdfVerdict:
    """Score, filter, and weight one pseudo-label map."""
    norm = normalize(pmap, cfg.norm_mode)
    e_local = local_entropy(norm, cfg)
    cutoff = cfg.global_factor * global_entropy(norm, cfg)
    u_alpha = float(np.count_nonzero(e_local.data > cutoff) / e_local.data.size)
    weighted = entropy_weight(norm, e_local, cfg)
    mean_e = float(local_entropy(weighted, cfg).data.mean())
    return EdfVerdict(
        u_alpha=u_alpha,
        retained=u_alpha < cfg.tau_alpha,
        mean_local_entropy=mean_e,
        weighted=weighted,
    )


def rank_candidates(
    verdicts: list[tuple[str, EdfVerdict]],
    order: str = "low_to_high",
    seed: int | None = None,
) -> list[str]:
    """Order retained samples for expansion.

    Entropy orders sort by mean_local_entropy with ties broken by sample
    id; "random" shuffles ids deterministically from the given seed.
    """
    if order not in RANK_ORDERS:
        raise ValueError(f"order must be one of {RANK_ORDERS}, got {order!r}")
    if order == "random":
        if seed is None:
            raise ValueError("random order requires a seed")
        ids = sorted(sid for sid, _ in verdicts)
        random.Random(seed).shuffle(ids)
        return ids
    reverse = order == "high_to_low"
    keyed = sorted(verdicts, key=lambda item: item[0])
    keyed.sort(key=lambda item: item[1].mean_local_entropy, reverse=reverse)
    return [sid for sid, _ in keyed]
