"""Adaptive Gaussian-mixture background subtraction (Zivkovic-style).

Every pixel keeps up to ``k_max`` weighted gray-level Gaussians. A pixel is
background when it matches a component that belongs to the heavy head of the
weight-sorted mixture; everything else is foreground (255).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass(frozen=True)
class AgmmConfig:
    k_max: int = 5
    history: int = 500
    var_threshold: float = 16.0
    background_ratio: float = 0.9
    var_init: float = 15.0
    var_min: float = 4.0
    var_max: float = 75.0
    complexity_prior: float = 0.05

    @classmethod
    def from_dict(cls, data: dict) -> "AgmmConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown AGMM option(s): {sorted(unknown)}")
        return cls(**data)


@dataclass
class MixtureModel:
    config: AgmmConfig = field(default_factory=AgmmConfig)
    frames_seen: int = 0
    weight: np.ndarray | None = None
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int] | None:
        return None if self.weight is None else self.weight.shape[1:]

    @property
    def learning_rate(self) -> float:
        """Rate that the next update will use."""
        return max(1.0 / (self.frames_seen + 1), 1.0 / self.config.history)

    def reset(self) -> "MixtureModel":
        self.frames_seen = 0
        self.weight = self.mean = self.var = None
        return self

    def apply(self, frame: np.ndarray) -> np.ndarray:
        return agmm_update(self, frame)


def agmm_reset(model: MixtureModel) -> MixtureModel:
    return model.reset()


def _background_membership(weight: np.ndarray, ratio: float) -> np.ndarray:
    """True where the weight of all heavier components sums below ``ratio``."""
    order = np.argsort(-weight, axis=0, kind="stable")
    w_sorted = np.take_along_axis(weight, order, axis=0)
    before = np.cumsum(w_sorted, axis=0) - w_sorted
    member_sorted = before < ratio
    member = np.empty_like(member_sorted)
    np.put_along_axis(member, order, member_sorted, axis=0)
    return member


def _prepare(model: MixtureModel, frame: np.ndarray) -> tuple[np.ndarray, float]:
    cfg = model.config
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("frame must be 2-D")
    if model.weight is None:
        k = cfg.k_max
        model.weight = np.zeros((k,) + x.shape)
        model.mean = np.zeros((k,) + x.shape)
        model.var = np.full((k,) + x.shape, cfg.var_init)
    elif model.weight.shape[1:] != x.shape:
        raise ValueError(f"frame shape {x.shape} does not match model shape {model.weight.shape[1:]}")
    model.frames_seen += 1
    return x, max(1.0 / model.frames_seen, 1.0 / cfg.history)


@njit(cache=True)
def _agmm_kernel(x, w, mu, var, alpha, var_threshold, ratio_bg, prune, var_init,
                 var_min, var_max, mask):
    k_max = w.shape[0]
    h, wd = x.shape
    for r in range(h):
        for c in range(wd):
            v = x[r, c]
            best = -1
            best_ratio = np.inf
            for k in range(k_max):
                if w[k, r, c] > 0:
                    dk = v - mu[k, r, c]
                    q = dk * dk / var[k, r, c]
                    if q < var_threshold and q < best_ratio:
                        best_ratio = q
                        best = k
            fg = 255
            if best >= 0:
                # heavier components (ties: lower index first) must sum below the ratio
                wb = w[best, r, c]
                before = 0.0
                for k in range(k_max):
                    wk = w[k, r, c]
                    if wk > wb or (wk == wb and k < best):
                        before += wk
                if before < ratio_bg:
                    fg = 0
            mask[r, c] = fg
            total = 0.0
            for k in range(k_max):
                wk = w[k, r, c]
                if wk > 0:
                    own = 1.0 if k == best else 0.0
                    wn = (1.0 - alpha) * wk + alpha * own - prune
                    if wn < prune:
                        wn = 0.0
                else:
                    wn = 0.0
                if k == best and wn > 0:
                    rho = min(alpha / wn, 1.0)
                    dk = v - mu[k, r, c]
                    mu[k, r, c] += rho * dk
                    var[k, r, c] += rho * (dk * dk - var[k, r, c])
                vk = var[k, r, c]
                if vk < var_min:
                    var[k, r, c] = var_min
                elif vk > var_max:
                    var[k, r, c] = var_max
                w[k, r, c] = wn
            if best < 0:
                slot = 0
                for k in range(1, k_max):
                    if w[k, r, c] < w[slot, r, c]:
                        slot = k
                for k in range(k_max):
                    if k != slot:
                        total += w[k, r, c]
                w[slot, r, c] = alpha if total > 0 else 1.0
                mu[slot, r, c] = v
                var[slot, r, c] = var_init
            total = 0.0
            for k in range(k_max):
                total += w[k, r, c]
            if total > 0:
                for k in range(k_max):
                    w[k, r, c] /= total


def agmm_update(model: MixtureModel, frame: np.ndarray) -> np.ndarray:
    """Fold ``frame`` into the model and return its {0, 255} foreground mask."""
    cfg = model.config
    x, alpha = _prepare(model, frame)
    mask = np.empty(x.shape, dtype=np.uint8)
    _agmm_kernel(x, model.weight, model.mean, model.var, alpha, cfg.var_threshold,
                 cfg.background_ratio, alpha * cfg.complexity_prior, cfg.var_init,
                 cfg.var_min, cfg.var_max, mask)
    return mask


def agmm_update_reference(model: MixtureModel, frame: np.ndarray) -> np.ndarray:
    """Vectorised numpy version of :func:`agmm_update` (slow; kept as a test oracle)."""
    cfg = model.config
    x, alpha = _prepare(model, frame)
    w, mu, var = model.weight, model.mean, model.var

    active = w > 0
    diff = x[None] - mu
    d2 = diff * diff
    ratio = np.where(active, d2 / var, np.inf)
    ratio = np.where(ratio < cfg.var_threshold, ratio, np.inf)
    best = np.argmin(ratio, axis=0)
    matched = np.isfinite(np.take_along_axis(ratio, best[None], axis=0)[0])

    in_bg = _background_membership(w, cfg.background_ratio)
    best_in_bg = np.take_along_axis(in_bg, best[None], axis=0)[0]
    mask = np.where(matched & best_in_bg, 0, 255).astype(np.uint8)

    owner = np.zeros(w.shape, dtype=bool)
    np.put_along_axis(owner, best[None], matched[None], axis=0)

    # weight decay with complexity prior; matched component gains alpha
    prune = alpha * cfg.complexity_prior
    w_new = np.where(active, (1.0 - alpha) * w + alpha * owner - prune, 0.0)
    w_new = np.where(w_new < prune, 0.0, w_new)

    # matched component: mean/variance follow with rate alpha / weight
    safe_w = np.where(owner & (w_new > 0), w_new, 1.0)
    rho = np.where(owner & (w_new > 0), alpha / safe_w, 0.0)
    rho = np.minimum(rho, 1.0)
    mu += rho * diff
    var += rho * (d2 - var)
    np.clip(var, cfg.var_min, cfg.var_max, out=var)

    # unmatched pixel: spawn a component in a free slot or over the weakest
    new_px = ~matched
    if new_px.any():
        slot = np.argmin(w_new, axis=0)
        spawn = np.zeros(w.shape, dtype=bool)
        np.put_along_axis(spawn, slot[None], new_px[None], axis=0)
        others = w_new.sum(axis=0) - np.take_along_axis(w_new, slot[None], axis=0)[0]
        init_w = np.where(others > 0, alpha, 1.0)
        w_new = np.where(spawn, init_w[None], w_new)
        mu[spawn] = np.broadcast_to(x[None], mu.shape)[spawn]
        var[spawn] = cfg.var_init

    total = w_new.sum(axis=0)
    w_new /= np.where(total > 0, total, 1.0)[None]
    model.weight = w_new
    return mask

