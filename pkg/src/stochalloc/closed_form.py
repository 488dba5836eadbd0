"""Potentials recomputed from their definitions rather than by incremental updates.

Each function takes the running consumption and profit sums ``sx``/``sy`` of
shape ``(S + 1, n)`` (row ``s`` holds the sums over the first ``s`` steps)
and returns the log potentials after every step ``s = 0..S``.  These are the
reference for checking the incremental engine.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np


def _steps(sx) -> np.ndarray:
    return np.arange(np.asarray(sx).shape[0], dtype=float)[:, None]


def _suffix_fast(logs: np.ndarray) -> np.ndarray:
    """``out[s]`` sums the factors of steps ``s+2..m`` (1-indexed) for s = 0..m."""
    logs = np.asarray(logs, dtype=float)
    m = logs.shape[0]
    rev = np.cumsum(logs[::-1], axis=0)[::-1]  # rev[k] = sum logs[k:]
    out = np.zeros((m + 1,) + logs.shape[1:])
    out[: m - 1] = rev[1:]
    return out


def known_we(capacities, w_e: float, gamma: float, eps: float, m: int, sx, sy) -> Tuple[np.ndarray, np.ndarray]:
    c = np.asarray(capacities, dtype=float)
    s = _steps(sx)
    f = 1 + eps / ((1 + eps) * gamma * m)
    g = 1 - eps / ((1 + eps) * gamma * m)
    lx = (-np.log(c) + np.asarray(sx) / (gamma * c) * math.log(1 + eps) + (m - s - 1) * math.log(f)
          - math.log(1 + eps) / gamma)
    ly = (-math.log(w_e) + np.asarray(sy) / (gamma * w_e) * math.log(1 - eps) + (m - s - 1) * math.log(g)
          - (1 - eps) / (gamma * (1 + eps)) * math.log(1 - eps))
    return lx, ly


def asi2(capacities, w_e_per_step, gamma: float, eps: float, sx, sy):
    m = len(w_e_per_step)
    w = np.asarray(w_e_per_step, dtype=float)
    w_bar = math.fsum(w) / m
    c = np.asarray(capacities, dtype=float)
    s = _steps(sx)
    f = 1 + eps / ((1 + eps) * gamma * m)
    lx = (-np.log(c) + np.asarray(sx) / (gamma * c) * math.log(1 + eps) + (m - s - 1) * math.log(f)
          - math.log(1 + eps) / gamma)
    tail = _suffix_fast(np.log(1 - eps * w / ((1 + eps) * w_bar * gamma * m)))[: s.shape[0]]
    ly = (-math.log(w_bar) + np.asarray(sy) / (gamma * w_bar) * math.log(1 - eps) + tail[:, None]
          - (1 - eps) / (gamma * (1 + eps)) * math.log(1 - eps))
    return lx, ly


def asi3(capacities, c_profile, opt_profile, gamma: float, eps: float, sx, sy):
    c = np.asarray(capacities, dtype=float)
    c_profile = np.asarray(c_profile, dtype=float)
    opt_profile = np.asarray(opt_profile, dtype=float)
    S = np.asarray(sx).shape[0]
    tail_x = _suffix_fast(np.log(1 + eps * c_profile / ((1 + eps) * c * gamma)))[:S]
    lx = (-np.log(c) + np.asarray(sx) / (gamma * c) * math.log(1 + eps) + tail_x - math.log(1 + eps) / gamma)
    total = opt_profile.sum(axis=0)
    ly = np.full((S, opt_profile.shape[1]), -np.inf)
    for i in range(opt_profile.shape[1]):
        if total[i] <= 0:
            continue
        tail = _suffix_fast(np.log(1 - eps * opt_profile[:, i] / ((1 + eps) * total[i] * gamma)))[:S]
        ly[:, i] = (-math.log(total[i]) + np.asarray(sy)[:, i] / (gamma * total[i]) * math.log(1 - eps) + tail
                    - (1 - eps) / (gamma * (1 + eps)) * math.log(1 - eps))
    return lx, ly


def stage(capacities, gamma: float, m: int, length: int, eps_x: float, eps_y: Optional[float],
          z: float, w_max: float, sx, sy):
    c = np.asarray(capacities, dtype=float)
    s = _steps(sx)
    gm = m * gamma
    lx = (np.log(eps_x / (gamma * c)) + np.asarray(sx) / (gamma * c) * math.log(1 + eps_x)
          + (length - s - 1) * math.log(1 + eps_x / gm) - (1 + eps_x) * length / gm * math.log(1 + eps_x))
    if eps_y is None:
        return lx, np.full(np.asarray(sy).shape, -np.inf)
    ly = (math.log(eps_y / w_max) + np.asarray(sy) / w_max * math.log(1 - eps_y)
          + (length - s - 1) * math.log(1 - eps_y / gm)
          - (1 - eps_y) * length * z / (m * w_max) * math.log(1 - eps_y))
    return lx, ly


def gap(capacities, demands, gamma: float, eps: float, m: int, T: int, sx, sy):
    c = np.asarray(capacities, dtype=float)
    d = np.asarray(demands, dtype=float)
    s = _steps(sx)
    gm = m * gamma
    lx = (-np.log(c) + np.asarray(sx) / (gamma * c) * math.log(1 + eps) + (T - s - 1) * math.log(1 + eps / gm)
          - (1 + eps) * T / gm * math.log(1 + eps))
    ly = (-np.log(d) + np.asarray(sy) / (gamma * d) * math.log(1 - eps) + (T - s - 1) * math.log(1 - eps / gm)
          - (1 - eps) * T / gm * math.log(1 - eps))
    return lx, ly


def relative_gap(incremental, reference) -> float:
    """Largest ``|a - b| / max(1, |b|)``; matching infinities count as equal."""
    a = np.asarray(incremental, dtype=float)
    b = np.asarray(reference, dtype=float)
    same_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    a = np.where(same_inf, 0.0, a)
    b = np.where(same_inf, 0.0, b)
    return float((np.abs(a - b) / np.maximum(1.0, np.abs(b))).max(initial=0.0))
