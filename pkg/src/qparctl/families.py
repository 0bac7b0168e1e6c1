"""Named families of coefficients, reactions and initial states.

Scenarios refer to these by name so a run is fully described by plain data.
"""

from __future__ import annotations

import math

import numpy as np


def _constant(value=1.0):
    value = float(value)
    return (lambda s: np.full(np.shape(s), value)), (lambda s: np.zeros(np.shape(s)))


def _sine(base=2.0, amplitude=1.0):
    return (lambda s: base + amplitude * np.sin(s)), (lambda s: amplitude * np.cos(s))


def _arctan(alpha=0.5):
    return (lambda s: 1.0 + alpha * np.arctan(s)), (lambda s: alpha / (1.0 + np.square(s)))


def _polynomial(coeffs=(1.0,), clamp=1.0):
    """a(s) = P(clip(s, -clamp, clamp)); the derivative vanishes beyond the clamp."""
    poly = np.polynomial.Polynomial(coeffs)
    dpoly = poly.deriv()
    clamp = float(clamp)

    def a(s):
        return poly(np.clip(s, -clamp, clamp))

    def a_prime(s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) < clamp, dpoly(s), 0.0)

    return a, a_prime


DIFFUSION_FAMILIES = {
    "constant": _constant,
    "sine": _sine,
    "arctan": _arctan,
    "polynomial": _polynomial,
}


def _square(scale=1.0):
    return (lambda s: scale * np.square(s)), (lambda s: 2.0 * scale * np.asarray(s))


def _zero():
    return (lambda s: np.zeros(np.shape(s))), (lambda s: np.zeros(np.shape(s)))


def _linear(slope=1.0):
    return (lambda s: slope * np.asarray(s, dtype=float)), (lambda s: np.full(np.shape(s), float(slope)))


def _cubic(scale=1.0):
    return (lambda s: scale * np.asarray(s) ** 3), (lambda s: 3.0 * scale * np.square(s))


REACTION_FAMILIES = {
    "square": _square,
    "zero": _zero,
    "linear": _linear,
    "cubic": _cubic,
}


def _sine_sum(x, rng, modes=(1,), coeffs=None):
    coeffs = [1.0] * len(modes) if coeffs is None else coeffs
    if len(coeffs) != len(modes):
        raise ValueError("sine_sum needs one coefficient per mode")
    return sum(c * np.sin(k * math.pi * x) for k, c in zip(modes, coeffs))


def _bump(x, rng, center=0.5, width=0.2):
    z = (x - center) / width
    out = np.zeros_like(x)
    inside = np.abs(z) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


def _random_trig(x, rng, n_modes=5, decay=1.0):
    coef = rng.standard_normal(n_modes) / np.arange(1, n_modes + 1) ** decay
    y = sum(c * np.sin((k + 1) * math.pi * x) for k, c in enumerate(coef))
    peak = np.max(np.abs(y))
    return y / peak if peak > 0 else y


INITIAL_FAMILIES = {
    "sine_sum": _sine_sum,
    "bump": _bump,
    "random_trig": _random_trig,
}


def diffusion(family, **params):
    try:
        return DIFFUSION_FAMILIES[family](**params)
    except KeyError:
        raise ValueError(f"unknown diffusion family {family!r}") from None


def reaction(family, **params):
    try:
        return REACTION_FAMILIES[family](**params)
    except KeyError:
        raise ValueError(f"unknown reaction family {family!r}") from None


def initial_state(family, x, amplitude=1.0, seed=0, **params):
    """Profile on ``x`` with zero boundary entries, scaled by ``amplitude``."""
    try:
        fn = INITIAL_FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown initial family {family!r}") from None
    y = amplitude * np.asarray(fn(np.asarray(x, dtype=float), np.random.default_rng(seed), **params), dtype=float)
    y[0] = y[-1] = 0.0
    return y
