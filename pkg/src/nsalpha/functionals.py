"""Test functionals: cylindrical functionals Phi and energy weights psi."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BoxMismatchError, InvalidPsiError
from .spectral import SpectralField, eigenfunction


@dataclass(frozen=True)
class PsiFunction:
    """A C^1 weight psi >= 0 with psi' >= 0 and a certified bound on psi'."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    sup_deriv: float

    def __call__(self, r):
        return self.func(np.asarray(r, dtype=float))

    def validate(self, r_max, samples=4097):
        """Dense-sample check of the class conditions on ``[0, r_max]``."""
        r = np.linspace(0.0, max(float(r_max), 1e-12), samples)
        f, d = self.func(r), self.deriv(r)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(d))):
            raise InvalidPsiError(f"psi '{self.name}' not finite on [0, {r_max}]")
        if np.any(f < 0):
            raise InvalidPsiError(f"psi '{self.name}' takes negative values")
        if np.any(d < 0):
            raise InvalidPsiError(f"psi '{self.name}' has a negative derivative")
        if not math.isfinite(self.sup_deriv) or np.any(d > self.sup_deriv * (1 + 1e-12) + 1e-300):
            raise InvalidPsiError(f"psi '{self.name}': derivative exceeds certified sup {self.sup_deriv}")
        return self


PSI_IDENTITY = PsiFunction("r", lambda r: r, lambda r: np.ones_like(r), 1.0)
PSI_SATURATING = PsiFunction("r/(1+r)", lambda r: r / (1.0 + r), lambda r: 1.0 / (1.0 + r) ** 2, 1.0)
PSI_TANH = PsiFunction("tanh(r)", np.tanh, lambda r: 1.0 / np.cosh(r) ** 2, 1.0)


def psi_constant(value=1.0):
    return PsiFunction(f"const({value:g})", lambda r: np.full_like(r, value), np.zeros_like, 0.0)


DEFAULT_PSIS = (PSI_IDENTITY, PSI_SATURATING, PSI_TANH)


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """Phi(u) = phi((u, v_1), ..., (u, v_k)).

    ``phi`` and ``grad`` act on the trailing axis of an array of pairings,
    so one call evaluates Phi on a whole stack of states.
    """

    name: str
    tests: tuple
    phi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        tests = tuple(self.tests)
        if not tests:
            raise ValueError("a cylindrical functional needs at least one test field")
        box = tests[0].box
        if any(t.box != box for t in tests):
            raise BoxMismatchError("test fields live on different boxes")
        object.__setattr__(self, "tests", tests)
        stack = np.stack([t.coeffs for t in tests])
        w = box.weights
        k = len(tests)
        object.__setattr__(self, "_re", (w * stack.real).reshape(k, -1).T * box.volume)
        object.__setattr__(self, "_im", (w * stack.imag).reshape(k, -1).T * box.volume)

    @property
    def box(self):
        return self.tests[0].box

    @property
    def arity(self):
        return len(self.tests)

    def pairings(self, coeffs):
        """(u, v_j) for every state in a coefficient stack; shape ``(..., k)``."""
        if isinstance(coeffs, SpectralField):
            if coeffs.box != self.box:
                raise BoxMismatchError(f"{coeffs.box} vs {self.box}")
            coeffs = coeffs.coeffs
        if coeffs.shape[-4:] != self.box.shape:
            raise BoxMismatchError(f"state shape {coeffs.shape[-4:]} vs {self.box.shape}")
        lead = coeffs.shape[:-4]
        flat = coeffs.reshape(lead + (-1,))
        return flat.real @ self._re + flat.imag @ self._im

    def __call__(self, u):
        return self.phi(self.pairings(u))

    def derivative(self, u):
        """Frechet derivative Phi'(u) as a field."""
        g = self.grad(self.pairings(u))
        c = sum(gj * t.coeffs for gj, t in zip(g, self.tests))
        return SpectralField(self.box, c)

    def directional(self, u, direction):
        """<direction, Phi'(u)> evaluated stack-wise without building Phi'."""
        return np.sum(self.grad(self.pairings(u)) * self.pairings(direction), axis=-1)


def linear_tanh(v, scale=1.0, name=None):
    s = float(scale)
    return CylindricalFunctional(
        name or "lin",
        (v,),
        lambda p: np.tanh(p[..., 0] / s),
        lambda p: 1.0 / np.cosh(p / s) ** 2 / s,
    )


def quadratic_tanh(v, scale=1.0, name=None):
    s = float(scale)
    return CylindricalFunctional(
        name or "quad",
        (v,),
        lambda p: np.tanh((p[..., 0] / s) ** 2),
        lambda p: 2.0 * p / s**2 / np.cosh((p / s) ** 2) ** 2,
    )


def quadratic_form(v, name=None):
    """Unsaturated phi(p) = p^2; used for closed-form checks, not in the dictionary."""
    return CylindricalFunctional(name or "square", (v,), lambda p: p[..., 0] ** 2, lambda p: 2.0 * p)


def default_dictionary(box, scale=1.0, modes: Sequence[int] = (1, 2, 3)):
    """Six saturated functionals over pairings with the lowest eigenmodes."""
    out = []
    for j in modes:
        w = eigenfunction(box, j)
        out.append(linear_tanh(w, scale, f"lin{j}"))
        out.append(quadratic_tanh(w, scale, f"quad{j}"))
    return tuple(out)
