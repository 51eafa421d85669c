"""Fourier representation of periodic, zero-mean vector fields on a 3D box.

Coefficients are stored on the real-FFT half spectrum, array shape
``(3, N, N, N//2 + 1)``, normalised so that

    u(x) = sum_k  c(k) exp(i k . x),      c = rfftn(u) / N**3.

Every field is kept inside the Galerkin set of retained wavevectors,
the cube ``|k_i| <= (N - 1) // 3`` (integer indices) minus the zero mode.
That cutoff is the 2/3 rule: quadratic products of retained fields are
computed without aliasing on the N**3 collocation grid.

Inner products use the integral convention ``(u, v) = int_Omega u . v dx``,
so they carry the box volume ``L1 * L2 * L3``.

The module-level functions accept either :class:`SpectralField` values or
raw coefficient arrays with arbitrary leading batch dimensions; the
``_arr`` helpers are what the time integrator uses on stacked ensembles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import BoxMismatchError, ConfigurationError, InvalidModeError

_AXES = (-3, -2, -1)
FILTER_EXPONENTS = (-1.0, -0.5, 0.5, 1.0)


@dataclass(frozen=True)
class BoxSpec:
    """Periodic box ``prod (0, L_i)`` sampled on ``n**3`` collocation points."""

    lengths: tuple = (2 * math.pi, 2 * math.pi, 2 * math.pi)
    n: int = 16

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) != 3 or any(not (x > 0) or not math.isfinite(x) for x in lengths):
            raise ConfigurationError(f"box lengths must be three positive reals, got {self.lengths}")
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ConfigurationError(f"resolution must be an even integer >= 4, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def shape(self):
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def grid_shape(self):
        return (self.n, self.n, self.n)

    @property
    def volume(self):
        return self.lengths[0] * self.lengths[1] * self.lengths[2]

    @property
    def cutoff(self):
        """Largest retained integer wavenumber per direction (2/3 rule)."""
        return (self.n - 1) // 3

    @cached_property
    def kint(self):
        n = self.n
        kx = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
        kz = np.fft.rfftfreq(n, 1.0 / n).round().astype(int)
        return np.stack(np.meshgrid(kx, kx, kz, indexing="ij"))

    @cached_property
    def kvec(self):
        scale = np.array([2 * math.pi / L for L in self.lengths]).reshape(3, 1, 1, 1)
        return self.kint * scale

    @cached_property
    def lam(self):
        """Stokes eigenvalue |k|^2 on the storage grid (zero at k = 0)."""
        return np.sum(self.kvec**2, axis=0)

    @cached_property
    def mask(self):
        k = self.kint
        inside = np.all(np.abs(k) <= self.cutoff, axis=0)
        inside[0, 0, 0] = False
        return inside

    @cached_property
    def weights(self):
        """Multiplicity of each stored coefficient in the full spectrum sum."""
        w = np.full(self.grid_shape[:2] + (self.n // 2 + 1,), 2.0)
        w[..., 0] = 1.0
        return np.where(self.mask, w, 0.0)

    @cached_property
    def lam_safe(self):
        return np.where(self.mask, self.lam, 1.0)

    @cached_property
    def lambda1(self):
        return float(self.lam[self.mask].min())

    @cached_property
    def lambda_max(self):
        return float(self.lam[self.mask].max())

    @cached_property
    def eigenbasis(self):
        return RealEigenbasis.build(self)

    def mode_count(self):
        """Number of real dimensions of the retained divergence-free space."""
        return len(self.eigenbasis)

    def storage_index(self, k):
        """Storage position of integer wavevector ``k``; ``conj`` is True when
        the coefficient lives at ``-k`` and must be conjugated."""
        k = tuple(int(x) for x in k)
        if k == (0, 0, 0):
            raise InvalidModeError("the zero mode is excluded (zero-mean fields)")
        if any(abs(x) > self.cutoff for x in k):
            raise InvalidModeError(f"wavevector {k} outside retained set |k_i| <= {self.cutoff}")
        conj = k[2] < 0
        if conj:
            k = tuple(-x for x in k)
        n = self.n
        return (k[0] % n, k[1] % n, k[2]), conj

    def to_dict(self):
        return {"lengths": list(self.lengths), "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("lengths", (2 * math.pi,) * 3)), int(d["n"]))


@dataclass(frozen=True)
class RealEigenbasis:
    """Orthonormal real eigenfunctions of the Stokes operator on the retained set.

    Each canonical wavevector k (``k3 > 0``, or ``k3 == 0, k2 > 0``, or
    ``k3 == k2 == 0, k1 > 0``) contributes four functions
    ``sqrt(2/V) {cos, sin}(k.x) e_p`` for two polarizations ``e_p``
    orthogonal to k. Ordering: eigenvalue, then ``(k1, k2, k3)``
    lexicographically, then polarization, then cos before sin; so a
    (polarization, cos/sin) conjugate pair occupies two consecutive slots.
    """

    index: np.ndarray  # (n, 3) storage positions
    kint: np.ndarray  # (n, 3)
    lam: np.ndarray  # (n,)
    pol: np.ndarray  # (n, 3)
    is_sin: np.ndarray  # (n,) bool
    volume: float

    def __len__(self):
        return len(self.lam)

    @classmethod
    def build(cls, box: BoxSpec):
        K = box.cutoff
        scale = np.array([2 * math.pi / L for L in box.lengths])
        rows = []
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                for k3 in range(0, K + 1):
                    if not (k3 > 0 or (k3 == 0 and (k2 > 0 or (k2 == 0 and k1 > 0)))):
                        continue
                    kp = scale * (k1, k2, k3)
                    lam = float(kp @ kp)
                    rows.append((lam, (k1, k2, k3), kp))
        rows.sort(key=lambda r: (r[0], r[1]))
        index, kint, lams, pols, sins = [], [], [], [], []
        n = box.n
        for lam, k, kp in rows:
            axis = np.zeros(3)
            axis[int(np.argmin(np.abs(kp)))] = 1.0
            e1 = np.cross(kp, axis)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(kp / np.linalg.norm(kp), e1)
            for e in (e1, e2):
                for s in (False, True):
                    index.append((k[0] % n, k[1] % n, k[2]))
                    kint.append(k)
                    lams.append(lam)
                    pols.append(e)
                    sins.append(s)
        return cls(
            np.array(index, dtype=int),
            np.array(kint, dtype=int),
            np.array(lams),
            np.array(pols),
            np.array(sins, dtype=bool),
            box.volume,
        )

    def coordinates(self, coeffs):
        """Real coordinates ``(u, w_i)`` for all basis functions, batch-aware."""
        ix, iy, iz = self.index.T
        c = coeffs[..., :, ix, iy, iz]  # (..., 3, n)
        a = np.einsum("...cn,nc->...n", c, self.pol)
        s = math.sqrt(2 * self.volume)
        return np.where(self.is_sin, -s * a.imag, s * a.real)

    def reconstruct(self, coords, shape):
        coords = np.asarray(coords, dtype=float)
        m = coords.shape[-1]
        s = math.sqrt(2 * self.volume)
        amp = np.where(self.is_sin[:m], -1j * coords, coords + 0j) / s
        out = np.zeros(coords.shape[:-1] + tuple(shape), dtype=complex)
        ix, iy, iz = self.index[:m].T
        contrib = amp[..., None, :] * self.pol[:m].T  # (..., 3, m)
        flat = out.reshape(coords.shape[:-1] + (3, -1))
        lin = np.ravel_multi_index((ix, iy, iz), shape[1:])
        np.add.at(flat, (Ellipsis, lin), contrib)
        return _fill_conjugate_plane(out)


# ---------------------------------------------------------------------------
# array-level helpers (leading batch dimensions allowed)


def _fill_conjugate_plane(c):
    """Overwrite the k3 = 0 partners of canonical modes with conjugates."""
    n = c.shape[-3]
    neg = (-np.arange(n)) % n
    plane = c[..., 0]
    partner = np.conj(plane[..., neg, :][..., :, neg])
    canon_half = np.zeros((n, n), dtype=bool)
    k = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    canon_half[(k2 > 0) | ((k2 == 0) & (k1 > 0))] = True
    c[..., 0] = np.where(canon_half, plane, partner)
    c[..., 0, 0, 0] = 0
    return c


def symmetrize(c):
    """Project an arbitrary half-spectrum array onto reality-symmetric data."""
    c = np.array(c, dtype=complex)
    n = c.shape[-3]
    neg = (-np.arange(n)) % n
    plane = c[..., 0]
    c[..., 0] = 0.5 * (plane + np.conj(plane[..., neg, :][..., :, neg]))
    return c


def to_physical_arr(c, box):
    return sfft.irfftn(c, s=box.grid_shape, axes=_AXES, norm="forward")


def from_physical_arr(u, box):
    return sfft.rfftn(u, axes=_AXES, norm="forward") * box.mask


def leray_arr(c, box):
    kv = box.kvec
    div = np.sum(kv * c, axis=-4, keepdims=True)
    return (c - kv * div / box.lam_safe) * box.mask


def filter_symbol(box, alpha, exponent):
    if exponent not in FILTER_EXPONENTS:
        raise ValueError(f"filter exponent must be one of {FILTER_EXPONENTS}, got {exponent}")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        return np.ones(box.lam.shape)
    return (1.0 + alpha * alpha * box.lam) ** exponent


def inner_arr(a, b, box):
    s = np.sum(box.weights * np.real(a * np.conj(b)), axis=(-4, -3, -2, -1))
    return box.volume * s


def hnorm2_arr(c, box):
    return box.volume * np.sum(box.weights * (c.real**2 + c.imag**2), axis=(-4, -3, -2, -1))


def vnorm2_arr(c, box):
    w = box.weights * box.lam
    return box.volume * np.sum(w * (c.real**2 + c.imag**2), axis=(-4, -3, -2, -1))


def dadual2_arr(c, box):
    w = box.weights / box.lam_safe**2
    return box.volume * np.sum(w * (c.real**2 + c.imag**2), axis=(-4, -3, -2, -1))


def advect_arr(u, v, box):
    """Dealiased, Leray-projected (u . grad) v."""
    up = to_physical_arr(u, box)
    grad = 1j * box.kvec[None] * v[..., :, None, :, :, :]  # (..., i, j, ...)
    gp = to_physical_arr(grad, box)
    prod = np.einsum("...jxyz,...ijxyz->...ixyz", up, gp)
    return leray_arr(from_physical_arr(prod, box), box)


def curl_arr(v, box):
    kx, ky, kz = box.kvec
    vx, vy, vz = v[..., 0, :, :, :], v[..., 1, :, :, :], v[..., 2, :, :, :]
    return 1j * np.stack([ky * vz - kz * vy, kz * vx - kx * vz, kx * vy - ky * vx], axis=-4)


def rotational_arr(u, v, box):
    """Dealiased, Leray-projected u x (curl v)."""
    up = to_physical_arr(u, box)
    wp = to_physical_arr(curl_arr(v, box), box)
    prod = np.cross(up, wp, axis=-4)
    return leray_arr(from_physical_arr(prod, box), box)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable zero-mean periodic vector field on ``box``."""

    box: BoxSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.box.shape:
            raise BoxMismatchError(f"coefficient array shape {c.shape} != {self.box.shape}")
        if np.any(c[..., ~self.box.mask] != 0):
            c = c * self.box.mask
        else:
            c = c.copy() if c.flags.writeable else c
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, box):
        return cls(box, np.zeros(box.shape, dtype=complex))

    @classmethod
    def from_physical(cls, box, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (3,) + box.grid_shape:
            raise BoxMismatchError(f"physical array shape {u.shape} incompatible with {box}")
        return cls(box, from_physical_arr(u, box))

    @classmethod
    def from_modes(cls, box, modes):
        """Build from ``{(k1, k2, k3): (c1, c2, c3)}``; the conjugate at ``-k``
        is implied. Listing both k and -k is an error."""
        c = np.zeros(box.shape, dtype=complex)
        seen = set()
        for k, vec in modes.items():
            k = tuple(int(x) for x in k)
            if tuple(-x for x in k) in seen:
                raise InvalidModeError(f"both {k} and its negative were given")
            seen.add(k)
            (ix, iy, iz), conj = box.storage_index(k)
            vec = np.asarray(vec, dtype=complex)
            c[:, ix, iy, iz] = np.conj(vec) if conj else vec
            if iz == 0:
                n = box.n
                c[:, (-ix) % n, (-iy) % n, 0] = np.conj(c[:, ix, iy, iz])
        return cls(box, c)

    @classmethod
    def from_coordinates(cls, box, coords):
        """Field with the given real-eigenbasis coordinates (first ``len(coords)``)."""
        return cls(box, box.eigenbasis.reconstruct(coords, box.shape))

    def coordinates(self, m=None):
        x = self.box.eigenbasis.coordinates(self.coeffs)
        return x if m is None else x[:m]

    def to_physical(self):
        return to_physical_arr(self.coeffs, self.box)

    def coefficient(self, k):
        (ix, iy, iz), conj = self.box.storage_index(k)
        c = self.coeffs[:, ix, iy, iz]
        return np.conj(c) if conj else c.copy()

    def divergence_max(self):
        return float(np.max(np.abs(np.sum(self.box.kvec * self.coeffs, axis=0)), initial=0.0))

    def is_solenoidal(self, rtol=1e-12):
        scale = float(np.max(np.abs(self.coeffs), initial=0.0)) * math.sqrt(self.box.lambda_max)
        return self.divergence_max() <= rtol * max(scale, 1e-300)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.box != self.box:
            raise BoxMismatchError(f"{self.box} vs {other.box}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.box, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.box, self.coeffs - other.coeffs)

    def __mul__(self, s):
        if not np.isscalar(s):
            return NotImplemented
        return SpectralField(self.box, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.box, -self.coeffs)


def eigenfunction(box, i):
    """The i-th (1-based) real Stokes eigenfunction, unit H-norm."""
    n = box.mode_count()
    if not 1 <= i <= n:
        raise InvalidModeError(f"eigenfunction index {i} outside 1..{n}")
    x = np.zeros(i)
    x[-1] = 1.0
    return SpectralField.from_coordinates(box, x)


def stokes_eigenvalue(box, k):
    """|2 pi (k1/L1, k2/L2, k3/L3)|^2 for a nonzero integer wavevector."""
    k = tuple(int(x) for x in k)
    if k == (0, 0, 0):
        raise InvalidModeError("the zero wavevector carries no Stokes eigenvalue")
    if any(abs(x) > box.n // 2 for x in k):
        raise InvalidModeError(f"wavevector {k} not representable at n={box.n}")
    return sum((2 * math.pi * ki / L) ** 2 for ki, L in zip(k, box.lengths))


def apply_stokes(u):
    return SpectralField(u.box, u.coeffs * u.box.lam)


def leray_project(g):
    return SpectralField(g.box, leray_arr(g.coeffs, g.box))


def helmholtz_filter(v, alpha, exponent):
    """Multiply each mode by ``(1 + alpha^2 lambda_k) ** exponent``."""
    return SpectralField(v.box, v.coeffs * filter_symbol(v.box, alpha, float(exponent)))


def galerkin_project(u, m):
    """P_m: keep the ``m`` lowest real eigenmodes (clamped to the full set)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    basis = u.box.eigenbasis
    m = min(int(m), len(basis))
    x = basis.coordinates(u.coeffs)[:m]
    return SpectralField(u.box, basis.reconstruct(x, u.box.shape))


def _same_box(*fields):
    box = fields[0].box
    for f in fields[1:]:
        if f.box != box:
            raise BoxMismatchError(f"{box} vs {f.box}")
    return box


def inner_product(u, v):
    box = _same_box(u, v)
    return float(inner_arr(u.coeffs, v.coeffs, box))


def norm_H(u):
    return math.sqrt(float(hnorm2_arr(u.coeffs, u.box)))


def norm_V(u):
    return math.sqrt(float(vnorm2_arr(u.coeffs, u.box)))


def norm_DAdual(g):
    """|A^{-1} g|, the D(A)' norm."""
    return math.sqrt(float(dadual2_arr(g.coeffs, g.box)))


def nonlinear_B(u, v):
    """P[(u . grad) v], pseudo-spectral with 2/3 dealiasing."""
    box = _same_box(u, v)
    _check_dealias(box)
    return SpectralField(box, advect_arr(u.coeffs, v.coeffs, box))


def nonlinear_Btilde(u, v):
    """P[u x (curl v)], pseudo-spectral with 2/3 dealiasing."""
    box = _same_box(u, v)
    _check_dealias(box)
    return SpectralField(box, rotational_arr(u.coeffs, v.coeffs, box))


def _check_dealias(box):
    if 3 * box.cutoff >= box.n or box.cutoff < 1:
        raise ConfigurationError(f"resolution n={box.n} too small to dealias quadratic terms")


@dataclass(frozen=True, eq=False)
class PhysParams:
    """Viscosity, filter length and a time-independent forcing."""

    nu: float
    alpha: float
    forcing: SpectralField

    def __post_init__(self):
        if not (self.nu > 0):
            raise ConfigurationError(f"viscosity must be positive, got {self.nu}")
        if not (self.alpha >= 0):
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")

    @property
    def box(self):
        return self.forcing.box

    @property
    def lambda1(self):
        return self.box.lambda1

    @cached_property
    def forcing_norm(self):
        return norm_H(self.forcing)

    @property
    def R0(self):
        """Absorbing radius ||f|| / (lambda1 nu)."""
        return self.forcing_norm / (self.lambda1 * self.nu)

    def with_alpha(self, alpha):
        return PhysParams(self.nu, alpha, self.forcing)

    def filtered_forcing(self):
        """(1 + alpha^2 A)^{-1/2} f, the forcing seen by the w-variable."""
        return helmholtz_filter(self.forcing, self.alpha, -0.5)


def taylor_green(box, amplitude=1.0):
    """A (sin x cos y cos z, -cos x sin y cos z, 0), wavenumbers scaled to the box."""
    x = [np.arange(box.n) * (L / box.n) for L in box.lengths]
    X, Y, Z = np.meshgrid(*x, indexing="ij")
    a, b, c = (2 * math.pi / L for L in box.lengths)
    u = np.stack(
        [
            np.sin(a * X) * np.cos(b * Y) * np.cos(c * Z),
            -(a / b) * np.cos(a * X) * np.sin(b * Y) * np.cos(c * Z),
            np.zeros_like(X),
        ]
    )
    return SpectralField.from_physical(box, amplitude * u)


def random_field(box, rng, n_coords, amplitude=1.0):
    """Gaussian coordinates on the first ``n_coords`` eigenmodes, scaled to |u| = amplitude."""
    x = rng.standard_normal(n_coords)
    x *= amplitude / np.linalg.norm(x)
    return SpectralField.from_coordinates(box, x)
