"""Flat complex torus: grids, spectral complex Hessians, pointwise eigenstructure.

Conventions
-----------
* The torus is ``C^n / Z^{2n}`` with real coordinates in ``[0, 1)``.  A grid
  field is an array of shape ``(N,) * 2n`` whose axis ``2j`` is ``x_{j+1}``
  and axis ``2j + 1`` is ``y_{j+1}`` (``z_j = x_j + i y_j``).
* A real (1,1)-form ``i h_{k̄j} dz^j ^ dz̄^k`` is stored as a Hermitian
  matrix field of shape ``(N,) * 2n + (n, n)`` with ``H[..., j, k] = h_{k̄j}``.
  For ``i d dbar u`` this is ``H[..., j, k] = d_j d_{k̄} u``.
* ``alpha`` is a constant positive-definite Hermitian matrix in the same
  convention; eigenvalues of ``alpha^{-1} g`` are computed from the reduced
  matrix ``L^{-1} g L^{-*}`` with ``alpha = L L^*``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb, factorial, prod
from pathlib import Path

import numpy as np

from . import symm
from .ops import Kind, OperatorSpec

MAGIC = b"HFLD"
FORMAT_VERSION = 1
KIND_SCALAR = 0
KIND_HERMITIAN = 1


class ConfigurationError(ValueError):
    pass


@lru_cache(maxsize=None)
def diff_matrices(N):
    """Fourier differentiation matrices ``(D1, D2)`` on ``N`` periodic points.

    ``D1`` multiplies by ``2 pi i m`` with the Nyquist mode dropped; ``D2``
    multiplies by ``-(2 pi m)^2`` and keeps it.  Both are exact on trigonometric
    polynomials below the Nyquist frequency.
    """
    m = np.fft.fftfreq(N, d=1.0 / N)
    ik = 2j * np.pi * m
    ik[N // 2] = 0.0
    k2 = -(2 * np.pi * m) ** 2
    eye = np.eye(N)
    F = np.fft.fft(eye, axis=0)
    D1 = np.ascontiguousarray(np.real(np.fft.ifft(ik[:, None] * F, axis=0)))
    D2 = np.ascontiguousarray(np.real(np.fft.ifft(k2[:, None] * F, axis=0)))
    D1.setflags(write=False)
    D2.setflags(write=False)
    return D1, D2


def along(mat, u, axis):
    """Apply a square matrix along one axis of ``u`` (no transposes)."""
    s = u.shape
    pre = prod(s[:axis])
    post = prod(s[axis + 1:])
    if post == 1:
        return (u.reshape(pre, s[axis]) @ mat.T).reshape(s)
    return np.matmul(mat, u.reshape(pre, s[axis], post)).reshape(s)


class TorusGeometry:
    """Flat torus of complex dimension ``n`` sampled on ``N`` points per real axis."""

    def __init__(self, n, N, alpha=None):
        n, N = int(n), int(N)
        if n < 1:
            raise ConfigurationError("complex dimension n must be >= 1")
        if N < 4 or N % 2:
            raise ConfigurationError("grid size N must be even and >= 4")
        a = np.eye(n, dtype=complex) if alpha is None else np.array(alpha, dtype=complex)
        if a.shape != (n, n):
            raise ConfigurationError(f"alpha must be {n}x{n}, got {a.shape}")
        if not np.allclose(a, a.conj().T, atol=1e-12):
            raise ConfigurationError("alpha must be Hermitian")
        a = 0.5 * (a + a.conj().T)
        try:
            L = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise ConfigurationError("alpha is not positive definite") from None
        self.n = n
        self.N = N
        self.alpha = a
        self.chol = L
        self.chol_inv = np.linalg.inv(L)
        self.is_identity = bool(np.allclose(a, np.eye(n), atol=0, rtol=0))

    def __repr__(self):
        return f"TorusGeometry(n={self.n}, N={self.N})"

    @property
    def shape(self):
        return (self.N,) * (2 * self.n)

    @property
    def size(self):
        return self.N ** (2 * self.n)

    @cached_property
    def volume(self):
        """``V = int_X alpha^n = n! det(alpha)`` on the unit-volume torus."""
        return float(factorial(self.n) * np.real(np.linalg.det(self.alpha)))

    @cached_property
    def alpha_min_eig(self):
        return float(np.linalg.eigvalsh(self.alpha).min())

    def coords(self):
        """Open-mesh coordinate arrays, one per real axis."""
        x = np.arange(self.N) / self.N
        out = []
        for a in range(2 * self.n):
            shp = [1] * (2 * self.n)
            shp[a] = self.N
            out.append(x.reshape(shp))
        return out

    def zeros(self):
        return np.zeros(self.shape)

    def hermitian_constant(self, mat):
        mat = np.asarray(mat, dtype=complex)
        if mat.shape != (self.n, self.n):
            raise ValueError(f"expected a {self.n}x{self.n} matrix, got {mat.shape}")
        out = np.empty((self.n, self.n) + self.shape, dtype=complex)
        out[...] = mat.reshape(mat.shape + (1,) * len(self.shape))
        return np.moveaxis(out, (0, 1), (-2, -1))


def trig_field(geom, modes, constant=0.0):
    """Sum of ``amp * cos(2 pi <k, x> + phase)`` over ``(amp, k, phase)`` triples."""
    xs = geom.coords()
    u = np.full(geom.shape, float(constant))
    for amp, kvec, phase in modes:
        kvec = list(kvec)
        if len(kvec) != 2 * geom.n:
            raise ConfigurationError(f"wave-vector {kvec} must have length 2n = {2 * geom.n}")
        if any(abs(int(c)) >= geom.N // 2 for c in kvec):
            raise ConfigurationError(f"wave-vector {kvec} is not below the Nyquist mode {geom.N // 2}")
        arg = sum(2 * np.pi * int(c) * x for c, x in zip(kvec, xs))
        u = u + float(amp) * np.cos(arg + float(phase))
    return u


class HermParts:
    """Real-component form of a Hermitian matrix field.

    ``diag[i]`` holds ``H[..., i, i]`` and ``re[i, j]``, ``im[i, j]`` the real
    and imaginary parts of ``H[..., i, j]`` for ``i < j``.  Keeping the grid
    planes separate and real makes the pointwise minors cheap.
    """

    __slots__ = ("n", "diag", "re", "im")

    def __init__(self, diag, re, im):
        self.n = len(diag)
        self.diag = diag
        self.re = re
        self.im = im

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M)
        n = M.shape[-1]
        # np.array keeps 0-d inputs 0-d, unlike ascontiguousarray
        diag = [np.array(M[..., i, i].real, order="C") for i in range(n)]
        re, im = {}, {}
        for i in range(n):
            for j in range(i + 1, n):
                re[i, j] = np.array(M[..., i, j].real, order="C")
                im[i, j] = np.array(M[..., i, j].imag, order="C")
        return cls(diag, re, im)

    def to_matrix(self):
        n = self.n
        shape = np.broadcast(*self.diag).shape
        out = np.zeros((n, n) + shape, dtype=complex)
        for i in range(n):
            out[i, i] = self.diag[i]
        for (i, j), r in self.re.items():
            out[i, j] = r + 1j * self.im[i, j]
            out[j, i] = r - 1j * self.im[i, j]
        return np.moveaxis(out, (0, 1), (-2, -1))

    def axpy(self, t, other):
        """``t * self + other``."""
        def f(a, b):
            # constant parts are 0-d; a zero one leaves the grid plane untouched
            if t == 1.0 and np.ndim(b) == 0 and b == 0:
                return a
            return t * a + b

        return HermParts([f(a, b) for a, b in zip(self.diag, other.diag)],
                         {key: f(v, other.re[key]) for key, v in self.re.items()},
                         {key: f(v, other.im[key]) for key, v in self.im.items()})

    def lerp(self, other, t):
        """``(1 - t) * self + t * other``."""
        s = 1.0 - t
        return HermParts([s * a + t * b for a, b in zip(self.diag, other.diag)],
                         {key: s * v + t * other.re[key] for key, v in self.re.items()},
                         {key: s * v + t * other.im[key] for key, v in self.im.items()})

    def __add__(self, other):
        return self.axpy(1.0, other)

    def abs2(self, i, j):
        return self.re[i, j] ** 2 + self.im[i, j] ** 2

    def elementary(self):
        """``e_0..e_n`` of the eigenvalues, stacked on a leading axis."""
        n = self.n
        d = self.diag
        shape = np.broadcast(*d).shape
        e = np.empty((n + 1,) + shape)
        e[0] = 1.0
        if n == 1:
            e[1] = d[0]
        elif n == 2:
            e[1] = d[0] + d[1]
            e[2] = d[0] * d[1] - self.abs2(0, 1)
        elif n == 3:
            a01, a02, a12 = self.abs2(0, 1), self.abs2(0, 2), self.abs2(1, 2)
            e[1] = d[0] + d[1] + d[2]
            e[2] = d[0] * d[1] + d[0] * d[2] + d[1] * d[2] - a01 - a02 - a12
            # Re(m01 m12 m20) with m20 = conj(m02)
            r01, i01 = self.re[0, 1], self.im[0, 1]
            r12, i12 = self.re[1, 2], self.im[1, 2]
            r02, i02 = self.re[0, 2], self.im[0, 2]
            pr = r01 * r12 - i01 * i12
            pi = r01 * i12 + i01 * r12
            cyc = pr * r02 + pi * i02
            e[3] = d[0] * d[1] * d[2] + 2 * cyc - d[0] * a12 - d[1] * a02 - d[2] * a01
        else:
            lam = np.moveaxis(np.linalg.eigvalsh(self.to_matrix()), -1, 0)
            e[1:] = 0.0
            for i in range(n):
                e[1:i + 2] = e[1:i + 2] + lam[i] * e[0:i + 1]
        return e

    def elementary_k(self, k):
        """Only ``e_k``; skips the other minors for ``n <= 3``."""
        d = self.diag
        if k == 0:
            return np.ones(np.broadcast(*d).shape)
        if k == 1:
            return sum(d)
        if self.n <= 3 and k == 2:
            out = 0.0
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    out = out + d[i] * d[j] - self.abs2(i, j)
            return out
        return self.elementary()[k]

    def sigmas(self):
        """Normalized sigmas with the index on the trailing axis (a view)."""
        e = self.elementary()
        e /= symm.normalizers(self.n).reshape((-1,) + (1,) * (e.ndim - 1))
        return np.moveaxis(e, 0, -1)

    def eigenvalues(self, fast=False):
        """Eigenvalues sorted descending, trailing axis.

        ``n <= 2`` uses the closed form.  With ``fast`` the 3x3 case uses the
        trigonometric cubic solution, accurate to roughly 1e-12 relative, which
        is enough for step-size control but not for the public eigen-solver.
        """
        n = self.n
        if n == 1:
            return self.diag[0][..., None].copy()
        if n == 2:
            a, d = self.diag
            mid = 0.5 * (a + d)
            rad = np.sqrt((0.5 * (a - d)) ** 2 + self.abs2(0, 1))
            return np.moveaxis(np.stack([mid + rad, mid - rad]), 0, -1)
        if n == 3 and fast:
            q = (self.diag[0] + self.diag[1] + self.diag[2]) / 3.0
            off = self.abs2(0, 1) + self.abs2(0, 2) + self.abs2(1, 2)
            p2 = sum((d - q) ** 2 for d in self.diag) + 2.0 * off
            p = np.sqrt(p2 / 6.0)
            safe = np.where(p > 0, p, 1.0)
            shifted = HermParts([d - q for d in self.diag], self.re, self.im)
            r = np.clip(shifted.elementary()[3] / (2.0 * safe**3), -1.0, 1.0)
            phi = np.arccos(r) / 3.0
            l1 = q + 2 * p * np.cos(phi)
            l3 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
            l2 = 3 * q - l1 - l3
            return np.moveaxis(np.stack([l1, l2, l3]), 0, -1)
        return np.linalg.eigvalsh(self.to_matrix())[..., ::-1]


def hessian_parts(geom, u):
    """Components of ``d_j d_{k̄} u``."""
    u = np.asarray(u, dtype=float)
    n = geom.n
    D1, D2 = diff_matrices(geom.N)
    diag = [0.25 * (along(D2, u, 2 * j) + along(D2, u, 2 * j + 1)) for j in range(n)]
    re, im = {}, {}
    for j in range(n - 1):
        ux = along(D1, u, 2 * j)
        uy = along(D1, u, 2 * j + 1)
        for k in range(j + 1, n):
            re[j, k] = 0.25 * (along(D1, ux, 2 * k) + along(D1, uy, 2 * k + 1))
            im[j, k] = 0.25 * (along(D1, ux, 2 * k + 1) - along(D1, uy, 2 * k))
    return HermParts(diag, re, im)


def complex_hessian(geom, u):
    """``d_j d_{k̄} u`` at every grid point, as a Hermitian matrix field."""
    return hessian_parts(geom, u).to_matrix()


def reduce(geom, g):
    """``L^{-1} g L^{-*}``: a Hermitian field with the eigenvalues of ``alpha^{-1} g``."""
    if geom.is_identity:
        return g
    Li = geom.chol_inv
    lead = np.moveaxis(g, (-2, -1), (0, 1))
    out = np.einsum("ab,bc...,dc->ad...", Li, lead, Li.conj(), optimize=True)
    return np.moveaxis(out, (0, 1), (-2, -1))


def reduce_parts(geom, P):
    if geom.is_identity:
        return P
    return HermParts.from_matrix(reduce(geom, P.to_matrix()))


def matrix_elementary(M):
    """``e_0..e_n`` of the eigenvalues of a Hermitian field via principal minors."""
    return np.moveaxis(HermParts.from_matrix(M).elementary(), 0, -1)


def sigma_field(geom, g):
    """Normalized ``sigma_0..sigma_n`` of ``lambda(alpha^{-1} g)`` at every point."""
    return HermParts.from_matrix(reduce(geom, g)).sigmas()


def eigenvalues(geom, g):
    """Eigenvalues of ``alpha^{-1} g`` per point, sorted descending."""
    return HermParts.from_matrix(reduce(geom, g)).eigenvalues()


def wedge_ratio(geom, g, k):
    """``g^k ^ alpha^{n-k} / alpha^n`` pointwise, i.e. ``sigma_k(lambda(alpha^{-1} g))``."""
    if not 0 <= k <= geom.n:
        raise ValueError(f"k={k} out of range [0, {geom.n}]")
    return sigma_field(geom, g)[..., k]


@lru_cache(maxsize=None)
def _interp_matrix(k):
    nodes = np.arange(k + 1, dtype=float)
    V = np.vander(nodes, k + 1, increasing=True)
    return np.linalg.inv(V)


def mixed_ratios_reduced(Ma, Mb, k):
    """Mixed wedge ratios from already reduced :class:`HermParts`."""
    n = Ma.n
    norm = comb(n, k)
    q = np.stack([Ma.axpy(float(t), Mb).elementary()[k] / norm for t in range(k + 1)])
    coef = np.tensordot(_interp_matrix(k), q, axes=(1, 0))
    binom = np.array([comb(k, j) for j in range(k + 1)], dtype=float)
    return coef / binom.reshape((-1,) + (1,) * (coef.ndim - 1))


def mixed_wedge_ratios(geom, a, b, k):
    """``a^j ^ b^{k-j} ^ alpha^{n-k} / alpha^n`` for all ``j = 0..k``.

    Polarization: ``q(t) = sigma_k(alpha^{-1}(t a + b))`` is a degree-k polynomial
    whose ``t^j`` coefficient is ``C(k, j)`` times the mixed ratio.  It is
    sampled at ``t = 0..k`` and interpolated.  Returns shape ``(k + 1,) + grid``.
    """
    if not 0 <= k <= geom.n:
        raise ValueError(f"k={k} out of range [0, {geom.n}]")
    Ma = HermParts.from_matrix(reduce(geom, a))
    Mb = HermParts.from_matrix(reduce(geom, b))
    return mixed_ratios_reduced(Ma, Mb, k)


def mixed_wedge_ratio(geom, a, b, j, k):
    if not 0 <= j <= k:
        raise ValueError(f"need 0 <= j <= k (j={j}, k={k})")
    return mixed_wedge_ratios(geom, a, b, k)[j]


def integrate(geom, s):
    """``int_X s alpha^n``; the weight is uniform because alpha is constant."""
    return float(geom.volume * np.mean(s))


@dataclass
class ChiSpec:
    """Closed reference form ``chi = chi0 + i d dbar rho``."""

    chi0: np.ndarray
    rho: np.ndarray | None = None

    def field(self, geom):
        chi = geom.hermitian_constant(self.chi0)
        if self.rho is not None:
            chi = chi + complex_hessian(geom, self.rho)
        return chi

    def stripped(self):
        return ChiSpec(self.chi0, None)


def chi_field_of(geom, chi):
    """Accept a :class:`ChiSpec`, a constant matrix or a full Hermitian field."""
    if isinstance(chi, ChiSpec):
        return chi.field(geom)
    chi = np.asarray(chi, dtype=complex)
    if chi.shape == (geom.n, geom.n):
        return geom.hermitian_constant(chi)
    if chi.shape != geom.shape + (geom.n, geom.n):
        raise ValueError(f"chi has shape {chi.shape}, expected a Hermitian field on {geom}")
    return chi


def class_integrals(geom, chi_field):
    """``int_X chi^j ^ alpha^{n-j}`` for ``j = 0..n``."""
    s = sigma_field(geom, chi_field)
    return geom.volume * s.reshape(-1, geom.n + 1).mean(axis=0)


def cohomology_constant(geom, chi, op):
    """Constant forced by integrating the stationary equation over the torus.

    JQuotient ``c = [chi^l][a^{n-l}] / [chi^k][a^{n-k}]``; MixedHessian
    ``c = sum_j c_j [chi^j][a^{n-j}] / [chi^k][a^{n-k}]``.  For LogQuotient the
    class ratio ``[chi^k][a^{n-k}] / [chi^l][a^{n-l}]`` is returned and for
    InvQuotient its reciprocal (the thresholds appearing in their hypotheses).
    """
    op = op.resolved(geom.n)
    field = chi_field_of(geom, chi)
    ints = class_integrals(geom, field)
    k, ell = op.k, op.ell
    if op.kind not in (Kind.J_QUOTIENT, Kind.MIXED_HESSIAN, Kind.LOG_QUOTIENT, Kind.INV_QUOTIENT):
        raise ConfigurationError(f"no cohomological constant for {op.kind.value}")
    if ints[k] <= 0 or ints[ell] <= 0:
        raise ConfigurationError(
            f"class integral [chi^{k}] or [chi^{ell}] is not positive; chi is not k-positive on average")
    if op.kind is Kind.J_QUOTIENT:
        return float(ints[ell] / ints[k])
    if op.kind is Kind.MIXED_HESSIAN:
        return float(sum(c * ints[j] for j, c in enumerate(op.coeffs, start=1)) / ints[k])
    if op.kind is Kind.LOG_QUOTIENT:
        return float(ints[k] / ints[ell])
    return float(ints[ell] / ints[k])


# -- snapshot files -----------------------------------------------------------

@dataclass(frozen=True)
class FieldHeader:
    version: int
    n: int
    N: int
    kind: int


def write_field(path, geom, values, kind=None):
    """Write a scalar or Hermitian field.

    Layout: ``b"HFLD"``, then little-endian u32 ``version, n, N, kind``
    (0 scalar, 1 Hermitian), then float64 row-major data.  Hermitian fields
    store per point the n*n entries row-major, each as ``(re, im)``.
    """
    values = np.asarray(values)
    if kind is None:
        kind = KIND_HERMITIAN if values.shape == geom.shape + (geom.n, geom.n) else KIND_SCALAR
    if kind == KIND_SCALAR:
        if values.shape != geom.shape:
            raise ValueError(f"scalar field shape {values.shape} != {geom.shape}")
        data = np.ascontiguousarray(values, dtype="<f8")
    else:
        if values.shape != geom.shape + (geom.n, geom.n):
            raise ValueError("Hermitian field has the wrong shape")
        c = np.ascontiguousarray(values, dtype=complex)
        data = np.ascontiguousarray(np.stack([c.real, c.imag], axis=-1), dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, geom.n, geom.N, kind))
        fh.write(data.tobytes())
    return path


def read_field(path):
    """Read a field file; returns ``(FieldHeader, array)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an HFLD field file")
    version, n, N, kind = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    data = np.frombuffer(raw[20:], dtype="<f8")
    shape = (N,) * (2 * n)
    if kind == KIND_SCALAR:
        arr = data.reshape(shape).astype(float)
    elif kind == KIND_HERMITIAN:
        d = data.reshape(shape + (n, n, 2))
        arr = d[..., 0] + 1j * d[..., 1]
    else:
        raise ValueError(f"{path}: unknown field kind {kind}")
    return FieldHeader(version, n, N, kind), arr
