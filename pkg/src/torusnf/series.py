"""Truncated multivariate Fourier series on the torus and its complex strips.

A series is a dense block of coefficients c[k], |k_j| <= N per axis, with the
convention

    h(theta) = sum_k c_k exp(i <k, theta>),  theta in C^n.

The same coefficient block doubles as Laurent data on the annulus
e^{-r} < |z_j| < e^r through z_j = e^{i theta_j} (Laurent exponent = Fourier
frequency), which is how the annulus-side modules reuse this engine.

Axes are 0-based throughout the package.  Values are immutable after
construction: every operation returns a new series, and coefficient arrays
are marked read-only so instances can be shared freely between threads.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import HypothesisViolation, NumericalFailure

# Absolute coefficient tolerances for the mean-zero and reality preconditions.
MEAN_TOL = 1e-12
REAL_TOL = 1e-12

# Oversampling factor for grid-based products, quotients and compositions.
GRID_MULT = 2


@dataclasses.dataclass(frozen=True)
class StripDomain:
    """Strip |Im theta_j| < r around R^n inside C^n."""

    r: float
    n: int

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"strip half-width must lie in (0, 1), got {self.r}")
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")


@dataclasses.dataclass(frozen=True)
class NormEstimate:
    """Two norm surrogates for sup |h| over a strip.

    coeff_bound majorizes the true sup norm (weighted l1 of coefficients),
    sampled_sup is max |h| over a finite grid on the distinguished boundary
    Im theta_j = +-r.  Always sampled_sup <= coeff_bound, so hypothesis
    checks use coeff_bound and sampled_sup is a lower witness.
    """

    coeff_bound: float
    sampled_sup: float


def _as_radius(r):
    if isinstance(r, StripDomain):
        return r.r
    return float(r)


class PeriodicSeries:
    """Truncated Fourier series on T^n with per-axis degree bound N."""

    __slots__ = ("n", "N", "coeffs", "real", "trunc_mass")

    def __init__(self, coeffs, real=False, trunc_mass=0.0):
        coeffs = np.array(coeffs, dtype=complex)
        if coeffs.ndim < 1:
            coeffs = coeffs.reshape((1,))
        side = coeffs.shape[0]
        if any(s != side for s in coeffs.shape):
            raise ValueError(f"coefficient block must be cubical, got {coeffs.shape}")
        if side % 2 != 1:
            raise ValueError(f"coefficient block side must be odd, got {side}")
        coeffs.setflags(write=False)
        self.n = coeffs.ndim
        self.N = (side - 1) // 2
        self.coeffs = coeffs
        self.real = bool(real)
        self.trunc_mass = float(trunc_mass)

    def __setattr__(self, name, value):
        if hasattr(self, "trunc_mass") and name in self.__slots__:
            raise AttributeError("PeriodicSeries is immutable")
        super().__setattr__(name, value)

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def zeros(cls, n, N, real=True):
        return cls(np.zeros((2 * N + 1,) * n, dtype=complex), real=real)

    @classmethod
    def constant(cls, n, N, value):
        c = np.zeros((2 * N + 1,) * n, dtype=complex)
        c[(N,) * n] = value
        return cls(c, real=abs(complex(value).imag) <= REAL_TOL)

    @classmethod
    def from_terms(cls, n, N, terms, real=None):
        """Build a series from a {multi-index tuple: coefficient} mapping."""
        c = np.zeros((2 * N + 1,) * n, dtype=complex)
        for k, v in terms.items():
            k = tuple(int(x) for x in (k if isinstance(k, (tuple, list)) else (k,)))
            if len(k) != n:
                raise ValueError(f"index {k} has wrong length for dimension {n}")
            if any(abs(x) > N for x in k):
                raise ValueError(f"index {k} exceeds degree bound {N}")
            c[tuple(x + N for x in k)] += v
        s = cls(c)
        if real is None:
            real = s.is_real_symmetric()
        return cls(c, real=real)

    # ------------------------------------------------------------------
    # coefficient access and structure

    def k_range(self):
        return np.arange(-self.N, self.N + 1)

    def coeff(self, k):
        k = tuple(int(x) for x in (k if isinstance(k, (tuple, list)) else (k,)))
        if any(abs(x) > self.N for x in k):
            return 0.0 + 0.0j
        return complex(self.coeffs[tuple(x + self.N for x in k)])

    def mean(self):
        """Full average [h] = constant Fourier coefficient."""
        return complex(self.coeffs[(self.N,) * self.n])

    def is_real_symmetric(self, tol=REAL_TOL):
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.n])
        return bool(np.max(np.abs(self.coeffs - flipped)) <= tol)

    def symmetrized(self):
        """Project onto the real-on-R^n subspace (c_{-k} = conj c_k)."""
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.n])
        return PeriodicSeries(0.5 * (self.coeffs + flipped), real=True,
                              trunc_mass=self.trunc_mass)

    def with_real_flag(self, real):
        return PeriodicSeries(self.coeffs, real=real, trunc_mass=self.trunc_mass)

    def pad_to(self, N):
        if N < self.N:
            raise ValueError("pad_to cannot shrink; use truncate")
        if N == self.N:
            return self
        c = np.zeros((2 * N + 1,) * self.n, dtype=complex)
        sl = tuple(slice(N - self.N, N + self.N + 1) for _ in range(self.n))
        c[sl] = self.coeffs
        return PeriodicSeries(c, real=self.real, trunc_mass=self.trunc_mass)

    def truncate(self, N):
        """Drop all coefficients with any |k_j| > N; dropped l1 mass is recorded."""
        if N >= self.N:
            return self.pad_to(N)
        sl = tuple(slice(self.N - N, self.N + N + 1) for _ in range(self.n))
        kept = self.coeffs[sl]
        dropped = float(np.abs(self.coeffs).sum() - np.abs(kept).sum())
        return PeriodicSeries(kept, real=self.real,
                              trunc_mass=self.trunc_mass + dropped)

    def chop(self, tol):
        """Zero coefficients at or below `tol` in modulus, then shrink the
        degree bound to the smallest block holding the survivors."""
        mask = np.abs(self.coeffs) > tol
        dropped = float(np.abs(self.coeffs[~mask]).sum())
        kept = np.where(mask, self.coeffs, 0.0)
        if not mask.any():
            return PeriodicSeries(np.zeros((1,) * self.n, dtype=complex),
                                  real=self.real,
                                  trunc_mass=self.trunc_mass + dropped)
        idx = np.argwhere(mask) - self.N
        need = int(np.max(np.abs(idx)))
        out = PeriodicSeries(kept, real=self.real,
                             trunc_mass=self.trunc_mass + dropped)
        return out.truncate(need)

    # ------------------------------------------------------------------
    # algebra

    def _binary(self, other, op):
        if isinstance(other, PeriodicSeries):
            if other.n != self.n:
                raise ValueError("dimension mismatch")
            N = max(self.N, other.N)
            a, b = self.pad_to(N), other.pad_to(N)
            return PeriodicSeries(op(a.coeffs, b.coeffs),
                                  real=self.real and other.real,
                                  trunc_mass=self.trunc_mass + other.trunc_mass)
        value = complex(other)
        c = np.array(self.coeffs)
        c[(self.N,) * self.n] = op(c[(self.N,) * self.n], value)
        return PeriodicSeries(c, real=self.real and abs(value.imag) <= REAL_TOL,
                              trunc_mass=self.trunc_mass)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return PeriodicSeries(-self.coeffs, real=self.real, trunc_mass=self.trunc_mass)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        return PeriodicSeries(self.coeffs * scalar,
                              real=self.real and abs(scalar.imag) <= REAL_TOL,
                              trunc_mass=self.trunc_mass * abs(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        nz = int(np.count_nonzero(self.coeffs))
        return (f"PeriodicSeries(n={self.n}, N={self.N}, nonzero={nz}, "
                f"real={self.real})")

    # ------------------------------------------------------------------
    # evaluation

    def eval(self, theta):
        """Evaluate at a single point theta in C^n (exact over stored terms)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=complex))
        if theta.shape != (self.n,):
            raise ValueError(f"expected point of length {self.n}, got {theta.shape}")
        return complex(self.eval_points(theta[None, :])[0])

    def eval_points(self, pts, chunk=4096):
        """Evaluate at an (m, n) array of complex points."""
        return eval_many([self], pts, chunk=chunk)[0]

    def eval_real_grid(self, M):
        """Values on the uniform real grid theta_j = 2 pi m / M (exact FFT path)."""
        if M < 2 * self.N + 1:
            raise ValueError(f"grid of {M} points cannot resolve degree {self.N}")
        emb = np.zeros((M,) * self.n, dtype=complex)
        idx = np.ix_(*([self.k_range() % M] * self.n))
        emb[idx] = self.coeffs
        return np.fft.ifftn(emb) * (M ** self.n)

    def eval_shifted_grid(self, M, imag_shift):
        """Values on the grid theta + i s for a fixed imaginary offset vector s."""
        s = np.asarray(imag_shift, dtype=float)
        if s.shape != (self.n,):
            raise ValueError("imaginary shift must have one entry per axis")
        scaled = np.array(self.coeffs)
        k = self.k_range()
        for j in range(self.n):
            shape = [1] * self.n
            shape[j] = 2 * self.N + 1
            scaled *= np.exp(-k * s[j]).reshape(shape)
        return PeriodicSeries(scaled).eval_real_grid(M)

    # ------------------------------------------------------------------
    # averaging, splitting, calculus

    def average(self, axes):
        """Zero all terms oscillating in any of the given axes ([.]_j operators)."""
        axes = [axes] if np.isscalar(axes) else list(axes)
        out = np.array(self.coeffs)
        for j in axes:
            if not 0 <= j < self.n:
                raise ValueError(f"axis {j} out of range")
            keep = np.zeros(2 * self.N + 1, dtype=bool)
            keep[self.N] = True
            shape = [1] * self.n
            shape[j] = 2 * self.N + 1
            out *= keep.reshape(shape)
        return PeriodicSeries(out, real=self.real, trunc_mass=self.trunc_mass)

    def leading_axis_map(self):
        """For each stored index, the largest axis with k != 0 (-1 for k = 0)."""
        lead = np.full((2 * self.N + 1,) * self.n, -1, dtype=int)
        nz = self.k_range() != 0
        for j in range(self.n):
            shape = [1] * self.n
            shape[j] = 2 * self.N + 1
            lead = np.where(nz.reshape(shape), j, lead)
        return lead

    def triangular_split(self):
        """Split into n+1 pieces by the last axis a term oscillates in.

        parts[0] is the constant term; parts[p] (p >= 1) collects the terms
        whose largest oscillating axis is p-1, so it depends on axes
        0..p-1 only and has zero average along axis p-1.  The pieces sum to
        the original series coefficient-exactly.
        """
        lead = self.leading_axis_map()
        parts = []
        for p in range(self.n + 1):
            c = np.where(lead == p - 1, self.coeffs, 0.0)
            parts.append(PeriodicSeries(c, real=self.real))
        return parts

    def derivative(self, axis):
        """Partial derivative along one angle: c_k -> i k_axis c_k."""
        if not 0 <= axis < self.n:
            raise ValueError(f"axis {axis} out of range")
        shape = [1] * self.n
        shape[axis] = 2 * self.N + 1
        fac = (1j * self.k_range()).reshape(shape)
        return PeriodicSeries(self.coeffs * fac, real=self.real,
                              trunc_mass=self.trunc_mass)

    def antiderivative(self, axis, tol=MEAN_TOL):
        """The unique periodic antiderivative with zero average along the axis.

        Requires the input to have zero average along the axis (condition
        (i2)): every coefficient on the k_axis = 0 plane must vanish to
        within `tol`.
        """
        if not 0 <= axis < self.n:
            raise ValueError(f"axis {axis} out of range")
        plane = np.take(self.coeffs, self.N, axis=axis)
        worst = float(np.max(np.abs(plane))) if plane.size else 0.0
        if worst > tol:
            raise HypothesisViolation(
                "(i2)", f"axis-{axis} average must vanish, max residue {worst:.3e}")
        k = self.k_range().astype(complex)
        k[self.N] = 1.0  # avoid 0/0; plane is zeroed below
        shape = [1] * self.n
        shape[axis] = 2 * self.N + 1
        out = self.coeffs / (1j * k.reshape(shape))
        idx = [slice(None)] * self.n
        idx[axis] = self.N
        out[tuple(idx)] = 0.0
        return PeriodicSeries(out, real=self.real, trunc_mass=self.trunc_mass)

    def restrict_axes(self, last_axis, require_oscillating=None):
        """Keep only terms supported on axes 0..last_axis.

        With require_oscillating set, additionally drop the terms constant
        along that axis.  Used to re-impose triangular structure that holds
        exactly in the underlying algebra but may be blurred by grid
        round-off.
        """
        lead = self.leading_axis_map()
        c = np.where(lead <= last_axis, self.coeffs, 0.0)
        if require_oscillating is not None:
            idx = [slice(None)] * self.n
            idx[require_oscillating] = self.N
            c = np.array(c)
            c[tuple(idx)] = 0.0
        return PeriodicSeries(c, real=self.real, trunc_mass=self.trunc_mass)

    # ------------------------------------------------------------------
    # norms

    def coeff_norm(self, r):
        """Majorant sum_k |c_k| e^{r sum_j |k_j|} of the sup norm on S_r."""
        r = _as_radius(r)
        w = np.exp(r * np.abs(self.k_range()))
        v = np.abs(self.coeffs)
        for _ in range(self.n):
            v = np.tensordot(w, v, axes=(0, 0))
        return float(v)

    def boundary_sup(self, r, M=None):
        """Max |h| over a grid on the distinguished boundary Im theta = +-r."""
        r = _as_radius(r)
        if M is None:
            M = max(2 * (2 * self.N + 1), 32)
        best = 0.0
        for signs in np.ndindex(*((2,) * self.n)):
            s = r * (2.0 * np.asarray(signs) - 1.0)
            vals = self.eval_shifted_grid(M, s)
            best = max(best, float(np.max(np.abs(vals))))
        return best

    def strip_norm(self, r, M=None):
        r = _as_radius(r)
        if not 0.0 < r < 1.0:
            raise ValueError(f"strip half-width must lie in (0, 1), got {r}")
        return NormEstimate(self.coeff_norm(r), self.boundary_sup(r, M))

    def abs_max_coeff(self):
        return float(np.max(np.abs(self.coeffs)))


# ----------------------------------------------------------------------
# grids and re-expansion


def phase_matrix(vals, N):
    """E[m, k] = exp(i k vals[m]) for k = -N..N.

    Computed by the integer-power recurrence from a single exp per point,
    which is several times faster than 2N+1 transcendental calls and
    accurate to a few ulps at the degrees used here.
    """
    vals = np.asarray(vals, dtype=complex)
    E = np.empty((vals.shape[0], 2 * N + 1), dtype=complex)
    E[:, N] = 1.0
    if N:
        base = np.exp(1j * vals)
        for j in range(1, N + 1):
            E[:, N + j] = E[:, N + j - 1] * base
        inv = 1.0 / base
        for j in range(1, N + 1):
            E[:, N - j] = E[:, N - j + 1] * inv
    return E


def eval_many(series_list, pts, chunk=4096):
    """Evaluate several series of one shape at shared points.

    The per-axis phase matrices are built once per point chunk and reused
    for every series, which dominates the cost of point evaluation.
    Returns an array of shape (len(series_list), m).
    """
    series_list = list(series_list)
    first = series_list[0]
    n, N = first.n, first.N
    if any(s.n != n or s.N != N for s in series_list):
        raise ValueError("series must share dimension and degree; pad first")
    pts = np.asarray(pts, dtype=complex)
    if pts.ndim != 2 or pts.shape[1] != n:
        raise ValueError(f"expected (m, {n}) points, got {pts.shape}")
    out = np.empty((len(series_list), pts.shape[0]), dtype=complex)
    for s0 in range(0, pts.shape[0], chunk):
        block = pts[s0:s0 + chunk]
        mats = [phase_matrix(block[:, j], N) for j in range(n)]
        for i, s in enumerate(series_list):
            acc = np.tensordot(mats[0], s.coeffs, axes=(1, 0))
            for j in range(1, n):
                acc = np.einsum("mk...,mk->m...", acc, mats[j])
            out[i, s0:s0 + block.shape[0]] = acc
    return out


def theta_grid(n, M):
    """(M^n, n) array of uniform real grid points on [0, 2 pi)^n."""
    t = 2.0 * np.pi * np.arange(M) / M
    mesh = np.meshgrid(*([t] * n), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def series_from_real_grid(values, N, real=False):
    """Fourier coefficients from samples on the uniform real grid.

    `values` must be an n-dimensional cube of M >= 2N+1 samples per axis.
    Frequencies outside the degree bound are dropped and their l1 mass is
    recorded on the result as `trunc_mass` (the aliasing/truncation report).
    """
    values = np.asarray(values, dtype=complex)
    n = values.ndim
    M = values.shape[0]
    if any(s != M for s in values.shape):
        raise ValueError(f"sample block must be cubical, got {values.shape}")
    if M < 2 * N + 1:
        raise ValueError(f"grid of {M} points cannot resolve degree {N}")
    full = np.fft.fftn(values) / values.size
    idx = np.ix_(*([np.arange(-N, N + 1) % M] * n))
    kept = full[idx]
    dropped = float(np.abs(full).sum() - np.abs(kept).sum())
    if real:
        flipped = np.conj(kept[(slice(None, None, -1),) * n])
        kept = 0.5 * (kept + flipped)
    return PeriodicSeries(kept, real=real, trunc_mass=dropped)


def multiply(a, b, N_out=None):
    """Coefficient-level product (exact linear convolution, then truncation).

    The zero-padded FFT convolution of the two centred blocks has length
    (2Na+1)+(2Nb+1)-1 = 2(Na+Nb)+1 per axis, with frequency k at position
    k + Na + Nb, i.e. it is already a centred block of degree Na+Nb.
    """
    if a.n != b.n:
        raise ValueError("dimension mismatch")
    Nc = a.N + b.N
    size = 2 * Nc + 1
    axes = tuple(range(a.n))
    fa = np.fft.fftn(a.coeffs, s=(size,) * a.n, axes=axes)
    fb = np.fft.fftn(b.coeffs, s=(size,) * a.n, axes=axes)
    conv = np.fft.ifftn(fa * fb, axes=axes)
    prod = PeriodicSeries(conv, real=a.real and b.real,
                          trunc_mass=a.trunc_mass + b.trunc_mass)
    if N_out is None or N_out >= Nc:
        return prod
    return prod.truncate(N_out)


def divide(num, den, N_out=None, grid_mult=GRID_MULT, min_den=1e-8):
    """Quotient via grid evaluation and re-expansion.

    The denominator must stay away from zero on the real grid (its modulus
    is checked against `min_den`).  Truncation mass is recorded on the
    result.
    """
    if num.n != den.n:
        raise ValueError("dimension mismatch")
    if N_out is None:
        N_out = num.N
    M = grid_mult * (2 * N_out + 1)
    M = max(M, 2 * num.N + 1, 2 * den.N + 1)
    dv = den.eval_real_grid(M)
    worst = float(np.min(np.abs(dv)))
    if worst < min_den:
        raise NumericalFailure(
            f"denominator modulus {worst:.3e} below {min_den:.1e} on grid")
    nv = num.eval_real_grid(M)
    return series_from_real_grid(nv / dv, N_out, real=num.real and den.real)


def reciprocal(den, N_out=None, grid_mult=GRID_MULT, min_den=1e-8):
    one = PeriodicSeries.constant(den.n, 0, 1.0).pad_to(den.N)
    return divide(one, den, N_out=N_out if N_out is not None else den.N,
                  grid_mult=grid_mult, min_den=min_den)


def translate(h, shift):
    """h(theta + shift) as an exact coefficient operation."""
    shift = np.asarray(shift, dtype=complex)
    if shift.shape != (h.n,):
        raise ValueError("shift must have one entry per axis")
    out = np.array(h.coeffs)
    k = h.k_range()
    for j in range(h.n):
        shape = [1] * h.n
        shape[j] = 2 * h.N + 1
        out *= np.exp(1j * k * shift[j]).reshape(shape)
    real = h.real and bool(np.max(np.abs(shift.imag)) <= REAL_TOL)
    return PeriodicSeries(out, real=real, trunc_mass=h.trunc_mass)


def pull_back_linear(h, A, N_out=None):
    """h(A theta) for an integer matrix A, as an exact coefficient re-indexing.

    The coefficient at k moves to A^T k.  The output degree defaults to the
    smallest bound containing all moved indices.
    """
    A = np.asarray(A, dtype=int)
    if A.shape != (h.n, h.n):
        raise ValueError("matrix shape must match series dimension")
    ks = np.stack(np.meshgrid(*([h.k_range()] * h.n), indexing="ij"),
                  axis=-1).reshape(-1, h.n)
    vals = h.coeffs.reshape(-1)
    nz = vals != 0.0
    ks, vals = ks[nz], vals[nz]
    moved = ks @ A
    need = int(np.max(np.abs(moved))) if moved.size else 0
    if N_out is None:
        N_out = need
    elif need > N_out:
        raise ValueError(f"degree bound {N_out} too small; need {need}")
    c = np.zeros((2 * N_out + 1,) * h.n, dtype=complex)
    np.add.at(c, tuple((moved + N_out).T), vals)
    return PeriodicSeries(c, real=h.real, trunc_mass=h.trunc_mass)


def extract_axis_line(h, axis=0, off_line_tol=None):
    """Collapse a series supported on one axis to a one-dimensional series.

    With `off_line_tol` set, refuses when the coefficients away from the
    axis line carry more than that much total mass.
    """
    idx = [h.N] * h.n
    idx[axis] = slice(None)
    line = np.array(h.coeffs[tuple(idx)])
    if off_line_tol is not None:
        off = float(np.abs(h.coeffs).sum() - np.abs(line).sum())
        if off > off_line_tol:
            raise ValueError(f"series is not supported on axis {axis}: "
                             f"off-line mass {off:.3e}")
    return PeriodicSeries(line, real=h.real, trunc_mass=h.trunc_mass)


def embed_axis_line(line, n, axis=0):
    """Inverse of extract_axis_line: place a 1-d series along one axis of T^n."""
    if line.n != 1:
        raise ValueError("expected a one-dimensional series")
    c = np.zeros((2 * line.N + 1,) * n, dtype=complex)
    idx = [line.N] * n
    idx[axis] = slice(None)
    c[tuple(idx)] = line.coeffs
    return PeriodicSeries(c, real=line.real, trunc_mass=line.trunc_mass)


def allclose(a, b, tol=1e-12):
    """Max coefficient distance after padding to a common degree."""
    N = max(a.N, b.N)
    return float(np.max(np.abs(a.pad_to(N).coeffs - b.pad_to(N).coeffs))) <= tol


def coeff_distance(a, b):
    N = max(a.N, b.N)
    return float(np.max(np.abs(a.pad_to(N).coeffs - b.pad_to(N).coeffs)))
