"""End-to-end extraction of the unimodular invariant pair of a torus embedding.

The pipeline factors the toroidal volume form of a near-identity embedding
into modulus and phase, straightens the modulus with the triangular volume
normalization, straightens the phase with the volume-preserving iteration,
and reads off the complete invariant: a positive amplitude rho0 and a
one-variable zero-mean phase profile k, unique up to a half turn.

Every stage is gated by its own admissibility check and the staged residuals
are verified on the real torus grid, which is where the invariants live; the
strip-radius bookkeeping of the worst-case analysis is replaced by those
a-posteriori checks (the data here are trigonometric polynomials with
recorded truncation mass, evaluable on any strip).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .curves import CurveImmersion, embedding_check, gauss_degree
from .errors import HypothesisViolation, NumericalFailure
from .fibering import EPS_SMALLH, FiberingPhase, KamSchedule, fibering_normalize
from .flows import MapChain, TorusMapLift, invert_map
from .moser import VolumeDensity, moser_normalize
from .realization import AnnulusFunction
from .series import (
    GRID_MULT,
    PeriodicSeries,
    pull_back_linear,
    series_from_real_grid,
    theta_grid,
    translate,
)

CHOP_FLOOR = 1e-15


@dataclasses.dataclass(frozen=True)
class TorusEmbedding:
    """Holomorphic near-identity map of the annulus carrying the torus."""

    components: tuple
    r0: float

    def __post_init__(self):
        comps = tuple(AnnulusFunction(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if not 0.0 < self.r0 < 1.0:
            raise ValueError(f"r0 must lie in (0, 1), got {self.r0}")
        if any(c.n != len(comps) for c in comps):
            raise ValueError("component dimensions are inconsistent")

    @property
    def n(self):
        return len(self.components)

    @property
    def N(self):
        return max(c.N for c in self.components)

    def closeness(self):
        """max_j || phi_j - z_j ||_{r0} in the coefficient norm."""
        worst = 0.0
        for j, c in enumerate(self.components):
            ident = _identity_component(self.n, c.N, j)
            worst = max(worst, (c.series - ident).coeff_norm(self.r0))
        return worst

    def eval_z(self, zpts):
        zpts = np.asarray(zpts, dtype=complex)
        return np.stack([c.eval_z(zpts) for c in self.components], axis=-1)


def _identity_component(n, N, axis):
    k = [0] * n
    k[axis] = 1
    return PeriodicSeries.from_terms(n, max(N, 1), {tuple(k): 1.0})


def identity_embedding(n, N=1, r0=0.5):
    comps = [AnnulusFunction(_identity_component(n, N, j)) for j in range(n)]
    return TorusEmbedding(tuple(comps), r0)


def jacobian_density(emb, N_out=None):
    """det of the embedding Jacobian minus one, as Laurent data.

    The derivative entries are exact coefficient operations; the determinant
    is sampled on an alias-free torus grid (its exact Laurent degree is at
    most n(N+1) per axis) and re-expanded at a content-driven degree with
    the dropped mass recorded.
    """
    n = emb.n
    N_exact = n * (emb.N + 1)
    if N_out is None:
        N_out = N_exact
    M = max(2 * N_exact + 1, GRID_MULT * (2 * min(N_out, N_exact) + 1))
    mat = np.empty((M ** n, n, n), dtype=complex)
    for j in range(n):
        for l in range(n):
            d = emb.components[j].z_derivative(l)
            mat[:, j, l] = d.series.eval_real_grid(M).reshape(-1)
    det = np.linalg.det(mat)
    if float(np.min(np.abs(det))) <= 1e-12:
        raise NumericalFailure(
            "Jacobian determinant vanishes on the torus grid: not totally real")
    a = series_from_real_grid((det - 1.0).reshape((M,) * n),
                              min(N_out, N_exact))
    return AnnulusFunction(a.chop(CHOP_FLOOR))


@dataclasses.dataclass(frozen=True)
class PolarSplit:
    modulus: PeriodicSeries   # b with |1 + a| = 1 + b on the real torus
    phase: PeriodicSeries     # h with arg(1 + a) = h on the real torus
    residual: float           # sup |(1+b) e^{ih} - (1+a)| on the grid


def modulus_phase_split(a, N_out=None):
    """Factor 1 + a into positive modulus and real phase on the real torus.

    Requires |a| < 1/2 on the grid so the principal branch is unambiguous;
    both outputs extend holomorphically off the real torus and are flagged
    real.
    """
    a = AnnulusFunction(a)
    n = a.n
    if N_out is None:
        N_out = a.N + 8
    M = GRID_MULT * (2 * max(N_out, a.N) + 1)
    vals = a.series.eval_real_grid(M)
    worst = float(np.max(np.abs(vals)))
    if worst >= 0.5:
        raise HypothesisViolation(
            "(branch)", f"|a| reaches {worst:.3f} >= 1/2 on the torus grid")
    w = 1.0 + vals
    b = series_from_real_grid(np.abs(w) - 1.0, N_out, real=True)
    h = series_from_real_grid(np.angle(w), N_out, real=True)
    recon = (1.0 + b.eval_real_grid(M)) * np.exp(1j * h.eval_real_grid(M))
    residual = float(np.max(np.abs(recon - w)))
    return PolarSplit(b.chop(CHOP_FLOOR), h.chop(CHOP_FLOOR), residual)


def shear_lift(n):
    """The unimodular integer lift sending theta_1 to theta_1 + ... + theta_n."""
    A = np.eye(n, dtype=int)
    A[0, :] = 1
    return TorusMapLift(A, [PeriodicSeries.zeros(n, 0) for _ in range(n)])


@dataclasses.dataclass
class InvariantReport:
    """The complete unimodular invariant with its verification residuals."""

    rho0: float
    k: PeriodicSeries              # one-dimensional, zero mean
    normalizer: TorusMapLift       # collapsed normalizing lift
    chain: MapChain                # the same map, stage by stage
    g: CurveImmersion              # normal-form generating curve
    phase_residual: float
    volume_residual: float
    exactness_defect: float        # |integral of e^{i(t + k(t))}| over a turn
    moser_residual: float
    split_residual: float
    complex_constant: complex      # 1 + mean of the Jacobian density
    total_volume: float            # (2 pi)^n rho0
    density_norm: float
    fibering_converged: bool
    fibering_trace: object
    notes: str = ("normal-form gauge: the embedding first component carries "
                  "an absorbed factor i so the round curve maps to the "
                  "identity embedding")


def normalize_embedding(emb, eps0=0.2, stage_tol=1e-8, fib_degree=16,
                        max_iter=20, stop_tol=1e-12, N_comp=None,
                        verify_grid=48, eps_fibering=None):
    """Run the full normalization and assemble the invariant report.

    Stage order: Jacobian density, modulus/phase factorization, the integer
    shear that concentrates the phase on the first angle, volume
    normalization of the modulus, phase transport through the inverse volume
    map, and the volume-preserving phase iteration.  Each stage must land
    under `stage_tol` before the next runs.
    """
    n = emb.n
    if n < 2:
        raise ValueError("the normal form machinery needs n >= 2")
    r0 = emb.r0
    close = emb.closeness()
    if close > eps0 * r0 ** 4:
        raise HypothesisViolation(
            "(f-id)", f"||phi - Id||_r0 = {close:.3e} exceeds "
            f"eps0 r0^4 = {eps0 * r0 ** 4:.3e}")

    a = jacobian_density(emb)
    r = r0 / 2.0
    density_norm = a.norm(r)
    split = modulus_phase_split(a)
    if split.residual > stage_tol:
        raise NumericalFailure(
            f"modulus/phase factorization residual {split.residual:.3e} "
            f"above {stage_tol:.1e}")

    shear = shear_lift(n)
    A_inv = np.linalg.inv(shear.D).astype(int)
    b2 = pull_back_linear(split.modulus, A_inv)
    h2 = pull_back_linear(split.phase, A_inv)

    moser = moser_normalize(VolumeDensity(b2), r, N_out=b2.N + 4)
    if moser.residual > stage_tol:
        raise NumericalFailure(
            f"volume normalization residual {moser.residual:.3e} "
            f"above {stage_tol:.1e}")
    rho0 = 1.0 + moser.mean
    inv1 = invert_map(moser.map, r, N_out=moser.map.N + 4)
    if inv1.residual > stage_tol:
        raise NumericalFailure(
            f"volume map inversion residual {inv1.residual:.3e} "
            f"above {stage_tol:.1e}")

    h2s = h2.pad_to(max(h2.N, moser.map.N))
    carried = h2s - moser.map.parts[0].pad_to(h2s.N)
    h3 = inv1.map.pullback(carried, N_out=carried.N + 4)
    h3 = h3.symmetrized().chop(CHOP_FLOOR)
    if h3.N > fib_degree:
        h3 = h3.truncate(fib_degree)

    r_fib = r
    if eps_fibering is None:
        # staged gates replace the single unquantified entry threshold:
        # admit the actual input with margin, then rely on the per-step
        # admissibility checks and the a-posteriori residuals
        eps_fibering = max(EPS_SMALLH,
                           2.0 * h3.coeff_norm(r_fib) / r_fib ** 3)
    fib = fibering_normalize(
        FiberingPhase(h3), KamSchedule(r_fib, max_iter=max_iter,
                                       stop_tol=stop_tol),
        eps=eps_fibering)
    if not fib.converged:
        raise NumericalFailure(
            "phase normalization exhausted its schedule; trace attached")
    k = fib.k

    g, exactness_defect = normal_form_curve(k, rho0)
    stages = [shear] + list(fib.chain.stages) + [inv1.map, _unshear(shear)]
    chain = MapChain(stages)
    if N_comp is None:
        N_comp = max(fib.composite.N, moser.map.N + 4, 12)
    normalizer = chain.to_single(N_comp)

    phase_residual = _normal_form_residual(a, chain, k, rho0, n, verify_grid)
    return InvariantReport(
        rho0=rho0, k=k, normalizer=normalizer, chain=chain, g=g,
        phase_residual=phase_residual, volume_residual=fib.det_residual,
        exactness_defect=exactness_defect, moser_residual=moser.residual,
        split_residual=split.residual,
        complex_constant=1.0 + a.series.mean(),
        total_volume=(2.0 * np.pi) ** n * rho0,
        density_norm=density_norm,
        fibering_converged=fib.converged, fibering_trace=fib.trace)


def _unshear(shear):
    return TorusMapLift(np.linalg.inv(shear.D).astype(int),
                        [PeriodicSeries.zeros(shear.n, 0)
                         for _ in range(shear.n)])


def _normal_form_residual(a, chain, k, rho0, n, M):
    """sup over the real grid of the defining identity of the normal form:

    (1 + a(pi(Phi theta))) e^{i sum Phi_j} det D Phi
        = rho0 e^{i (sum theta_j + k(sum theta_j))}.
    """
    pts = theta_grid(n, M)
    moved = chain.apply(pts)
    det = chain.jacobian_det(pts)
    lhs = (1.0 + a.series.eval_points(moved)) \
        * np.exp(1j * moved.sum(axis=1)) * det
    s = pts.sum(axis=1)
    rhs = rho0 * np.exp(1j * (s + k.eval_points(s[:, None])))
    return float(np.max(np.abs(lhs - rhs)))


def exactness_correct(k, max_iter=30, tol=1e-13, M=None):
    """Adjust a zero-mean profile so e^{i(t + k(t))} integrates to zero.

    Adds a small first-harmonic correction alpha cos t + beta sin t and
    solves the two real closure equations by a damped Newton iteration;
    profiles produced by the normalization pipeline already satisfy closure,
    so this is only needed to seed synthetic normal forms.
    """
    if k.n != 1:
        raise ValueError("expected a one-dimensional profile")
    if M is None:
        M = max(16 * (k.N + 1), 64)
    t = 2.0 * np.pi * np.arange(M) / M
    kv = k.eval_real_grid(M).real
    ct, st = np.cos(t), np.sin(t)

    def closure(alpha, beta):
        w = np.exp(1j * (t + kv + alpha * ct + beta * st))
        return np.mean(w), w

    alpha = beta = 0.0
    for _ in range(max_iter):
        c0, w = closure(alpha, beta)
        if abs(c0) <= tol:
            break
        da = np.mean(1j * ct * w)
        db = np.mean(1j * st * w)
        J = np.array([[da.real, db.real], [da.imag, db.imag]])
        step = np.linalg.solve(J, np.array([c0.real, c0.imag]))
        alpha -= step[0]
        beta -= step[1]
    else:
        raise NumericalFailure("closure correction did not converge")
    corr = PeriodicSeries.from_terms(
        1, 1, {(1,): 0.5 * (alpha - 1j * beta),
               (-1,): 0.5 * (alpha + 1j * beta)})
    return (k + corr.pad_to(k.N)).symmetrized()


def _profile_velocity(k, rho0, N_out):
    M = GRID_MULT * (2 * N_out + 1)
    t = 2.0 * np.pi * np.arange(M) / M
    kv = k.eval_real_grid(M).real
    slope = 1.0 + k.derivative(0).eval_real_grid(M).real
    if float(np.min(slope)) <= 0.0:
        raise NumericalFailure(
            "1 + k' vanishes on the grid: the normal form is critical")
    return series_from_real_grid(rho0 * np.exp(1j * (t + kv)), N_out)


def closure_defect(k, rho0=1.0, N_out=None):
    """|integral over a turn of rho0 e^{i(t + k(t))}| = 2 pi |velocity mean|."""
    if N_out is None:
        N_out = max(2 * k.N + 8, 24)
    return 2.0 * np.pi * abs(_profile_velocity(k, rho0, N_out).mean())


def normal_form_curve(k, rho0, N_out=None, defect_tol=1e-8):
    """The generating curve with velocity rho0 e^{i(t + k(t))} (zero mean).

    Refuses when the closure integral of the velocity over a turn is above
    tolerance (reported as 2 pi times the mean defect), or when the profile
    fails 1 + k' > 0, which would make the normal form critical.
    """
    if k.n != 1:
        raise ValueError("expected a one-dimensional profile")
    if abs(k.mean()) > 1e-10:
        raise ValueError(f"profile must have zero mean, got {k.mean():.3e}")
    if rho0 <= 0.0:
        raise ValueError("the amplitude must be positive")
    if N_out is None:
        N_out = max(2 * k.N + 8, 24)
    vel = _profile_velocity(k, rho0, N_out)
    mean_defect = abs(vel.mean())
    defect = 2.0 * np.pi * mean_defect
    if mean_defect > defect_tol:
        raise HypothesisViolation(
            "(exact)", f"velocity closure defect {defect:.6e} "
            "(integral over a turn); correct the profile first")
    vel = vel - vel.mean()
    curve = CurveImmersion(vel.antiderivative(0))
    if gauss_degree(curve) != 1:
        raise NumericalFailure("generating curve has turning number != 1")
    return curve, defect


def curve_from_profile(k, rho0, N_out=None):
    """A closed non-critical curve from a possibly non-exact profile.

    Subtracts the velocity mean before integrating, so any small profile
    yields a valid generating curve; its true invariant profile is then the
    nearby exact one the normalization extracts.  This is how a synthetic
    profile is \"closure-corrected through the pipeline\": build the curve,
    embed, normalize, and read the corrected profile off the report.
    """
    if N_out is None:
        N_out = max(2 * k.N + 8, 24)
    vel = _profile_velocity(k, rho0, N_out)
    vel = vel - vel.mean()
    curve = CurveImmersion(vel.antiderivative(0))
    if gauss_degree(curve) != 1:
        raise NumericalFailure("generating curve has turning number != 1")
    return curve


def normal_form_embedding(g, n, r0=0.5, check_tol=1e-8):
    """The model embedding built from a generating curve.

    First component i g(z_1 ... z_n) / (z_2 ... z_n), remaining components
    the coordinates themselves; the absorbed factor i makes the round curve
    correspond to the identity.  Verifies on a grid that the Jacobian
    determinant matches the curve velocity data.
    """
    if n < 2:
        raise ValueError("the normal form embedding needs n >= 2")
    chk = embedding_check(g)
    if not chk.is_embedding:
        raise HypothesisViolation(
            "(embed)", f"generating curve has turning number giving index "
            f"{chk.self_intersection_index}; not an embedding")
    line = g.series
    N_emb = line.N + 1
    terms = {}
    for m in range(-line.N, line.N + 1):
        gamma = line.coeff((m,))
        if gamma == 0.0:
            continue
        idx = tuple([m] + [m - 1] * (n - 1))
        terms[idx] = 1j * gamma
    first = AnnulusFunction.from_terms(n, N_emb, terms)
    comps = [first] + [AnnulusFunction(_identity_component(n, N_emb, j))
                       for j in range(1, n)]
    emb = TorusEmbedding(tuple(comps), r0)

    # det D psi(e^{i theta}) must equal e^{-i s} d/ds g(e^{i s}) at s = sum theta
    M = 4 * (N_emb + 1)
    pts = theta_grid(n, M)
    s = pts.sum(axis=1)
    det = _first_component_slope(first, n).eval_points(pts)
    target = np.exp(-1j * s) * line.derivative(0).eval_points(s[:, None])
    worst = float(np.max(np.abs(det - target)))
    if worst > check_tol:
        raise NumericalFailure(
            f"normal form embedding verification failed at {worst:.3e}")
    return emb


def _first_component_slope(first, n):
    # d/dz_1 of the first component, as a function of theta
    return first.z_derivative(0).series


# ----------------------------------------------------------------------
# test conjugations


def precompose_torus_map(emb, lift, N_out=None):
    """Reparametrize the embedding by a real near-identity torus self-map.

    The image submanifold is unchanged, so the invariant pair must be
    reproduced; this is the working form of the uniqueness statement.
    """
    if not lift.real:
        raise ValueError("reparametrizations must be real torus maps")
    comps = []
    for c in emb.components:
        if N_out is None:
            N_here = c.N + lift.N + 4
        else:
            N_here = N_out
        comps.append(AnnulusFunction(lift.pullback(
            c.series, N_out=max(N_here, c.N)).chop(CHOP_FLOOR)))
    return TorusEmbedding(tuple(comps), emb.r0)


def postcompose_monomial_shear(emb, target, exponents, eps, N_out=None):
    """Apply the ambient unimodular shear w_target += eps prod w_j^{m_j}.

    The exponent map must not involve the target coordinate, which makes the
    ambient map triangular with unit Jacobian; images are unimodularly
    equivalent, leaving the invariants fixed.
    """
    exponents = dict(exponents)
    if target in exponents:
        raise ValueError("a shear cannot feed a coordinate into itself")
    n = emb.n
    if N_out is None:
        N_out = emb.N * max(1, sum(abs(m) for m in exponents.values())) + 4
    M = GRID_MULT * (2 * N_out + 1)
    vals = np.ones((M ** n,), dtype=complex)
    z = np.exp(1j * theta_grid(n, M))
    for j, m in exponents.items():
        vals = vals * emb.components[j].eval_z(z) ** m
    add = series_from_real_grid(vals.reshape((M,) * n), N_out).chop(CHOP_FLOOR)
    comps = list(emb.components)
    comps[target] = AnnulusFunction(
        comps[target].series.pad_to(max(comps[target].N, add.N))
        + (eps * add).pad_to(max(comps[target].N, add.N)))
    return TorusEmbedding(tuple(comps), emb.r0)


def half_turn_profile(k):
    """The equally valid representative k(t + pi) of the invariant profile."""
    return translate(k, [np.pi]).symmetrized()
