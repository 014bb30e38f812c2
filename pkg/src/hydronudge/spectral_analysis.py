"""Dense assembly of the Stokes and perturbed operators on small grids, and the
eigenvalue, resolvent and semigroup probes built on them.

Coordinates are taken in an ``L^2``-orthonormal basis of the discrete solution
space, so the Euclidean norm of a coordinate vector is the ``L^2`` norm of the
field and the adjoint is the conjugate transpose.  The basis is the union over
active horizontal modes of an orthonormal basis of the constrained vertical
coefficient space, which keeps the matrices block-sparse; eigen problems are
solved per connected block.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .domain import DomainSpec, SpectralField, get_grid, gradient_tensor, l2_energy_coeffs
from .dynamics import observe_modal
from .observation import ObservationOperator
from .operators import apply_perturbed, apply_stokes, PerturbedStokes

log = logging.getLogger(__name__)

DEFAULT_CAP = 4096


class DenseCapExceeded(ValueError):
    pass


class NonPositiveSpectrum(RuntimeError):
    pass


def _mode_basis(b: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the unit vector ``b`` (or everything if ``b = 0``)."""
    if not np.any(b):
        return np.eye(b.size)
    # canonical sign so that k and -k share the same basis
    nz = np.flatnonzero(np.abs(b) > 1e-14)[0]
    b = b * np.sign(b[nz])
    return linalg.null_space(b[None, :])


@dataclass(eq=False)
class DenseOperator:
    """Dense matrix of an operator on the discrete solution space with its basis bookkeeping."""

    matrix: np.ndarray
    domain: DomainSpec
    modes: list[tuple[int, int]]
    bases: list[np.ndarray]
    offsets: np.ndarray
    name: str = "stokes"
    mu: float = 0.0
    delta: float = 0.0
    _eig: list | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale(self) -> float:
        return math.sqrt(self.domain.Lx * self.domain.Ly)

    def to_coords(self, a: np.ndarray) -> np.ndarray:
        n = self.bases[0].shape[0] // 2
        x = np.empty(self.size, dtype=complex)
        for (i, j), Q, o in zip(self.modes, self.bases, self.offsets):
            x[o : o + Q.shape[1]] = Q.T @ a[:, i, j, :].reshape(2 * n)
        return x * self.scale

    def from_coords(self, x: np.ndarray) -> np.ndarray:
        g = get_grid(self.domain)
        n = g.n_modal
        a = np.zeros((2, self.domain.Nx, self.domain.Ny, n), dtype=complex)
        for (i, j), Q, o in zip(self.modes, self.bases, self.offsets):
            a[:, i, j, :] = (Q @ x[o : o + Q.shape[1]]).reshape(2, n)
        return a / self.scale

    @property
    def is_hermitian(self) -> bool:
        M = self.matrix
        return bool(np.abs(M - M.conj().T).max() <= 1e-12 * max(np.abs(M).max(), 1.0))

    def blocks(self) -> list[np.ndarray]:
        pattern = csr_matrix(np.abs(self.matrix) > 0)
        ncomp, labels = connected_components(pattern, directed=False)
        return [np.flatnonzero(labels == c) for c in range(ncomp)]

    def eigen(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Per-block ``(index, eigenvalues, V, V^{-1})``."""
        if self._eig is None:
            out = []
            herm = self.is_hermitian
            for idx in self.blocks():
                B = self.matrix[np.ix_(idx, idx)]
                if herm:
                    lam, V = linalg.eigh(B)
                    Vinv = V.conj().T
                    lam = lam.astype(complex)
                else:
                    lam, V = linalg.eig(B)
                    Vinv = linalg.inv(V)
                out.append((idx, lam, V, Vinv))
            self._eig = out
        return self._eig

    def eigenvalues(self) -> np.ndarray:
        lam = np.concatenate([e[1] for e in self.eigen()])
        return lam[np.lexsort((lam.imag, lam.real))]

    def apply_function(self, fn, x: np.ndarray) -> np.ndarray:
        """``f(M) x`` through the block eigendecompositions; ``fn`` maps eigenvalues to values."""
        y = np.zeros_like(x, dtype=complex)
        for idx, lam, V, Vinv in self.eigen():
            y[idx] = V @ (fn(lam) * (Vinv @ x[idx]))
        return y

    def function_norm(self, fn) -> float:
        """Spectral norm of ``f(M)`` (max over blocks)."""
        best = 0.0
        for idx, lam, V, Vinv in self.eigen():
            F = (V * fn(lam)) @ Vinv
            best = max(best, float(np.linalg.norm(F, 2)))
        return best


def _basis(domain: DomainSpec):
    g = get_grid(domain)
    n = g.n_modal
    modes, bases, offsets = [], [], []
    off = 0
    for i, j in zip(*np.nonzero(g.mask)):
        b = np.concatenate([g.constraint[0, i, j], g.constraint[1, i, j]])
        Q = _mode_basis(b)
        modes.append((int(i), int(j)))
        bases.append(Q)
        offsets.append(off)
        off += Q.shape[1]
    return modes, bases, np.asarray(offsets), off, n


def _unit_states(domain, modes, bases, offsets, n, start, stop):
    """Modal states for basis vectors ``start..stop-1`` stacked on a leading axis."""
    g = get_grid(domain)
    scale = math.sqrt(domain.Lx * domain.Ly)
    out = np.zeros((stop - start, 2, domain.Nx, domain.Ny, n), dtype=complex)
    for m, ((i, j), Q, o) in enumerate(zip(modes, bases, offsets)):
        lo, hi = max(o, start), min(o + Q.shape[1], stop)
        for col in range(lo, hi):
            out[col - start, :, i, j, :] = Q[:, col - o].reshape(2, n) / scale
    return out


def assemble(
    domain: DomainSpec,
    kind: str = "stokes",
    mu: float = 0.0,
    obs: ObservationOperator | None = None,
    cap: int = DEFAULT_CAP,
    check: int = 20,
    seed: int = 0,
    tol: float = 1e-10,
) -> DenseOperator:
    """Assemble the Stokes (``kind='stokes'``) or perturbed (``kind='perturbed'``) operator.

    The matrix is checked against the matrix-free application on ``check``
    random fields (relative agreement ``tol``).
    """
    if kind not in ("stokes", "perturbed"):
        raise ValueError(f"kind must be 'stokes' or 'perturbed', got {kind!r}")
    if kind == "perturbed" and obs is None:
        raise ValueError("perturbed assembly needs an observation operator")
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    g = get_grid(domain)
    modes, bases, offsets, N, n = _basis(domain)
    if N > cap:
        raise DenseCapExceeded(f"dense size {N} exceeds the cap {cap}")
    lam = g.vertical.eigenvalues
    M = np.zeros((N, N), dtype=complex)
    for (i, j), Q, o in zip(modes, bases, offsets):
        d = np.concatenate([lam, lam]) + g.k2[i, j]
        M[o : o + Q.shape[1], o : o + Q.shape[1]] = Q.T @ (d[:, None] * Q)
    delta = 0.0
    if kind == "perturbed":
        obs._ensure_fitted()
        delta = obs.delta
        if mu != 0:
            sym = obs.fourier_symbol()
            if sym is not None:
                for (i, j), Q, o in zip(modes, bases, offsets):
                    k = Q.shape[1]
                    M[o : o + k, o : o + k] += mu * sym[i, j, 0] * np.eye(k)
            else:
                op = DenseOperator(M, domain, modes, bases, offsets)
                batch = 128
                for start in range(0, N, batch):
                    stop = min(start + batch, N)
                    E = _unit_states(domain, modes, bases, offsets, n, start, stop)
                    flat = E.reshape((stop - start) * 2, *E.shape[2:])
                    obs_c = obs.apply_coeffs(g.modal_to_coeffs(flat))
                    J = g.coeffs_to_modal(obs_c.reshape(stop - start, 2, *obs_c.shape[1:]), sigma=True)
                    for c in range(stop - start):
                        M[:, start + c] += mu * op.to_coords(J[c])
                # drop round-off couplings so the block structure is exact
                M[np.abs(M) < 1e-13 * np.abs(M).max()] = 0.0
    out = DenseOperator(M, domain, modes, bases, offsets, name=kind, mu=mu, delta=delta)
    if check:
        _check_against_matrix_free(out, obs, check, seed, tol)
    return out


def _check_against_matrix_free(op: DenseOperator, obs, samples: int, seed: int, tol: float):
    rng = np.random.default_rng(seed)
    dom = op.domain
    pert = PerturbedStokes(dom, op.mu, obs) if op.name == "perturbed" else None
    worst = 0.0
    for _ in range(samples):
        x = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
        v = SpectralField.from_modal(op.from_coords(x), dom)
        Av = apply_perturbed(pert, v) if pert is not None else apply_stokes(v)
        y_free = op.to_coords(Av.to_modal(sigma=True))
        y = op.matrix @ x
        worst = max(worst, float(np.linalg.norm(y - y_free) / np.linalg.norm(y)))
    if worst > tol:
        raise AssertionError(f"dense assembly disagrees with matrix-free action: {worst:.2e} > {tol:.0e}")
    op.check_residual = worst


def vertical_block(domain: DomainSpec) -> np.ndarray:
    """Stokes matrix restricted to horizontal wavenumber zero (both components)."""
    g = get_grid(domain)
    lam = g.vertical.eigenvalues
    return np.diag(np.concatenate([lam, lam]))


def vertical_eigenvalues(domain: DomainSpec) -> np.ndarray:
    """Eigenvalues of the ``k = 0`` block assembled from Chebyshev mass/stiffness matrices."""
    vb = get_grid(domain).vertical
    E = vb.extension
    K = vb.D.T @ vb.M @ vb.D
    return linalg.eigh(E.T @ K @ E, E.T @ vb.M @ E, eigvals_only=True)


# -- spectral gap ---------------------------------------------------------------


@dataclass
class GapReport:
    mu: float
    delta: float
    lambda_min_A: float
    lambda_min_tilde: float
    margin: float
    max_imag: float
    transient_C: float
    converged: bool = True
    kind: str = ""

    CSV_FIELDS = ("mu", "delta", "lambda_min_A", "lambda_min_tilde", "margin", "max_imag", "transient_C")

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.CSV_FIELDS}


def transient_constant(op: DenseOperator, abscissa: float, t_grid=None) -> float:
    """``sup_t exp(abscissa t) ||exp(-t M)||`` over a grid covering five e-folds."""
    if t_grid is None:
        t_grid = np.linspace(0.0, 5.0 / max(abscissa, 1e-12), 21)
    best = 0.0
    for t in t_grid:
        best = max(best, math.exp(abscissa * t) * op.function_norm(lambda lam, t=t: np.exp(-lam * t)))
    return best


def gap_report(A: DenseOperator, At: DenseOperator, transient: bool = True) -> GapReport:
    lam_A = float(A.eigenvalues().real.min())
    converged = True
    try:
        lam = At.eigenvalues()
    except (linalg.LinAlgError, ValueError) as exc:  # pragma: no cover - defensive
        log.warning("eigensolve failed for mu=%s delta=%s: %s", At.mu, At.delta, exc)
        nan = float("nan")
        return GapReport(At.mu, At.delta, lam_A, nan, nan, nan, nan, False, At.name)
    lam_t = float(lam.real.min())
    slow = lam[np.argsort(lam.real)[:10]]
    tc = transient_constant(At, lam_t) if transient else float("nan")
    return GapReport(At.mu, At.delta, lam_A, lam_t, lam_t - lam_A, float(np.abs(slow.imag).max()), tc, converged, At.name)


def spectral_gap(
    domain: DomainSpec,
    mu_list,
    observations: list[ObservationOperator],
    transient: bool = True,
    cap: int = DEFAULT_CAP,
    check: int = 0,
) -> list[GapReport]:
    """Gap reports over the product ``mu_list x observations``."""
    A = assemble(domain, "stokes", cap=cap, check=check)
    out = []
    for J in observations:
        for mu in mu_list:
            At = assemble(domain, "perturbed", mu=mu, obs=J, cap=cap, check=check)
            out.append(gap_report(A, At, transient))
    return out


def write_gap_csv(path, reports: list[GapReport]):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=GapReport.CSV_FIELDS)
        wr.writeheader()
        for r in reports:
            wr.writerow({k: f"{v:.12g}" for k, v in r.row().items()})


def degradation_boundary(reports: list[GapReport]) -> dict[float, float | None]:
    """Per ``mu``: smallest ``delta`` with ``margin < mu / 2`` (``None`` if never crossed)."""
    out: dict[float, float | None] = {}
    for mu in sorted({r.mu for r in reports}):
        if mu == 0:
            continue
        rows = sorted((r for r in reports if r.mu == mu), key=lambda r: r.delta)
        out[mu] = next((r.delta for r in rows if r.margin < mu / 2), None)
    return out


# -- resolvent --------------------------------------------------------------------


def homogeneous_h2(domain: DomainSpec, a: np.ndarray) -> float:
    """``||D^2 psi||_2`` over the full second-derivative tensor."""
    return math.sqrt(l2_energy_coeffs(gradient_tensor(SpectralField.from_modal(a, domain), 2)))


@dataclass
class ResolventRow:
    lam: complex
    resolvent_ratio: float
    h2_ratio: float
    skipped: bool = False


def default_lambdas(lam_min: float, count: int = 7) -> list[complex]:
    """Points on the rays ``arg = 3 pi / 4`` and ``arg = pi`` with ``|lam|`` in ``[lam_min/10, 100 lam_min]``,
    plus ``lam = 0``."""
    radii = np.geomspace(lam_min / 10, 100 * lam_min, count)
    out: list[complex] = [0j]
    for theta in (3 * math.pi / 4, math.pi):
        out.extend(r * complex(math.cos(theta), math.sin(theta)) for r in radii)
    return out


def resolvent_samples(op: DenseOperator, count: int = 6, seed: int = 0) -> list[np.ndarray]:
    """Slowest eigenvectors plus smooth random fields, as coordinate vectors."""
    lam = np.concatenate([e[1] for e in op.eigen()])
    order = np.argsort(lam.real)
    out = []
    pos = 0
    cols = []
    for idx, l_, V, _ in op.eigen():
        for c in range(len(l_)):
            cols.append((idx, V[:, c]))
    for k in order[:3]:
        idx, vec = cols[k]
        x = np.zeros(op.size, dtype=complex)
        x[idx] = vec
        out.append(x / np.linalg.norm(x))
    rng = np.random.default_rng(seed)
    g = get_grid(op.domain)
    low = (np.abs(g.kx_int) <= 1) & (np.abs(g.ky_int) <= 1)
    for _ in range(max(count - len(out), 0)):
        a = rng.standard_normal((2, *g.k2.shape, g.n_modal)) + 1j * rng.standard_normal((2, *g.k2.shape, g.n_modal))
        a = a * low[None, :, :, None]
        a[..., 3:] = 0
        x = op.to_coords(g.project_sigma(a))
        out.append(x / np.linalg.norm(x))
    return out


def resolvent_probe(op: DenseOperator, lambdas, samples, near_tol: float = 1e-8) -> list[ResolventRow]:
    """Solve ``(lam - M) psi = f`` for each probe ``lam`` and sample ``f``.

    Reports per ``lam`` the sup over samples of ``|lam| ||psi|| / ||f||`` and
    ``||D^2 psi|| / ||f||``.  Points within ``near_tol`` (relative) of the
    spectrum are skipped and logged.
    """
    spec = op.eigenvalues()
    scale = max(np.abs(spec).max(), 1.0)
    rows = []
    for lam in lambdas:
        lam = complex(lam)
        if np.min(np.abs(spec - lam)) <= near_tol * scale:
            log.info("resolvent probe skipped at lambda=%s (near spectrum)", lam)
            rows.append(ResolventRow(lam, math.nan, math.nan, True))
            continue
        r1 = r2 = 0.0
        for f in samples:
            psi = op.apply_function(lambda ev: 1.0 / (lam - ev), f)
            nf = np.linalg.norm(f)
            r1 = max(r1, abs(lam) * np.linalg.norm(psi) / nf)
            r2 = max(r2, homogeneous_h2(op.domain, op.from_coords(psi)) / nf)
        rows.append(ResolventRow(lam, float(r1), float(r2)))
    return rows


# -- semigroup decay ----------------------------------------------------------------


@dataclass
class DecayProbeRow:
    theta: float
    sup_value: float
    t_at_sup: float


def spectral_abscissa(op: DenseOperator) -> float:
    return float(op.eigenvalues().real.min())


def semigroup_decay_probe(op: DenseOperator, thetas, t_grid, samples, eps: float = 0.05) -> tuple[float, list[DecayProbeRow]]:
    """``sup t^theta e^{mu_* t} ||M^theta e^{-tM} f|| / ||f||`` with ``mu_* = (1 - eps) * abscissa``."""
    absc = spectral_abscissa(op)
    if not absc > 0:
        raise NonPositiveSpectrum(f"spectral abscissa {absc:.4g} is not positive")
    mu_star = (1 - eps) * absc
    rows = []
    for theta in thetas:
        best, t_best = 0.0, float("nan")
        for f in samples:
            nf = np.linalg.norm(f)
            for t in t_grid:
                y = op.apply_function(lambda lam: lam**theta * np.exp(-lam * t), f)
                val = (t**theta if theta else 1.0) * math.exp(mu_star * t) * np.linalg.norm(y) / nf
                if val > best:
                    best, t_best = float(val), float(t)
        rows.append(DecayProbeRow(float(theta), best, t_best))
    return mu_star, rows


def semigroup_norm_check(op: DenseOperator, t_grid) -> float:
    """``max_t ||e^{-tM}|| e^{abscissa t}`` over ``t_grid``."""
    return transient_constant(op, spectral_abscissa(op), t_grid)


def _exp_linear_weights(lam: np.ndarray, H: np.ndarray):
    """``int_0^1 e^{-z x} dx`` and ``int_0^1 x e^{-z x} dx`` for ``z = lam H`` (broadcast)."""
    z = lam[None, :] * H[:, None]
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    em = np.exp(-zs)
    w0 = np.where(small, 1 - z / 2 + z**2 / 6, -np.expm1(-zs) / zs)
    w1 = np.where(small, 0.5 - z / 3 + z**2 / 8, (1 - (1 + zs) * em) / zs**2)
    return w0, w1


@dataclass
class ForcedIntegralResult:
    times: np.ndarray
    norms: np.ndarray
    bound_shape: np.ndarray
    ratio: np.ndarray
    constant: float
    consistent: bool
    beta: float
    gamma: float
    mu_star: float


def forced_integral_probe(
    op: DenseOperator,
    f: np.ndarray,
    t_grid,
    beta: float = 0.25,
    gamma: float | None = None,
    eps: float = 0.05,
    nodes: int = 400,
) -> ForcedIntegralResult:
    """``phi(t) = int_0^t e^{-(t-s) M} f s^{-beta} e^{-gamma s} ds`` against ``t^{1-beta}(e^{-gamma t} + e^{-mu_* t / 2})``.

    Product integration on a graded mesh: the scalar weight is interpolated
    linearly on each sub-interval and integrated exactly against the
    exponential, so stiff eigenvalues are handled without step restrictions.
    ``consistent`` means the ratio over the last third of ``t_grid`` stays below
    its earlier supremum (grids shorter than three points only need finiteness).
    """
    mu_star = (1 - eps) * spectral_abscissa(op)
    if gamma is None:
        gamma = mu_star
    if not (mu_star / 2 < gamma < 2 * mu_star):
        raise ValueError(f"gamma={gamma} must lie in (mu_*/2, 2 mu_*) = ({mu_star / 2:.4g}, {2 * mu_star:.4g})")
    t_grid = np.asarray(t_grid, dtype=float)
    eig = op.eigen()
    coeffs = [(idx, lam, V, Vinv @ f[idx]) for idx, lam, V, Vinv in eig]
    norms = np.zeros(t_grid.size)
    for it, t in enumerate(t_grid):
        s = t * (np.arange(nodes + 1) / nodes) ** 2
        h = np.zeros_like(s)
        h[1:] = s[1:] ** (-beta) * np.exp(-gamma * s[1:])
        H = np.diff(s)
        y = np.zeros(op.size, dtype=complex)
        for idx, lam, V, c in coeffs:
            decay = np.exp(-lam[None, :] * (t - s[1:, None]))  # (nodes, m) at right ends
            w0, w1 = _exp_linear_weights(lam, H)
            # linear pieces, expressed from the right end: h_b + (h_a - h_b) u / H
            contrib = H[:, None] * decay * (h[1:, None] * w0 + (h[:-1, None] - h[1:, None]) * w1)
            # first interval carries the integrable singularity: exact s^{-beta} integral
            s1 = s[1]
            contrib[0] = np.exp(-lam * (t - s1 / 2)) * math.exp(-gamma * s1 / 2) * s1 ** (1 - beta) / (1 - beta)
            y[idx] = V @ (contrib.sum(axis=0) * c)
        norms[it] = np.linalg.norm(y)
    shape = t_grid ** (1 - beta) * (np.exp(-gamma * t_grid) + np.exp(-mu_star * t_grid / 2))
    ratio = norms / (shape * np.linalg.norm(f))
    consistent = bool(np.all(np.isfinite(ratio)))
    if t_grid.size >= 3:
        cut = (2 * t_grid.size) // 3
        consistent = consistent and bool(ratio[cut:].max() <= ratio[:cut].max() * (1 + 1e-9))
    return ForcedIntegralResult(t_grid, norms, shape, ratio, float(ratio.max()), consistent, beta, gamma, mu_star)
