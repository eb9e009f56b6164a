"""The space-time partition function behind the circuit.

Couplings of the complex-weight two-species (Ashkin-Teller-like) model,
brute-force and transfer-matrix evaluation, Kramers-Wannier duality at the
weight and record level, single-species random-bond Ising reductions, gauge
machinery, and loop expansions.  Everything here is an oracle for the
quantum engines: partition values are kept in the exact Kraus convention,
so a traced partition function literally equals tr(rho_m).

Spin/index conventions: a space-time row holds the doubled configuration
(s_t, s'_t); row configurations are encoded as base-4 integers, site-major,
with digit p = 2k + b and spin s = +1 for bit 0.  Temporal couplings carry
the measurement record through the per-site transfer
exp(Jt*u + conj(Jt)*v + K*u*v), u = s_{t-1,i} s_{t,i}, v the primed analog,
with Jt = j_x + i*phi(m)/2 picked real-K (the phase jumps by pi when
m = -1).
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    MemoryBudget,
    RequiresPureDynamics,
    SingularCoupling,
    SingularWeight,
    TooLarge,
    WrongLimit,
)
from .model import MeasurementRecord, SimParams

_SPINS = (1, -1)


# -- couplings ---------------------------------------------------------------


@dataclass(frozen=True)
class CouplingSet:
    """Couplings of the space-time model, plus bookkeeping constants.

    ``j_x`` is the real part of the temporal coupling; the imaginary part
    is phi(m)/2 with phi(m) the phase of the transfer off-diagonal
    w(m) = m*w_re + i*w_im (the outcome flip shifts phi by pi, which is the
    real-K branch choice).  ``x_prefactor``/``zz_prefactor`` are the
    record-independent per-gate constants that make partition values exact
    rather than proportional.
    """

    j_zz: float
    k_zz: float
    j_x: float
    k_x: float
    w_re: float = 0.0
    w_im: float = 0.0
    theta_zz: float = 0.0
    b: float = 0.0
    x_prefactor: float = 1.0
    zz_prefactor: float = 1.0

    @property
    def w_abs(self) -> float:
        return float(np.hypot(self.w_re, self.w_im))

    @property
    def phi_plus(self) -> float:
        """Rotation phase of the outcome +1 transfer off-diagonal."""
        return float(np.arctan2(self.w_im, self.w_re))

    def phi(self, m: int) -> float:
        return float(np.arctan2(self.w_im, m * self.w_re))

    def j_x_tilde(self, m: int) -> complex:
        """Temporal coupling on the ket copy, Jt(m) = j_x - i*phi(m)/2."""
        return self.j_x - 0.5j * self.phi(m)


def _ab_intermediates(lambda_x, q_x):
    a = lambda_x / (1.0 - (1.0 - lambda_x ** 2) * q_x)
    b = (q_x + (1.0 - q_x) * lambda_x ** 2) / (1.0 - q_x * (1.0 - lambda_x ** 2))
    return a, b


def _zz_prefactor(lambda_zz, q_zz):
    j_zz = np.arctanh(lambda_zz)
    k_zz = np.arctanh(q_zz / (1.0 - q_zz))
    return np.exp(-k_zz) / (2.0 * (1.0 + lambda_zz ** 2) * np.cosh(j_zz) ** 2)


def couplings_from_params(lambda_x, lambda_zz, q_x=0.0, q_zz=0.0) -> CouplingSet:
    """Closed-form couplings of the measurement + dephasing model.

    Raises SingularCoupling at lambda_x in {0, 1} or lambda_zz = 1, where a
    coupling diverges; those limits go through the reduction paths instead.
    """
    if lambda_x in (0.0, 1.0):
        raise SingularCoupling("lambda_x in {0, 1}: use the reduced models")
    if lambda_zz == 1.0:
        raise SingularCoupling("lambda_zz = 1: infinite spatial coupling")
    a, b = _ab_intermediates(lambda_x, q_x)
    j_zz = float(np.arctanh(lambda_zz))
    k_zz = float(np.arctanh(q_zz / (1.0 - q_zz)))
    j_x = float(-0.25 * np.log(b))
    k_x = float(-0.25 * np.log(a * a / b))
    x_pref = (1.0 - q_x * (1.0 - lambda_x ** 2)) / (2.0 * (1.0 + lambda_x ** 2))
    return CouplingSet(
        j_zz=j_zz,
        k_zz=k_zz,
        j_x=j_x,
        k_x=k_x,
        w_re=a,
        w_im=0.0,
        b=b,
        x_prefactor=x_pref,
        zz_prefactor=float(_zz_prefactor(lambda_zz, q_zz)),
    )


def couplings_with_unitaries(lambda_x, q_x, theta_x, lambda_zz=0.5, q_zz=0.0,
                             theta_zz=0.0) -> CouplingSet:
    """Temporal couplings when a Pauli-X rotation joins each layer.

    w and b are the off-diagonal/antidiagonal entries of the one-site
    transfer; Jt = -(1/4) log b + i phi/2 and K = -(1/4) log(|w|^2/b).
    """
    if lambda_zz == 1.0:
        raise SingularCoupling("lambda_zz = 1: infinite spatial coupling")
    # the closed forms use the linearized rotation 1 + i*th*X, so th is the
    # tangent of the circuit angle (exp(i theta X) is proportional to it)
    th, lam = np.tan(theta_x), lambda_x
    big_q = q_x / (1.0 - q_x)
    denom = 1.0 + th ** 2 * lam ** 2 + big_q * (lam ** 2 + th ** 2)
    if denom <= 0.0:
        raise SingularCoupling("vanishing transfer denominator")
    w_re = lam * (1.0 + th ** 2) * (1.0 + big_q) / denom
    w_im = th * (1.0 - lam ** 2) * (1.0 - big_q) / denom
    b = (lam ** 2 + th ** 2 + big_q * (1.0 + th ** 2 * lam ** 2)) / denom
    if b <= 0.0 or (w_re == 0.0 and w_im == 0.0):
        raise SingularCoupling("singular X transfer (lambda_x = theta_x = 0?)")
    w_abs = float(np.hypot(w_re, w_im))
    j_x = float(-0.25 * np.log(b))
    k_x = float(-0.25 * np.log(w_abs ** 2 / b))
    # exact kernel corner (with the true angle), outcome-independent
    cth, sth = np.cos(theta_x), np.sin(theta_x)
    x_pref = (
        (1.0 - q_x) * (cth ** 2 + lam ** 2 * sth ** 2)
        + q_x * (lam ** 2 * cth ** 2 + sth ** 2)
    ) / (2.0 * (1.0 + lam ** 2))
    return CouplingSet(
        j_zz=float(np.arctanh(lambda_zz)),
        k_zz=float(np.arctanh(q_zz / (1.0 - q_zz))),
        j_x=j_x,
        k_x=k_x,
        w_re=float(w_re),
        w_im=float(w_im),
        theta_zz=theta_zz,
        b=float(b),
        x_prefactor=float(x_pref),
        zz_prefactor=float(_zz_prefactor(lambda_zz, q_zz)),
    )


def x_transfer_from_couplings(c: CouplingSet, m: int) -> np.ndarray:
    """The 4x4 temporal transfer built from the couplings (exact scale).

    Equals the fused quantum kernel N (P (x) P) (U (x) U*) entrywise; this
    is the statmech side of that cross-check.
    """
    jt = c.j_x_tilde(m)
    scale = c.x_prefactor * np.exp(-(2.0 * c.j_x + c.k_x))
    out = np.empty((4, 4), dtype=complex)
    for p_new in range(4):
        s_new = 1 - 2 * (p_new >> 1)
        sp_new = 1 - 2 * (p_new & 1)
        for p_old in range(4):
            s_old = 1 - 2 * (p_old >> 1)
            sp_old = 1 - 2 * (p_old & 1)
            u = s_new * s_old
            v = sp_new * sp_old
            out[p_new, p_old] = np.exp(jt * u + np.conj(jt) * v + c.k_x * u * v)
    return scale * out


def zz_bond_weight(c: CouplingSet, m: int, sigma: int, sigma_p: int) -> complex:
    """Spatial Boltzmann factor of one measured+dephased+rotated bond."""
    val = np.exp(
        m * c.j_zz * (sigma + sigma_p)
        + c.k_zz * sigma * sigma_p
        + 1j * c.theta_zz * (sigma - sigma_p)
    )
    return c.zz_prefactor * val


# -- lattice bookkeeping ------------------------------------------------------


@dataclass(frozen=True)
class DisorderRealization:
    """A measurement record pinned to its space-time lattice.

    Spatial bonds live on rows t = 1..T, temporal bonds connect
    (t-1, i)-(t, i); ``bonds`` lists the in-row pairs (the L = 2 ring
    carries the same pair twice, as two independently measured bonds).
    """

    record: MeasurementRecord
    bonds: tuple

    @property
    def T(self):
        return self.record.T

    @property
    def L(self):
        return self.record.L

    @classmethod
    def from_params(cls, params: SimParams, record: MeasurementRecord):
        return cls(record=record, bonds=tuple(params.bonds))


def random_record(params: SimParams, seed: int, n_bonds=None) -> MeasurementRecord:
    rng = np.random.default_rng(seed)
    nb = params.n_bonds if n_bonds is None else n_bonds
    m_x = rng.choice([1, -1], size=(params.T, params.L)).astype(np.int8)
    m_zz = rng.choice([1, -1], size=(params.T, nb)).astype(np.int8)
    return MeasurementRecord(m_x=m_x, m_zz=m_zz)


def _row_digits(code, L):
    return [(code >> (2 * (L - 1 - i))) & 3 for i in range(L)]


def _row_spins(code, L):
    digits = _row_digits(code, L)
    s = np.array([1 - 2 * (d >> 1) for d in digits])
    sp = np.array([1 - 2 * (d & 1) for d in digits])
    return s, sp


def initial_row_vector(kind, L, dtype=complex):
    """rho_0(s_0, s_0') as a vector over base-4 row configurations."""
    dim = 4 ** L
    v = np.zeros(dim, dtype=dtype)
    if kind == "all_up":
        v[0] = 1.0
    elif kind == "ghz_plus":
        codes = []
        for kbit in (0, 1):
            for bbit in (0, 1):
                digit = 2 * kbit + bbit
                code = sum(digit << (2 * (L - 1 - i)) for i in range(L))
                codes.append(code)
        for code in codes:
            v[code] = 0.5
    elif kind == "maximally_mixed":
        for kbit in range(2 ** L):
            code = 0
            for i in range(L):
                bit = (kbit >> (L - 1 - i)) & 1
                code |= (3 * bit) << (2 * (L - 1 - i))
            v[code] = 2.0 ** -L
    else:
        raise ValueError(f"no row vector for initial state {kind!r}")
    return v


def trace_row_vector(L, dtype=complex):
    """The <<I| boundary: 1 on rows with s_T = s_T'."""
    dim = 4 ** L
    v = np.zeros(dim, dtype=dtype)
    for kbit in range(2 ** L):
        code = 0
        for i in range(L):
            bit = (kbit >> (L - 1 - i)) & 1
            code |= (3 * bit) << (2 * (L - 1 - i))
        v[code] = 1.0
    return v


# -- brute force and transfer matrix -----------------------------------------


def _row_zz_weight(d: DisorderRealization, c: CouplingSet, t, s, sp):
    w = 1.0 + 0.0j
    for bidx, (i, j) in enumerate(d.bonds):
        m = int(d.record.m_zz[t - 1, bidx])
        w *= zz_bond_weight(c, m, int(s[i] * s[j]), int(sp[i] * sp[j]))
    return w


def _temporal_weight(d: DisorderRealization, c: CouplingSet, t, s_prev, sp_prev, s, sp):
    w = 1.0 + 0.0j
    scale = c.x_prefactor * np.exp(-(2.0 * c.j_x + c.k_x))
    for i in range(d.L):
        m = int(d.record.m_x[t - 1, i])
        jt = c.j_x_tilde(m)
        u = int(s_prev[i] * s[i])
        v = int(sp_prev[i] * sp[i])
        w *= scale * np.exp(jt * u + np.conj(jt) * v + c.k_x * u * v)
    return w


def brute_force_partition(d: DisorderRealization, c: CouplingSet, s0, s0p, sT, sTp):
    """Exhaustive interior spin sum of exp(-H_m), exact Kraus scale.

    Boundary rows are fixed; use the helpers below for traced or
    state-weighted boundaries.
    """
    L, T = d.L, d.T
    n_interior = 2 * L * (T - 1)
    if n_interior > 24:
        raise TooLarge(f"{n_interior} interior spins is beyond the brute-force budget")
    rows = [(np.asarray(s0), np.asarray(s0p))] + [None] * (T - 1) + [
        (np.asarray(sT), np.asarray(sTp))
    ]
    total = 0.0 + 0.0j
    interior_iter = itertools.product(range(4 ** L), repeat=T - 1)
    for codes in interior_iter:
        for t, code in enumerate(codes, start=1):
            rows[t] = _row_spins(code, L)
        w = 1.0 + 0.0j
        for t in range(1, T + 1):
            s_prev, sp_prev = rows[t - 1]
            s, sp = rows[t]
            w *= _temporal_weight(d, c, t, s_prev, sp_prev, s, sp)
            w *= _row_zz_weight(d, c, t, s, sp)
        total += w
    return total


def brute_force_traced(d: DisorderRealization, c: CouplingSet, initial_state="ghz_plus"):
    """tr rho_m via the brute-force sum with physical boundaries."""
    L, T = d.L, d.T
    n_spins = 2 * L * (T + 1)
    if n_spins > 28:
        raise TooLarge("traced brute force beyond budget")
    init_vec = initial_row_vector(initial_state, L)
    total = 0.0 + 0.0j
    for code0 in np.nonzero(init_vec)[0]:
        w0 = init_vec[code0]
        s0, s0p = _row_spins(int(code0), L)
        for kbit in range(2 ** L):
            codeT = 0
            for i in range(L):
                bit = (kbit >> (L - 1 - i)) & 1
                codeT |= (3 * bit) << (2 * (L - 1 - i))
            sT, sTp = _row_spins(codeT, L)
            total += w0 * brute_force_partition(d, c, s0, s0p, sT, sTp)
    return total


def layer_transfer_matrix(d: DisorderRealization, c: CouplingSet, t):
    """Row-to-row transfer of layer t (4^L x 4^L)."""
    L = d.L
    if L > 5:
        raise MemoryBudget("transfer matrix limited to L <= 5")
    v = np.ones((1, 1), dtype=complex)
    for i in range(L):
        m = int(d.record.m_x[t - 1, i])
        v = np.kron(v, x_transfer_from_couplings(c, m))
    dim = 4 ** L
    diag = np.ones(dim, dtype=complex)
    for code in range(dim):
        s, sp = _row_spins(code, L)
        diag[code] = _row_zz_weight(d, c, t, s, sp)
    return diag[:, None] * v


def transfer_matrix_partition(d: DisorderRealization, c: CouplingSet,
                              initial_state="ghz_plus", final="traced"):
    """Partition value by row-to-row transfer product.

    ``final`` is "traced" (gives tr rho_m exactly) or a row code (int).
    """
    L = d.L
    vec = initial_row_vector(initial_state, L)
    for t in range(1, d.T + 1):
        vec = layer_transfer_matrix(d, c, t) @ vec
    if final == "traced":
        return complex(trace_row_vector(L) @ vec)
    return complex(vec[int(final)])


def nishimori_residual(params: SimParams, initial_state=None) -> float:
    """max over records |p_m - Z_m / sum Z| (Born rule == Nishimori line)."""
    from .dense import enumerate_trajectories

    init = initial_state or params.initial_state
    branches = enumerate_trajectories(params)
    if params.lambda_x == 0.0:
        z_vals = np.array(
            [rbim_reduction(params, t.record)[1].real for t, _ in branches]
        )
    else:
        c = couplings_from_params(params.lambda_x, params.lambda_zz, params.q_x, params.q_zz)
        z_vals = np.array(
            [
                transfer_matrix_partition(
                    DisorderRealization.from_params(params, t.record), c, init
                ).real
                for t, _ in branches
            ]
        )
    p_vals = np.array([np.exp(t.log_born_weight) for t, _ in branches])
    z_norm = z_vals / z_vals.sum()
    return float(np.max(np.abs(p_vals - z_norm)))


# -- Kramers-Wannier weights and record-level duality -------------------------


@dataclass(frozen=True)
class DualCouplings:
    w_bar: float
    t_bar: float


def potts_bond_weights(c: CouplingSet, m: int, bond_class: str):
    """(w, t) of one bond class in the four-state (Potts-like) rewriting.

    Spatial: J0 = 2 j_zz m - 2 k_zz, K0 = 4 k_zz.  Temporal: exp(J1) =
    m exp(2 j_x - 2 k_x), K1 = 4 k_x.  Only the rotation-free case has this
    form.
    """
    if bond_class == "spatial":
        j = 2.0 * c.j_zz * m - 2.0 * c.k_zz
        e_j, w = np.exp(j), np.expm1(j)
        k = 4.0 * c.k_zz
    elif bond_class == "temporal":
        mag = np.exp(2.0 * c.j_x - 2.0 * c.k_x)
        e_j = m * mag
        w = np.expm1(2.0 * c.j_x - 2.0 * c.k_x) if m > 0 else -mag - 1.0
        k = 4.0 * c.k_x
    else:
        raise ValueError(f"unknown bond class {bond_class!r}")
    if w == 0.0:
        raise SingularWeight("w = 0 bond weight")
    # stable form of (1 - 2 e^J + e^{2J+K}) / w^2
    t = 1.0 + e_j ** 2 * np.expm1(k) / w ** 2
    return float(w), float(t)


def kw_dual_couplings(w0, t0, w1, t1):
    """Dual couplings and self-duality residuals.

    Returns (dual_of_spatial, dual_of_temporal, (|w0 w1 t1 - 2|, |t0 - t1|)).
    """
    for val in (w0, t0, w1, t1):
        if not np.isfinite(val) or val == 0.0:
            raise SingularWeight("weights must be finite and nonzero")
    dual0 = DualCouplings(w_bar=2.0 / (w0 * t0), t_bar=t0)
    dual1 = DualCouplings(w_bar=2.0 / (w1 * t1), t_bar=t1)
    residual = (abs(w0 * w1 * t1 - 2.0), abs(t0 - t1))
    return dual0, dual1, residual


def self_duality_residuals(lam: float, q: float):
    """Worst residuals of the two self-duality identities over both outcomes."""
    c = couplings_from_params(lam, lam, q, q)
    worst_w, worst_t = 0.0, 0.0
    for m in (+1, -1):
        w0, t0 = potts_bond_weights(c, m, "spatial")
        w1, t1 = potts_bond_weights(c, m, "temporal")
        _, _, (rw, rt) = kw_dual_couplings(w0, t0, w1, t1)
        worst_w = max(worst_w, rw)
        worst_t = max(worst_t, rt)
    return worst_w, worst_t


def dual_record(record: MeasurementRecord) -> MeasurementRecord:
    """Record relabeling of the exact circuit-level duality on a ring.

    X at site i maps to the dual bond i-1 and the bond b to the dual site
    b, so m~zz[t, i-1] = m^x[t, i] and m~x[t, b] = m^zz[t, b].
    """
    return MeasurementRecord(
        m_x=record.m_zz.copy(), m_zz=np.roll(record.m_x, -1, axis=1)
    )


def record_duality_residual(lambda_x, lambda_zz, L, T) -> float:
    """Exact Kramers-Wannier duality of the record-probability table.

    Compares the standard circuit (GHZ+ initial, X half-layer first) at
    (lambda_x, lambda_zz) against its dual image (|+...+> initial, ZZ
    half-layer first) at the swapped strengths, on the L-site ring at
    q = 0.  Returns the worst |p - p_dual| over the full table.
    """
    from .dense import enumerate_trajectories, plus_product_state

    pa = SimParams(lambda_x=lambda_x, lambda_zz=lambda_zz, L=L, T=T,
                   initial_state="ghz_plus")
    pb = SimParams(lambda_x=lambda_zz, lambda_zz=lambda_x, L=L, T=T)
    table = {}
    for t, _ in enumerate_trajectories(pa, n_bonds=L):
        table[t.record.key()] = np.exp(t.log_born_weight)
    worst = 0.0
    for t, _ in enumerate_trajectories(
        pb, n_bonds=L, zz_first=True, initial=plus_product_state(L)
    ):
        key = dual_record(t.record).key()
        worst = max(worst, abs(np.exp(t.log_born_weight) - table.pop(key)))
    if table:
        raise SingularWeight("record tables failed to pair up")
    return worst


# -- single-species RBIM reductions -------------------------------------------


@dataclass
class SingleSpeciesRbim:
    """One-species random-bond Ising realization on the space-time lattice.

    Couplings are complex in general: spatial[t-1, b] sits on row t's bond
    b and temporal[t-1, i] on the (t-1, i)-(t, i) link.  The initial row is
    pinned all-up; the final row is free (traced) unless ``final_pinned``
    (the dual-variable reduction pins it all-up too).
    """

    spatial: np.ndarray
    temporal: np.ndarray
    bonds: tuple
    final_pinned: bool = False

    @property
    def T(self):
        return self.spatial.shape[0]

    @property
    def L(self):
        return self.temporal.shape[1]

    def copy(self):
        return SingleSpeciesRbim(
            self.spatial.copy(), self.temporal.copy(), self.bonds, self.final_pinned
        )

    def partition(self):
        """Spin sum with s_0 pinned all-up (and s_T too when final_pinned)."""
        L, T = self.L, self.T
        n_free = T - 1 if self.final_pinned else T
        if L * n_free > 20:
            raise TooLarge("single-species brute force beyond budget")
        total = 0.0 + 0.0j
        for codes in itertools.product(range(2 ** L), repeat=n_free):
            rows = [np.ones(L, dtype=int)]
            for code in codes:
                rows.append(np.array([1 - 2 * ((code >> (L - 1 - i)) & 1) for i in range(L)]))
            if self.final_pinned:
                rows.append(np.ones(L, dtype=int))
            expo = 0.0 + 0.0j
            for t in range(1, T + 1):
                s_prev, s = rows[t - 1], rows[t]
                for i in range(L):
                    expo += self.temporal[t - 1, i] * s_prev[i] * s[i]
                for bidx, (i, j) in enumerate(self.bonds):
                    expo += self.spatial[t - 1, bidx] * s[i] * s[j]
            total += np.exp(expo)
        return total

    def frustration(self):
        """Gauge-invariant plaquette labels (sign of the coupling product)."""
        signs_sp = np.sign(np.real(self.spatial)).astype(int)
        signs_tm = np.sign(np.real(self.temporal)).astype(int)
        T, L = self.T, self.L
        out = np.ones((T - 1, len(self.bonds)), dtype=int)
        for t in range(1, T):
            for bidx, (i, j) in enumerate(self.bonds):
                out[t - 1, bidx] = (
                    signs_sp[t - 1, bidx]
                    * signs_sp[t, bidx]
                    * signs_tm[t, i]
                    * signs_tm[t, j]
                )
        return out


def gauge_transform(r: SingleSpeciesRbim, site) -> SingleSpeciesRbim:
    """Flip the four couplings adjacent to interior spin (t, i).

    ``t`` runs 1..T (row 0 is the pinned boundary, so it is excluded).
    The partition value and the frustration labels are invariant.
    """
    t, i = site
    if not (1 <= t <= r.T):
        raise WrongLimit("gauge site must avoid the pinned boundary row")
    out = r.copy()
    out.temporal[t - 1, i] = -out.temporal[t - 1, i]
    if t < r.T:
        out.temporal[t, i] = -out.temporal[t, i]
    for bidx, (a, b) in enumerate(r.bonds):
        if i in (a, b):
            out.spatial[t - 1, bidx] = -out.spatial[t - 1, bidx]
    return out


def rbim_reduction(params: SimParams, record: MeasurementRecord):
    """Single-species reduced partition vs the full doubled value.

    lambda_x = 0: couplings 2 J_zz m^zz (spatial) and 2 J_x (temporal) with
    exp(-4 J_x) = q_x/(1-q_x).  lambda_zz = 0: dual variables with spatial
    K_zz and temporal A_x + i pi (1-m)/4, tanh A_x = ((1-lambda_x)/(1+lambda_x))^2.
    Returns (full, reduced); full/reduced is a record-independent constant.
    """
    from .dense import run_trajectory_with_record

    full = np.exp(run_trajectory_with_record(params, record).log_weight)
    bonds = tuple(params.bonds)
    T, L = record.T, record.L
    if params.lambda_x == 0.0:
        if params.q_x in (0.0, 0.5):
            # q_x = 0 freezes the temporal bonds entirely (classical readout)
            j_x = np.inf if params.q_x == 0.0 else 0.0
        else:
            j_x = -0.25 * np.log(params.q_x / (1.0 - params.q_x))
        j_zz = np.arctanh(params.lambda_zz)
        spatial = 2.0 * j_zz * record.m_zz.astype(float)
        if np.isinf(j_x):
            # all rows locked to the (all-up) boundary
            r = SingleSpeciesRbim(spatial, np.zeros((T, L)), bonds)
            reduced = np.exp(spatial.sum())
            return full, complex(reduced)
        temporal = np.full((T, L), 2.0 * j_x)
        r = SingleSpeciesRbim(spatial, temporal, bonds)
        return full, r.partition()
    if params.lambda_zz == 0.0:
        a_x = np.arctanh(((1.0 - params.lambda_x) / (1.0 + params.lambda_x)) ** 2)
        k_zz = np.arctanh(params.q_zz / (1.0 - params.q_zz))
        spatial = np.full((T, len(bonds)), k_zz, dtype=complex)
        temporal = a_x + (0.25j * np.pi) * (1 - record.m_x.astype(float))
        # the trace boundary locks the dual variables at the final row
        r = SingleSpeciesRbim(spatial, temporal, bonds, final_pinned=True)
        # the i pi/2 branch leaves one factor of -i per flipped outcome in
        # the gate constants; fold it in so the leftover is record-free
        n_minus = int(np.sum(record.m_x < 0))
        return full, r.partition() * (-1j) ** n_minus
    raise WrongLimit("rbim_reduction requires lambda_x = 0 or lambda_zz = 0")


# -- loop expansions (pure measurement dynamics) ------------------------------


def _even_subgraph_sum(n_vertices, edges, weights):
    """Sum over even-degree edge subsets of prod(weights) via the cycle space."""
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = [False] * len(edges)
    adj = {v: [] for v in range(n_vertices)}
    for idx, (a, b) in enumerate(edges):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree[idx] = True
            adj[a].append((b, idx))
            adj[b].append((a, idx))
    # fundamental cycle of each non-tree edge, as an edge bitmask
    def tree_path(a, b):
        # BFS in the spanning forest
        prev = {a: (None, None)}
        queue = [a]
        while queue:
            v = queue.pop()
            if v == b:
                break
            for w, idx in adj[v]:
                if w not in prev:
                    prev[w] = (v, idx)
                    queue.append(w)
        mask = 0
        v = b
        while prev[v][0] is not None:
            v, idx = prev[v]
            mask |= 1 << idx
        return mask

    cycles = []
    for idx, (a, b) in enumerate(edges):
        if not tree[idx]:
            cycles.append((1 << idx) | tree_path(a, b))
    if len(cycles) > 22:
        raise TooLarge("too many independent cycles to enumerate")
    total = 0.0 + 0.0j
    for combo in range(2 ** len(cycles)):
        mask = 0
        k = combo
        ci = 0
        while k:
            if k & 1:
                mask ^= cycles[ci]
            k >>= 1
            ci += 1
        w = 1.0 + 0.0j
        mm = mask
        while mm:
            idx = (mm & -mm).bit_length() - 1
            w *= weights[idx]
            mm &= mm - 1
        total += w
    return total


def _single_copy_lattice(d: DisorderRealization):
    """Pruned single-copy lattice: rows 1..T, open spatial bonds.

    Row 0 is integrated out (its dangling temporal edges contribute
    record-dependent constants handled by the caller), leaving a clean
    planar rectangle whose duality is exact.
    """
    T, L = d.T, d.L
    verts = {}
    for t in range(1, T + 1):
        for i in range(L):
            verts[(t, i)] = len(verts)
    edges = []
    tags = []
    for t in range(1, T + 1):
        for i in range(L - 1):
            edges.append((verts[(t, i)], verts[(t, i + 1)]))
            tags.append(("spatial", t, i))
    for t in range(2, T + 1):
        for i in range(L):
            edges.append((verts[(t - 1, i)], verts[(t, i)]))
            tags.append(("temporal", t, i))
    return len(verts), edges, tags


def _dual_lattice(d: DisorderRealization):
    """Planar dual of the pruned lattice; one extra vertex for the outer face."""
    T, L = d.T, d.L
    faces = {}
    for t in range(2, T + 1):
        for i in range(L - 1):
            faces[(t, i)] = len(faces)
    outer = len(faces)
    n_vertices = outer + 1

    def face_or_outer(key):
        return faces.get(key, outer)

    edges = []
    tags = []
    for t in range(1, T + 1):
        for i in range(L - 1):
            below = face_or_outer((t, i)) if t >= 2 else outer
            above = face_or_outer((t + 1, i)) if t + 1 <= T else outer
            edges.append((below, above))
            tags.append(("spatial", t, i))
    for t in range(2, T + 1):
        for i in range(L):
            left = face_or_outer((t, i - 1)) if i >= 1 else outer
            right = face_or_outer((t, i)) if i <= L - 2 else outer
            edges.append((left, right))
            tags.append(("temporal", t, i))
    return n_vertices, edges, tags


def _single_copy_couplings(d, lambda_x, lambda_zz):
    """Complex couplings J_e of the pruned single-copy lattice."""
    j_sp = np.arctanh(lambda_zz)
    j_tmp = -0.5 * np.log(lambda_x)

    def coupling(tag):
        kind, t, i = tag
        if kind == "spatial":
            return j_sp * float(d.record.m_zz[t - 1, i])
        m = int(d.record.m_x[t - 1, i])
        return j_tmp if m > 0 else j_tmp + 0.5j * np.pi

    return coupling


def single_copy_brute_force(d: DisorderRealization, lambda_x, lambda_zz,
                            q_x=0.0, q_zz=0.0):
    """Free-boundary single-copy partition sum on the pruned lattice."""
    if q_x != 0.0 or q_zz != 0.0:
        raise RequiresPureDynamics("loop expansions need q_x = q_zz = 0")
    T, L = d.T, d.L
    if T * L > 20:
        raise TooLarge("single-copy brute force beyond budget")
    coupling = _single_copy_couplings(d, lambda_x, lambda_zz)
    n, edges, tags = _single_copy_lattice(d)
    js = [coupling(tag) for tag in tags]
    total = 0.0 + 0.0j
    for code in range(2 ** n):
        spins = [1 - 2 * ((code >> v) & 1) for v in range(n)]
        expo = sum(j * spins[a] * spins[b] for j, (a, b) in zip(js, edges))
        total += np.exp(expo)
    return complex(total)


def loop_expansion_partition(d: DisorderRealization, lambda_x, lambda_zz,
                             side="high", q_x=0.0, q_zz=0.0):
    """Single-copy partition value via loop (even-subgraph) expansions.

    ``high`` expands in tanh J on the direct lattice (edge weights
    m^zz lambda_zz spatially and ((1-lambda_x)/(1+lambda_x))^(m^x)
    temporally); ``low`` is the domain-wall expansion on the planar dual
    with the weight classes exchanged.  Both reconstruct the same value as
    ``single_copy_brute_force`` exactly, constants included.
    """
    if q_x != 0.0 or q_zz != 0.0:
        raise RequiresPureDynamics("loop expansions need q_x = q_zz = 0")
    T, L = d.T, d.L
    if (T - 1) * (L - 1) > 9:
        raise TooLarge("loop enumeration limited to 3x3 plaquettes")
    coupling = _single_copy_couplings(d, lambda_x, lambda_zz)
    n, edges, tags = _single_copy_lattice(d)
    js = np.array([coupling(tag) for tag in tags])
    if side == "high":
        weights = np.tanh(js)
        loops = _even_subgraph_sum(n, edges, weights)
        const = (2.0 ** n) * np.prod(np.cosh(js))
        return complex(const * loops)
    if side == "low":
        n_dual, dual_edges, dual_tags = _dual_lattice(d)
        dual_js = [coupling(tag) for tag in dual_tags]
        weights = np.exp(-2.0 * np.array(dual_js))
        walls = _even_subgraph_sum(n_dual, dual_edges, weights)
        const = 2.0 * np.exp(np.sum(js))
        return complex(const * walls)
    raise ValueError(f"unknown side {side!r}")
