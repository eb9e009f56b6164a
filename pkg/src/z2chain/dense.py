"""Exact doubled-state evolution for small chains.

The density matrix is stored as a full 2^N x 2^N array (N = L system qubits
plus an optional reference qubit appended as the last site).  This engine is
the ground-truth oracle for the MPS engine and for the partition-function
module.  Enforced memory budget: L <= 10.
"""

import numpy as np

from .errors import (
    InvalidSite,
    LeakageTooLarge,
    MemoryBudget,
    OutOfRange,
    TooManyOutcomes,
    ZeroTrace,
)
from .kernels import I2, X, Z, born_split, x_weak_projector
from .model import MeasurementRecord, SimParams, SpinConfig, TrajectoryRecord

_MAX_L_DENSE = 10
_MAX_ENUM_BITS = 22


class DoubledState:
    """Unnormalized |rho>> with a separate log-weight accumulator.

    ``rho`` is kept trace-normalized during trajectory evolution; the true
    (unnormalized) trace is exp(log_weight) * tr(rho).
    """

    def __init__(self, rho, L, has_reference=False, log_weight=0.0):
        self.rho = np.asarray(rho, dtype=complex)
        self.L = L
        self.has_reference = has_reference
        self.log_weight = log_weight

    @property
    def n_sites(self):
        return self.L + (1 if self.has_reference else 0)

    @property
    def amplitudes(self):
        """The doubled state as a flat complex vector of length 4^n_sites."""
        return self.rho.reshape(-1)

    def copy(self):
        return DoubledState(self.rho.copy(), self.L, self.has_reference, self.log_weight)

    def raw_trace(self):
        return np.trace(self.rho)

    def trace_value(self):
        return np.exp(self.log_weight) * np.trace(self.rho)

    def raw_purity(self):
        """tr(rho^2) / tr(rho)^2 of the stored matrix (scale-invariant)."""
        tr = np.trace(self.rho)
        if abs(tr) == 0.0:
            raise ZeroTrace("state has zero trace")
        return float(np.vdot(self.rho, self.rho).real) / abs(tr) ** 2

    def normalized(self):
        tr = np.trace(self.rho).real
        if tr <= 0.0:
            raise ZeroTrace("cannot normalize a zero-trace state")
        return self.rho / tr

    def hermiticity_defect(self):
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    # -- local operator application -------------------------------------

    def _tensor(self):
        n = self.n_sites
        return self.rho.reshape((2,) * (2 * n))

    def _set_tensor(self, t):
        dim = 2 ** self.n_sites
        self.rho = t.reshape(dim, dim)

    def _apply_axes(self, mat, axes):
        """Contract ``mat`` into the given tensor axes of rho (in place)."""
        t = self._tensor()
        k = len(axes)
        m = mat.reshape((2,) * (2 * k))
        t = np.tensordot(m, t, axes=(list(range(k, 2 * k)), list(axes)))
        t = np.moveaxis(t, list(range(k)), list(axes))
        self._set_tensor(t)

    def conjugate_by(self, mat, sites):
        """rho -> M rho M^dagger with M acting on the listed qubits."""
        n = self.n_sites
        self._apply_axes(mat, list(sites))
        self._apply_axes(mat.conj(), [n + s for s in sites])

    def ket_multiply(self, mat, sites):
        """rho -> M rho (ket side only); used for symmetry checks."""
        self._apply_axes(mat, list(sites))

    def bra_multiply(self, mat, sites):
        """rho -> rho M^dagger (bra side only)."""
        n = self.n_sites
        self._apply_axes(mat.conj(), [n + s for s in sites])

    def expect_ket(self, mat, sites):
        """tr(rho O)/tr(rho) for O acting on the listed qubits."""
        tr = np.trace(self.rho)
        if abs(tr) == 0.0:
            raise ZeroTrace("state has zero trace")
        work = self.copy()
        work.ket_multiply(mat, sites)
        return np.trace(work.rho) / tr

    # -- bookkeeping ------------------------------------------------------

    def _bond_sites(self, bond):
        if not (0 <= bond <= self.L - 1):
            raise InvalidSite(f"bond {bond} out of range for L={self.L}")
        return (bond, (bond + 1) % self.L)

    def _site_checked(self, site):
        if not (0 <= site < self.L):
            raise InvalidSite(f"site {site} out of range for L={self.L}")
        return site

    # -- observable primitives (shared interface with the MPS engine) ----

    def zz_strong_matrix(self):
        """Matrix of <Z_i Z_j> = tr(rho Z_i Z_j)/tr(rho), diagonal = 1."""
        n = self.n_sites
        dim = 2 ** n
        d = np.real(np.diag(self.rho))
        tr = d.sum()
        if tr == 0.0:
            raise ZeroTrace("state has zero trace")
        idx = np.arange(dim)
        signs = np.empty((dim, self.L))
        for i in range(self.L):
            bit = (idx >> (n - 1 - i)) & 1
            signs[:, i] = 1.0 - 2.0 * bit
        weighted = signs * d[:, None]
        m = weighted.T @ signs / tr
        np.fill_diagonal(m, 1.0)
        return m

    def zz_renyi2_matrix(self):
        """Matrix of tr(rho Z_iZ_j rho Z_iZ_j)/tr(rho^2), diagonal = 1."""
        n = self.n_sites
        dim = 2 ** n
        w = np.abs(self.rho) ** 2
        p2 = w.sum()
        if p2 == 0.0:
            raise ZeroTrace("state has zero purity")
        idx = np.arange(dim)
        signs = np.empty((dim, self.L))
        for i in range(self.L):
            bit = (idx >> (n - 1 - i)) & 1
            signs[:, i] = 1.0 - 2.0 * bit
        out = np.empty((self.L, self.L))
        for i in range(self.L):
            for j in range(i, self.L):
                d = signs[:, i] * signs[:, j]
                out[i, j] = out[j, i] = float(d @ w @ d) / p2
        np.fill_diagonal(out, 1.0)
        return out

    def x_string_strong(self, sites):
        """<prod_{k in sites} X_k> via the trace functional."""
        n = self.n_sites
        dim = 2 ** n
        tr = np.trace(self.rho)
        if abs(tr) == 0.0:
            raise ZeroTrace("state has zero trace")
        mask = 0
        for k in sites:
            mask ^= 1 << (n - 1 - k)
        idx = np.arange(dim)
        val = self.rho[idx, idx ^ mask].sum()
        return val / tr

    def x_string_renyi2(self, sites):
        """<<rho| prod X_k X'_k |rho>> / <<rho|rho>>."""
        n = self.n_sites
        p2 = float(np.vdot(self.rho, self.rho).real)
        if p2 == 0.0:
            raise ZeroTrace("state has zero purity")
        mask = 0
        for k in sites:
            mask ^= 1 << (n - 1 - k)
        idx = np.arange(2 ** n)
        moved = self.rho[np.ix_(idx ^ mask, idx ^ mask)]
        return np.vdot(self.rho, moved) / p2

    def partial_trace(self, keep):
        """Reduced matrix on the listed sites, normalized to unit trace."""
        n = self.n_sites
        keep = sorted(keep)
        t = self._tensor()
        drop = [s for s in range(n) if s not in keep]
        for s in reversed(drop):
            t = np.trace(t, axis1=s, axis2=t.ndim // 2 + s)
        dim = 2 ** len(keep)
        red = t.reshape(dim, dim)
        tr = np.trace(red).real
        if tr <= 0.0:
            raise ZeroTrace("reduced state has zero trace")
        return red / tr

    def reference_matrix(self):
        from .errors import NoReference

        if not self.has_reference:
            raise NoReference("state carries no reference qubit")
        return self.partial_trace([self.n_sites - 1])

    def renyi2_purity(self, region=None):
        """tr(rho_region^2)/tr(rho)^2 (region defaults to everything)."""
        tr = np.trace(self.rho).real
        if tr == 0.0:
            raise ZeroTrace("state has zero trace")
        if region is None or sorted(region) == list(range(self.n_sites)):
            return float(np.vdot(self.rho, self.rho).real) / tr ** 2
        red = self.partial_trace(region)
        return float(np.vdot(red, red).real)


# -- construction ---------------------------------------------------------


def init_doubled_state(kind: str, L: int) -> DoubledState:
    """Build the initial doubled state for one of the supported kinds."""
    if L < 1:
        raise OutOfRange("L", "L must be >= 1")
    has_ref = kind.endswith("with_reference")
    n = L + (1 if has_ref else 0)
    if L > _MAX_L_DENSE:
        raise MemoryBudget(f"dense engine limited to L <= {_MAX_L_DENSE}")
    dim = 2 ** n
    if kind == "ghz_plus":
        psi = np.zeros(dim, dtype=complex)
        psi[0] = psi[-1] = 1.0 / np.sqrt(2.0)
        rho = np.outer(psi, psi.conj())
    elif kind == "all_up":
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
    elif kind == "maximally_mixed":
        rho = np.eye(dim, dtype=complex) / dim
    elif kind == "ghz_with_reference":
        # (|up...up>_Q |up>_R + |down...down>_Q |down>_R)/sqrt(2)
        psi = np.zeros(dim, dtype=complex)
        psi[0] = psi[-1] = 1.0 / np.sqrt(2.0)
        rho = np.outer(psi, psi.conj())
    elif kind == "all_up_with_reference":
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
    elif kind == "plus_product":
        psi = np.full(dim, 2.0 ** (-n / 2), dtype=complex)
        rho = np.outer(psi, psi.conj())
    else:
        raise OutOfRange("initial_state", f"unknown initial state {kind!r}")
    return DoubledState(rho, L, has_reference=has_ref)


# -- channel elements ------------------------------------------------------


def apply_weak_projector(st, site, basis, outcome, lam):
    """Apply P_outcome (x) P_outcome^* exactly; state left unnormalized."""
    if basis == "X":
        p = x_weak_projector(lam, outcome)
        st.conjugate_by(p, [st._site_checked(site)])
    elif basis == "ZZ":
        pair = st._bond_sites(site)
        p = np.eye(4) + outcome * lam * np.kron(Z, Z)
        p /= np.sqrt(2.0 * (1.0 + lam * lam))
        st.conjugate_by(p, list(pair))
    else:
        raise InvalidSite(f"unknown basis {basis!r}")
    return st


def born_probability(st, site, basis, lam):
    """Born probabilities (p_plus, p_minus) for a weak measurement."""
    if basis == "X":
        ev = st.expect_ket(X, [st._site_checked(site)]).real
    elif basis == "ZZ":
        pair = st._bond_sites(site)
        ev = st.expect_ket(np.kron(Z, Z), list(pair)).real
    else:
        raise InvalidSite(f"unknown basis {basis!r}")
    return born_split(ev, lam)


def apply_dephasing(st, site, basis, q):
    """rho -> (1-q) rho + q P rho P with P = X_i or Z_i Z_{i+1}."""
    if q == 0.0:
        return st
    if basis == "X":
        flipped = st.copy()
        flipped.conjugate_by(X, [st._site_checked(site)])
    elif basis == "ZZ":
        pair = st._bond_sites(site)
        flipped = st.copy()
        flipped.conjugate_by(np.kron(Z, Z), list(pair))
    else:
        raise InvalidSite(f"unknown basis {basis!r}")
    st.rho = (1.0 - q) * st.rho + q * flipped.rho
    return st


def apply_rotation(st, site, basis, theta):
    """rho -> U rho U^dagger with U = exp(i theta X_i) or exp(i theta ZZ)."""
    if theta == 0.0:
        return st
    if basis == "X":
        u = np.cos(theta) * I2 + 1.0j * np.sin(theta) * X
        st.conjugate_by(u, [st._site_checked(site)])
    elif basis == "ZZ":
        pair = st._bond_sites(site)
        zz = np.kron(Z, Z)
        u = np.cos(theta) * np.eye(4) + 1.0j * np.sin(theta) * zz
        st.conjugate_by(u, list(pair))
    else:
        raise InvalidSite(f"unknown basis {basis!r}")
    return st


# -- trajectory evolution --------------------------------------------------


def _measure_and_apply(st, site, basis, lam, outcome):
    """Apply the sampled weak projector and renormalize by its Born weight."""
    p_plus, p_minus = born_probability(st, site, basis, lam)
    prob = p_plus if outcome > 0 else p_minus
    apply_weak_projector(st, site, basis, outcome, lam)
    tr = np.trace(st.rho).real
    if tr > 0.0:
        st.rho /= tr
        st.log_weight += np.log(tr)
    else:
        st.rho[:] = 0.0
        st.log_weight = -np.inf
    return prob


def _x_half_layer(st, params, m_x_row, sample_rng):
    for i in range(params.L):
        if params.theta_x != 0.0:
            apply_rotation(st, i, "X", params.theta_x)
        if sample_rng is not None:
            p_plus, _ = born_probability(st, i, "X", params.lambda_x)
            m_x_row[i] = 1 if sample_rng.random() < p_plus else -1
        _measure_and_apply(st, i, "X", params.lambda_x, int(m_x_row[i]))
        apply_dephasing(st, i, "X", params.q_x)


def _zz_half_layer(st, params, m_zz_row, sample_rng, n_bonds):
    for b in range(n_bonds):
        if params.theta_zz != 0.0:
            apply_rotation(st, b, "ZZ", params.theta_zz)
        if sample_rng is not None:
            p_plus, _ = born_probability(st, b, "ZZ", params.lambda_zz)
            m_zz_row[b] = 1 if sample_rng.random() < p_plus else -1
        _measure_and_apply(st, b, "ZZ", params.lambda_zz, int(m_zz_row[b]))
        apply_dephasing(st, b, "ZZ", params.q_zz)


def _layer(st, params, t, m_x_row, m_zz_row, sample_rng=None, n_bonds=None,
           zz_first=False):
    """One circuit layer; outcomes are read from the rows or sampled into them.

    ``zz_first`` runs the ZZ half before the X half (the Kramers-Wannier
    image of the standard order).
    """
    if n_bonds is None:
        n_bonds = params.n_bonds
    if zz_first:
        _zz_half_layer(st, params, m_zz_row, sample_rng, n_bonds)
        _x_half_layer(st, params, m_x_row, sample_rng)
    else:
        _x_half_layer(st, params, m_x_row, sample_rng)
        _zz_half_layer(st, params, m_zz_row, sample_rng, n_bonds)


def _x_step(st, params, m_x_row, rng, i):
    if params.theta_x != 0.0:
        apply_rotation(st, i, "X", params.theta_x)
    if rng is not None:
        p_plus, _ = born_probability(st, i, "X", params.lambda_x)
        m_x_row[i] = 1 if rng.random() < p_plus else -1
    _measure_and_apply(st, i, "X", params.lambda_x, int(m_x_row[i]))
    apply_dephasing(st, i, "X", params.q_x)


def _zz_step(st, params, m_zz_row, rng, b):
    if params.theta_zz != 0.0:
        apply_rotation(st, b, "ZZ", params.theta_zz)
    if rng is not None:
        p_plus, _ = born_probability(st, b, "ZZ", params.lambda_zz)
        m_zz_row[b] = 1 if rng.random() < p_plus else -1
    _measure_and_apply(st, b, "ZZ", params.lambda_zz, int(m_zz_row[b]))
    apply_dephasing(st, b, "ZZ", params.q_zz)


def _layer_blockwise(st, params, m_x_row, m_zz_row, rng, ascending):
    """The MPS engine's block-local gate order (same layer operator).

    Only disjoint-support gates are transposed relative to the standard
    X-then-ZZ order, so states and joint outcome statistics are identical;
    matching the order makes shared-seed records engine-independent.
    """
    L = params.L
    if ascending:
        _x_step(st, params, m_x_row, rng, 0)
        for b in range(L - 1):
            _x_step(st, params, m_x_row, rng, b + 1)
            _zz_step(st, params, m_zz_row, rng, b)
    else:
        _x_step(st, params, m_x_row, rng, L - 1)
        for b in range(L - 2, -1, -1):
            _x_step(st, params, m_x_row, rng, b)
            _zz_step(st, params, m_zz_row, rng, b)
    if params.boundary == "periodic":
        _zz_step(st, params, m_zz_row, rng, L - 1)


def run_trajectory_dense(params: SimParams, seed: int):
    """Sample one Born trajectory exactly.

    Returns (final DoubledState, TrajectoryRecord).  The state is kept at
    unit trace with the accumulated Born weight in ``log_weight``.
    """
    if params.L > _MAX_L_DENSE:
        raise MemoryBudget(f"dense engine limited to L <= {_MAX_L_DENSE}")
    st = init_doubled_state(params.initial_state, params.L)
    rng = np.random.default_rng(seed)
    m_x = np.zeros((params.T, params.L), dtype=np.int8)
    m_zz = np.zeros((params.T, params.n_bonds), dtype=np.int8)
    for t in range(params.T):
        _layer_blockwise(st, params, m_x[t], m_zz[t], rng, ascending=(t % 2 == 0))
    record = MeasurementRecord(m_x=m_x, m_zz=m_zz)
    traj = TrajectoryRecord(record=record, log_born_weight=st.log_weight, seed=seed)
    return st, traj


def run_trajectory_with_record(params: SimParams, record: MeasurementRecord,
                               zz_first=False, initial=None):
    """Replay a fixed outcome record (no sampling); used by oracles."""
    st = initial.copy() if initial is not None else init_doubled_state(
        params.initial_state, params.L
    )
    n_bonds = record.m_zz.shape[1]
    for t in range(params.T):
        _layer(st, params, t, record.m_x[t], record.m_zz[t], sample_rng=None,
               n_bonds=n_bonds, zz_first=zz_first)
    return st


def plus_product_state(L: int) -> DoubledState:
    """|+...+><+...+| as a doubled state (the KW image of GHZ+)."""
    dim = 2 ** L
    psi = np.full(dim, 1.0 / np.sqrt(dim), dtype=complex)
    return DoubledState(np.outer(psi, psi.conj()), L)


def enumerate_trajectories(params: SimParams, n_bonds=None, zz_first=False,
                           initial=None):
    """Exhaustively enumerate all outcome records with their exact weights.

    Returns a list of (TrajectoryRecord, DoubledState); Born weights are
    exp(log_born_weight) and sum to one.  ``n_bonds`` overrides the bond
    count (the L = 2 ring used by the duality experiment carries the same
    pair twice), ``zz_first`` flips the in-layer order, and ``initial``
    replaces the initial state; all three are the knobs of the exact
    Kramers-Wannier image of a circuit.
    """
    if n_bonds is None:
        n_bonds = params.n_bonds
    n_meas = params.T * (params.L + n_bonds)
    if n_meas > _MAX_ENUM_BITS:
        raise TooManyOutcomes(
            f"{n_meas} binary outcomes exceed the 2^{_MAX_ENUM_BITS} budget"
        )
    schedule = []
    for t in range(params.T):
        xs = [("X", t, i) for i in range(params.L)]
        zs = [("ZZ", t, b) for b in range(n_bonds)]
        schedule.extend(zs + xs if zz_first else xs + zs)

    results = []
    st0 = initial.copy() if initial is not None else init_doubled_state(
        params.initial_state, params.L
    )

    def descend(st, pos, m_x, m_zz):
        if pos == len(schedule):
            record = MeasurementRecord(m_x=m_x.copy(), m_zz=m_zz.copy())
            results.append(
                (
                    TrajectoryRecord(record=record, log_born_weight=st.log_weight),
                    st.copy(),
                )
            )
            return
        basis, t, k = schedule[pos]
        lam = params.lambda_x if basis == "X" else params.lambda_zz
        q = params.q_x if basis == "X" else params.q_zz
        theta = params.theta_x if basis == "X" else params.theta_zz
        for outcome in (+1, -1):
            if basis == "X":
                m_x[t, k] = outcome
            else:
                m_zz[t, k] = outcome
            if st.log_weight == -np.inf:
                descend(st, pos + 1, m_x, m_zz)
                continue
            branch = st.copy()
            if theta != 0.0:
                apply_rotation(branch, k, basis, theta)
            _measure_and_apply(branch, k, basis, lam, outcome)
            apply_dephasing(branch, k, basis, q)
            descend(branch, pos + 1, m_x, m_zz)

    m_x = np.zeros((params.T, params.L), dtype=np.int8)
    m_zz = np.zeros((params.T, n_bonds), dtype=np.int8)
    descend(st0, 0, m_x, m_zz)
    return results


# -- perfect readout and the code space ------------------------------------


def apply_perfect_zz_layer(st: DoubledState, seed: int, periodic: bool = False):
    """Projectively measure Z_i Z_{i+1} on every bond (Born sampled).

    Returns (state, s_T, outcomes) where s_T is the representative spin
    configuration with s_T[0] = +1.  For periodic chains all L bonds are
    measured; the last one is redundant and is asserted consistent.
    """
    rng = np.random.default_rng(seed)
    L = st.L
    bonds = [(i, i + 1) for i in range(L - 1)]
    if periodic:
        bonds.append((L - 1, 0))
    outcomes = []
    zz = np.kron(Z, Z)
    for bi, pair in enumerate(bonds):
        ev = st.expect_ket(zz, list(pair)).real
        p_plus = min(max((1.0 + ev) / 2.0, 0.0), 1.0)
        redundant = periodic and bi == L - 1
        if redundant and not (p_plus < 1e-9 or p_plus > 1.0 - 1e-9):
            raise ZeroTrace("redundant periodic bond outcome is not deterministic")
        outcome = 1 if rng.random() < p_plus else -1
        proj = (np.eye(4) + outcome * zz) / 2.0
        st.conjugate_by(proj, list(pair))
        tr = np.trace(st.rho).real
        if tr <= 0.0:
            raise ZeroTrace("perfect readout produced a zero-trace state")
        st.rho /= tr
        st.log_weight += np.log(tr)
        outcomes.append(outcome)
    s = np.ones(L, dtype=np.int8)
    for i in range(L - 1):
        s[i + 1] = s[i] * outcomes[i]
    if periodic and s[L - 1] * s[0] != outcomes[-1]:
        raise ZeroTrace("inconsistent periodic readout")
    return st, SpinConfig(s=s), np.array(outcomes, dtype=np.int8)


def _config_index(bits, offset_bits=0):
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx << offset_bits


def code_space_matrix(st: DoubledState, s_T: SpinConfig, leak_tol=1e-8):
    """Normalized code-space matrix in the |+-s_T> (x reference) basis.

    Rows are ordered (s,up),(s,down),(-s,up),(-s,down) when a reference is
    present, else (s),(-s).  Raises LeakageTooLarge if weight outside the
    code space exceeds ``leak_tol``.
    """
    L = st.L
    bits_plus = [(1 - int(v)) // 2 for v in s_T.s]
    bits_minus = [1 - b for b in bits_plus]
    if st.has_reference:
        base_p = _config_index(bits_plus, offset_bits=1)
        base_m = _config_index(bits_minus, offset_bits=1)
        sel = [base_p, base_p + 1, base_m, base_m + 1]
    else:
        sel = [_config_index(bits_plus), _config_index(bits_minus)]
    rho = st.normalized()
    sub = rho[np.ix_(sel, sel)]
    leak = 1.0 - np.trace(sub).real
    if leak > leak_tol:
        raise LeakageTooLarge(leak, leak_tol)
    return sub / np.trace(sub).real
