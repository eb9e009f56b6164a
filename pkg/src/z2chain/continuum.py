"""Disorder-free continuum models and nonlocal-transformation checks.

The forced-measurement and 2-replica limits are quantum Ashkin-Teller
chains on the doubled space; they map nonlocally onto staggered XXZ chains
and spinless fermions.  Everything here is dense linear algebra at L <= 6,
used to validate those maps by sector-resolved spectra rather than by
operator-string bookkeeping.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateDenominator, DimensionMismatch, MemoryBudget
from .kernels import I2, X, Y, Z

_MAX_L = 6


# -- Pauli assembly helpers ---------------------------------------------------


def _op_on(ops, n):
    """Tensor product over n qubits with ``ops`` = {site: 2x2}."""
    out = np.array([[1.0 + 0.0j]])
    for k in range(n):
        out = np.kron(out, ops.get(k, I2))
    return out


def pauli_string(n, **site_ops):
    return _op_on(site_ops, n)


def _doubled_ops(L):
    """X_i, X'_i, Z_i Z_{i+1}, Z'_i Z'_{i+1} on [ket 0..L-1, bra 0..L-1]."""
    n = 2 * L

    def x_ket(i):
        return _op_on({i: X}, n)

    def x_bra(i):
        return _op_on({L + i: X}, n)

    def zz_ket(i, j):
        return _op_on({i: Z, j: Z}, n)

    def zz_bra(i, j):
        return _op_on({L + i: Z, L + j: Z}, n)

    return x_ket, x_bra, zz_ket, zz_bra


@dataclass(frozen=True)
class HamiltonianSpec:
    """What to build: model kind, couplings, size, boundary."""

    kind: str
    couplings: dict
    L: int
    boundary: str = "open"

    def __post_init__(self):
        if self.L > _MAX_L:
            raise MemoryBudget(f"dense Hamiltonians limited to L <= {_MAX_L}")


def _bonds(L, boundary):
    bonds = [(i, i + 1) for i in range(L - 1)]
    if boundary == "periodic":
        bonds.append((L - 1, 0))
    return bonds


def build_hamiltonian(spec: HamiltonianSpec) -> np.ndarray:
    """Dense matrix of the requested model (Hermitian unless theta-extended)."""
    kind, c, L = spec.kind, spec.couplings, spec.L
    if kind in ("ashkin_teller_h1", "ashkin_teller_h2"):
        x_ket, x_bra, zz_ket, zz_bra = _doubled_ops(L)
        n = 2 * L
        dim = 2 ** n
        h = np.zeros((dim, dim), dtype=complex)
        if kind == "ashkin_teller_h1":
            cx, czz = c["lambda_x"], c["lambda_zz"]
            cxx, czzzz = c.get("q_x", 0.0), c.get("q_zz", 0.0)
        else:
            cx, czz = c["lambda_x"] ** 2, c["lambda_zz"] ** 2
            cxx = c["lambda_x"] ** 2 + c.get("q_x", 0.0)
            czzzz = c["lambda_zz"] ** 2 + c.get("q_zz", 0.0)
        for i in range(L):
            h -= cx * (x_ket(i) + x_bra(i))
            h -= cxx * (x_ket(i) @ x_bra(i))
        for (i, j) in _bonds(L, spec.boundary):
            h -= czz * (zz_ket(i, j) + zz_bra(i, j))
            h -= czzzz * (zz_ket(i, j) @ zz_bra(i, j))
        return h
    if kind == "staggered_xxz":
        n = 2 * L
        dim = 2 ** n
        h = np.zeros((dim, dim), dtype=complex)
        jj, d1, d2, kk = c["J"], c["Delta1"], c["Delta2"], c["K"]
        n_bonds = n if spec.boundary == "periodic" else n - 1
        for bond in range(n_bonds):
            a, b = bond, (bond + 1) % n
            stag = -1.0 if (bond + 1) % 2 else 1.0  # bond 0 is "site 1": odd
            jn = jj - stag * d1
            kn = kk - stag * d2
            h += jn * (_op_on({a: X, b: X}, n) + _op_on({a: Y, b: Y}, n))
            h += kn * _op_on({a: Z, b: Z}, n)
        return h
    if kind == "jw_fermion":
        return _fermion_hamiltonian(spec)
    if kind == "tfim_q1":
        dim = 2 ** L
        h = np.zeros((dim, dim), dtype=complex)
        for (i, j) in _bonds(L, spec.boundary):
            h -= c["J"] * _op_on({i: Z, j: Z}, L)
        for i in range(L):
            h -= c["h"] * _op_on({i: X}, L)
        return h
    raise ValueError(f"unknown Hamiltonian kind {spec.kind!r}")


# -- Majorana / complex-fermion construction ---------------------------------


def majorana_pairs(L):
    """Hermitian Majoranas (eta_j, gamma_j) per species on the doubled space.

    Built recursively from the defining relations X_j = i eta_j gamma_j and
    Z_j Z_{j+1} = i eta_j gamma_{j+1}; the primed species carries the ket
    parity string so the two species anticommute.
    """
    x_ket, x_bra, zz_ket, zz_bra = _doubled_ops(L)
    n = 2 * L

    def build(x_of, zz_of):
        gammas, etas = [], []
        gamma = None
        for j in range(L):
            if gamma is None:
                gamma = _op_on({0: Z} if x_of is x_ket else {L: Z}, n)
            etas.append(-1.0j * x_of(j) @ gamma)
            gammas.append(gamma)
            if j + 1 < L:
                gamma = -1.0j * etas[j] @ zz_of(j, j + 1)
        return etas, gammas

    etas, gammas = build(x_ket, zz_ket)
    etas_p0, gammas_p0 = build(x_bra, zz_bra)
    parity = _op_on({}, n)
    for j in range(L):
        parity = parity @ x_ket(j)
    etas_p = [parity @ m for m in etas_p0]
    gammas_p = [parity @ m for m in gammas_p0]
    return (etas, gammas), (etas_p, gammas_p)


def complex_fermions(L):
    """Dirac modes a_1..a_{2L} coupling the ket and bra Majoranas."""
    (etas, gammas), (etas_p, gammas_p) = majorana_pairs(L)
    modes = [None] * (2 * L)
    for j in range(L):
        modes[2 * j + 1] = 0.5 * (etas[j] + 1.0j * etas_p[j])          # a_{2j}
        modes[2 * j] = 0.5j * (gammas[j] + 1.0j * gammas_p[j])         # a_{2j-1}
    return modes


def _fermion_hamiltonian(spec: HamiltonianSpec) -> np.ndarray:
    """H = -2 sum J_n (a+_n a_{n+1} + h.c.) + sum K_n n-n interactions.

    ``couplings`` carries arrays J (length 2L-1 or 2L), K, and optionally
    theta for the non-Hermitian coherent extension -i sum theta_n
    (a_n a_{n+1} + h.c.).
    """
    L = spec.L
    modes = complex_fermions(L)
    n_modes = 2 * L
    js = np.asarray(spec.couplings["J"], dtype=float)
    ks = np.asarray(spec.couplings["K"], dtype=float)
    thetas = spec.couplings.get("theta")
    dim = modes[0].shape[0]
    h = np.zeros((dim, dim), dtype=complex)
    n_bonds = n_modes if spec.boundary == "periodic" else n_modes - 1
    eye = np.eye(dim)
    number = [m.conj().T @ m for m in modes]
    for bond in range(n_bonds):
        a, b = bond, (bond + 1) % n_modes
        hop = modes[a].conj().T @ modes[b]
        h += -2.0 * js[bond] * (hop + hop.conj().T)
        h += ks[bond] * (2.0 * number[a] - eye) @ (2.0 * number[b] - eye)
        if thetas is not None and thetas[bond] != 0.0:
            pair = modes[a] @ modes[b]
            h += -1.0j * thetas[bond] * (pair + pair.conj().T)
    return h


def forced_coupling_arrays(L, lambda_x, lambda_zz, q_x=0.0, q_zz=0.0,
                           theta_x=None, theta_zz=None, boundary="open"):
    """Staggered J_n/K_n (theta_n) arrays of the forced-measurement chain."""
    n_modes = 2 * L
    n_bonds = n_modes if boundary == "periodic" else n_modes - 1
    js = np.empty(n_bonds)
    ks = np.empty(n_bonds)
    ths = np.zeros(n_bonds) if (theta_x or theta_zz) else None
    for bond in range(n_bonds):
        odd = (bond % 2) == 0  # bond 0 joins modes 1,2 (1-based): odd n
        js[bond] = lambda_x if odd else lambda_zz
        ks[bond] = q_x if odd else q_zz
        if ths is not None:
            ths[bond] = (theta_x or 0.0) if odd else (theta_zz or 0.0)
    out = {"J": js, "K": ks}
    if ths is not None:
        out["theta"] = ths
    return out


# -- circuit -> XXZ parameter maps --------------------------------------------


def xxz_params_from_circuit(kind, lambda_x, lambda_zz, q_x=0.0, q_zz=0.0):
    """Staggered-XXZ couplings (J, Delta1, Delta2, K) of the two limits."""
    if kind == "forced":
        den = lambda_x + lambda_zz
        if den <= 0.0:
            raise DegenerateDenominator("lambda_x + lambda_zz must be positive")
        j = 0.5 * den
        d1 = 0.5 * (lambda_x - lambda_zz)
        d2 = 0.5 * (q_x - q_zz)
        k = 0.5 * (q_x + q_zz)
        return j, d1, d2, k
    if kind == "replica2":
        den = lambda_x ** 2 + lambda_zz ** 2
        if den <= 0.0:
            raise DegenerateDenominator("lambda_x^2 + lambda_zz^2 must be positive")
        j = 0.5 * den
        d1 = 0.5 * (lambda_x ** 2 - lambda_zz ** 2)
        d2 = d1 + 0.5 * (q_x - q_zz)
        k = j + 0.5 * (q_x + q_zz)
        return j, d1, d2, k
    raise ValueError(f"unknown kind {kind!r}")


# -- symmetry sectors and spectral comparison ---------------------------------


def sector_basis(op: np.ndarray, value: float, tol=1e-9) -> np.ndarray:
    """Orthonormal columns spanning the eigenspace of ``op`` at ``value``."""
    vals, vecs = np.linalg.eigh(op)
    cols = vecs[:, np.abs(vals - value) < tol]
    if cols.shape[1] == 0:
        raise DimensionMismatch(f"empty symmetry sector at {value}")
    return cols


def symmetry_operator(name: str, L: int) -> np.ndarray:
    """Named symmetry operators used for sector filters."""
    n = 2 * L
    if name == "xbar_ket":
        return _op_on({k: X for k in range(L)}, n)
    if name == "xbar_bra":
        return _op_on({L + k: X for k in range(L)}, n)
    if name == "charge":
        out = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for k in range(n):
            out += _op_on({k: Z}, n)
        return out
    raise ValueError(f"unknown symmetry {name!r}")


def project_sectors(h: np.ndarray, filters) -> np.ndarray:
    """Restrict ``h`` to the joint eigenspace of the (op, value) filters."""
    basis = None
    for op, value in filters:
        if basis is not None:
            op = basis.conj().T @ op @ basis
        cols = sector_basis(op, value)
        basis = cols if basis is None else basis @ cols
    if basis is None:
        return h
    return basis.conj().T @ h @ basis


def spectral_match(h_a: np.ndarray, h_b: np.ndarray, filters_a=None,
                   filters_b=None) -> float:
    """Max deviation of sorted (sector-filtered) spectra of two models."""
    if filters_a:
        h_a = project_sectors(h_a, filters_a)
    if filters_b:
        h_b = project_sectors(h_b, filters_b)
    ev_a = np.sort(np.linalg.eigvalsh(h_a))
    ev_b = np.sort(np.linalg.eigvalsh(h_b))
    if ev_a.shape != ev_b.shape:
        raise DimensionMismatch(
            f"sector dimensions differ: {ev_a.shape} vs {ev_b.shape}"
        )
    return float(np.max(np.abs(ev_a - ev_b)))


def u1_charge_residual(L, lambda_x, lambda_zz, q_x=0.0, q_zz=0.0,
                       theta_x=0.0, theta_zz=0.0) -> float:
    """max ||[G, Q]|| over the gate generators in the sigma representation.

    Q = sum sigma^z over the 2L transformed sites.  Measurement and
    dephasing generators commute with Q; the rotation generators
    theta (sigma^x sigma^x - sigma^y sigma^y) do not.
    """
    n = 2 * L
    q_op = symmetry_operator("charge", L)
    gens = []

    def xy_bond(a, b, sign=1.0):
        return _op_on({a: X, b: X}, n) + sign * _op_on({a: Y, b: Y}, n)

    for i in range(L):
        a, b = 2 * i, 2 * i + 1
        if lambda_x > 0.0:
            gens.append(np.arctanh(lambda_x) * xy_bond(a, b))
        if q_x > 0.0:
            gens.append(-np.arctanh(q_x / (1 - q_x)) * _op_on({a: Z, b: Z}, n))
        if theta_x != 0.0 and lambda_x >= 0.0:
            gens.append(theta_x * xy_bond(a, b, sign=-1.0))
    for i in range(L - 1):
        a, b = 2 * i + 1, 2 * i + 2
        if lambda_zz > 0.0:
            gens.append(np.arctanh(lambda_zz) * xy_bond(a, b))
        if q_zz > 0.0:
            gens.append(-np.arctanh(q_zz / (1 - q_zz)) * _op_on({a: Z, b: Z}, n))
        if theta_zz != 0.0:
            gens.append(theta_zz * xy_bond(a, b, sign=-1.0))
    worst = 0.0
    for g in gens:
        comm = g @ q_op - q_op @ g
        worst = max(worst, float(np.linalg.norm(comm, 2)))
    return worst


# -- two-replica gate identity -------------------------------------------------


def replica2_gate_identity_residual(lam: float, dt: float, basis: str = "X") -> float:
    """|| sum_m P_m^(x4) / c - exp(dt lam^2 sum_{a<b} O_a O_b) ||_F.

    The weak-measurement strength is sqrt(dt) lam; only even powers of the
    measured operator survive the outcome sum, so the residual is O(dt^2).
    The scalar c is chosen by least squares.
    """
    op = X if basis == "X" else np.kron(Z, Z)
    d = op.shape[0]
    eye = np.eye(d)
    lam_eff = np.sqrt(dt) * lam
    p = {m: (eye + m * lam_eff * op) / np.sqrt(2 * (1 + lam_eff ** 2)) for m in (1, -1)}
    total = np.zeros((d ** 4, d ** 4), dtype=complex)
    for m in (1, -1):
        k = p[m]
        total += np.kron(np.kron(k, k), np.kron(k, k))
    gen = np.zeros_like(total)
    for a in range(4):
        for b in range(a + 1, 4):
            ops = [eye] * 4
            ops[a] = op
            ops[b] = op
            term = np.kron(np.kron(ops[0], ops[1]), np.kron(ops[2], ops[3]))
            gen += term
    target = scipy.linalg.expm(dt * lam ** 2 * gen)
    inv_c = np.real(np.vdot(total, target)) / np.real(np.vdot(total, total))
    return float(np.linalg.norm(inv_c * total - target, "fro"))


# -- deep-phase reference table -------------------------------------------------


def deep_phase_values(L: int = 4):
    """Correlator table of the three paradigmatic steady states.

    Phase 1: pure GHZ; Phase 2: maximally mixed; Phase 3: X-basis product.
    Returns {"strong_zz": (...), "renyi2_zz": (...), "purity": (...)} over
    the phases in order, using the (0, 1) pair.
    """
    from .dense import DoubledState, init_doubled_state

    dim = 2 ** L
    psi_plus = np.full(dim, 1.0 / np.sqrt(dim), dtype=complex)
    states = [
        init_doubled_state("ghz_plus", L),
        init_doubled_state("maximally_mixed", L),
        DoubledState(np.outer(psi_plus, psi_plus.conj()), L),
    ]
    strong = tuple(float(np.real(st.zz_strong_matrix()[0, 1])) for st in states)
    renyi = tuple(float(np.real(st.zz_renyi2_matrix()[0, 1])) for st in states)
    purity = tuple(float(st.renyi2_purity()) for st in states)
    return {"strong_zz": strong, "renyi2_zz": renyi, "purity": purity}


# -- classical-limit two-replica cross-check -------------------------------------


def tfim_replica_correlator(L, pair, lam_zz, q_x, tau, boundary="open"):
    """<gamma^z_i gamma^z_j> under exp(-tau H) from the all-+ state.

    H = -4 lam_zz^2 sum ZZ - 2 q_x sum X on L sites: the two-replica image
    of the lambda_x = 0 dynamics in the time continuum.  The bond coupling
    carries a multiplicity of four: each of the four cross-replica pairings
    of the outcome-summed weak measurement contributes the same ZZ term
    (the two intra-replica pairings are frozen on the Bell sector), and the
    transverse field a multiplicity of two from the per-replica dephasing.
    """
    spec = HamiltonianSpec(
        kind="tfim_q1", couplings={"J": 4.0 * lam_zz ** 2, "h": 2.0 * q_x}, L=L,
        boundary=boundary,
    )
    h = build_hamiltonian(spec)
    prop = scipy.linalg.expm(-tau * h)
    plus = np.full(2 ** L, 2.0 ** (-L / 2), dtype=complex)
    i, j = pair
    zz = _op_on({i: Z, j: Z}, L)
    num = np.real(plus.conj() @ zz @ prop @ plus)
    den = np.real(plus.conj() @ prop @ plus)
    return float(num / den)


def circuit_ea_correlator(L, pair, lam_zz, q_x, dt, steps):
    """Exhaustive sum_m p_m <Z_i Z_j>_m^2 of the Trotterized lambda_x = 0 circuit."""
    from .dense import enumerate_trajectories
    from .model import SimParams

    params = SimParams(
        lambda_x=0.0,
        lambda_zz=float(np.sqrt(dt) * lam_zz),
        q_x=float(dt * q_x),
        q_zz=0.0,
        L=L,
        T=steps,
        initial_state="maximally_mixed",
    )
    total = 0.0
    i, j = pair
    for traj, st in enumerate_trajectories(params):
        w = np.exp(traj.log_born_weight)
        if w == 0.0:
            continue
        val = st.zz_strong_matrix()[i, j]
        total += w * val ** 2
    return float(total)
