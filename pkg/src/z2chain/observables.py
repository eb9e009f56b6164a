"""Order parameters, information diagnostics, and trajectory averaging.

All entropies are in bits, so the deep-phase plateaus read 1 and 0.  Double
sums over (i, j) include the diagonal i = j, which contributes the constant
1 per site; this shifts no transition and is recorded in output metadata.
"""

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import (
    BadWeights,
    DenseOnly,
    EmptyInput,
    NoReference,
    ZeroDiagonal,
)

LOG2 = np.log(2.0)


def entropy_bits(eigenvalues) -> float:
    """Von Neumann entropy in bits; eigenvalues clamped to [0, 1]."""
    lam = np.clip(np.real(np.asarray(eigenvalues)), 0.0, 1.0)
    lam = lam[lam > 0.0]
    return float(-(lam * np.log2(lam)).sum()) if lam.size else 0.0


def matrix_entropy_bits(rho) -> float:
    return entropy_bits(np.linalg.eigvalsh(rho))


@dataclass
class DefectFreeEnergies:
    """Single- and double-defect free-energy costs of the code-space matrix."""

    delta_f1: complex
    delta_f2: float


@dataclass
class ObservableSet:
    """Per-trajectory diagnostics; unevaluated entries stay None."""

    kappa_ea: Optional[float] = None
    kappa_2: Optional[float] = None
    d_ea: Optional[float] = None
    d_2: Optional[float] = None
    s_r: Optional[float] = None
    i_c: Optional[float] = None
    i_c_renyi2: Optional[float] = None
    defect: Optional[DefectFreeEnergies] = None

    def as_dict(self):
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name != "defect" and getattr(self, f.name) is not None
        }


SCALAR_OBSERVABLES = ("kappa_ea", "kappa_2", "d_ea", "d_2", "s_r", "i_c", "i_c_renyi2")


# -- susceptibilities -------------------------------------------------------


def edwards_anderson_susceptibility(state) -> float:
    """(1/L) sum_{i,j} <Z_i Z_j>^2 with the diagonal included."""
    m = state.zz_strong_matrix()
    return float((m ** 2).sum()) / state.L


def renyi2_susceptibility(state) -> float:
    """(1/L) sum_{i,j} tr(rho ZZ rho ZZ)/tr(rho^2)."""
    m = state.zz_renyi2_matrix()
    return float(m.sum()) / state.L


def _string_sites(i, j, L, periodic):
    """Sites of the disorder string between i and j (empty when i == j)."""
    if i == j:
        return []
    if periodic:
        k = i
        out = []
        while k != j:
            out.append(k)
            k = (k + 1) % L
        return out
    lo, hi = min(i, j), max(i, j)
    return list(range(lo, hi))


def disorder_susceptibilities(state, periodic=False, want_ea=True, want_2=True):
    """Edwards-Anderson and Renyi-2 disorder susceptibilities (D_EA, D_2).

    Each (i, j) term uses the X string from i up to j-1 (increasing k, mod
    L when periodic); the empty i = j string counts 1.  The EA variant
    squares the string expectation (trajectory signs are random, exactly as
    for the order correlator, so only the squared average survives); the
    Renyi-2 functional squares the sign internally and enters linearly.
    Unwanted entries come back as None (the Renyi-2 variant needs a
    two-copy contraction not every engine provides).
    """
    L = state.L
    d_ea = 0.0 if want_ea else None
    d_2 = 0.0 if want_2 else None
    for i in range(L):
        for j in range(L):
            sites = _string_sites(i, j, L, periodic)
            if not sites:
                d_ea = d_ea + 1.0 if want_ea else None
                d_2 = d_2 + 1.0 if want_2 else None
                continue
            if want_ea:
                d_ea += float(np.real(state.x_string_strong(sites))) ** 2
            if want_2:
                d_2 += float(np.real(state.x_string_renyi2(sites)))
    return (d_ea / L if want_ea else None), (d_2 / L if want_2 else None)


# -- information diagnostics ------------------------------------------------


def reference_entropy(state) -> float:
    """Von Neumann entropy (bits) of the 2x2 reduced reference matrix."""
    return matrix_entropy_bits(state.reference_matrix())


def coherent_information(state, variant="exact") -> float:
    """I_c = S(rho_Q) - S(rho_QR) in bits, or its Renyi-2 counterpart."""
    if not state.has_reference:
        raise NoReference("coherent information needs a reference qubit")
    if variant == "renyi2":
        system = list(range(state.L))
        p_q = state.renyi2_purity(system)
        p_qr = state.renyi2_purity(None)
        return float(-np.log2(p_q) + np.log2(p_qr))
    if variant != "exact":
        raise ValueError(f"unknown variant {variant!r}")
    if not hasattr(state, "partial_trace"):
        raise DenseOnly("exact coherent information requires the dense engine")
    rho_qr = state.normalized()
    rho_q = state.partial_trace(list(range(state.L)))
    return matrix_entropy_bits(rho_q) - matrix_entropy_bits(rho_qr)


# -- code-space defect structure (perfect readout layer) --------------------


def defect_free_energies(code: np.ndarray) -> DefectFreeEnergies:
    """Defect free energies of a 2x2 code-space matrix.

    After relabeling so rho_00 >= rho_11:
    delta_f1 = -log(rho_10/rho_00) on the principal branch, and
    delta_f2 = -log(rho_11/rho_00).
    """
    rho = np.asarray(code, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("code-space matrix must be 2x2")
    if rho[1, 1].real > rho[0, 0].real:
        rho = rho[::-1, ::-1]
    r00 = rho[0, 0].real
    if r00 <= 0.0:
        raise ZeroDiagonal("code-space matrix has zero leading diagonal")
    off = rho[1, 0] / r00
    dia = rho[1, 1].real / r00
    delta_f1 = np.inf if off == 0.0 else complex(-np.log(off))
    delta_f2 = np.inf if dia <= 0.0 else float(-np.log(dia))
    return DefectFreeEnergies(delta_f1=delta_f1, delta_f2=delta_f2)


def defects_from_reference_code_matrix(code4: np.ndarray) -> DefectFreeEnergies:
    """Defect free energies read off the 4x4 reference-augmented code matrix.

    Basis order (s,up),(s,down),(-s,up),(-s,down); the no-defect corner is
    normalized to 1, exp(-delta_f2) sits at (s,down) on the diagonal and
    exp(-delta_f1) at ((-s,up),(s,up)).
    """
    m = np.asarray(code4, dtype=complex)
    if m.shape != (4, 4):
        raise ValueError("expected a 4x4 reference-augmented code matrix")
    if m[1, 1].real > m[0, 0].real:
        # relabel s_T <-> -s_T (keeps the reference pairing structure)
        perm = [2, 3, 0, 1]
        m = m[np.ix_(perm, perm)]
    ref = m[0, 0].real
    if ref <= 0.0:
        raise ZeroDiagonal("code-space matrix has zero leading corner")
    off = m[2, 0] / ref
    dia = m[1, 1].real / ref
    delta_f1 = np.inf if off == 0.0 else complex(-np.log(off))
    delta_f2 = np.inf if dia <= 0.0 else float(-np.log(dia))
    return DefectFreeEnergies(delta_f1=delta_f1, delta_f2=delta_f2)


def _exp_defect(value):
    """exp(-delta_f) with the overflow sentinel handled as the zero limit."""
    if np.isinf(np.real(value)):
        return 0.0
    return np.exp(-value)


def code_spectrum_from_defects(d: DefectFreeEnergies):
    """Closed-form nonzero eigenvalue pairs (lambda_QR, lambda_Q).

    lambda_+-^{QR} = (1 +- sqrt(((1-e2)/(1+e2))^2 + (2|e1|/(1+e2))^2))/2 and
    lambda_+-^{Q}  = (1 +- 2 Re(e1)/(1+e2))/2 with e1 = exp(-delta_f1),
    e2 = exp(-delta_f2).
    """
    e1 = _exp_defect(d.delta_f1)
    e2 = _exp_defect(d.delta_f2)
    root = np.sqrt(((1.0 - e2) / (1.0 + e2)) ** 2 + (2.0 * abs(e1) / (1.0 + e2)) ** 2)
    lam_qr = (0.5 * (1.0 + root), 0.5 * (1.0 - root))
    bias = 2.0 * np.real(e1) / (1.0 + e2)
    lam_q = (0.5 * (1.0 + bias), 0.5 * (1.0 - bias))
    return lam_qr, lam_q


def info_from_code_spectrum(lam_qr, lam_q):
    """(S_R, I_c) in bits from the closed-form spectra."""
    s_r = entropy_bits(np.array(lam_q))
    i_c = s_r - entropy_bits(np.array(lam_qr))
    return s_r, i_c


# -- full evaluation ---------------------------------------------------------


def compute_observables(state, which=SCALAR_OBSERVABLES, periodic=False) -> ObservableSet:
    """Evaluate the requested diagnostics on one trajectory state."""
    out = ObservableSet()
    if "kappa_ea" in which:
        out.kappa_ea = edwards_anderson_susceptibility(state)
    if "kappa_2" in which:
        out.kappa_2 = renyi2_susceptibility(state)
    if "d_ea" in which or "d_2" in which:
        d_ea, d_2 = disorder_susceptibilities(
            state, periodic=periodic,
            want_ea="d_ea" in which, want_2="d_2" in which,
        )
        if "d_ea" in which:
            out.d_ea = d_ea
        if "d_2" in which:
            out.d_2 = d_2
    if "s_r" in which:
        out.s_r = reference_entropy(state)
    if "i_c" in which:
        out.i_c = coherent_information(state, "exact")
    if "i_c_renyi2" in which:
        out.i_c_renyi2 = coherent_information(state, "renyi2")
    return out


def average_over_trajectories(items, mode="sampled", weights=None):
    """Average ObservableSets over trajectories.

    exhaustive mode: Born-weighted mean (weights must sum to 1 within 1e-8),
    standard errors are zero.  sampled mode: unweighted mean (Born weighting
    is implicit in the sampling) plus the standard error of the mean.
    Returns (means: dict, stderrs: dict).
    """
    items = list(items)
    if not items:
        raise EmptyInput("no trajectories to average")
    names = [n for n in SCALAR_OBSERVABLES if getattr(items[0], n) is not None]
    means, errs = {}, {}
    if mode == "exhaustive":
        if weights is None:
            raise BadWeights("exhaustive averaging requires weights")
        w = np.asarray(weights, dtype=float)
        if len(w) != len(items):
            raise BadWeights("one weight per trajectory required")
        if abs(w.sum() - 1.0) > 1e-8:
            raise BadWeights(f"weights sum to {w.sum()}, expected 1")
        for n in names:
            vals = np.array([getattr(it, n) for it in items], dtype=float)
            means[n] = float(w @ vals)
            errs[n] = 0.0
        return means, errs
    if mode != "sampled":
        raise ValueError(f"unknown averaging mode {mode!r}")
    for n in names:
        vals = np.array([getattr(it, n) for it in items], dtype=float)
        means[n] = float(vals.mean())
        if len(vals) > 1:
            errs[n] = float(vals.std(ddof=1) / np.sqrt(len(vals)))
        else:
            errs[n] = 0.0
    return means, errs
