"""Mixed-field Ising chain: Pauli terms, exact spectrum and perturbative energies.

    H = -J sum_i Z_i Z_{i+1} - h_x sum_i X_i - h_z sum_i Z_i    (cyclic)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, cg, eigsh


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


class SingularDenominatorError(ZeroDivisionError):
    pass


class DegeneracyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IsingParams:
    n: int
    J: float = 1.0
    h_x: float = 1.5
    h_z: float = 0.1
    cyclic: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Ising chain needs n >= 2")
        if not self.cyclic:
            raise ValueError("only cyclic boundary conditions are supported")

    def replace(self, **changes) -> IsingParams:
        d = dict(n=self.n, J=self.J, h_x=self.h_x, h_z=self.h_z, cyclic=self.cyclic)
        d.update(changes)
        return IsingParams(**d)


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    support: tuple[int, ...]
    kind: str  # "ZZ", "X" or "Z"

    def __post_init__(self):
        if self.kind not in ("ZZ", "X", "Z"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if len(self.support) != len(self.kind):
            raise ValueError(f"{self.kind} term needs {len(self.kind)} qubit(s)")
        object.__setattr__(self, "support", tuple(int(q) for q in self.support))

    def scaled(self, factor: float) -> PauliTerm:
        return PauliTerm(self.coefficient * factor, self.support, self.kind)

    @property
    def basis(self) -> str:
        return "X" if self.kind == "X" else "Z"

    def label(self) -> str:
        return f"{self.kind}{'_'.join(map(str, self.support))}"


def expand_terms(p: IsingParams) -> list[PauliTerm]:
    """The 3n Pauli terms of H, zero coefficients included."""
    n = p.n
    terms = [PauliTerm(-p.J, (i, (i + 1) % n), "ZZ") for i in range(n)]
    terms += [PauliTerm(-p.h_x, (i,), "X") for i in range(n)]
    terms += [PauliTerm(-p.h_z, (i,), "Z") for i in range(n)]
    return terms


def _spins(n: int) -> np.ndarray:
    """(2^n, n) array of Z eigenvalues, qubit q = bit q."""
    idx = np.arange(2 ** n, dtype=np.int64)
    return (1 - 2 * ((idx[:, None] >> np.arange(n)) & 1)).astype(np.int8)


class IsingOperator(LinearOperator):
    """Matrix-free H: diagonal ZZ/Z part plus single-bit flips for X."""

    def __init__(self, p: IsingParams):
        self.p = p
        super().__init__(dtype=np.float64, shape=(2 ** p.n, 2 ** p.n))

    @cached_property
    def diagonal(self) -> np.ndarray:
        z = _spins(self.p.n).astype(np.float64)
        zz = (z * np.roll(z, -1, axis=1)).sum(axis=1)
        return -self.p.J * zz - self.p.h_z * z.sum(axis=1)

    def _matvec(self, v):
        v = np.asarray(v).reshape(-1)
        out = self.diagonal * v
        if self.p.h_x != 0.0:
            t = v.reshape((2,) * self.p.n)
            flips = np.zeros_like(t)
            for ax in range(self.p.n):
                flips += np.flip(t, axis=ax)
            out = out - self.p.h_x * flips.reshape(-1)
        return out

    def _rmatvec(self, v):
        return self._matvec(v)


def dense_hamiltonian(p: IsingParams) -> np.ndarray:
    """Dense H built from Kronecker products of its terms (small n only)."""
    n = p.n
    if n > 12:
        raise MemoryError("dense Hamiltonian limited to n <= 12")
    I2 = np.eye(2)
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    Z = np.diag([1.0, -1.0])

    def embed(ops: dict[int, np.ndarray]) -> np.ndarray:
        m = np.ones((1, 1))
        for q in reversed(range(n)):  # most significant qubit first
            m = np.kron(m, ops.get(q, I2))
        return m

    H = np.zeros((2 ** n, 2 ** n))
    for t in expand_terms(p):
        if t.coefficient == 0.0:
            continue
        op = X if t.kind == "X" else Z
        H += t.coefficient * embed({q: op for q in t.support})
    return H


@dataclass(frozen=True)
class SpectrumResult:
    ground_energy: float
    first_excited_energy: float
    ground_vector: np.ndarray | None = None
    residual: float = 0.0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "ground_energy": self.ground_energy,
            "first_excited_energy": self.first_excited_energy,
            "gap": self.first_excited_energy - self.ground_energy,
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


def _lowest(op: LinearOperator, k: int, tol: float, maxiter: int, seed: int):
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(op.shape[0])
    try:
        w, v = eigsh(op, k=k, which="SA", tol=tol, maxiter=maxiter, v0=v0,
                     ncv=min(op.shape[0], max(2 * k + 1, 24)))
    except ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge in {maxiter} restarts") from exc
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    residual = max(np.linalg.norm(op.matvec(v[:, j]) - w[j] * v[:, j]) for j in range(k))
    return w, v, residual


def exact_spectrum(p: IsingParams, want_vector: bool = False, tol: float = 1e-8,
                   maxiter: int = 2000, seed: int = 0) -> SpectrumResult:
    """Lowest two eigenvalues of H by restarted Lanczos on the matrix-free operator.

    A random (seeded) start vector keeps all symmetry sectors reachable.
    """
    if p.n > 24:
        raise MemoryError("exact spectrum limited to n <= 24")
    if p.n <= 3:
        w, v = np.linalg.eigh(dense_hamiltonian(p))
        residual = 0.0
    else:
        op = IsingOperator(p)
        w, v, residual = _lowest(op, 2, tol * 1e-4, maxiter, seed)
        if residual > tol:
            raise ConvergenceError("eigenvector residual above tolerance", residual)
    gs = v[:, 0].copy() if want_vector else None
    if gs is not None:
        k = np.argmax(np.abs(gs))
        gs *= np.sign(gs[k])
    return SpectrumResult(float(w[0]), float(w[1]), gs, float(residual),
                          degenerate=bool(w[1] - w[0] < 1e-8))


def perturbative_energy_small_hx(p: IsingParams) -> float:
    """Second order in h_x around the fully polarized |0...0> state."""
    denom = 2 * p.h_z + 4 * p.J
    if denom == 0:
        raise SingularDenominatorError("2 h_z + 4 J vanishes")
    return -p.n * (p.h_z + p.J + p.h_x ** 2 / denom)


def perturbative_energy_large_hx(p: IsingParams) -> float:
    """Second order in 1/h_x around the |+...+> state."""
    if p.h_x == 0:
        raise SingularDenominatorError("large-h_x expansion needs h_x != 0")
    return -p.n * (p.h_x + (2 * p.h_z ** 2 + p.J ** 2) / (4 * p.h_x))


def perturbative_energy_small_hz(p: IsingParams, multiplet_tol: float = 1e-8,
                                 n_lowest: int = 4) -> float:
    """Second order in h_z around the transverse-field chain (h_z = 0).

    Uses numerically exact h_z = 0 eigenstates. A (near-)degenerate ground
    multiplet is diagonalized against V = -sum Z first; the second-order
    sum over the remaining spectrum is evaluated as a reduced resolvent
    ``-<b|(H0 - E0)^-1|b>`` with ``b = Q V psi``.
    """
    if p.n > 14:
        raise MemoryError("small-h_z perturbation limited to n <= 14")
    h0 = p.replace(h_z=0.0)
    op = IsingOperator(h0)
    v_diag = -_spins(p.n).sum(axis=1).astype(np.float64)
    if p.n <= 6:
        w, vecs = np.linalg.eigh(dense_hamiltonian(h0))
    else:
        w, vecs, _ = _lowest(op, n_lowest, 1e-12, 5000, seed=0)
    multiplet = np.flatnonzero(w - w[0] < multiplet_tol)
    if len(multiplet) == len(w):
        raise DegeneracyError("ground multiplet not resolved by the computed eigenpairs")
    outside_gap = w[len(multiplet)] - w[0]
    if outside_gap < 1e-10:
        raise DegeneracyError(f"near-degenerate level {outside_gap:.2e} outside the ground multiplet")
    P = vecs[:, multiplet]
    vm = P.T @ (v_diag[:, None] * P)
    mu, rot = np.linalg.eigh((vm + vm.T) / 2)
    psi = P @ rot[:, 0]
    first = mu[0]
    if p.h_z == 0.0:
        return float(w[0])

    if p.n <= 6:
        rest = vecs[:, len(multiplet):]
        amps = rest.T @ (v_diag * psi)
        second = -np.sum(amps ** 2 / (w[len(multiplet):] - w[0]))
    else:
        def project(x):
            return x - P @ (P.T @ x)

        b = project(v_diag * psi)
        shifted = LinearOperator(op.shape, matvec=lambda x: project(op.matvec(project(x)) - w[0] * x),
                                 dtype=np.float64)
        x, info = cg(shifted, b, rtol=1e-12, maxiter=20000)
        if info != 0:
            raise ConvergenceError("reduced resolvent solve did not converge",
                                   float(np.linalg.norm(shifted.matvec(x) - b)))
        second = -float(b @ x)
    return float(w[0] + p.h_z * first + p.h_z ** 2 * second)
