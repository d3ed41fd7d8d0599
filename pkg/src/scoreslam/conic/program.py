"""Standard-form conic programs.

    minimize    c' x
    subject to  A x + s = b,   s in K

where K is an ordered product of zero, nonnegative, second-order and rotated
second-order cone blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cones import (
    CONE_TYPES,
    NonNegative,
    RotatedSecondOrder,
    SecondOrder,
    Zero,
    cone_dimension,
    validate_cones,
)


class ConicFormatError(ValueError):
    pass


@dataclass
class ConeProgram:
    objective: np.ndarray
    constraint_matrix: sp.csc_matrix
    constraint_offset: np.ndarray
    cones: list

    def __post_init__(self) -> None:
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        self.constraint_matrix = sp.csc_matrix(self.constraint_matrix, dtype=float)
        self.constraint_matrix.sum_duplicates()
        self.constraint_matrix.sort_indices()
        self.constraint_offset = np.asarray(self.constraint_offset, dtype=float).reshape(-1)
        self.cones = list(self.cones)

    @property
    def num_variables(self) -> int:
        return self.objective.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.constraint_offset.shape[0]

    # aliases used by the solver internals
    @property
    def c(self):
        return self.objective

    @property
    def A(self):
        return self.constraint_matrix

    @property
    def b(self):
        return self.constraint_offset

    def validate(self) -> None:
        """Raise ``ValueError`` unless the program invariants hold."""
        validate_cones(self.cones)
        m, n = self.constraint_matrix.shape
        if n != self.num_variables:
            raise ValueError(f"A has {n} columns but c has {self.num_variables} entries")
        if m != self.num_constraints:
            raise ValueError(f"A has {m} rows but b has {self.num_constraints} entries")
        if cone_dimension(self.cones) != m:
            raise ValueError(
                f"cone dimension {cone_dimension(self.cones)} != number of rows {m}"
            )
        A = self.constraint_matrix
        if not (
            np.all(np.isfinite(A.data))
            and np.all(np.isfinite(self.objective))
            and np.all(np.isfinite(self.constraint_offset))
        ):
            raise ValueError("program data must be finite")
        row_nnz = np.bincount(A.indices[A.data != 0], minlength=m)
        if np.any(row_nnz == 0):
            raise ValueError(f"A has all-zero rows: {np.flatnonzero(row_nnz == 0)[:10]}")

    def cone_slices(self):
        """Yield (cone, slice) pairs in row order."""
        i = 0
        for cone in self.cones:
            yield cone, slice(i, i + cone.n)
            i += cone.n

    # plain-text debug dump -------------------------------------------------

    def dump(self, path) -> None:
        """Write the program as ``n m`` then ``c``/``A``/``b`` triplets and cone lines."""
        A = self.constraint_matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"{self.num_variables} {self.num_constraints}\n")
            for i, v in enumerate(self.objective):
                if v != 0:
                    fh.write(f"c {i} {v:.17g}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"A {i} {j} {v:.17g}\n")
            for i, v in enumerate(self.constraint_offset):
                if v != 0:
                    fh.write(f"b {i} {v:.17g}\n")
            for cone in self.cones:
                fh.write(f"cone {cone.tag} {cone.n}\n")

    @classmethod
    def load(cls, path) -> "ConeProgram":
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        try:
            n, m = int(lines[0][0]), int(lines[0][1])
        except (IndexError, ValueError) as exc:
            raise ConicFormatError("line 1: expected header 'n m'") from exc
        c = np.zeros(n)
        b = np.zeros(m)
        rows, cols, vals, cones = [], [], [], []
        for lineno, parts in enumerate(lines[1:], start=2):
            try:
                tag = parts[0]
                if tag == "c":
                    c[int(parts[1])] = float(parts[2])
                elif tag == "A":
                    rows.append(int(parts[1]))
                    cols.append(int(parts[2]))
                    vals.append(float(parts[3]))
                elif tag == "b":
                    b[int(parts[1])] = float(parts[2])
                elif tag == "cone":
                    cones.append(CONE_TYPES[parts[1]](int(parts[2])))
                else:
                    raise ConicFormatError(f"line {lineno}: unknown record {tag!r}")
            except (IndexError, ValueError, KeyError) as exc:
                if isinstance(exc, ConicFormatError):
                    raise
                raise ConicFormatError(f"line {lineno}: malformed record") from exc
        A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
        return cls(c, A, b, cones)


class SolverStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iterations: int = 200
    time_limit_seconds: float | None = None
    scale: bool = True
    refinement_steps: int = 10
    verbose: bool = False
    # when the iteration breaks down numerically, the best iterate is still
    # reported as optimal if it meets the tolerances relaxed by this factor
    reduced_accuracy_factor: float = 100.0

    def __post_init__(self) -> None:
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.time_limit_seconds is not None and self.time_limit_seconds <= 0:
            raise ValueError("time_limit_seconds must be positive")
        if self.reduced_accuracy_factor < 1:
            raise ValueError("reduced_accuracy_factor must be at least 1")


@dataclass
class SolverResult:
    status: SolverStatus
    primal: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    wall_time_seconds: float
    dual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_objective: float = float("nan")
    reduced_accuracy: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == SolverStatus.OPTIMAL


# building programs -----------------------------------------------------------


@dataclass
class QuadraticTerm:
    """A sum of squares ||P x - q||^2 with P stored as (row, col, value) triplets."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=float)
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= len(self.offset)):
            raise ValueError("quadratic term row index out of range")

    @classmethod
    def from_dense(cls, P, q, cols=None) -> "QuadraticTerm":
        P = np.atleast_2d(np.asarray(P, dtype=float))
        cols = np.arange(P.shape[1]) if cols is None else np.asarray(cols)
        r, c = np.nonzero(P)
        return cls(r, cols[c], P[r, c], q)

    def value(self, x: np.ndarray) -> float:
        res = -self.offset.copy()
        np.add.at(res, self.rows, self.vals * x[self.cols])
        return float(res @ res)


class ConeProgramBuilder:
    """Accumulates variables, cone-constrained rows and a linear objective.

    Rows are added cone block by cone block, in the order the blocks appear
    in the finished program. Each row is ``b_i - (A x)_i = s_i``.
    """

    def __init__(self, num_variables: int = 0):
        self.num_variables = int(num_variables)
        self._c: dict[int, float] = {}
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._b: list[np.ndarray] = []
        self.cones: list = []
        self.num_rows = 0
        self.half_index: int | None = None
        self.epigraph_indices: list[int] = []

    def add_variables(self, count: int) -> int:
        start = self.num_variables
        self.num_variables += int(count)
        return start

    def add_objective(self, index, coef) -> None:
        for i, v in zip(np.atleast_1d(index), np.atleast_1d(coef)):
            self._c[int(i)] = self._c.get(int(i), 0.0) + float(v)

    def _add_block(self, cone, rows, cols, vals, b) -> int:
        start = self.num_rows
        self._rows.append(np.asarray(rows, dtype=np.int64) + start)
        self._cols.append(np.asarray(cols, dtype=np.int64))
        self._vals.append(np.asarray(vals, dtype=float))
        self._b.append(np.asarray(b, dtype=float).reshape(-1))
        self.cones.append(cone)
        self.num_rows += cone.n
        return start

    def add_zero(self, rows, cols, vals, b) -> int:
        """Equality rows A x = b (slack in the zero cone)."""
        return self._add_block(Zero(len(np.atleast_1d(b))), rows, cols, vals, b)

    def add_nonnegative(self, rows, cols, vals, b) -> int:
        return self._add_block(NonNegative(len(np.atleast_1d(b))), rows, cols, vals, b)

    def add_second_order(self, rows, cols, vals, b) -> int:
        return self._add_block(SecondOrder(len(np.atleast_1d(b))), rows, cols, vals, b)

    def add_rotated_second_order(self, rows, cols, vals, b) -> int:
        return self._add_block(RotatedSecondOrder(len(np.atleast_1d(b))), rows, cols, vals, b)

    def half_variable(self) -> int:
        """Index of a variable pinned to 1/2 (shared by all quadratic epigraphs)."""
        if self.half_index is None:
            self.half_index = self.add_variables(1)
            self.add_zero([0], [self.half_index], [1.0], [0.5])
        return self.half_index

    def add_quadratic_term(self, term: QuadraticTerm) -> int:
        """Add epigraph variable e >= ||P x - q||^2 and return its index.

        Encoded as the rotated cone (e, h, P x - q) with h pinned to 1/2, i.e.
        2 * e * (1/2) >= ||P x - q||^2. The epigraph variable gets objective
        coefficient 1.
        """
        h = self.half_variable()
        e = self.add_variables(1)
        k = len(term.offset)
        rows = np.concatenate([[0, 1], term.rows + 2])
        cols = np.concatenate([[e, h], term.cols])
        vals = np.concatenate([[-1.0, -1.0], -term.vals])
        b = np.concatenate([[0.0, 0.0], -term.offset])
        self.add_rotated_second_order(rows, cols, vals, b)
        self.add_objective(e, 1.0)
        self.epigraph_indices.append(e)
        assert k + 2 == self.cones[-1].n
        return e

    def build(self) -> ConeProgram:
        n = self.num_variables
        c = np.zeros(n)
        for i, v in self._c.items():
            c[i] = v
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
            b = np.concatenate(self._b)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = b = np.zeros(0)
        A = sp.csc_matrix((vals, (rows, cols)), shape=(self.num_rows, n))
        return ConeProgram(c, A, b, list(self.cones))


def lower_quadratic_objective(
    quadratic_terms, linear_terms=None, num_variables: int | None = None
) -> ConeProgramBuilder:
    """Lower ``sum_k ||P_k x - q_k||^2 + l' x`` to a linear objective over cones.

    Returns a builder holding one epigraph variable and one rotated cone per
    term (plus the shared variable pinned to 1/2); callers append their own
    constraints before ``build()``. At an optimum each epigraph variable
    equals its term's value, so the program objective equals the quadratic
    objective.
    """
    terms = list(quadratic_terms)
    if num_variables is None:
        num_variables = 1 + max(
            [int(t.cols.max()) for t in terms if t.cols.size] + [-1]
        )
    builder = ConeProgramBuilder(num_variables)
    if linear_terms is not None:
        lin = np.asarray(linear_terms, dtype=float)
        nz = np.flatnonzero(lin)
        builder.add_objective(nz, lin[nz])
    for term in terms:
        if term.cols.size and term.cols.max() >= num_variables:
            raise ValueError("quadratic term references an unknown variable")
        builder.add_quadratic_term(term)
    return builder
