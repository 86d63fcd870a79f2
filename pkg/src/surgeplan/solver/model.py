"""Mixed-integer linear model container and solve option/result types.

Models are built column-first: add variables, then constraints referencing
them by index.  SOS1 groups carry pick-exactly-one semantics: the LP
relaxation adds a convexity row (members sum to 1, each in [0, 1]) and the
branch-and-bound drives every group to a single nonzero member.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..domain import ValidationError


class VarKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_GAP = "feasible-gap"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT_HIT = "limit-hit"


@dataclass(frozen=True)
class SolveOptions:
    relative_gap_tol: float = 1e-6
    absolute_feas_tol: float = 1e-7
    node_limit: int = 200_000
    time_limit_seconds: float = 60.0
    node_selection: str = "best-bound"

    def __post_init__(self):
        if self.relative_gap_tol < 0 or self.absolute_feas_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.node_limit < 1:
            raise ValidationError("node_limit must be at least 1")
        if self.time_limit_seconds <= 0:
            raise ValidationError("time limit must be positive")
        if self.node_selection != "best-bound":
            raise ValidationError(
                f"unsupported node selection {self.node_selection!r} (only best-bound)"
            )


@dataclass
class SolveResult:
    status: SolveStatus
    objective: Optional[float] = None
    bound: Optional[float] = None
    values: Optional[np.ndarray] = None
    node_count: int = 0
    iteration_count: int = 0
    wall_time_seconds: float = 0.0
    max_violation: float = 0.0
    message: str = ""

    @property
    def gap(self) -> Optional[float]:
        if self.objective is None or self.bound is None:
            return None
        return abs(self.objective - self.bound) / max(1.0, abs(self.objective))

    def value_of(self, index: int) -> float:
        if self.values is None:
            raise ValidationError("no solution values available")
        return float(self.values[index])


@dataclass
class _Constraint:
    name: str
    indices: np.ndarray
    coefficients: np.ndarray
    sense: str
    rhs: float


class MipModel:
    """Sparse MILP: min c.x subject to rows {<=,=,>=}, bounds, binaries, SOS1."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.var_lb: list[float] = []
        self.var_ub: list[float] = []
        self.var_kind: list[VarKind] = []
        self._name_set: set[str] = set()
        self.constraints: list[_Constraint] = []
        self._objective: dict[int, float] = {}
        self.sos1_groups: list[list[int]] = []
        self.sos1_names: list[str] = []

    # -- construction ------------------------------------------------------

    def add_variable(
        self,
        name: str,
        lb: float = 0.0,
        ub: float = math.inf,
        kind: VarKind = VarKind.CONTINUOUS,
        objective: float = 0.0,
    ) -> int:
        if name in self._name_set:
            raise ValidationError(f"duplicate variable name {name!r}")
        self._name_set.add(name)
        idx = len(self.var_names)
        self.var_names.append(name)
        self.var_lb.append(float(lb))
        self.var_ub.append(float(ub))
        self.var_kind.append(kind)
        if objective:
            self._objective[idx] = float(objective)
        return idx

    def add_constraint(
        self,
        name: str,
        terms: Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
    ) -> int:
        if sense not in ("<=", ">=", "="):
            raise ValidationError(f"bad constraint sense {sense!r}")
        pairs = [(int(i), float(v)) for i, v in terms if v != 0.0]
        idx = np.array([p[0] for p in pairs], dtype=np.int64)
        coef = np.array([p[1] for p in pairs], dtype=float)
        self.constraints.append(_Constraint(name, idx, coef, sense, float(rhs)))
        return len(self.constraints) - 1

    def add_sos1(self, name: str, members: Sequence[int]) -> int:
        self.sos1_groups.append([int(i) for i in members])
        self.sos1_names.append(name)
        return len(self.sos1_groups) - 1

    def set_objective_coefficient(self, index: int, value: float) -> None:
        if value == 0.0:
            self._objective.pop(index, None)
        else:
            self._objective[int(index)] = float(value)

    def add_objective_coefficient(self, index: int, value: float) -> None:
        self.set_objective_coefficient(index, self._objective.get(index, 0.0) + value)

    # -- views -------------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.var_names)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_variables)
        for i, v in self._objective.items():
            c[i] = v
        return c

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(v * values[i] for i, v in self._objective.items()))

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        n = self.num_variables
        lb = np.array(self.var_lb)
        ub = np.array(self.var_ub)
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
            raise ValidationError("NaN variable bound")
        bad = np.flatnonzero(lb > ub)
        if bad.size:
            raise ValidationError(
                f"variable {self.var_names[bad[0]]!r} has lb > ub ({lb[bad[0]]} > {ub[bad[0]]})"
            )
        for i, kind in enumerate(self.var_kind):
            if kind is VarKind.BINARY:
                if lb[i] < -1e-12 or ub[i] > 1 + 1e-12:
                    raise ValidationError(
                        f"binary variable {self.var_names[i]!r} has bounds outside [0, 1]"
                    )
        for con in self.constraints:
            if con.indices.size and (con.indices.min() < 0 or con.indices.max() >= n):
                raise ValidationError(f"constraint {con.name!r} references unknown variable")
            if np.any(~np.isfinite(con.coefficients)):
                raise ValidationError(f"constraint {con.name!r} has NaN/Inf coefficient")
            if not np.isfinite(con.rhs):
                raise ValidationError(f"constraint {con.name!r} has non-finite rhs")
            if len(set(con.indices.tolist())) != con.indices.size:
                raise ValidationError(f"constraint {con.name!r} repeats a variable")
        for i, v in self._objective.items():
            if not (0 <= i < n):
                raise ValidationError("objective references unknown variable")
            if not np.isfinite(v):
                raise ValidationError("objective has NaN/Inf coefficient")
        for gname, members in zip(self.sos1_names, self.sos1_groups):
            if not members:
                raise ValidationError(f"SOS1 group {gname!r} is empty")
            if len(set(members)) != len(members):
                raise ValidationError(f"SOS1 group {gname!r} repeats a member")
            for i in members:
                if not (0 <= i < n):
                    raise ValidationError(f"SOS1 group {gname!r} references unknown variable")

    # -- debug dump ----------------------------------------------------------

    def to_lp_text(self) -> str:
        """Serialize in LP interchange format, fixed-point numbers at 12
        significant digits, for inspection with external tooling."""

        def num(v: float) -> str:
            if v == 0:
                v = 0.0
            return np.format_float_positional(
                v, precision=12, unique=False, fractional=False, trim="-"
            )

        def term_str(indices, coefs) -> str:
            parts = []
            for i, v in zip(indices, coefs):
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {num(abs(v))} {self.var_names[i]}")
            if not parts:
                return "0 x_dummy_zero"
            joined = " ".join(parts)
            return joined[2:] if joined.startswith("+ ") else joined

        lines = [f"\\ {self.name}", "Minimize"]
        obj_idx = sorted(self._objective)
        obj_coef = [self._objective[i] for i in obj_idx]
        lines.append(" obj: " + term_str(obj_idx, obj_coef))
        lines.append("Subject To")
        for con in self.constraints:
            op = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
            lines.append(f" {con.name}: {term_str(con.indices, con.coefficients)} {op} {num(con.rhs)}")
        lines.append("Bounds")
        for i, name in enumerate(self.var_names):
            lo, hi = self.var_lb[i], self.var_ub[i]
            if lo == hi:
                lines.append(f" {name} = {num(lo)}")
            elif math.isinf(lo) and math.isinf(hi):
                lines.append(f" {name} free")
            elif math.isinf(hi):
                lines.append(f" {num(lo)} <= {name}")
            elif math.isinf(lo):
                lines.append(f" -infinity <= {name} <= {num(hi)}")
            else:
                lines.append(f" {num(lo)} <= {name} <= {num(hi)}")
        binaries = [self.var_names[i] for i, k in enumerate(self.var_kind) if k is VarKind.BINARY]
        if binaries:
            lines.append("Binaries")
            for name in binaries:
                lines.append(f" {name}")
        if self.sos1_groups:
            lines.append("SOS")
            for gname, members in zip(self.sos1_names, self.sos1_groups):
                body = " ".join(
                    f"{self.var_names[i]}:{k + 1}" for k, i in enumerate(members)
                )
                lines.append(f" {gname}: S1:: {body}")
        lines.append("End")
        return "\n".join(lines) + "\n"
