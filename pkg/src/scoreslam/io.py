"""Plain-text problem, estimate and ground-truth files.

One whitespace-separated record per line; ``#`` starts a comment::

    DIM d
    VERTEX_POSE robot time x y [z] <d*d rotation entries, row-major>
    VERTEX_LANDMARK id x y [z]
    EDGE_ODOM robot t1 t2 <d translation entries> <d*d rotation entries> kappa tau
    EDGE_POSE r1 t1 r2 t2 <d translation entries> <d*d rotation entries> kappa tau
    EDGE_RANGE <endpoint> <endpoint> distance sigma

where an endpoint is ``P robot time`` or ``L id``. Vertex records declare the
variables (and carry values for estimate and ground-truth files); edge
records must come after the vertices they reference. Numbers are written
with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .problem import (
    ProblemError,
    RaSlamProblem,
    RangeMeasurement,
    RelativePoseMeasurement,
    Solution,
    VariableKey,
    landmark_key,
    pose_key,
)


class ParseError(ProblemError):
    """Malformed file content; the message names the offending line."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmts(values) -> str:
    return " ".join(_fmt(v) for v in np.ravel(values))


def _endpoint(key: VariableKey) -> str:
    return f"P {key.robot} {key.time}" if key.is_pose else f"L {key.landmark}"


def _vertex_lines(problem_dim: int, keys_poses, keys_landmarks, solution: Solution | None):
    d = problem_dim
    lines = []
    for k in keys_poses:
        if solution is not None:
            t, R = solution.translations[k], solution.rotations[k]
        else:
            t, R = np.zeros(d), np.eye(d)
        lines.append(f"VERTEX_POSE {k.robot} {k.time} {_fmts(t)} {_fmts(R)}")
    for k in keys_landmarks:
        p = solution.landmark_positions[k] if solution is not None else np.zeros(d)
        lines.append(f"VERTEX_LANDMARK {k.landmark} {_fmts(p)}")
    return lines


def format_problem(problem: RaSlamProblem, values: Solution | None = None) -> str:
    """Serialize a problem; vertex values come from ``values`` (identity/zero if absent)."""
    lines = [f"DIM {problem.dim}"]
    lines += _vertex_lines(problem.dim, problem.pose_keys(), problem.landmark_variables, values)
    for m in problem.relative_pose_edges:
        a, b = m.from_key, m.to_key
        payload = f"{_fmts(m.translation)} {_fmts(m.rotation)} {_fmt(m.kappa)} {_fmt(m.tau)}"
        if a.robot == b.robot and b.time == a.time + 1:
            lines.append(f"EDGE_ODOM {a.robot} {a.time} {b.time} {payload}")
        else:
            lines.append(f"EDGE_POSE {a.robot} {a.time} {b.robot} {b.time} {payload}")
    for m in problem.range_edges:
        lines.append(
            f"EDGE_RANGE {_endpoint(m.from_key)} {_endpoint(m.to_key)} "
            f"{_fmt(m.distance)} {_fmt(m.sigma)}"
        )
    return "\n".join(lines) + "\n"


def write_problem(path, problem: RaSlamProblem, truth: Solution | None = None) -> None:
    """Write ``problem``; vertex records carry ``truth`` values when given."""
    Path(path).write_text(format_problem(problem, truth))


def write_solution(path, solution: Solution, dim: int) -> None:
    """Write an estimate or ground truth as DIM plus vertex records."""
    poses = sorted(solution.rotations)
    landmarks = sorted(solution.landmark_positions)
    lines = [f"DIM {dim}"] + _vertex_lines(dim, poses, landmarks, solution)
    Path(path).write_text("\n".join(lines) + "\n")


class _Parser:
    def __init__(self, path):
        self.path = path
        self.dim: int | None = None
        self.problem: RaSlamProblem | None = None
        self.values = Solution()
        self.line = 0

    def error(self, message: str):
        return ParseError(self.path, self.line, message)

    def numbers(self, tokens, count: int, what: str) -> np.ndarray:
        if len(tokens) != count:
            raise self.error(f"{what}: expected {count} numbers, got {len(tokens)}")
        try:
            return np.array([float(t) for t in tokens])
        except ValueError:
            raise self.error(f"{what}: non-numeric value in {' '.join(tokens)!r}") from None

    def integer(self, token: str, what: str) -> int:
        try:
            v = int(token)
        except ValueError:
            raise self.error(f"{what}: expected an integer, got {token!r}") from None
        if v < 0:
            raise self.error(f"{what}: expected a nonnegative integer, got {v}")
        return v

    def require_dim(self, tag: str) -> int:
        if self.dim is None:
            raise self.error(f"{tag} before DIM record")
        return self.dim

    def endpoint(self, tokens, pos: int, tag: str) -> tuple[VariableKey, int]:
        if pos >= len(tokens):
            raise self.error(f"{tag}: missing endpoint")
        kind = tokens[pos]
        if kind == "P":
            if pos + 2 >= len(tokens):
                raise self.error(f"{tag}: truncated pose endpoint")
            key = pose_key(self.integer(tokens[pos + 1], tag), self.integer(tokens[pos + 2], tag))
            return key, pos + 3
        if kind == "L":
            if pos + 1 >= len(tokens):
                raise self.error(f"{tag}: truncated landmark endpoint")
            return landmark_key(self.integer(tokens[pos + 1], tag)), pos + 2
        raise self.error(f"{tag}: endpoint must start with P or L, got {kind!r}")

    def pose_payload(self, tokens, tag: str):
        d = self.require_dim(tag)
        vals = self.numbers(tokens, d + d * d + 2, tag)
        return vals[:d], vals[d : d + d * d].reshape(d, d), vals[-2], vals[-1]

    def record(self, tokens) -> None:
        tag, rest = tokens[0], tokens[1:]
        if tag == "DIM":
            if len(rest) != 1 or rest[0] not in ("2", "3"):
                raise self.error("DIM must be followed by 2 or 3")
            d = int(rest[0])
            if self.dim is not None and self.dim != d:
                raise self.error(f"dimension mismatch: DIM {d} after DIM {self.dim}")
            self.dim = d
            if self.problem is None:
                self.problem = RaSlamProblem(d)
            return
        if tag == "VERTEX_POSE":
            d = self.require_dim(tag)
            if len(rest) < 2:
                raise self.error("VERTEX_POSE: missing robot and time")
            payload = rest[2:]
            if len(payload) != d + d * d:
                other = 5 - d
                if len(payload) == other + other * other:
                    raise self.error(f"dimension mismatch: {other}-D pose in a {d}-D file")
            vals = self.numbers(payload, d + d * d, tag)
            key = self.problem.add_pose_variable(
                self.integer(rest[0], tag), self.integer(rest[1], tag)
            )
            self.values.translations[key] = vals[:d]
            self.values.rotations[key] = vals[d:].reshape(d, d)
            return
        if tag == "VERTEX_LANDMARK":
            d = self.require_dim(tag)
            if len(rest) < 1:
                raise self.error("VERTEX_LANDMARK: missing id")
            if len(rest) - 1 == 5 - d:
                raise self.error(f"dimension mismatch: {5 - d}-D landmark in a {d}-D file")
            vals = self.numbers(rest[1:], d, tag)
            key = self.problem.add_landmark_variable(self.integer(rest[0], tag))
            self.values.landmark_positions[key] = vals
            return
        if tag == "EDGE_ODOM":
            if len(rest) < 3:
                raise self.error("EDGE_ODOM: missing robot and times")
            r = self.integer(rest[0], tag)
            a = pose_key(r, self.integer(rest[1], tag))
            b = pose_key(r, self.integer(rest[2], tag))
            t, R, kappa, tau = self.pose_payload(rest[3:], tag)
            self.problem.add_relative_pose_measurement(RelativePoseMeasurement(a, b, R, t, kappa, tau))
            return
        if tag == "EDGE_POSE":
            if len(rest) < 4:
                raise self.error("EDGE_POSE: missing endpoints")
            a = pose_key(self.integer(rest[0], tag), self.integer(rest[1], tag))
            b = pose_key(self.integer(rest[2], tag), self.integer(rest[3], tag))
            t, R, kappa, tau = self.pose_payload(rest[4:], tag)
            self.problem.add_relative_pose_measurement(RelativePoseMeasurement(a, b, R, t, kappa, tau))
            return
        if tag == "EDGE_RANGE":
            self.require_dim(tag)
            a, pos = self.endpoint(rest, 0, tag)
            b, pos = self.endpoint(rest, pos, tag)
            dist, sigma = self.numbers(rest[pos:], 2, tag)
            self.problem.add_range_measurement(RangeMeasurement(a, b, dist, sigma))
            return
        raise self.error(f"unknown record tag {tag!r}")

    def parse(self, text: str):
        for self.line, raw in enumerate(text.splitlines(), start=1):
            content = raw.split("#", 1)[0].split()
            if not content:
                continue
            try:
                self.record(content)
            except ParseError:
                raise
            except ProblemError as exc:
                raise self.error(str(exc)) from None
        if self.problem is None:
            raise ParseError(self.path, self.line, "no DIM record")
        return self.problem, self.values


def read_problem_and_values(path) -> tuple[RaSlamProblem, Solution]:
    """Parse a problem file; also return the vertex values it carries."""
    return _Parser(path).parse(Path(path).read_text())


def read_problem(path) -> RaSlamProblem:
    """Parse a problem file.

    Raises:
        ParseError: on malformed records, naming the line number.
    """
    return read_problem_and_values(path)[0]


def read_solution(path) -> tuple[int, Solution]:
    """Parse an estimate or ground-truth file (vertex records only)."""
    problem, values = read_problem_and_values(path)
    if problem.relative_pose_edges or problem.range_edges:
        raise ParseError(path, 0, "estimate files must contain vertex records only")
    return problem.dim, values
