"""A small, safe, vectorized expression evaluator for instance files.

Expressions are ordinary arithmetic in the base coordinates ``x1, x2, ...``::

    "1 + 0.3*sin(x1)*cos(x2)"
    "0.5*x1 - 0.25*x2**2 + 1j*x1"

Allowed syntax: numeric literals (including complex ``1j``), the variables,
the constants ``pi`` and ``e``, unary ``+``/``-``, binary ``+ - * / **`` and
calls of the functions listed in :data:`FUNCTIONS`. Everything else
(attribute access, subscripts, comparisons, lambdas, ...) is rejected at
parse time, so evaluation cannot reach arbitrary Python objects.
"""

from __future__ import annotations

import ast
from typing import Sequence

import numpy as np

from .errors import ExpressionError

__all__ = ["FUNCTIONS", "CONSTANTS", "Expression", "ExpressionMatrix", "variable_names"]

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "arcsin": np.arcsin, "arccos": np.arccos, "arctan": np.arctan, "arctan2": np.arctan2,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.UAdd, ast.USub,
)


def variable_names(dim: int) -> tuple[str, ...]:
    """Names of the coordinates of a ``dim``-dimensional base: ``x1 .. xdim``."""
    return tuple(f"x{i + 1}" for i in range(dim))


class Expression:
    """Compiled scalar expression in the variables ``x1..xn``.

    Calling it with an array ``X`` of shape ``(N, n)`` returns shape ``(N,)``.
    """

    def __init__(self, source, variables: Sequence[str]):
        self.variables = tuple(variables)
        if isinstance(source, (int, float, complex)) and not isinstance(source, bool):
            source = repr(source)
        if not isinstance(source, str):
            raise ExpressionError(f"expression must be a string or number, got {type(source).__name__}")
        self.source = source
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
        names = set()
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(f"forbidden syntax {type(node).__name__} in {source!r}")
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, complex)):
                raise ExpressionError(f"only numeric literals are allowed in {source!r}")
            if isinstance(node, ast.Constant) and isinstance(node.value, bool):
                raise ExpressionError(f"boolean literal in {source!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                    raise ExpressionError(f"unsupported function call in {source!r}")
            if isinstance(node, ast.Name):
                names.add(node.id)
        unknown = sorted(names - set(self.variables) - set(FUNCTIONS) - set(CONSTANTS))
        if unknown:
            raise ExpressionError(
                f"unknown name(s) {unknown} in {source!r}; allowed variables are {list(self.variables)}"
            )
        self.names = frozenset(names & set(self.variables))
        self.is_complex = any(
            isinstance(node, ast.Constant) and isinstance(node.value, complex) for node in ast.walk(tree)
        )
        self._code = compile(tree, "<expression>", "eval")
        self._namespace = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}

    @property
    def is_constant(self) -> bool:
        return not self.names

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        env = {name: X[:, k] for k, name in enumerate(self.variables)}
        with np.errstate(all="ignore"):
            value = eval(self._code, self._namespace, env)  # noqa: S307 - AST is whitelisted
        return np.broadcast_to(np.asarray(value), (X.shape[0],)).copy()

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


class ExpressionMatrix:
    """Matrix of :class:`Expression` objects evaluated in one call.

    ``ExpressionMatrix(rows, variables)(X)`` has shape ``(N, rows, cols)``.
    """

    def __init__(self, rows, variables: Sequence[str]):
        rows = [list(r) if isinstance(r, (list, tuple)) else [r] for r in rows]
        if rows and len({len(r) for r in rows}) != 1:
            raise ExpressionError("expression matrix rows have unequal lengths")
        self.shape = (len(rows), len(rows[0]) if rows else 0)
        self.entries = [[Expression(v, variables) for v in r] for r in rows]
        self.variables = tuple(variables)

    @property
    def is_complex(self) -> bool:
        return any(e.is_complex for r in self.entries for e in r)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        dtype = complex if self.is_complex else float
        out = np.empty((X.shape[0],) + self.shape, dtype=dtype)
        for i, row in enumerate(self.entries):
            for j, expr in enumerate(row):
                out[:, i, j] = expr(X)
        return out
