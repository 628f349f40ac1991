"""Whitelisted arithmetic expressions for config files.

Model coefficients and disorder densities arrive as strings like
``"cos(2*pi*x)"`` or ``"where(x < 0.5, 2.0, 0.0)"``.  They are parsed into a
restricted AST (arithmetic, comparisons inside ``where``, a fixed function
table) and compiled into numpy-vectorized callables.  Anything outside the
whitelist is rejected with the offending position; no attribute access, no
subscripts, no names beyond the declared variables and constants.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

__all__ = ["ExpressionError", "compile_expression"]


class ExpressionError(ValueError):
    """Expression outside the allowed arithmetic subset."""


_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "arctan": np.arctan, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where, "clip": np.clip,
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}

_CMPOPS = {
    ast.Lt: np.less, ast.LtE: np.less_equal,
    ast.Gt: np.greater, ast.GtE: np.greater_equal,
}


def _fail(node: ast.AST, text: str, why: str):
    col = getattr(node, "col_offset", 0)
    raise ExpressionError(f"{why} at column {col + 1} in {text!r}")


def _evaluate(node: ast.AST, env: dict, text: str):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env, text)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value,
                                                          (int, float)):
            _fail(node, text, f"literal {node.value!r} not allowed")
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        _fail(node, text, f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp):
        val = _evaluate(node.operand, env, text)
        if isinstance(node.op, ast.USub):
            return np.negative(val)
        if isinstance(node.op, ast.UAdd):
            return val
        _fail(node, text, "unary operator not allowed")
    if isinstance(node, ast.BinOp):
        fn = _BINOPS.get(type(node.op))
        if fn is None:
            _fail(node, text, "operator not allowed")
        return fn(_evaluate(node.left, env, text),
                  _evaluate(node.right, env, text))
    if isinstance(node, ast.Compare):
        if len(node.ops) != 1:
            _fail(node, text, "chained comparisons not allowed")
        fn = _CMPOPS.get(type(node.ops[0]))
        if fn is None:
            _fail(node, text, "comparison not allowed")
        return fn(_evaluate(node.left, env, text),
                  _evaluate(node.comparators[0], env, text))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            _fail(node, text, "only plain calls of known functions allowed")
        fn = _FUNCTIONS.get(node.func.id)
        if fn is None:
            _fail(node, text, f"unknown function {node.func.id!r}")
        return fn(*(_evaluate(a, env, text) for a in node.args))
    _fail(node, text, f"syntax {type(node).__name__} not allowed")


def compile_expression(text: str, variables: tuple[str, ...]
                       ) -> Callable[..., np.ndarray]:
    """Compile a whitelisted expression into a vectorized callable.

    ``variables`` names the positional arguments of the result, e.g.
    ``("x",)`` or ``("x", "z")``.  Constant expressions broadcast to the
    shape of the first argument.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(
            f"bad syntax at column {exc.offset} in {text!r}") from exc
    # Validate eagerly so errors surface at config-parse time.
    probe = {v: np.full(2, 0.25) for v in variables}
    with np.errstate(all="ignore"):
        _evaluate(tree, probe, text)

    def fn(*coords):
        if len(coords) != len(variables):
            raise ExpressionError(
                f"expression over {variables} got {len(coords)} arguments")
        env = dict(zip(variables, (np.asarray(c, dtype=float)
                                   for c in coords)))
        out = _evaluate(tree, env, text)
        first = env[variables[0]] if variables else np.asarray(0.0)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.shape(first)).copy()

    return fn
