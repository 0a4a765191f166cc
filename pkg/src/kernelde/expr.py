"""Small arithmetic expression language for differential operators.

Expressions use ``+ - * / ^`` (``**`` is accepted too), parentheses, numeric
literals, the functions ``sin``, ``cos`` and ``exp``, the constant ``pi``
and a caller-chosen set of variable names.  Parsing goes through Python's
``ast`` with a whitelist of node types; evaluation is vectorised with numpy.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

FUNCTIONS: dict[str, Callable] = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": math.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Expression:
    source: str
    variables: tuple[str, ...]
    tree: ast.Expression

    def __call__(self, **values) -> np.ndarray:
        missing = set(self.variables) - set(values)
        if missing:
            raise ExpressionError(f"missing values for {sorted(missing)}")
        with np.errstate(all="ignore"):
            return _eval(self.tree.body, values)

    def evaluate(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        return self(**env)


def parse(source: str, variables: Sequence[str] = ("x", "f", "df")) -> Expression:
    """Parse ``source``; raise :class:`ExpressionError` on anything outside the grammar."""
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError("empty expression")
    text = source.replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
    allowed = set(variables)
    for node in ast.walk(tree):
        _check(node, allowed, source)
    return Expression(source, tuple(variables), tree)


def _check(node: ast.AST, allowed: set[str], source: str) -> None:
    if isinstance(node, (ast.Expression, ast.Load)):
        return
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r} in {source!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in allowed and node.id not in CONSTANTS and node.id not in FUNCTIONS:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        return
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"unsupported operator in {source!r}")
        return
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.UAdd, ast.USub)):
            raise ExpressionError(f"unsupported unary operator in {source!r}")
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError(f"unsupported function call in {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        return
    if isinstance(node, (ast.operator, ast.unaryop)):
        return
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {source!r}")


def _eval(node: ast.AST, env: Mapping[str, np.ndarray]):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return np.asarray(env[node.id], dtype=float)
        return CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](_eval(node.args[0], env))
    raise ExpressionError(f"cannot evaluate {type(node).__name__}")
