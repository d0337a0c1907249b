"""Safe evaluation of symbol and metric expressions from config files.

Expressions are written over the variables ``x1..xn`` and ``xi1..xin`` with
the operators ``+ - * / ^`` (``^`` meaning power), the functions ``sin``,
``cos``, ``exp``, ``sqrt``, ``abs``, and the bracket weight ``ang(t) =
sqrt(1 + t^2)``.  Parsing goes through :mod:`ast` with a strict whitelist;
anything outside the grammar raises :class:`ExpressionError`.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np


class ExpressionError(ValueError):
    """Expression uses syntax or names outside the allowed grammar."""


_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "ang": lambda t: np.sqrt(1.0 + np.square(t)),
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_UNARYOPS = {ast.UAdd: lambda v: v, ast.USub: np.negative}


def _check(node: ast.AST, names: set[str]) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, names)
    elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, names)
        _check(node.right, names)
    elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARYOPS:
        _check(node.operand, names)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError(f"unknown function in expression: {ast.dump(node.func)}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError("functions take exactly one positional argument")
        _check(node.args[0], names)
    elif isinstance(node, ast.Name):
        if node.id not in names and node.id not in _CONSTANTS:
            raise ExpressionError(f"unknown name: {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant: {node.value!r}")
    else:
        raise ExpressionError(f"disallowed syntax: {type(node).__name__}")


def _eval(node: ast.AST, env: dict[str, object]):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARYOPS[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Call):
        return _FUNCTIONS[node.func.id](_eval(node.args[0], env))
    if isinstance(node, ast.Name):
        return env.get(node.id, _CONSTANTS.get(node.id))
    if isinstance(node, ast.Constant):
        return node.value
    raise ExpressionError(f"disallowed syntax: {type(node).__name__}")


def parse_expression(text: str, dim: int, with_xi: bool = True) -> Callable:
    """Compile an expression string into f(x1..xd[, xi1..xid]) on arrays.

    The returned callable broadcasts over numpy array arguments.
    """
    names = {f"x{i + 1}" for i in range(dim)}
    if with_xi:
        names |= {f"xi{i + 1}" for i in range(dim)}
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from exc
    _check(tree, names)

    arg_names = [f"x{i + 1}" for i in range(dim)]
    if with_xi:
        arg_names += [f"xi{i + 1}" for i in range(dim)]

    def f(*args):
        if len(args) != len(arg_names):
            raise TypeError(f"expected {len(arg_names)} arguments, got {len(args)}")
        env = dict(zip(arg_names, args))
        return _eval(tree, env)

    f.__name__ = "expr"
    f.expression = text
    return f
