"""A small arithmetic grammar for data fields given as text.

Allowed: numbers, ``x y z t pi``, binary ``+ - * / ^`` (``**`` too), unary
minus, parentheses and the functions ``sin cos exp``.  Everything else is
rejected at parse time, so no arbitrary code is evaluated.
"""
from __future__ import annotations

import ast
import operator

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
VARIABLES = ("x", "y", "z", "t")
CONSTANTS = {"pi": np.pi}

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ExpressionError(ValueError):
    pass


def _check(node, text):
    if isinstance(node, ast.Expression):
        return _check(node.body, text)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r} in {text!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in VARIABLES and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, text)
        _check(node.right, text)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        _check(node.operand, text)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError(f"unsupported function in {text!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument in {text!r}")
        _check(node.args[0], text)
        return
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, env))
    return FUNCTIONS[node.func.id](_eval(node.args[0], env))


class Expression:
    """Compiled scalar expression, callable as ``expr(x, t)``.

    ``x`` has shape ``(..., dim)``; the result is broadcast to ``x.shape[:-1]``.
    """

    def __init__(self, text: str):
        self.text = str(text).strip()
        if not self.text:
            raise ExpressionError("empty expression")
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        _check(tree, self.text)
        self._tree = tree.body
        self.names = sorted({n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id in VARIABLES})
        self.is_constant = not self.names

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        env = {"t": float(t)}
        for k, name in enumerate(("x", "y", "z")):
            if name in self.names:
                if k >= x.shape[-1]:
                    raise ExpressionError(f"{self.text!r} uses {name} on a {x.shape[-1]}D mesh")
                env[name] = x[..., k]
        with np.errstate(all="ignore"):
            out = _eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def constant_value(self) -> float:
        if not self.is_constant:
            raise ExpressionError(f"{self.text!r} is not constant")
        return float(_eval(self._tree, {}))

    def __repr__(self):
        return f"Expression({self.text!r})"


class VectorExpression:
    """Componentwise vector field from comma-separated expressions."""

    def __init__(self, parts):
        self.parts = [p if isinstance(p, Expression) else Expression(p) for p in parts]
        self.is_constant = all(p.is_constant for p in self.parts)

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        if len(self.parts) != x.shape[-1]:
            raise ExpressionError(f"vector field has {len(self.parts)} components on a {x.shape[-1]}D mesh")
        return np.stack([p(x, t) for p in self.parts], axis=-1)

    @property
    def text(self) -> str:
        return ", ".join(p.text for p in self.parts)


def parse_field(text: str):
    """Scalar or comma-separated vector field; constants come back as floats."""
    parts = [p for p in str(text).split(",")]
    if len(parts) == 1:
        e = Expression(parts[0])
        return e.constant_value() if e.is_constant else e
    v = VectorExpression(parts)
    if v.is_constant:
        return np.array([p.constant_value() for p in v.parts])
    return v
