"""JSON run configuration: schema validation, field expressions, setup builders.

Scalar coefficient fields may be numbers, per-cell tables, or small
arithmetic expressions over x and y with +, -, *, /, parentheses, unary
minus, sin, cos, exp, pi and numeric literals. Expressions are parsed by a
tiny recursive-descent evaluator (no eval), vectorized over numpy arrays.
"""

from __future__ import annotations

import json
import re

import numpy as np

from .assembly import CoefficientFields, PriorEllipsoid, assemble_core_forms
from .estimator import FunctionalSpec
from .femspace import build_spaces
from .mesh import generate_unit_square, load_triangle_mesh
from .observation import Channel, ObservationSetup


class ConfigError(ValueError):
    """Schema violation or inconsistent cross-references in a run config."""


# ----------------------------------------------------------------------
# expression evaluator
_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/()]))"
)

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ConfigError(f"bad expression near {text[pos:]!r}")
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0
        self.text = text

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ConfigError(f"expected {op!r} in expression {self.text!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ConfigError(f"trailing input in expression {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.next()[1]
            rhs = self.term()
            node = (op, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.next()[1]
            rhs = self.unary()
            node = (op, node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.next()
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return ("num", val)
        if kind == "name":
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return ("call", val, arg)
            if val in _CONSTS:
                return ("num", _CONSTS[val])
            if val in ("x", "y"):
                return ("var", val)
            raise ConfigError(f"unknown name {val!r} in expression {self.text!r}")
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect_op(")")
            return node
        raise ConfigError(f"unexpected token in expression {self.text!r}")


def _eval_node(node, x, y):
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        return x if node[1] == "x" else y
    if op == "neg":
        return -_eval_node(node[1], x, y)
    if op == "call":
        return _FUNCS[node[1]](_eval_node(node[2], x, y))
    a = _eval_node(node[1], x, y)
    b = _eval_node(node[2], x, y)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b


def parse_expression(text):
    """Compile an expression string to a vectorized f(x, y)."""
    tree = _Parser(str(text)).parse()
    return lambda x, y: np.broadcast_arrays(_eval_node(tree, x, y),
                                            np.asarray(x, dtype=float))[0]


def scalar_field(spec):
    """A number or expression as a point-evaluable function f(p)."""
    if isinstance(spec, (int, float)):
        val = float(spec)
        return lambda p: val
    if isinstance(spec, str):
        f = parse_expression(spec)
        return lambda p: float(f(p[0], p[1]))
    raise ConfigError(f"expected number or expression, got {spec!r}")


def vector_field(spec):
    if (not isinstance(spec, (list, tuple))) or len(spec) != 2:
        raise ConfigError("vector fields are [fx, fy] pairs")
    fx, fy = scalar_field(spec[0]), scalar_field(spec[1])
    return lambda p: np.array([fx(p), fy(p)])


def cell_values(spec, mesh, name):
    """Per-cell values from a number, expression, or {"table": [...]} spec."""
    if isinstance(spec, dict) and set(spec) == {"table"}:
        vals = np.asarray(spec["table"], dtype=float)
        if vals.shape != (mesh.num_cells,):
            raise ConfigError(
                f"{name}: table length {vals.shape} does not match "
                f"{mesh.num_cells} cells"
            )
        return vals
    if isinstance(spec, (int, float)):
        return np.full(mesh.num_cells, float(spec))
    if isinstance(spec, str):
        f = parse_expression(spec)
        return np.asarray(
            f(mesh.centroids[:, 0], mesh.centroids[:, 1]), dtype=float
        )
    raise ConfigError(f"{name}: expected number, expression or table")


# ----------------------------------------------------------------------
# config loading
_COMMAND_SECTIONS = {"forward", "converge", "montecarlo", "observations"}
_TOP_KEYS = {"mesh", "coefficients", "prior", "channels", "functional",
             "seed"} | _COMMAND_SECTIONS


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("mesh", "coefficients", "prior"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required section {key!r}")
    return raw


def build_mesh(raw):
    spec = raw["mesh"]
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("mesh section needs a 'kind'")
    if spec["kind"] == "unit_square":
        n = spec.get("n")
        if not isinstance(n, int) or n < 1:
            raise ConfigError("mesh.n must be a positive integer")
        return generate_unit_square(n)
    if spec["kind"] == "triangle":
        for key in ("node", "ele"):
            if key not in spec:
                raise ConfigError(f"mesh.{key} path is required")
        return load_triangle_mesh(spec["node"], spec["ele"])
    raise ConfigError(f"unknown mesh kind {spec['kind']!r}")


def build_coefficients(raw, mesh):
    spec = raw["coefficients"]
    if "A" not in spec or "c" not in spec:
        raise ConfigError("coefficients section needs 'A' and 'c'")
    a_spec = spec["A"]
    if isinstance(a_spec, dict) and set(a_spec) == {"table"}:
        A = np.asarray(a_spec["table"], dtype=float)
    else:
        A = np.asarray(a_spec, dtype=float)
    c = cell_values(spec["c"], mesh, "coefficients.c")
    return CoefficientFields(mesh, A, c)


def build_prior(raw, mesh):
    spec = raw["prior"]
    for key in ("f0", "q"):
        if key not in spec:
            raise ConfigError(f"prior section needs {key!r}")
    return PriorEllipsoid(
        mesh,
        cell_values(spec["f0"], mesh, "prior.f0"),
        cell_values(spec["q"], mesh, "prior.q"),
        epsilon1=spec.get("epsilon1", 1.0),
    )


def subdomain_cells(spec, mesh):
    if spec == "all":
        return np.arange(mesh.num_cells)
    if isinstance(spec, list):
        cells = np.asarray(spec, dtype=int)
        if cells.size == 0:
            raise ConfigError("channel subdomain list is empty")
        if cells.min() < 0 or cells.max() >= mesh.num_cells:
            raise ConfigError("channel subdomain not contained in the mesh")
        return cells
    if isinstance(spec, dict) and set(spec) == {"box"}:
        x0, x1, y0, y1 = (float(v) for v in spec["box"])
        cen = mesh.centroids
        mask = ((cen[:, 0] >= x0) & (cen[:, 0] <= x1)
                & (cen[:, 1] >= y0) & (cen[:, 1] <= y1))
        if not mask.any():
            raise ConfigError("channel box contains no cell centroids")
        return np.nonzero(mask)[0]
    raise ConfigError(f"bad subdomain spec {spec!r}")


def build_channel(spec, mesh):
    if not isinstance(spec, dict):
        raise ConfigError("each channel must be an object")
    unknown = set(spec) - {"group", "subdomain", "kernel", "weight"}
    if unknown:
        raise ConfigError(f"channel has unknown keys {sorted(unknown)}")
    group = spec.get("group")
    if group not in ("flux", "scalar"):
        raise ConfigError("channel group must be 'flux' or 'scalar'")
    cells = subdomain_cells(spec.get("subdomain", "all"), mesh)
    kernel_spec = spec.get("kernel", "identity")
    nc = cells.size
    if kernel_spec == "identity":
        kernel = None
    elif isinstance(kernel_spec, dict) and set(kernel_spec) == {"constant"}:
        k = float(kernel_spec["constant"])
        if group == "scalar":
            kernel = np.full((nc, nc), k)
        else:
            kernel = np.broadcast_to(k * np.eye(2), (nc, nc, 2, 2)).copy()
    else:
        raise ConfigError(f"bad kernel spec {kernel_spec!r}")
    weight = spec.get("weight", 1.0)
    if isinstance(weight, list):
        weight = np.asarray(weight, dtype=float)
    elif not isinstance(weight, (int, float)):
        raise ConfigError(f"bad weight spec {weight!r}")
    return Channel(group, cells, kernel, weight, mesh)


def build_setup(raw, hdiv, l2):
    channels = raw.get("channels", [])
    if not isinstance(channels, list):
        raise ConfigError("channels must be a list")
    return ObservationSetup(
        hdiv, l2, [build_channel(s, hdiv.mesh) for s in channels]
    )


def build_functional(raw, hdiv, l2):
    spec = raw.get("functional")
    if spec is None:
        raise ConfigError("this command requires a 'functional' section")
    kind = spec.get("kind")
    if kind == "state":
        if "l1" not in spec or "l2" not in spec:
            raise ConfigError("state functional needs 'l1' and 'l2'")
        l1 = hdiv.interpolate(vector_field(spec["l1"]))
        l2c = cell_values(spec["l2"], hdiv.mesh, "functional.l2")
        return FunctionalSpec.state(l1, l2c)
    if kind == "rhs":
        if "l0" not in spec:
            raise ConfigError("rhs functional needs 'l0'")
        return FunctionalSpec.rhs(cell_values(spec["l0"], hdiv.mesh,
                                              "functional.l0"))
    raise ConfigError("functional kind must be 'state' or 'rhs'")


def build_problem(raw):
    """Mesh, spaces, coefficients, prior and assembled core blocks."""
    mesh = build_mesh(raw)
    hdiv, l2 = build_spaces(mesh)
    coeffs = build_coefficients(raw, mesh)
    prior = build_prior(raw, mesh)
    blocks = assemble_core_forms(hdiv, l2, coeffs, prior)
    return mesh, hdiv, l2, coeffs, prior, blocks
