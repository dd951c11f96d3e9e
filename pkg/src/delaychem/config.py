"""INI model files.

Example::

    [model]
    n = 1
    omega = 2*pi

    [d]
    kind = constant
    value = 1

    [s0]
    kind = sinusoid
    a = 2
    b = 1

    [species.1]
    response = michaelis_menten
    b = 10
    k = 1
    tau = 0.1

``kind`` for ``[d]``/``[s0]`` is ``constant`` (``value``), ``sinusoid``
(``a``, ``b``, ``c``: ``a + b sin(2 pi t/omega) + c cos(2 pi t/omega)``),
``grid`` (``values`` comma separated or ``file`` with one value per line) or
``expression`` (``expr`` in ``t``).  Responses are ``michaelis_menten``
(``b``, ``k``), ``linear`` (``b``) or ``table`` (``breakpoints = x:y, x:y, ...``).
Numbers accept simple arithmetic with ``pi``.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChemostatModel, PeriodicFn, QuadratureGrid, ResponseFn, Species


class ConfigError(ValueError):
    """Malformed config; ``line`` and ``field`` locate the problem when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None, field: str | None = None):
        where = ":".join(str(part) for part in (path, line) if part)
        if field:
            where = f"{where} [{field}]" if where else f"[{field}]"
        super().__init__(f"{where}: {message}" if where else message)
        self.path, self.line, self.field = path, line, field


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}


def parse_number(text: str) -> float:
    """Float literal or small arithmetic expression (``2*pi``, ``1/3``)."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(f"not a number: {text!r}")

    try:
        return float(ev(ast.parse(text, mode="eval")))
    except (SyntaxError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc


@dataclass(frozen=True)
class LoadedConfig:
    model: ChemostatModel
    grid: QuadratureGrid
    source: str

    def echo(self) -> list[str]:
        return self.model.describe() + [f"points_per_period = {self.grid.points_per_period}", f"rule = {self.grid.rule}"]


class _Reader:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path
        self.cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            self.cp.read_string(text, source=path or "<config>")
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if getattr(exc, "errors", None) else None
            raise ConfigError("malformed line", path, line) from exc
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from exc

    def line_of(self, section: str, key: str | None = None) -> int | None:
        current = None
        for no, raw in enumerate(self.text.splitlines(), 1):
            s = raw.strip()
            m = re.match(r"\[(.+)\]", s)
            if m:
                current = m.group(1).strip()
                if key is None and current == section:
                    return no
                continue
            if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s, re.I):
                return no
        return None

    def fail(self, message: str, section: str, key: str | None = None):
        field = f"{section}.{key}" if key else section
        raise ConfigError(message, self.path, self.line_of(section, key), field)

    def section(self, name: str):
        if not self.cp.has_section(name):
            raise ConfigError(f"missing section [{name}]", self.path)
        return self.cp[name]

    def get(self, section: str, key: str, default=None) -> str:
        sec = self.section(section)
        if key not in sec:
            if default is not None:
                return default
            self.fail(f"missing field '{key}'", section)
        return sec[key]

    def number(self, section: str, key: str, default: float | None = None) -> float:
        raw = self.get(section, key, None if default is None else str(default))
        try:
            return parse_number(raw)
        except ValueError:
            self.fail(f"'{key}' must be a number, got {raw!r}", section, key)


def _periodic(reader: _Reader, name: str, omega: float, base: Path | None) -> PeriodicFn:
    kind = reader.get(name, "kind").strip().lower()
    if kind == "constant":
        return PeriodicFn.constant(reader.number(name, "value"), omega)
    if kind == "sinusoid":
        return PeriodicFn.sinusoid(reader.number(name, "a"), reader.number(name, "b", 0.0),
                                   reader.number(name, "c", 0.0), omega)
    if kind == "grid":
        sec = reader.section(name)
        if "values" in sec:
            try:
                values = [parse_number(v) for v in sec["values"].replace("\n", ",").split(",") if v.strip()]
            except ValueError as exc:
                reader.fail(str(exc), name, "values")
        elif "file" in sec:
            path = Path(sec["file"].strip())
            if base is not None and not path.is_absolute():
                path = base / path
            try:
                values = list(np.loadtxt(path, comments="#", delimiter=",", ndmin=1).ravel())
            except OSError as exc:
                reader.fail(f"cannot read grid file: {exc}", name, "file")
        else:
            reader.fail("grid needs 'values' or 'file'", name)
        if len(values) < 4:
            reader.fail("grid needs at least 4 samples", name, "values")
        return PeriodicFn.from_samples(values, omega)
    if kind == "expression":
        expr = reader.get(name, "expr")
        fn = PeriodicFn.expression(expr, omega)
        try:
            fn(np.array([0.0, 0.5 * omega]))
        except Exception as exc:  # noqa: BLE001 - any evaluation failure is a config problem
            reader.fail(f"cannot evaluate expression: {exc}", name, "expr")
        return fn
    reader.fail(f"unknown kind {kind!r} (constant, sinusoid, grid, expression)", name, "kind")


def _response(reader: _Reader, name: str) -> ResponseFn:
    kind = reader.get(name, "response").strip().lower()
    try:
        if kind == "michaelis_menten":
            return ResponseFn.michaelis_menten(reader.number(name, "b"), reader.number(name, "k", 1.0))
        if kind == "linear":
            return ResponseFn.linear(reader.number(name, "b"))
        if kind == "table":
            raw = reader.get(name, "breakpoints")
            pts = []
            for item in raw.replace("\n", ",").split(","):
                if not item.strip():
                    continue
                x, _, y = item.partition(":")
                pts.append((parse_number(x), parse_number(y)))
            return ResponseFn.table(pts)
    except ConfigError:
        raise
    except ValueError as exc:
        reader.fail(str(exc), name, "response")
    reader.fail(f"unknown response {kind!r} (michaelis_menten, linear, table)", name, "response")


def loads(text: str, path: str | None = None) -> LoadedConfig:
    reader = _Reader(text, path)
    base = Path(path).parent if path else None
    omega = reader.number("model", "omega", 2 * math.pi)
    if not omega > 0:
        reader.fail("omega must be positive", "model", "omega")
    sections = [s for s in reader.cp.sections() if s.lower().startswith("species.")]
    try:
        order = sorted(sections, key=lambda s: int(s.split(".", 1)[1]))
    except ValueError:
        bad = next(s for s in sections if not s.split(".", 1)[1].isdigit())
        raise ConfigError("species sections must be numbered, e.g. [species.1]", path, reader.line_of(bad))
    n_declared = reader.get("model", "n", str(len(order)))
    try:
        n = int(n_declared)
    except ValueError:
        reader.fail(f"'n' must be an integer, got {n_declared!r}", "model", "n")
    if n != len(order):
        reader.fail(f"n = {n} but {len(order)} [species.i] sections found", "model", "n")
    expected = [f"species.{i}" for i in range(1, n + 1)]
    if order != expected:
        raise ConfigError(f"species sections must be numbered 1..{n}", path, reader.line_of(order[0]))

    d = _periodic(reader, "d", omega, base)
    s0 = _periodic(reader, "s0", omega, base)
    species = []
    for name in order:
        p = _response(reader, name)
        tau = reader.number(name, "tau", 0.0)
        if tau < 0:
            reader.fail("tau must be nonnegative", name, "tau")
        species.append(Species(p, tau))
    M = int(reader.number("model", "points_per_period", 512))
    rule = reader.get("model", "rule", "simpson").strip().lower()
    try:
        grid = QuadratureGrid(M, rule)
    except ValueError as exc:
        reader.fail(str(exc), "model", "points_per_period")
    return LoadedConfig(ChemostatModel(omega, d, s0, tuple(species)), grid, path or "<string>")


def load(path) -> LoadedConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from exc
    return loads(text, str(p))


def _fmt(v: float) -> str:
    return repr(float(v))


def _periodic_lines(fn: PeriodicFn) -> list[str]:
    if fn.kind == "constant":
        return ["kind = constant", f"value = {_fmt(fn.params[0])}"]
    if fn.kind == "sinusoid":
        a, b, c = fn.params
        return ["kind = sinusoid", f"a = {_fmt(a)}", f"b = {_fmt(b)}", f"c = {_fmt(c)}"]
    if fn.kind == "expression":
        return ["kind = expression", f"expr = {fn.expr}"]
    return ["kind = grid", "values = " + ", ".join(_fmt(v) for v in fn.values)]


def dumps(model: ChemostatModel, grid: QuadratureGrid | None = None) -> str:
    """Serialise a model back to the INI format (round-trips through :func:`loads`)."""
    grid = grid or QuadratureGrid()
    lines = ["[model]", f"n = {model.n}", f"omega = {_fmt(model.omega)}",
             f"points_per_period = {grid.points_per_period}", f"rule = {grid.rule}", "", "[d]"]
    lines += _periodic_lines(model.d) + ["", "[s0]"] + _periodic_lines(model.s0)
    for i, sp in enumerate(model.species, 1):
        p = sp.response
        lines += ["", f"[species.{i}]", f"response = {p.kind}"]
        if p.kind == "michaelis_menten":
            lines += [f"b = {_fmt(p.b)}", f"k = {_fmt(p.k)}"]
        elif p.kind == "linear":
            lines += [f"b = {_fmt(p.b)}"]
        else:
            lines += ["breakpoints = " + ", ".join(f"{_fmt(x)}:{_fmt(y)}" for x, y in p.breakpoints)]
        lines.append(f"tau = {_fmt(sp.tau)}")
    return "\n".join(lines) + "\n"
