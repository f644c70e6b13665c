"""Line-oriented group spec files.

    # comment
    [algebra]
    dim = 3
    basis = x y z
    bracket 1 2 3 1          # [e1, e2] = 1 * e3, indices 1-based

    [stratification]
    layer 1 2
    layer 3

    [metric]
    horizontal = 1 2
    gram_h = orthonormal      # or rows separated by ';', e.g. 2 0; 0 1
    gram_full = orthonormal
    vertical = left           # or right

    [frame]
    kind = warped_su2_pair    # structured frame instead of [algebra]
    profile = neg_c_arctan
    grid = -10 10 41

Numbers may be integers, fractions such as 1/2, or decimals.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .frames import PROFILES, counterexample_frame
from .geometry import SubRiemannianStructure
from .lie_core import LieAlgebra, Stratification

SECTIONS = ("algebra", "stratification", "metric", "frame")
FRAME_KINDS = ("warped_su2_pair",)


class SpecParseError(ValueError):
    def __init__(self, message: str, line: int, column: int, source: str = "<spec>"):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.message, self.line, self.column, self.source = message, line, column, source


@dataclass
class GroupSpec:
    dim: int | None = None
    basis: tuple[str, ...] | None = None
    brackets: list[tuple[int, int, int, object]] = field(default_factory=list)
    layers: list[tuple[int, ...]] | None = None
    horizontal: tuple[int, ...] | None = None
    gram_h: list[list[object]] | None = None
    gram_full: list[list[object]] | None = None
    vertical: str = "left"
    frame_kind: str | None = None
    profile: str | None = None
    grid: tuple[float, float, int] | None = None
    text: str = ""

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def is_structured(self) -> bool:
        return self.frame_kind is not None

    def algebra(self) -> LieAlgebra:
        if self.dim is None:
            raise ValueError("spec has no [algebra] section")
        strat = Stratification(tuple(tuple(i - 1 for i in layer) for layer in self.layers)) if self.layers else None
        return LieAlgebra.from_brackets(self.dim, [(i - 1, j - 1, k - 1, v) for i, j, k, v in self.brackets],
                                        basis_names=self.basis, stratification=strat)

    def structure(self) -> SubRiemannianStructure:
        if self.is_structured:
            return SubRiemannianStructure.from_structured(counterexample_frame(self.profile or "neg_c_arctan"))
        horizontal = None if self.horizontal is None else [i - 1 for i in self.horizontal]
        return SubRiemannianStructure.from_algebra(self.algebra(), horizontal=horizontal, gram_h=self.gram_h,
                                                   gram_full=self.gram_full, vertical=self.vertical)

    def grid_points(self):
        if self.grid is None:
            return None
        lo, hi, count = self.grid
        if count == 1:
            return [(lo,)]
        return [(lo + (hi - lo) * k / (count - 1),) for k in range(count)]

    def serialize(self) -> str:
        out: list[str] = []
        if self.dim is not None:
            out += ["[algebra]", f"dim = {self.dim}"]
            if self.basis is not None:
                out.append("basis = " + " ".join(self.basis))
            out += [f"bracket {i} {j} {k} {_fmt(v)}" for i, j, k, v in self.brackets]
            out.append("")
        if self.layers:
            out += ["[stratification]"] + ["layer " + " ".join(map(str, layer)) for layer in self.layers] + [""]
        if self.horizontal is not None or self.gram_h is not None or self.gram_full is not None \
                or self.vertical != "left":
            out.append("[metric]")
            if self.horizontal is not None:
                out.append("horizontal = " + " ".join(map(str, self.horizontal)))
            for key in ("gram_h", "gram_full"):
                value = getattr(self, key)
                if value is not None:
                    out.append(f"{key} = " + "; ".join(" ".join(_fmt(x) for x in row) for row in value))
            out += [f"vertical = {self.vertical}", ""]
        if self.frame_kind is not None:
            out += ["[frame]", f"kind = {self.frame_kind}"]
            if self.profile is not None:
                out.append(f"profile = {self.profile}")
            if self.grid is not None:
                out.append(f"grid = {_fmt(self.grid[0])} {_fmt(self.grid[1])} {self.grid[2]}")
            out.append("")
        return "\n".join(out)

    def semantic_key(self) -> tuple:
        return (self.dim, self.basis, tuple(self.brackets), None if self.layers is None else tuple(self.layers),
                self.horizontal, _freeze(self.gram_h), _freeze(self.gram_full), self.vertical,
                self.frame_kind, self.profile, self.grid)


def _freeze(rows):
    return None if rows is None else tuple(tuple(r) for r in rows)


def _fmt(value) -> str:
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _Line:
    def __init__(self, text: str, number: int, source: str):
        self.text, self.number, self.source = text, number, source

    def error(self, message: str, token: str | None = None) -> SpecParseError:
        col = self.text.find(token) + 1 if token else 1
        return SpecParseError(message, self.number, max(col, 1), self.source)

    def number_token(self, token: str):
        try:
            if any(ch in token for ch in ".eE") and "/" not in token:
                return float(token)
            return Fraction(token)
        except (ValueError, ZeroDivisionError):
            raise self.error(f"expected a number, got {token!r}", token) from None

    def int_token(self, token: str, low: int = 1, high: int | None = None) -> int:
        try:
            value = int(token)
        except ValueError:
            raise self.error(f"expected an integer, got {token!r}", token) from None
        if value < low or (high is not None and value > high):
            bound = f"{low}..{high}" if high is not None else f">= {low}"
            raise self.error(f"index {value} out of range {bound}", token)
        return value


def parse_spec(text: str, source: str = "<spec>") -> GroupSpec:
    """Parse spec text; every problem raises ``SpecParseError`` with line and column."""
    spec = GroupSpec(text=text)
    section = None
    seen: set[str] = set()
    deferred: list[tuple[_Line, str, list[str]]] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        line = _Line(raw, number, source)
        stripped = body.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise line.error("unterminated section header", "[")
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                raise line.error(f"unknown section [{name}]; expected one of {', '.join(SECTIONS)}", name or "[")
            if name in seen:
                raise line.error(f"duplicate section [{name}]", name)
            seen.add(name)
            section = name
            continue
        if section is None:
            raise line.error("content before the first section header", stripped.split()[0])
        if "=" in stripped:
            key, value = (part.strip() for part in stripped.split("=", 1))
            tokens = value.split()
        else:
            key, *tokens = stripped.split()
        deferred.append((line, section, [key] + tokens))
    for line, section, tokens in deferred:
        _apply(spec, line, section, tokens)
    _validate(spec, deferred, source)
    return spec


def _apply(spec: GroupSpec, line: _Line, section: str, tokens: list[str]) -> None:
    key, args = tokens[0], tokens[1:]
    if section == "algebra":
        if key == "dim":
            if len(args) != 1:
                raise line.error("dim takes one integer", key)
            spec.dim = line.int_token(args[0])
        elif key == "basis":
            if not args or len(set(args)) != len(args):
                raise line.error("basis needs distinct names", key)
            for name in args:
                if not name.isidentifier():
                    raise line.error(f"basis name {name!r} is not an identifier", name)
            spec.basis = tuple(args)
        elif key == "bracket":
            if len(args) != 4:
                raise line.error("bracket takes i j k value", key)
            if spec.dim is None:
                raise line.error("dim must precede bracket lines", key)
            i, j, k = (line.int_token(a, 1, spec.dim) for a in args[:3])
            if i == j:
                raise line.error("[e_i, e_i] is always zero", args[0])
            spec.brackets.append((i, j, k, line.number_token(args[3])))
        else:
            raise line.error(f"unknown key {key!r} in [algebra]", key)
    elif section == "stratification":
        if key != "layer" or not args:
            raise line.error("expected 'layer i j ...'", key)
        high = spec.dim
        spec.layers = (spec.layers or []) + [tuple(line.int_token(a, 1, high) for a in args)]
    elif section == "metric":
        if key == "horizontal":
            if not args:
                raise line.error("horizontal needs indices", key)
            spec.horizontal = tuple(line.int_token(a, 1, spec.dim) for a in args)
        elif key in ("gram_h", "gram_full"):
            if args == ["orthonormal"]:
                setattr(spec, key, None)
                return
            rows = " ".join(args).split(";")
            matrix = [[line.number_token(tok) for tok in row.split()] for row in rows]
            if any(len(row) != len(matrix) for row in matrix):
                raise line.error(f"{key} must be a square matrix", key)
            setattr(spec, key, matrix)
        elif key == "vertical":
            if args not in (["left"], ["right"]):
                raise line.error("vertical must be 'left' or 'right'", key)
            spec.vertical = args[0]
        else:
            raise line.error(f"unknown key {key!r} in [metric]", key)
    elif section == "frame":
        if key == "kind":
            if len(args) != 1 or args[0] not in FRAME_KINDS:
                raise line.error(f"frame kind must be one of {', '.join(FRAME_KINDS)}", key)
            spec.frame_kind = args[0]
        elif key == "profile":
            if len(args) != 1 or args[0] not in PROFILES:
                raise line.error(f"unknown profile; choose from {', '.join(sorted(PROFILES))}", args[0] if args else key)
            spec.profile = args[0]
        elif key == "grid":
            if len(args) != 3:
                raise line.error("grid takes low high count", key)
            lo, hi = (float(line.number_token(a)) for a in args[:2])
            spec.grid = (lo, hi, line.int_token(args[2]))
        else:
            raise line.error(f"unknown key {key!r} in [frame]", key)


def _validate(spec: GroupSpec, lines, source: str) -> None:
    last = lines[-1][0].number if lines else 1
    if spec.frame_kind is None and spec.dim is None:
        raise SpecParseError("spec needs an [algebra] section or a structured [frame]", last, 1, source)
    if spec.frame_kind is not None and spec.dim is not None:
        raise SpecParseError("a structured [frame] cannot be combined with [algebra]", last, 1, source)
    if spec.dim is not None and spec.basis is not None and len(spec.basis) != spec.dim:
        raise SpecParseError(f"basis has {len(spec.basis)} names but dim = {spec.dim}", last, 1, source)
    if spec.dim is not None and spec.basis is None:
        spec.basis = tuple(f"e{i + 1}" for i in range(spec.dim))
    if spec.layers is not None:
        flat = [i for layer in spec.layers for i in layer]
        if sorted(flat) != list(range(1, (spec.dim or 0) + 1)):
            raise SpecParseError("stratification layers must partition the basis", last, 1, source)
    n = len(spec.horizontal) if spec.horizontal is not None else (len(spec.layers[0]) if spec.layers else None)
    if spec.gram_h is not None and n is not None and len(spec.gram_h) != n:
        raise SpecParseError(f"gram_h must be {n}x{n}", last, 1, source)
    if spec.gram_full is not None and spec.dim is not None and len(spec.gram_full) != spec.dim:
        raise SpecParseError(f"gram_full must be {spec.dim}x{spec.dim}", last, 1, source)


def load_spec(path: str | Path) -> GroupSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecParseError(f"cannot read spec: {exc.strerror}", 0, 0, str(path)) from None
    return parse_spec(text, str(path))


def shipped_spec_path(name: str) -> Path:
    return Path(__file__).with_name("specs") / f"{name}.spec"
