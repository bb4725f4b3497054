"""AST for the GLSL-like kernel language.

Kernels are written in logical coordinates against generated helpers
(``getOutputCoords``, ``get<Input>``, ``setOutput``). The language is
deliberately small: typed let-bindings, local assignment, arithmetic,
comparisons, ``dot``, a ternary, ``if``/``else`` and ``for`` loops whose
bounds are compile-time integers.

Expressions overload the arithmetic operators so kernel builders read close
to the source they render to; comparisons are methods because ``==`` keeps
its structural dataclass meaning.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from ..errors import KernelValidationError

SCALAR_TYPES = ("float", "int", "bool")
VECTOR_TYPES = ("vec4", "ivec2", "ivec3", "ivec4", "ivec5", "ivec6")
TYPES = SCALAR_TYPES + VECTOR_TYPES

BUILTIN_VARS = ("outRow", "outCol", "outChannel")
BUILTIN_FUNCS = ("exp", "log", "abs", "max", "min", "dot", "float", "int",
                 "vec4", "ivec2", "ivec3", "ivec4", "ivec5", "ivec6", "texel", "texelChannel")


def coord_type(rank: int) -> str:
    return "int" if rank <= 1 else f"ivec{rank}"


def lit(value) -> "Expr":
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool):
        return Const(value, "bool")
    if isinstance(value, int):
        return Const(value, "int")
    if isinstance(value, float):
        return Const(value, "float")
    raise TypeError(f"cannot lift {value!r} into a kernel expression")


class Expr:
    def _bin(self, op, other, swap=False):
        other = lit(other)
        return BinOp(op, other, self) if swap else BinOp(op, self, other)

    def __add__(self, o): return self._bin("+", o)
    def __radd__(self, o): return self._bin("+", o, True)
    def __sub__(self, o): return self._bin("-", o)
    def __rsub__(self, o): return self._bin("-", o, True)
    def __mul__(self, o): return self._bin("*", o)
    def __rmul__(self, o): return self._bin("*", o, True)
    def __truediv__(self, o): return self._bin("/", o)
    def __rtruediv__(self, o): return self._bin("/", o, True)
    def __mod__(self, o): return self._bin("%", o)
    def __neg__(self): return Unary("-", self)

    def lt(self, o): return self._bin("<", o)
    def le(self, o): return self._bin("<=", o)
    def gt(self, o): return self._bin(">", o)
    def ge(self, o): return self._bin(">=", o)
    def eq(self, o): return self._bin("==", o)
    def and_(self, o): return self._bin("&&", o)

    def __getitem__(self, i: int) -> "Index":
        return Index(self, i)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: Union[float, int, bool]
    type: str


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    operand: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    name: str
    args: tuple = ()


@dataclass(frozen=True, eq=True)
class Index(Expr):
    base: Expr
    index: int


@dataclass(frozen=True, eq=True)
class Select(Expr):
    cond: Expr
    if_true: Expr
    if_false: Expr


def call(name: str, *args) -> Call:
    return Call(name, tuple(lit(a) for a in args))


# statements

class Stmt:
    pass


@dataclass(frozen=True)
class Let(Stmt):
    type: str
    name: str
    value: Expr


@dataclass(frozen=True)
class Assign(Stmt):
    name: str
    value: Expr
    op: str = "="


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then: tuple
    orelse: tuple = ()


@dataclass(frozen=True)
class For(Stmt):
    var: str
    start: int
    stop: int
    step: int
    body: tuple


@dataclass(frozen=True)
class SetOutput(Stmt):
    value: Expr


@dataclass(frozen=True)
class Return(Stmt):
    value: Expr


@dataclass(frozen=True)
class SamplerInfo:
    """Bounds metadata for a generated ``get<Input>`` helper."""

    input_name: str
    logical_shape: tuple
    kept_axes: tuple


@dataclass(frozen=True)
class FunctionDef:
    ret_type: str
    name: str
    params: tuple  # of (type, name)
    body: tuple
    sampler: SamplerInfo | None = None
    comment: str = ""


@dataclass(frozen=True)
class InputDecl:
    name: str
    layout: object  # TextureLayout


@dataclass(frozen=True)
class KernelAst:
    op_name: str
    inputs: tuple
    output: object  # TextureLayout
    profile: object  # PrecisionProfile
    main: tuple
    helpers: tuple = ()
    uniforms: tuple = ()  # of (type, name)
    notes: tuple = field(default=())

    def __post_init__(self):
        validate(self)

    def function(self, name: str) -> FunctionDef | None:
        for f in self.helpers:
            if f.name == name:
                return f
        return None


# ----------------------------------------------------------------------
# validation

def _output_counts(stmts) -> set[int]:
    counts = {0}
    for s in stmts:
        if isinstance(s, SetOutput):
            counts = {min(c + 1, 2) for c in counts}
        elif isinstance(s, If):
            branch = _output_counts(s.then) | _output_counts(s.orelse)
            counts = {min(c + b, 2) for c in counts for b in branch}
        elif isinstance(s, For):
            if _output_counts(s.body) != {0}:
                raise KernelValidationError("setOutput may not appear inside a loop")
    return counts


class _Checker:
    def __init__(self, ast: KernelAst):
        self.funcs = {f.name for f in ast.helpers}
        self.samplers = {d.name for d in ast.inputs}
        self.uniforms = {name for _, name in ast.uniforms}

    def expr(self, e: Expr, scope: set[str]) -> None:
        if isinstance(e, Const):
            if e.type not in SCALAR_TYPES:
                raise KernelValidationError(f"bad constant type {e.type}")
        elif isinstance(e, Var):
            if e.name not in scope and e.name not in self.uniforms and e.name not in BUILTIN_VARS:
                raise KernelValidationError(f"undeclared name '{e.name}'")
        elif isinstance(e, BinOp):
            self.expr(e.left, scope)
            self.expr(e.right, scope)
        elif isinstance(e, Unary):
            self.expr(e.operand, scope)
        elif isinstance(e, Index):
            self.expr(e.base, scope)
        elif isinstance(e, Select):
            for part in (e.cond, e.if_true, e.if_false):
                self.expr(part, scope)
        elif isinstance(e, Call):
            if e.name not in BUILTIN_FUNCS and e.name not in self.funcs:
                raise KernelValidationError(f"call to unknown function '{e.name}'")
            args = e.args
            if e.name in ("texel", "texelChannel"):
                if not args or not isinstance(args[0], Var) or args[0].name not in self.samplers:
                    raise KernelValidationError(f"{e.name} needs a declared input texture")
                args = args[1:]
            for a in args:
                self.expr(a, scope)
        else:
            raise KernelValidationError(f"unknown expression node {e!r}")

    def block(self, stmts, scope: set[str], loop_vars: frozenset, in_helper: bool) -> None:
        scope = set(scope)
        for s in stmts:
            if isinstance(s, Let):
                if s.type not in TYPES:
                    raise KernelValidationError(f"unknown type '{s.type}'")
                self.expr(s.value, scope)
                scope.add(s.name)
            elif isinstance(s, Assign):
                if s.name not in scope:
                    raise KernelValidationError(f"assignment to undeclared '{s.name}'")
                if s.name in loop_vars:
                    raise KernelValidationError(f"loop variable '{s.name}' is read-only")
                if s.op not in ("=", "+=", "-=", "*="):
                    raise KernelValidationError(f"bad assignment operator {s.op}")
                self.expr(s.value, scope)
            elif isinstance(s, If):
                if in_helper:
                    raise KernelValidationError("helpers must be straight-line code")
                self.expr(s.cond, scope)
                self.block(s.then, scope, loop_vars, in_helper)
                self.block(s.orelse, scope, loop_vars, in_helper)
            elif isinstance(s, For):
                if in_helper:
                    raise KernelValidationError("helpers must be straight-line code")
                if not all(isinstance(v, int) and not isinstance(v, bool) for v in (s.start, s.stop, s.step)):
                    raise KernelValidationError("loop bounds must be compile-time integers")
                if s.step == 0:
                    raise KernelValidationError("loop step may not be zero")
                self.block(s.body, scope | {s.var}, loop_vars | {s.var}, in_helper)
            elif isinstance(s, SetOutput):
                if in_helper:
                    raise KernelValidationError("setOutput is only legal in main")
                self.expr(s.value, scope)
            elif isinstance(s, Return):
                if not in_helper:
                    raise KernelValidationError("return is only legal in helpers")
                self.expr(s.value, scope)
            else:
                raise KernelValidationError(f"unknown statement {s!r}")


def validate(ast: KernelAst) -> None:
    if not ast.main:
        raise KernelValidationError(f"kernel '{ast.op_name}' has an empty body")
    checker = _Checker(ast)
    for f in ast.helpers:
        if not f.body or not isinstance(f.body[-1], Return):
            raise KernelValidationError(f"helper '{f.name}' must end in a return")
        if any(isinstance(s, Return) for s in f.body[:-1]):
            raise KernelValidationError(f"helper '{f.name}' may only return once, at the end")
        checker.block(f.body, {name for _, name in f.params}, frozenset(), in_helper=True)
    checker.block(ast.main, set(), frozenset(), in_helper=False)
    counts = _output_counts(ast.main)
    if counts != {1}:
        raise KernelValidationError(
            f"kernel '{ast.op_name}': every path must call setOutput exactly once")
