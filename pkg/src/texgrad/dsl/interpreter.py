"""Evaluator for kernel ASTs.

The fragment-shader model runs ``main`` once per output texel with no
communication between texels. The interpreter evaluates a batch of such
invocations ("lanes") at once with numpy; each lane's arithmetic is
independent of which other lanes share the batch, so any partition or
order of texels produces bitwise-identical results.

An ``if`` whose condition differs across lanes splits the batch and runs
each branch only on its own lanes, so guarded samples never execute on
lanes that would read out of range.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import KernelValidationError, OutOfBoundsSampleError
from .ast import (Assign, BinOp, Call, Const, Expr, For, FunctionDef, If, Index, KernelAst, Let,
                  Return, Select, SetOutput, Unary, Var)

F32 = np.float32
I64 = np.int64


def _is_float(v) -> bool:
    t = type(v)
    if t is F32:
        return True
    if t is I64:
        return False
    return np.asarray(v).dtype.kind == "f"


def _f32(v):
    if type(v) is F32:
        return v
    if isinstance(v, tuple):
        return tuple(_f32(c) for c in v)
    return F32(v) if np.ndim(v) == 0 else np.asarray(v).astype(F32, copy=False)


def _int(v):
    if type(v) is I64:
        return v
    if isinstance(v, tuple):
        return tuple(_int(c) for c in v)
    if _is_float(v):
        v = np.trunc(v)
    return I64(v) if np.ndim(v) == 0 else np.asarray(v).astype(I64, copy=False)


def _idiv(a, b):
    # C/GLSL integer division truncates toward zero
    q = np.abs(a) // np.abs(b)
    return np.where((a < 0) ^ (b < 0), -q, q).astype(I64) if np.ndim(q) else I64(-q if (a < 0) ^ (b < 0) else q)


def _take(v, idx):
    if isinstance(v, tuple):
        return tuple(_take(c, idx) for c in v)
    return v if np.ndim(v) == 0 else v[idx]


def _scatter(old, idx, new, n):
    if isinstance(old, tuple):
        return tuple(_scatter(o, idx, w, n) for o, w in zip(old, new))
    if np.ndim(old) == 0 and np.ndim(new) == 0 and old == new and np.asarray(old).dtype == np.asarray(new).dtype:
        return old
    dtype = np.result_type(np.asarray(old).dtype, np.asarray(new).dtype)
    full = np.array(np.broadcast_to(old, (n,)), dtype=dtype)
    full[idx] = new
    return full


_CASTS = {"float": _f32, "int": _int, "bool": lambda v: np.asarray(v, bool) if np.ndim(v) else np.bool_(v)}


class Interpreter:
    """Runs one kernel AST over a batch of output lanes.

    ``textures`` maps every declared input name to its flat texel buffer;
    ``uniforms`` maps uniform names to already-quantized values.
    """

    def __init__(self, ast: KernelAst, textures: Mapping[str, np.ndarray],
                 uniforms: Mapping[str, float] | None = None,
                 quantize: Callable[[np.ndarray], np.ndarray] | None = None):
        self.ast = ast
        self.layouts = {d.name: d.layout for d in ast.inputs}
        missing = set(self.layouts) - set(textures)
        if missing:
            raise KernelValidationError(f"kernel '{ast.op_name}' is missing inputs {sorted(missing)}")
        self.textures = textures
        self.uniforms = {k: F32(v) for k, v in (uniforms or {}).items()}
        self.funcs = {f.name: f for f in ast.helpers}
        self.quantize = quantize or ast.profile.quantize
        self._out: np.ndarray | None = None
        self._globals = ("outRow", "outCol", "outChannel", *self.uniforms)

    def run(self, rows, cols, channels) -> np.ndarray:
        rows = np.asarray(rows, I64).reshape(-1)
        cols = np.asarray(cols, I64).reshape(-1)
        channels = np.broadcast_to(np.asarray(channels, I64), rows.shape).copy()
        n = rows.size
        self._out = np.zeros(n, F32)
        if n == 0:
            return self._out
        env = dict(self.uniforms)
        env.update(outRow=rows, outCol=cols, outChannel=channels)
        with np.errstate(all="ignore"):
            self._block(self.ast.main, env, np.arange(n))
        return self._out

    # statements

    def _block(self, stmts, env: dict, ids: np.ndarray) -> None:
        local = dict(env)
        for s in stmts:
            self._stmt(s, local, ids)
        for k in env:
            env[k] = local[k]

    def _stmt(self, s, env: dict, ids: np.ndarray) -> None:
        if isinstance(s, Let):
            value = self._eval(s.value, env)
            env[s.name] = _CASTS[s.type](value) if s.type in _CASTS else value
        elif isinstance(s, Assign):
            value = self._eval(s.value, env)
            if s.op != "=":
                value = self._arith(s.op[0], env[s.name], value)
            old = env[s.name]
            env[s.name] = _f32(value) if _is_float(old) and not isinstance(old, tuple) else value
        elif isinstance(s, SetOutput):
            value = self.quantize(_f32(self._eval(s.value, env)))
            self._out[ids] = np.broadcast_to(value, ids.shape)
        elif isinstance(s, For):
            for i in range(s.start, s.stop, s.step):
                local = dict(env)
                local[s.var] = I64(i)
                for st in s.body:
                    self._stmt(st, local, ids)
                for k in env:
                    env[k] = local[k]
        elif isinstance(s, If):
            self._if(s, env, ids)
        else:
            raise KernelValidationError(f"unexpected statement {type(s).__name__} in main")

    def _if(self, s: If, env: dict, ids: np.ndarray) -> None:
        cond = self._eval(s.cond, env)
        if np.ndim(cond) == 0:
            self._block(s.then if cond else s.orelse, env, ids)
            return
        cond = np.asarray(cond, bool)
        if cond.all():
            self._block(s.then, env, ids)
            return
        if not cond.any():
            self._block(s.orelse, env, ids)
            return
        n = ids.size
        for mask, branch in ((cond, s.then), (~cond, s.orelse)):
            if not branch:
                continue
            idx = np.nonzero(mask)[0]
            sub = {k: _take(v, idx) for k, v in env.items()}
            self._block(branch, sub, ids[idx])
            for k in env:
                env[k] = _scatter(env[k], idx, sub[k], n)

    # expressions

    def _arith(self, op: str, a, b):
        if isinstance(a, tuple) or isinstance(b, tuple):
            n = len(a) if isinstance(a, tuple) else len(b)
            ta = a if isinstance(a, tuple) else (a,) * n
            tb = b if isinstance(b, tuple) else (b,) * n
            return tuple(self._arith(op, x, y) for x, y in zip(ta, tb))
        if _is_float(a) or _is_float(b):
            a, b = _f32(a), _f32(b)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return a / b
            if op == "%":
                return a - b * np.floor(a / b)
        else:
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return _idiv(a, b)
            if op == "%":
                return a - b * _idiv(a, b)
        raise KernelValidationError(f"unknown operator {op}")

    def _eval(self, e: Expr, env: dict):
        if isinstance(e, Const):
            return _CASTS[e.type](e.value)
        if isinstance(e, Var):
            try:
                return env[e.name]
            except KeyError:
                raise KernelValidationError(f"undeclared name '{e.name}'") from None
        if isinstance(e, BinOp):
            a = self._eval(e.left, env)
            b = self._eval(e.right, env)
            op = e.op
            if op in ("+", "-", "*", "/", "%"):
                return self._arith(op, a, b)
            if op == "&&":
                return np.logical_and(a, b)
            if op == "||":
                return np.logical_or(a, b)
            if _is_float(a) or _is_float(b):
                a, b = _f32(a), _f32(b)
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            if op == ">=":
                return a >= b
            if op == "==":
                return a == b
            if op == "!=":
                return a != b
            raise KernelValidationError(f"unknown operator {op}")
        if isinstance(e, Unary):
            v = self._eval(e.operand, env)
            if e.op == "-":
                return tuple(-c for c in v) if isinstance(v, tuple) else -v
            if e.op == "!":
                return np.logical_not(v)
            raise KernelValidationError(f"unknown unary operator {e.op}")
        if isinstance(e, Index):
            base = self._eval(e.base, env)
            if isinstance(base, tuple):
                return base[e.index]
            if e.index == 0:
                return base
            raise KernelValidationError(f"component {e.index} of a scalar")
        if isinstance(e, Select):
            cond = self._eval(e.cond, env)
            a = self._eval(e.if_true, env)
            b = self._eval(e.if_false, env)
            if _is_float(a) or _is_float(b):
                a, b = _f32(a), _f32(b)
            if np.ndim(cond) == 0:
                return a if cond else b
            return np.where(cond, a, b).astype(np.asarray(a).dtype, copy=False)
        if isinstance(e, Call):
            return self._call(e, env)
        raise KernelValidationError(f"unknown expression {e!r}")

    def _call(self, e: Call, env: dict):
        name = e.name
        if name in ("texel", "texelChannel"):
            return self._fetch(e, env)
        args = [self._eval(a, env) for a in e.args]
        if name in self.funcs:
            return self._invoke(self.funcs[name], args, env)
        if name == "exp":
            return np.exp(_f32(args[0]))
        if name == "log":
            return np.log(_f32(args[0]))
        if name == "abs":
            return np.abs(args[0])
        if name in ("max", "min"):
            a, b = args
            if _is_float(a) or _is_float(b):
                a, b = _f32(a), _f32(b)
            return np.maximum(a, b) if name == "max" else np.minimum(a, b)
        if name == "dot":
            a, b = _f32(args[0]), _f32(args[1])
            acc = a[0] * b[0]
            for x, y in zip(a[1:], b[1:]):
                acc = acc + x * y
            return acc
        if name == "float":
            return _f32(args[0])
        if name == "int":
            return _int(args[0])
        if name == "vec4":
            comps = args * 4 if len(args) == 1 else args
            if len(comps) != 4:
                raise KernelValidationError("vec4 takes 1 or 4 components")
            return tuple(_f32(c) for c in comps)
        if name.startswith("ivec"):
            size = int(name[4:])
            comps = args * size if len(args) == 1 else args
            if len(comps) != size:
                raise KernelValidationError(f"{name} takes 1 or {size} components")
            return tuple(_int(c) for c in comps)
        raise KernelValidationError(f"unknown function '{name}'")

    def _invoke(self, f: FunctionDef, args, caller: dict):
        if len(args) != len(f.params):
            raise KernelValidationError(f"{f.name} expects {len(f.params)} arguments, got {len(args)}")
        if f.sampler is not None:
            info = f.sampler
            for axis in info.kept_axes:
                v = args[axis]
                dim = info.logical_shape[axis]
                if np.ndim(v) == 0:
                    outside = not 0 <= v < dim
                else:
                    outside = bool(((v < 0) | (v >= dim)).any())
                if outside:
                    arr = np.asarray(v)
                    bad = arr[(arr < 0) | (arr >= dim)].reshape(-1)[0]
                    raise OutOfBoundsSampleError(
                        f"kernel '{self.ast.op_name}': {f.name} coordinate {axis} = {int(bad)} "
                        f"outside logical shape {list(info.logical_shape)}")
        local = {k: caller[k] for k in self._globals}
        for (ptype, pname), value in zip(f.params, args):
            local[pname] = _CASTS[ptype](value) if ptype in _CASTS else value
        for s in f.body[:-1]:
            v = self._eval(s.value, local)
            local[s.name] = _CASTS[s.type](v) if s.type in _CASTS else v
        ret = self._eval(f.body[-1].value, local)
        return _CASTS[f.ret_type](ret) if f.ret_type in _CASTS else ret

    def _fetch(self, e: Call, env: dict):
        name = e.args[0].name
        layout = self.layouts[name]
        buf = self.textures[name]
        row = _int(self._eval(e.args[1], env))
        col = _int(self._eval(e.args[2], env))
        ch = _int(self._eval(e.args[3], env)) if e.name == "texelChannel" else I64(0)
        if np.ndim(row) == 0 and np.ndim(col) == 0 and np.ndim(ch) == 0:
            bad = not (0 <= row < layout.rows and 0 <= col < layout.cols and 0 <= ch < layout.channels)
        else:
            bad = bool(((row < 0) | (row >= layout.rows) | (col < 0) | (col >= layout.cols) |
                        (ch < 0) | (ch >= layout.channels)).any())
        if bad:
            raise OutOfBoundsSampleError(
                f"kernel '{self.ast.op_name}': texel fetch outside {name}'s "
                f"{layout.rows}x{layout.cols} texture")
        return buf[(row * layout.cols + col) * layout.channels + ch]
