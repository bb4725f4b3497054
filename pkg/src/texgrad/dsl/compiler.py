"""Kernel library and layout-specialized code generation.

Kernel bodies are written in logical coordinates. ``getOutputCoords`` and
one ``get<Input>`` sampler per input are generated from the concrete
texture layouts, so the same kernel source works for squeezed, folded and
packed storage.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import kernels as K
from ..errors import LayoutMismatchError, TexgradError, UnsupportedOpError
from ..tensor import DType, size_of
from ..texsim.layout import PACKED, TextureLayout
from ..texsim.precision import PrecisionProfile
from .ast import (Assign, Call, Const, Expr, For, FunctionDef, If, InputDecl, KernelAst, Let,
                  Return, SamplerInfo, Select, SetOutput, Var, call, coord_type, lit)
from .interpreter import Interpreter
from .render import render_source

PARAM_NAMES = "abcdef"
INPUT_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
SUPPORTED_OPS = K.ALL_KERNELS

ZERO = Const(0, "int")


def _const(e) -> int | None:
    return e.value if isinstance(e, Const) and e.type == "int" else None


def _add(a: Expr, b: Expr) -> Expr:
    if _const(a) == 0:
        return b
    if _const(b) == 0:
        return a
    return a + b


def _mul(a: Expr, k: int) -> Expr:
    if k == 1 or _const(a) == 0:
        return a
    return a * k


def _div(a: Expr, k: int) -> Expr:
    return a if k == 1 or _const(a) == 0 else a / k


def _mod(a: Expr, k: int) -> Expr:
    return ZERO if k == 1 or _const(a) == 0 else a % k


def _flatten(coords: Sequence[Expr], dims: Sequence[int]) -> Expr:
    """Row-major linear index (Horner form)."""
    if not coords:
        return ZERO
    e = coords[0]
    for c, d in zip(coords[1:], dims[1:]):
        e = _add(_mul(e, d), c)
    return e


def _unflatten(index: Expr, dims: Sequence[int]) -> list[Expr]:
    out = []
    for i, d in enumerate(dims):
        stride = size_of(dims[i + 1:])
        part = _div(index, stride)
        out.append(part if i == 0 else _mod(part, d))
    return out


def _logical(layout: TextureLayout, squeezed: list[Expr]) -> Expr:
    rank = len(layout.logical_shape)
    coords: list[Expr] = [ZERO] * rank
    for axis, e in zip(layout.kept_axes, squeezed):
        coords[axis] = e
    if rank == 0:
        return ZERO
    if rank == 1:
        return coords[0]
    return call(coord_type(rank), *coords)


def _layout_comment(layout: TextureLayout) -> str:
    return (f"logical {list(layout.logical_shape)} -> squeezed {list(layout.squeezed_shape)} -> "
            f"{layout.rows}x{layout.cols} {layout.packing}{'' if layout.direct else ' (folded)'}")


def sampler_helper(name: str, layout: TextureLayout) -> FunctionDef:
    """``get<name>(a, b, ...)``: logical coordinates to one texture sample.

    Coordinates of size-1 axes are accepted but never read.
    """
    rank = len(layout.logical_shape)
    params = tuple(("int", PARAM_NAMES[i]) for i in range(rank))
    kept: list[Expr] = [Var(PARAM_NAMES[i]) for i in layout.kept_axes] or [ZERO]
    sq = layout.squeezed_shape
    body: list = []
    tex = Var(name)

    def place(index: Expr):
        body.append(Let("int", "index", index))
        return Var("index") / layout.cols, Var("index") % layout.cols

    if layout.packing == PACKED:
        r, c = (ZERO, kept[0]) if len(sq) == 1 else (kept[-2], kept[-1])
        br, bc = layout.block_grid
        block_row = _add(_mul(_flatten(kept[:-2], sq[:-2]), br), _div(r, 2))
        if layout.direct:
            row, col = block_row, _div(c, 2)
        else:
            row, col = place(_add(_mul(block_row, bc), _div(c, 2)))
        channel = _add(_mul(_mod(r, 2), 2), _mod(c, 2))
        fetch = call("texelChannel", tex, row, col, channel)
    else:
        if not layout.direct:
            row, col = place(_flatten(kept, sq))
        elif len(sq) == 1:
            row, col = ZERO, kept[0]
        else:
            row, col = _flatten(kept[:-1], sq[:-1]), kept[-1]
        fetch = call("texel", tex, row, col)
    body.append(Return(fetch))
    info = SamplerInfo(name, layout.logical_shape, layout.kept_axes)
    return FunctionDef("float", f"get{name}", params, tuple(body), info, _layout_comment(layout))


def output_coords_helper(layout: TextureLayout) -> FunctionDef:
    """``getOutputCoords()``: the shaded texel (and channel) to logical coordinates."""
    sq = layout.squeezed_shape
    row, col, ch = Var("outRow"), Var("outCol"), Var("outChannel")
    body: list = []
    if layout.packing == PACKED:
        br, bc = layout.block_grid
        body.append(Let("int", "texelIndex", _add(_mul(row, layout.cols), col)))
        t = Var("texelIndex")
        per_batch = br * bc
        block = _mod(t, per_batch) if len(sq) > 2 else t
        r = _add(_mul(_div(block, bc), 2), _div(ch, 2))
        c = _add(_mul(_mod(block, bc), 2), _mod(ch, 2))
        batch = _unflatten(_div(t, per_batch), sq[:-2]) if len(sq) > 2 else []
        squeezed = [c] if len(sq) == 1 else batch + [r, c]
    elif not layout.direct:
        body.append(Let("int", "index", _add(_mul(row, layout.cols), col)))
        squeezed = _unflatten(Var("index"), sq)
    elif len(sq) == 1:
        squeezed = [col]
    else:
        squeezed = _unflatten(row, sq[:-1]) + [col]
    body.append(Return(_logical(layout, squeezed)))
    rank = len(layout.logical_shape)
    return FunctionDef(coord_type(rank), "getOutputCoords", (), tuple(body), None,
                       _layout_comment(layout))


# ----------------------------------------------------------------------
# kernel bodies

class _Builder:
    def __init__(self, op: str, in_shapes, out_shape, attrs):
        self.op = op
        self.in_shapes = in_shapes
        self.out_shape = out_shape
        self.attrs = attrs
        self.uniforms: list[tuple[str, str]] = []
        self.notes: list[str] = []
        self.out_rank = len(out_shape)

    def coord(self, i: int) -> Expr:
        return Var("coords") if self.out_rank == 1 else Var("coords")[i]

    def coords(self) -> list[Expr]:
        return [self.coord(i) for i in range(self.out_rank)]

    def head(self) -> list:
        if self.out_rank == 0:
            return []
        return [Let(coord_type(self.out_rank), "coords", call("getOutputCoords"))]

    @staticmethod
    def sample(index: int, coords: Sequence[Expr]) -> Call:
        return call(f"get{INPUT_NAMES[index]}", *coords)

    def broadcast(self, index: int) -> list[Expr]:
        shape = self.in_shapes[index]
        offset = self.out_rank - len(shape)
        return [ZERO if d == 1 else self.coord(offset + j) for j, d in enumerate(shape)]

    def build(self) -> tuple:
        op = self.op
        if op in K.UNARY:
            return self.head() + [SetOutput(self.unary(self.sample(0, self.coords())))]
        if op in K.BINARY:
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
            a, b = self.sample(0, self.broadcast(0)), self.sample(1, self.broadcast(1))
            return self.head() + [SetOutput(a._bin(sym, b))]
        return getattr(self, f"k_{op}")()

    def unary(self, x: Expr) -> Expr:
        op = self.op
        if op == "neg":
            return -x
        if op == "exp":
            return call("exp", x)
        if op == "log":
            self.uniforms.append(("float", "EPSILON"))
            return call("log", x + Var("EPSILON"))
        if op == "relu":
            return Select(x.gt(0.0), x, lit(0.0))
        if op == "sigmoid":
            return 1.0 / (1.0 + call("exp", -x))
        if op == "square":
            return x * x
        if op == "step":
            return Select(x.gt(0.0), lit(1.0), lit(0.0))
        raise UnsupportedOpError(op)  # pragma: no cover

    def k_matmul(self) -> tuple:
        n = self.in_shapes[0][1]
        n4 = n - n % 4
        r, c = self.coord(0), self.coord(1)
        i = Var("i")
        body = self.head() + [Let("float", "result", lit(0.0))]
        if n4:
            body.append(For("i", 0, n4, 4, (
                Let("vec4", "a", call("vec4", *(self.sample(0, [r, _add(i, lit(k))]) for k in range(4)))),
                Let("vec4", "b", call("vec4", *(self.sample(1, [_add(i, lit(k)), c]) for k in range(4)))),
                Assign("result", call("dot", Var("a"), Var("b")), "+="),
            )))
        if n % 4:
            self.notes.append(f"shared dim {n} is not a multiple of 4: scalar epilogue over the last {n % 4}")
            body.append(For("k", n4, n, 1, (
                Assign("result", self.sample(0, [r, Var("k")]) * self.sample(1, [Var("k"), c]), "+="),
            )))
        body.append(SetOutput(Var("result")))
        return tuple(body)

    def k_conv2d(self) -> tuple:
        x, f = self.in_shapes
        _, h, w, cin = x
        kh, kw = f[0], f[1]
        sh, sw = self.attrs["strides"]
        _, _, pad_top, pad_left = K.conv2d_geometry(x, f, (sh, sw), self.attrs["padding"])
        b, oy, ox, co = self.coords()
        iy, ix = Var("inY"), Var("inX")
        fetch = Assign("acc", self.sample(0, [b, iy, ix, Var("ci")]) *
                       self.sample(1, [Var("ky"), Var("kx"), Var("ci"), co]), "+=")
        padded = self.attrs["padding"] == "same" and (pad_top or pad_left or
                                                      (self.out_shape[1] - 1) * sh + kh > h or
                                                      (self.out_shape[2] - 1) * sw + kw > w)
        if padded:
            inside = iy.ge(0).and_(iy.lt(h)).and_(ix.ge(0)).and_(ix.lt(w))
            fetch = If(inside, (fetch,))
        inner = For("ci", 0, cin, 1, (fetch,))
        def source(out_c, step, tap, pad):
            e = _add(_mul(out_c, step), tap)
            return e - pad if pad else e

        loop = For("ky", 0, kh, 1, (
            Let("int", "inY", source(oy, sh, Var("ky"), pad_top)),
            For("kx", 0, kw, 1, (
                Let("int", "inX", source(ox, sw, Var("kx"), pad_left)),
                inner,
            )),
        ))
        return tuple(self.head() + [Let("float", "acc", lit(0.0)), loop, SetOutput(Var("acc"))])

    def _reduction(self, kind: str) -> tuple:
        shape = self.in_shapes[0]
        axes = self.attrs["axes"]
        out_iter = iter(self.coords())
        in_coords: list[Expr] = []
        for ax in range(len(shape)):
            in_coords.append(Var(f"r{ax}") if ax in axes else next(out_iter))
        if kind == "max":
            step: object = Assign("acc", call("max", Var("acc"), self.sample(0, in_coords)))
            init = lit(float("-inf"))
        else:
            step = Assign("acc", self.sample(0, in_coords), "+=")
            init = lit(0.0)
        body: object = step
        for ax in reversed(axes):
            body = For(f"r{ax}", 0, shape[ax], 1, (body,))
        stmts = self.head() + [Let("float", "acc", init)]
        if axes and all(shape[a] > 0 for a in axes):
            stmts.append(body)
        elif not axes:
            stmts.append(body)
        count = K.reduced_count(shape, axes)
        result = Var("acc") / call("float", lit(count)) if kind == "mean" else Var("acc")
        stmts.append(SetOutput(result))
        return tuple(stmts)

    def k_sum(self):
        return self._reduction("sum")

    def k_mean(self):
        return self._reduction("mean")

    def k_max(self):
        return self._reduction("max")

    def k_transpose(self) -> tuple:
        perm = self.attrs["perm"]
        src: list[Expr] = [ZERO] * len(perm)
        for j, p in enumerate(perm):
            src[p] = self.coord(j)
        return tuple(self.head() + [SetOutput(self.sample(0, src))])

    def k_slice(self) -> tuple:
        begin = self.attrs["begin"]
        src = [_add(self.coord(j), lit(b)) if b else self.coord(j) for j, b in enumerate(begin)]
        return tuple(self.head() + [SetOutput(self.sample(0, src))])

    def k_concat(self) -> tuple:
        axis = self.attrs["axis"]
        offsets = np.cumsum([0] + [s[axis] for s in self.in_shapes]).tolist()

        def piece(k: int) -> SetOutput:
            src = self.coords()
            if offsets[k]:
                src[axis] = src[axis] - offsets[k]
            return SetOutput(self.sample(k, src))

        chain: tuple = (piece(len(self.in_shapes) - 1),)
        for k in range(len(self.in_shapes) - 2, -1, -1):
            if self.in_shapes[k][axis] == 0:
                continue
            chain = (If(self.coord(axis).lt(offsets[k + 1]), (piece(k),), chain),)
        return tuple(self.head()) + chain


# ----------------------------------------------------------------------
# programs and cache

@dataclass(frozen=True)
class KernelProgram:
    op_name: str
    ast: KernelAst
    source: str
    input_layouts: tuple
    output_layout: TextureLayout
    profile: PrecisionProfile
    cache_key: str
    uniforms: Mapping[str, float] = field(default_factory=dict)

    def uniform_values(self) -> dict[str, np.float32]:
        """Uniforms as they arrive on the device, i.e. after profile rounding."""
        return {k: np.float32(self.profile.quantize(v)) for k, v in self.uniforms.items()}


def _attrs_key(attrs: Mapping) -> str:
    return ",".join(f"{k}={attrs[k]}" for k in sorted(attrs))


def cache_key(op_name: str, input_layouts, output_layout: TextureLayout,
              profile: PrecisionProfile, attrs: Mapping | None = None) -> str:
    ins = ";".join(lo.key for lo in input_layouts)
    return (f"{op_name}|{_attrs_key(attrs or {})}|in={ins}|out={output_layout.key}|"
            f"{profile.name}:eps={profile.epsilon!r}")


def compile_kernel(op_name: str, input_layouts: Sequence[TextureLayout], output_layout: TextureLayout,
                   profile: PrecisionProfile, attrs: Mapping | None = None) -> KernelProgram:
    if op_name not in SUPPORTED_OPS:
        raise UnsupportedOpError(f"no kernel template for op '{op_name}'")
    input_layouts = tuple(input_layouts)
    shapes = [lo.logical_shape for lo in input_layouts]
    try:
        out_shape, _, norm = K.infer(op_name, shapes, [DType.float32] * len(shapes), attrs)
    except TexgradError as exc:
        raise LayoutMismatchError(f"input layouts do not fit '{op_name}': {exc}") from exc
    if tuple(out_shape) != tuple(output_layout.logical_shape):
        raise LayoutMismatchError(
            f"'{op_name}' produces {list(out_shape)} but the output layout is "
            f"{list(output_layout.logical_shape)}")
    builder = _Builder(op_name, shapes, tuple(out_shape), norm)
    main = builder.build()
    helpers = [output_coords_helper(output_layout)] if builder.out_rank else []
    helpers += [sampler_helper(INPUT_NAMES[i], lo) for i, lo in enumerate(input_layouts)]
    ast = KernelAst(op_name=op_name,
                    inputs=tuple(InputDecl(INPUT_NAMES[i], lo) for i, lo in enumerate(input_layouts)),
                    output=output_layout, profile=profile, main=main, helpers=tuple(helpers),
                    uniforms=tuple(builder.uniforms), notes=tuple(builder.notes))
    uniforms = {"EPSILON": profile.epsilon} if builder.uniforms else {}
    return KernelProgram(op_name, ast, render_source(ast), input_layouts, output_layout, profile,
                         cache_key(op_name, input_layouts, output_layout, profile, norm), uniforms)


class KernelCache:
    """Compiled programs keyed by ``cache_key``; equal keys never recompile."""

    def __init__(self):
        self._programs: dict[str, KernelProgram] = {}
        self.compilations = 0
        self.hits = 0

    def __len__(self) -> int:
        return len(self._programs)

    def get(self, op_name, input_layouts, output_layout, profile, attrs=None) -> KernelProgram:
        shapes = [lo.logical_shape for lo in input_layouts]
        norm = K.infer(op_name, shapes, [DType.float32] * len(shapes), attrs)[2] \
            if op_name in SUPPORTED_OPS else {}
        key = cache_key(op_name, input_layouts, output_layout, profile, norm)
        program = self._programs.get(key)
        if program is not None:
            self.hits += 1
            return program
        program = compile_kernel(op_name, input_layouts, output_layout, profile, attrs)
        self.compilations += 1
        self._programs[key] = program
        return program

    def clear(self) -> None:
        self._programs.clear()


# ----------------------------------------------------------------------
# execution entry points

def _texture_map(program: KernelProgram, textures) -> dict[str, np.ndarray]:
    if isinstance(textures, Mapping):
        return dict(textures)
    return {INPUT_NAMES[i]: np.asarray(t, np.float32) for i, t in enumerate(textures)}


def run_program(program: KernelProgram, textures, lanes: np.ndarray | None = None,
                out: np.ndarray | None = None) -> np.ndarray:
    """Evaluate ``program`` on the given output lanes (default: all) into a texel buffer.

    ``lanes`` indexes ``output_layout.lanes()``; the returned buffer has the
    output layout's size, with unevaluated slots left untouched.
    """
    layout = program.output_layout
    rows, cols, chans = layout.lanes()
    if lanes is not None:
        lanes = np.asarray(lanes, np.int64)
        rows, cols, chans = rows[lanes], cols[lanes], chans[lanes]
        pos = layout.element_positions[lanes]
    else:
        pos = layout.element_positions
    if out is None:
        out = np.zeros(layout.buffer_size, np.float32)
    interp = Interpreter(program.ast, _texture_map(program, textures), program.uniform_values())
    out[pos] = interp.run(rows, cols, chans)
    return out


def interpret_kernel(program: KernelProgram, textures, texel_index) -> np.ndarray:
    """Channel values of one output texel.

    ``texel_index`` is a flat texel number or a (row, col) pair. The result
    has one entry per channel; slots that hold no logical element are 0.
    """
    layout = program.output_layout
    if isinstance(texel_index, tuple):
        r, c = texel_index
        texel_index = r * layout.cols + c
    texel_index = int(texel_index)
    if not 0 <= texel_index < layout.rows * layout.cols:
        raise IndexError(f"texel {texel_index} outside {layout.rows}x{layout.cols} output")
    pos = layout.element_positions
    lanes = np.nonzero(pos // layout.channels == texel_index)[0]
    buf = run_program(program, textures, lanes)
    start = texel_index * layout.channels
    return buf[start:start + layout.channels].copy()
