"""Pretty-printer from kernel AST to GLSL-like source text.

The output is for inspection and golden tests; it is a pure function of the
AST. Texture fetches are spelled as normalized ``texture2D`` lookups of the
texel centre, and ``setOutput`` gets the render-target dialect of the AST's
precision profile.
"""
from __future__ import annotations

import math

from .ast import (Assign, BinOp, Call, Const, Expr, For, FunctionDef, If, Index, KernelAst, Let,
                  Return, Select, SetOutput, Unary, Var)

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}
_SWIZZLE = "xyzw"


def _float_literal(v: float) -> str:
    if math.isnan(v):
        return "(0.0 / 0.0)"
    if math.isinf(v):
        return "(1.0 / 0.0)" if v > 0 else "(-1.0 / 0.0)"
    text = repr(float(v))
    return text if any(ch in text for ch in ".e") else text + ".0"


class Renderer:
    def __init__(self, ast: KernelAst):
        self.ast = ast
        self.layouts = {d.name: d.layout for d in ast.inputs}

    def expr(self, e: Expr, parent: int = 0) -> str:
        if isinstance(e, Const):
            if e.type == "float":
                return _float_literal(e.value)
            if e.type == "bool":
                return "true" if e.value else "false"
            return str(int(e.value))
        if isinstance(e, Var):
            return e.name
        if isinstance(e, BinOp):
            prec = _PREC[e.op]
            # left-assoc: a right operand at equal precedence needs parens
            text = f"{self.expr(e.left, prec)} {e.op} {self.expr(e.right, prec + 1)}"
            return f"({text})" if prec < parent else text
        if isinstance(e, Unary):
            return f"{e.op}{self.expr(e.operand, 7)}"
        if isinstance(e, Index):
            base = self.expr(e.base, 8)
            return f"{base}.{_SWIZZLE[e.index]}" if e.index < 4 else f"{base}[{e.index}]"
        if isinstance(e, Select):
            text = f"{self.expr(e.cond, 1)} ? {self.expr(e.if_true, 1)} : {self.expr(e.if_false, 1)}"
            return f"({text})" if parent > 0 else text
        if isinstance(e, Call):
            if e.name in ("texel", "texelChannel"):
                return self._fetch(e)
            return f"{e.name}({', '.join(self.expr(a) for a in e.args)})"
        raise TypeError(f"cannot render {e!r}")

    def _fetch(self, e: Call) -> str:
        tex = e.args[0].name
        layout = self.layouts[tex]
        row, col = self.expr(e.args[1]), self.expr(e.args[2])
        uv = (f"(vec2(float({col}), float({row})) + 0.5) / "
              f"vec2({float(layout.cols)!r}, {float(layout.rows)!r})")
        lookup = f"texture2D({tex}, {uv})"
        if e.name == "texel":
            return f"{lookup}.r"
        return f"{lookup}[{self.expr(e.args[3])}]"

    def block(self, stmts, depth: int) -> list[str]:
        pad = "  " * depth
        lines: list[str] = []
        for s in stmts:
            if isinstance(s, Let):
                lines.append(f"{pad}{s.type} {s.name} = {self.expr(s.value)};")
            elif isinstance(s, Assign):
                lines.append(f"{pad}{s.name} {s.op} {self.expr(s.value)};")
            elif isinstance(s, SetOutput):
                lines.append(f"{pad}setOutput({self.expr(s.value)});")
            elif isinstance(s, Return):
                lines.append(f"{pad}return {self.expr(s.value)};")
            elif isinstance(s, For):
                if s.step == 1:
                    inc = f"{s.var}++"
                elif s.step > 0:
                    inc = f"{s.var} += {s.step}"
                else:
                    inc = f"{s.var} -= {-s.step}"
                cmp = "<" if s.step > 0 else ">"
                lines.append(f"{pad}for (int {s.var} = {s.start}; {s.var} {cmp} {s.stop}; {inc}) {{")
                lines.extend(self.block(s.body, depth + 1))
                lines.append(f"{pad}}}")
            elif isinstance(s, If):
                lines.append(f"{pad}if ({self.expr(s.cond)}) {{")
                lines.extend(self.block(s.then, depth + 1))
                if s.orelse:
                    lines.append(f"{pad}}} else {{")
                    lines.extend(self.block(s.orelse, depth + 1))
                lines.append(f"{pad}}}")
        return lines

    def function(self, f: FunctionDef) -> list[str]:
        params = ", ".join(f"{t} {n}" for t, n in f.params)
        lines = []
        if f.comment:
            lines.append(f"// {f.comment}")
        lines.append(f"{f.ret_type} {f.name}({params}) {{")
        lines.extend(self.block(f.body, 1))
        lines.append("}")
        return lines

    def set_output(self) -> list[str]:
        out = self.ast.output
        half = self.ast.profile.bits == 16
        target = f"{'R16F' if half else 'R32F'}{' x4 (packed RGBA)' if out.channels == 4 else ''}"
        value = "roundToHalf(value)" if half else "value"
        lines = [f"// render target: {self.ast.profile.name} {target}",
                 "void setOutput(float value) {"]
        if out.channels == 4:
            lines.append(f"  fragColor[outChannel] = {value};")
        else:
            lines.append(f"  fragColor = vec4({value}, 0.0, 0.0, 0.0);")
        lines.append("}")
        return lines

    def render(self) -> str:
        ast = self.ast
        out = ast.output
        lines = [f"// kernel: {ast.op_name}",
                 f"// output: logical {list(out.logical_shape)} -> physical {out.rows}x{out.cols} {out.packing}",
                 "precision highp float;",
                 "precision highp int;",
                 "// outRow, outCol: texel being shaded (from gl_FragCoord)"]
        if out.channels == 4:
            lines.append("// outChannel: RGBA slot of the packed texel being produced")
        for note in ast.notes:
            lines.append(f"// {note}")
        for d in ast.inputs:
            lo = d.layout
            lines.append(f"uniform sampler2D {d.name};  // logical {list(lo.logical_shape)} -> "
                         f"physical {lo.rows}x{lo.cols} {lo.packing}")
        for t, n in ast.uniforms:
            lines.append(f"uniform {t} {n};")
        lines.append("")
        for f in ast.helpers:
            lines.extend(self.function(f))
            lines.append("")
        lines.extend(self.set_output())
        lines.append("")
        if out.channels == 4:
            lines.append("// main() runs once per occupied channel of each output texel")
        lines.append("void main() {")
        lines.extend(self.block(ast.main, 1))
        lines.append("}")
        return "\n".join(lines) + "\n"


def render_source(ast: KernelAst) -> str:
    return Renderer(ast).render()
