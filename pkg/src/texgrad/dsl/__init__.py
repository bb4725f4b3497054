"""Kernel language: AST, renderer, interpreter and layout-aware compiler."""
from .ast import KernelAst, validate
from .compiler import (KernelCache, KernelProgram, compile_kernel, interpret_kernel, output_coords_helper,
                       run_program, sampler_helper)
from .interpreter import Interpreter
from .render import render_source

__all__ = ["KernelAst", "KernelCache", "KernelProgram", "Interpreter", "compile_kernel",
           "interpret_kernel", "output_coords_helper", "render_source", "run_program",
           "sampler_helper", "validate"]
