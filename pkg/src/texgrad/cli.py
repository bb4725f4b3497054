"""Command-line entry point: ``texgrad <command> [flags]``.

Exit codes: 0 success, 1 check failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

import numpy as np

from . import kernels as K
from .engine import ENGINE
from .errors import TexgradError, UnsupportedOpError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEMO_XS = [1.0, 2.0, 3.0, 4.0]
DEMO_YS = [1.0, 3.0, 5.0, 7.0]
CONVERGED_LOSS = 1e-2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 already; keep the message format ours
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _device_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--backend", choices=["cpu", "texsim"], help="force a backend")
    p.add_argument("--profile", choices=["f32", "f16"], default=None, help="texsim precision profile")
    p.add_argument("--packing", choices=["single", "packed"], default="single", help="texsim storage")
    return p


def _configure(args) -> None:
    backend = args.backend
    if backend is None and (args.profile or args.packing != "single"):
        backend = "texsim"
    if backend == "texsim":
        from .texsim.backend import TexSimBackend
        ENGINE.set_backend(TexSimBackend(profile=args.profile or "f32", packing=args.packing))
    elif backend == "cpu":
        ENGINE.set_backend("cpu")


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _fmt(v: float) -> str:
    return repr(float(v))


# ----------------------------------------------------------------------
# train-demo / predict

def cmd_train_demo(args) -> int:
    from . import layers, model_io, ops
    model = layers.sequential(seed=args.seed)
    model.add(layers.dense(units=1, input_shape=[1]))
    model.compile(loss="meanSquaredError", optimizer=layers.sgd(args.lr))
    xs = ops.tensor2d(DEMO_XS, [4, 1])
    ys = ops.tensor2d(DEMO_YS, [4, 1])
    initial = model.evaluate(xs, ys)
    history = model.fit(xs, ys, epochs=args.epochs, batch_size=args.batch_size)
    final = model.evaluate(xs, ys)
    pred = model.predict(ops.tensor2d([5.0], [1, 1]))
    prediction = pred.item()
    ok = args.epochs > 0 and final < CONVERGED_LOSS
    if args.save:
        model_io.save(model, args.save)
    if args.json:
        _emit({"backend": ENGINE.backend_name, "epochs": args.epochs, "learning_rate": args.lr,
               "seed": args.seed, "batch_size": args.batch_size, "initial_loss": initial,
               "history": list(history), "final_loss": final, "prediction_at_5": prediction,
               "converged": ok, "saved_to": args.save})
    else:
        print(f"backend {ENGINE.backend_name}  lr {args.lr}  seed {args.seed}  batch size {args.batch_size}")
        print(f"initial loss {_fmt(initial)}")
        for i, loss in enumerate(history, start=1):
            print(f"epoch {i:4d}  loss {_fmt(loss)}")
        if args.epochs:
            print(f"final loss {_fmt(final)}")
            print(f"predict(5) = {_fmt(prediction)}")
        if args.save:
            print(f"saved model to {args.save}")
        print("converged" if ok else f"did not reach loss < {CONVERGED_LOSS}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_predict(args) -> int:
    from . import model_io, ops
    model = model_io.load(args.load)
    x = np.asarray(args.x, np.float32).reshape(-1, model.input_dim)
    out = model.predict(ops.tensor(x)).numpy()
    if args.json:
        _emit({"inputs": x.tolist(), "outputs": out.tolist()})
    else:
        for row_in, row_out in zip(x.tolist(), out.tolist()):
            print(f"{', '.join(map(_fmt, row_in))} -> {', '.join(map(_fmt, row_out))}")
    return EXIT_OK


# ----------------------------------------------------------------------
# parity

def cmd_parity(args) -> int:
    from .parity import PARITY_KERNELS, run_parity
    kernels = tuple(args.kernels) if args.kernels else PARITY_KERNELS
    unknown = [k for k in kernels if k not in PARITY_KERNELS]
    if unknown:
        print(f"unknown kernels: {', '.join(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    if args.trials == 0:
        print("warning: --trials 0 runs no cases; parity holds vacuously", file=sys.stderr)
    report = run_parity(trials=args.trials, seed=args.seed, profile=args.profile or "f32", kernels=kernels)
    if args.json:
        _emit(report.to_dict(timing=args.timing))
    else:
        print(f"profile {report.profile}  trials {report.trials}  seed {report.seed}")
        print(f"{'kernel':<10} {'cases':>5} {'max dev':>10} {'tolerance':>10}  packed  result")
        for k in report.kernels:
            packed = "-" if report.profile != "F32" else ("ok" if not k.packed_mismatches else str(k.packed_mismatches))
            tol = "exact" if k.exact else f"{k.tolerance:.0e}"
            print(f"{k.kernel:<10} {k.cases:>5} {k.max_deviation:>10.3g} {tol:>10}  {packed:>6}  "
                  f"{'pass' if k.passed else 'FAIL'}")
        if args.timing:
            print(f"elapsed {report.seconds:.2f} s")
    if not report.passed:
        print(f"failing kernels: {', '.join(report.failing)}", file=sys.stderr)
        for k in report.kernels:
            for line in k.failures[:3]:
                print(f"  {k.kernel}: {line}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ----------------------------------------------------------------------
# dump-kernel

def parse_shapes(spec: str) -> list[tuple[int, ...]]:
    """``"2x4,4x3"`` -> [(2, 4), (4, 3)]; ``scalar`` stands for a rank-0 shape."""
    shapes = []
    for part in spec.split(","):
        part = part.strip().strip("[]")
        if part in ("", "scalar"):
            shapes.append(())
            continue
        dims = part.replace(" ", "").split("x")
        if not all(d.isdigit() for d in dims):
            raise ValueError(f"bad shape {part!r}; use dims joined by 'x', e.g. 2x4")
        shapes.append(tuple(int(d) for d in dims))
    return shapes


def _parse_attrs(items: Sequence[str]) -> dict[str, Any]:
    attrs = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"attribute {item!r} must look like key=value")
        try:
            attrs[key] = json.loads(value)
        except json.JSONDecodeError:
            attrs[key] = value
    return attrs


def cmd_dump_kernel(args) -> int:
    from .dsl.compiler import compile_kernel
    from .texsim.layout import compute_layout
    from .texsim.precision import get_profile
    try:
        if args.op not in K.ALL_KERNELS:
            raise UnsupportedOpError(f"no kernel template for op '{args.op}'")
        shapes = parse_shapes(args.shapes)
        attrs = _parse_attrs(args.attr or [])
        from .tensor import DType
        out_shape, _, _ = K.infer(args.op, shapes, [DType.float32] * len(shapes), attrs)
        layouts = [compute_layout(s, args.packing, args.max_texture_size) for s in shapes]
        out_layout = compute_layout(out_shape, args.packing, args.max_texture_size)
        program = compile_kernel(args.op, layouts, out_layout, get_profile(args.profile or "f32"), attrs)
    except (TexgradError, ValueError, KeyError) as exc:
        code = getattr(exc, "code", "USAGE")
        print(f"error [{code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(program.source)
    return EXIT_OK


# ----------------------------------------------------------------------
# profile

def _workload(name: str, size: int, seed: int):
    from . import layers, ops
    rng = np.random.default_rng(seed)

    def values(*shape):
        return rng.uniform(-1, 1, shape).astype(np.float32)

    if name == "matmul":
        a, b = ops.tensor(values(size, size)), ops.tensor(values(size, size))
        return lambda: ops.matmul(a, b)
    if name == "conv":
        x = ops.tensor(values(1, size, size, 3))
        f = ops.tensor(values(3, 3, 3, 8))
        return lambda: ops.conv2d(x, f, padding="same")
    model = layers.sequential(seed=seed)
    model.add(layers.dense(units=size, input_dim=size, activation="relu"))
    model.add(layers.dense(units=1))
    model.compile("meanSquaredError", layers.sgd(0.01))
    x, y = ops.tensor(values(8, size)), ops.tensor(values(8, 1))
    return lambda: model.train_step(x, y)


def cmd_profile(args) -> int:
    fn = _workload(args.workload, args.size, args.seed)
    result = ENGINE.profile(fn)
    doc = result.to_dict(timing=args.timing)
    doc.update(workload=args.workload, size=args.size, backend=ENGINE.backend_name)
    if args.json:
        _emit(doc)
        return EXIT_OK
    print(f"workload {args.workload}  size {args.size}  backend {ENGINE.backend_name}")
    header = f"{'#':>3}  {'kernel':<10} {'phase':<9} {'output shape':<18} {'bytes':>9}"
    if args.timing:
        header += f" {'ms':>9}"
    print(header)
    for i, k in enumerate(doc["kernels"], start=1):
        line = f"{i:>3}  {k['name']:<10} {k['phase']:<9} {str(k['output_shape']):<18} {k['output_bytes']:>9}"
        if args.timing:
            line += f" {k['elapsed_ms'] or 0.0:>9.3f}"
        print(line)
    print(f"new tensors {doc['new_tensors']}  new bytes {doc['new_bytes']}  "
          f"peak tensors {doc['peak_tensors']}  peak bytes {doc['peak_bytes']}")
    return EXIT_OK


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    dev = _device_flags()
    parser = _Parser(prog="texgrad", description="texgrad developer tools")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-demo", parents=[dev], help="train the y = 2x - 1 linear model")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batch-size", type=int, default=1,
                   help="examples per SGD step (default 1; the full batch is 4)")
    p.add_argument("--save", metavar="DIR")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("predict", parents=[dev], help="run a saved model")
    p.add_argument("--load", metavar="DIR", required=True)
    p.add_argument("--x", type=float, nargs="+", default=[5.0])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("parity", parents=[dev], help="randomized CPU vs texsim comparison")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernels", nargs="+")
    p.add_argument("--json", action="store_true")
    p.add_argument("--timing", action="store_true", help="include elapsed time")
    p.set_defaults(func=cmd_parity)

    p = sub.add_parser("dump-kernel", parents=[dev], help="print generated kernel source")
    p.add_argument("--op", required=True)
    p.add_argument("--shapes", required=True, help="input shapes, e.g. 2x4,4x3")
    p.add_argument("--attr", action="append", metavar="KEY=VALUE", help="kernel attribute (JSON value)")
    p.add_argument("--max-texture-size", type=int, default=4096)
    p.set_defaults(func=cmd_dump_kernel)

    p = sub.add_parser("profile", parents=[dev], help="per-kernel profile of a workload")
    p.add_argument("--workload", choices=["matmul", "conv", "train"], required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--timing", action="store_true", help="include per-kernel times")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "trials", 0) < 0 or getattr(args, "epochs", 0) < 0 or getattr(args, "size", 1) < 1:
            parser.error("counts must be non-negative and --size positive")
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        _configure(args)
        return args.func(args)
    except TexgradError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
