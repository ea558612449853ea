"""Command-line interface.

Subcommands: gen-data, train, eval, bench-translate, bench-rotate,
bench-identify, register, field-slice, gradcheck.  Flags can be preloaded
from a flat key=value config file (flags win over the file); every run writes
a manifest beside its outputs holding the fully resolved configuration, and
re-running a subcommand with that manifest as its config reproduces the CSV
outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, evaluation, report
from .datasets import load_mesh_dir, make_synthetic_shape, shape_pool
from .evaluation import (
    DistanceMethod,
    field_slice,
    identification_topm,
    registration_benchmark,
    rotation_detection,
    success_ratio,
    translation_detection,
)
from .formats import (
    ArchiveFormatError,
    ArchiveIntegrityError,
    MeshParseError,
    load_model,
    read_xyz,
    save_model,
    write_off,
    write_xyz,
)
from .geometry import (
    DegenerateShapeError,
    EmptySurfaceError,
    farthest_point_sampling,
    normalize_mesh,
    sample_mesh_surface,
)
from .network import TrainConfig, TrainingDivergenceError, gradient_check, train

__all__ = ["main", "run", "UsageError"]


class UsageError(ValueError):
    """Bad flags, bad config keys, or missing required options (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


# ---------------------------------------------------------------------------
# Option tables.  One row per flag; the same converters parse config files,
# and the manifest writer inverts them.


def _str_list(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return items


def _float_list(text):
    return [float(t) for t in _str_list(text)]


def _int_list(text):
    return [int(t) for t in _str_list(text)]


def _thresholds(text):
    """Parse 'rot:trans' pairs, e.g. '5:0.02,10:0.05'."""
    pairs = []
    for item in _str_list(text):
        rot, _, trans = item.partition(":")
        if not trans:
            raise ValueError(f"threshold {item!r} must look like ROT_DEG:TRANS")
        pairs.append((float(rot), float(trans)))
    return pairs


def _serialize(value) -> str:
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], tuple):
        return ",".join(f"{rot!r}:{trans!r}" for rot, trans in value)
    if isinstance(value, (list, tuple)):
        return ",".join(_serialize(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Option:
    name: str  # flag/config key, hyphenated
    type: object = str
    default: object = None
    help: str = ""
    required: bool = False
    positional: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_COMMON = [
    Option("config", str, help="flat key=value file preloading any flag below"),
    Option("out", str, ".", help="output directory"),
]
_SEED = Option("seed", int, required=True, help="master random seed (required)")
_THREADS = Option("threads", int, 1, help="worker threads for independent trials (results identical for any value)")
_SHAPES = [
    Option("shape-kinds", _str_list, ["plane", "sphere", "box"], help="synthetic shape kinds for the benchmark pool"),
    Option("shape-count", int, 4, help="shapes per kind in the pool"),
    Option("resolution", int, 12, help="shape tessellation resolution"),
    Option("mesh-dir", str, help="directory of .off meshes to use instead of synthetic shapes"),
]

OPTION_TABLES = {
    "gen-data": _COMMON
    + [
        _SEED,
        Option("kinds", _str_list, ["plane", "sphere", "box", "cylinder", "wedge"], help="shape kinds to emit"),
        Option("count", int, 2, help="shapes per kind"),
        Option("resolution", int, 12, help="tessellation resolution"),
        Option("rotate", int, 1, help="1 to apply a random orientation per shape, 0 for canonical pose"),
        Option("cloud-size", int, 0, help="if > 0, also emit an .xyz cloud of this many spread surface points per shape"),
    ],
    "train": _COMMON
    + [
        _SEED,
        Option("steps", int, 6000, help="optimizer steps"),
        Option("n-points", int, 64, help="surface cloud size per scene"),
        Option("scenes-per-step", int, 1, help="scenes stacked into each optimizer step"),
        Option("k", int, 5, help="local patch size (odd)"),
        Option("grid-size", int, 8, help="Gaussian lattice size per axis"),
        Option("sigma", float, 0.125, help="Gaussian scale"),
        Option("hidden", _int_list, [1024, 1024, 1024], help="hidden layer widths"),
        Option("learning-rate", float, 1e-3, help="base learning rate"),
        Option("decay", float, 0.5, help="rate decay factor"),
        Option("decay-interval", int, 300_000, help="steps between decays"),
        Option("kinds", _str_list, ["plane", "sphere", "box"], help="synthetic training shape kinds"),
        Option("pool-size", int, 8, help="training shapes per kind"),
        Option("resolution", int, 12, help="shape tessellation resolution"),
        Option("mesh-dir", str, help="train on .off meshes from this directory instead"),
        Option("model-name", str, "model.dpd1", help="archive filename within the output directory"),
    ],
    "eval": _COMMON
    + [
        Option("method", str, "cd", help="cd | emd | hausdorff | phF | dpdist | dpdist-one-sided"),
        Option("model", str, help="model archive (required for dpdist methods)"),
        Option("cloud-a", str, required=True, positional=True, help="first .xyz cloud"),
        Option("cloud-b", str, required=True, positional=True, help="second .xyz cloud"),
    ],
    "bench-translate": _COMMON
    + _SHAPES
    + [
        _SEED,
        _THREADS,
        Option("methods", _str_list, ["cd", "dpdist"], help="distance methods to benchmark"),
        Option("model", str, help="model archive for dpdist methods"),
        Option("magnitudes", _float_list, [0.0, 0.01, 0.02, 0.035, 0.05], help="translation magnitudes"),
        Option("trials", int, 60, help="trials per magnitude"),
        Option("n-points", int, 64, help="cloud size"),
        Option("protocol", str, "resample", help="resample | identical"),
    ],
    "bench-rotate": _COMMON
    + _SHAPES
    + [
        _SEED,
        _THREADS,
        Option("methods", _str_list, ["cd", "dpdist"], help="distance methods to benchmark"),
        Option("model", str, help="model archive for dpdist methods"),
        Option("angles", _float_list, [0.0, 4.0, 8.0, 14.0, 20.0], help="rotation angles in degrees"),
        Option("trials", int, 60, help="trials per angle"),
        Option("n-points", int, 64, help="cloud size"),
        Option("protocol", str, "resample", help="resample | identical"),
    ],
    "bench-identify": _COMMON
    + _SHAPES
    + [
        _SEED,
        _THREADS,
        Option("methods", _str_list, ["cd", "dpdist"], help="distance methods to benchmark"),
        Option("model", str, help="model archive for dpdist methods"),
        Option("m", int, 1, help="rank cutoff: success iff the resample is within the m nearest"),
        Option("n-points", int, 64, help="cloud size"),
    ],
    "register": _COMMON
    + [
        _SEED,
        _THREADS,
        Option("methods", _str_list, ["cd", "dpdist-one-sided"], help="loss functions to benchmark"),
        Option("model", str, help="model archive for dpdist methods"),
        Option("trials", int, 50, help="registration trials per method"),
        Option("n-points", int, 64, help="cloud size"),
        Option("protocol", str, "disjoint", help="disjoint | identical source/template sampling"),
        Option("max-iters", int, 200, help="descent iteration cap"),
        Option("step-size", float, 0.1, help="initial normalized-gradient step"),
        Option("thresholds", _thresholds, [(5.0, 0.02), (10.0, 0.05)], help="success thresholds ROT_DEG:TRANS,..."),
        Option("shape-kinds", _str_list, ["wedge"], help="synthetic shape kinds for the pool"),
        Option("shape-count", int, 8, help="shapes per kind"),
        Option("resolution", int, 12, help="shape tessellation resolution"),
        Option("mesh-dir", str, help="directory of .off meshes to use instead"),
    ],
    "field-slice": _COMMON
    + [
        Option("mode", str, "nearest", help="spd | nearest"),
        Option("model", str, help="model archive (required for spd mode)"),
        Option("z", float, 0.0, help="slice height"),
        Option("slice-resolution", int, 64, help="lattice points per axis"),
        Option("extent", float, 1.0, help="half-width of the lattice"),
        Option("cloud", str, required=True, positional=True, help=".xyz cloud defining the field"),
    ],
    "gradcheck": _COMMON
    + [
        _SEED,
        Option("model", str, required=True, help="model archive to check"),
        Option("trials", int, 10, help="random inputs to probe"),
        Option("epsilon", float, 1e-3, help="central-difference step"),
        Option("threshold", float, 1e-4, help="max relative error allowed for exit code 0"),
    ],
}


def _load_config_file(path, options):
    by_name = {opt.name: opt for opt in options}
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{number}: expected key=value, got {line!r}")
        if key == "config" or key not in by_name:
            raise UsageError(f"{path}:{number}: unknown config key {key!r}")
        try:
            values[key] = by_name[key].type(value.strip())
        except ValueError as exc:
            raise UsageError(f"{path}:{number}: bad value for {key!r}: {exc}") from None
    return values


def _resolve(command, argv):
    options = OPTION_TABLES[command]
    parser = _Parser(prog=f"dpdist {command}")
    for opt in options:
        if opt.positional:
            parser.add_argument(opt.dest, nargs="?", default=None, type=opt.type, help=opt.help)
        else:
            parser.add_argument(f"--{opt.name}", dest=opt.dest, default=None, type=opt.type, help=opt.help)
    namespace = parser.parse_args(argv)
    from_file = {}
    if namespace.config is not None:
        from_file = _load_config_file(namespace.config, options)
    resolved = {}
    for opt in options:
        if opt.name == "config":
            continue
        value = getattr(namespace, opt.dest)
        if value is None:
            value = from_file.get(opt.name, opt.default)
        if value is None and opt.required:
            kind = opt.name if opt.positional else f"--{opt.name}"
            raise UsageError(f"dpdist {command}: {kind} is required")
        resolved[opt.name] = value
    return resolved


def _write_manifest(command, resolved, out_dir):
    lines = [f"# dpdist {__version__}", f"# subcommand: {command}"]
    for opt in OPTION_TABLES[command]:
        if opt.name == "config":
            continue
        value = resolved[opt.name]
        if value is None:
            continue
        lines.append(f"{opt.name}={_serialize(value)}")
    path = Path(out_dir) / f"{command}-manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _out_dir(resolved) -> Path:
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _benchmark_meshes(resolved, seed_domain=9000):
    if resolved.get("mesh-dir"):
        return [normalize_mesh(m) for m in load_mesh_dir(resolved["mesh-dir"])]
    return shape_pool(
        resolved["shape-kinds"],
        resolved["shape-count"],
        np.random.SeedSequence((resolved["seed"], seed_domain)),
        resolution=resolved["resolution"],
    )


def _methods(resolved):
    model = None
    names = resolved["methods"]
    if any(n.startswith("dpdist") for n in names):
        if not resolved.get("model"):
            raise UsageError("dpdist methods require --model")
        model = load_model(resolved["model"])
    return [DistanceMethod.parse(n, model) for n in names]


# ---------------------------------------------------------------------------
# Subcommand bodies.


def _cmd_gen_data(resolved):
    out = _out_dir(resolved)
    kinds, count = resolved["kinds"], resolved["count"]
    if resolved["rotate"]:
        meshes = shape_pool(kinds, count, np.random.SeedSequence((resolved["seed"], 0)), resolved["resolution"])
    else:
        meshes = [
            normalize_mesh(make_synthetic_shape(kind, resolution=resolved["resolution"]))
            for kind in kinds
            for _ in range(count)
        ]
    labels = [kind for kind in kinds for _ in range(count)]
    rng = np.random.default_rng(np.random.SeedSequence((resolved["seed"], 1)))
    for index, (kind, mesh) in enumerate(zip(labels, meshes)):
        write_off(out / f"shape_{index:03d}_{kind}.off", mesh)
        if resolved["cloud-size"] > 0:
            dense = sample_mesh_surface(mesh, max(2048, 4 * resolved["cloud-size"]), rng)
            idx = farthest_point_sampling(dense, resolved["cloud-size"], rng)
            write_xyz(out / f"cloud_{index:03d}_{kind}.xyz", dense[idx])
    print(f"wrote {len(meshes)} shapes to {out}")
    return 0


def _cmd_train(resolved):
    out = _out_dir(resolved)
    config = TrainConfig(
        seed=resolved["seed"],
        steps=resolved["steps"],
        n_points=resolved["n-points"],
        scenes_per_step=resolved["scenes-per-step"],
        k=resolved["k"],
        grid_size=resolved["grid-size"],
        sigma=resolved["sigma"],
        hidden=tuple(resolved["hidden"]),
        learning_rate=resolved["learning-rate"],
        decay=resolved["decay"],
        decay_interval=resolved["decay-interval"],
        shape_kinds=tuple(resolved["kinds"]),
        pool_size=resolved["pool-size"],
        resolution=resolved["resolution"],
        mesh_dir=resolved["mesh-dir"],
    )
    model, history = train(config)
    save_model(model, out / resolved["model-name"])
    report.write_loss_csv(out / "loss.csv", history)
    report.plot_loss(report.figure_path(out / "loss.csv"), history)
    print(f"final loss {report.fmt(history[-1][1])} after {len(history)} steps")
    return 0


def _cmd_eval(resolved):
    out = _out_dir(resolved)
    model = load_model(resolved["model"]) if resolved.get("model") else None
    method = DistanceMethod.parse(resolved["method"], model)
    if method.tag.startswith("dpdist") and model is None:
        raise UsageError("dpdist methods require --model")
    a = read_xyz(resolved["cloud-a"])
    b = read_xyz(resolved["cloud-b"])
    value = method.evaluate(a, b)
    print(report.fmt(value))
    (out / "eval.csv").write_text(f"method,value\n{method.label()},{report.fmt(value)}\n")
    return 0


def _run_detection(resolved, kind):
    out = _out_dir(resolved)
    meshes = _benchmark_meshes(resolved)
    curves = []
    amounts = resolved["magnitudes"] if kind == "translation" else resolved["angles"]
    runner = translation_detection if kind == "translation" else rotation_detection
    for method in _methods(resolved):
        curves.append(
            runner(
                method,
                meshes,
                resolved["n-points"],
                amounts,
                resolved["trials"],
                resolved["seed"],
                protocol=resolved["protocol"],
                threads=resolved["threads"],
            )
        )
    name = "translate" if kind == "translation" else "rotate"
    csv_path = out / f"{name}.csv"
    report.write_detection_csv(csv_path, curves)
    xlabel = "translation magnitude" if kind == "translation" else "rotation angle (deg)"
    report.plot_detection(report.figure_path(csv_path), curves, xlabel=xlabel)
    for curve in curves:
        summary = " ".join(f"{m:g}:{a:.3f}" for m, a in zip(curve.magnitudes, curve.accuracy))
        print(f"{curve.method}: {summary}")
    return 0


def _cmd_bench_translate(resolved):
    return _run_detection(resolved, "translation")


def _cmd_bench_rotate(resolved):
    return _run_detection(resolved, "rotation")


def _cmd_bench_identify(resolved):
    out = _out_dir(resolved)
    meshes = _benchmark_meshes(resolved)
    rows = []
    for method in _methods(resolved):
        rate = identification_topm(
            method, meshes, resolved["n-points"], resolved["m"], resolved["seed"], threads=resolved["threads"]
        )
        rows.append((method.label(), resolved["m"], rate, len(meshes)))
        print(f"{method.label()}: top-{resolved['m']} rate {rate:.3f} over {len(meshes)} objects")
    csv_path = out / "identify.csv"
    report.write_identification_csv(csv_path, rows)
    report.plot_identification(report.figure_path(csv_path), rows)
    return 0


def _cmd_register(resolved):
    out = _out_dir(resolved)
    meshes = _benchmark_meshes(resolved)
    summary = []
    for method in _methods(resolved):
        results = registration_benchmark(
            method,
            meshes,
            resolved["n-points"],
            resolved["trials"],
            resolved["seed"],
            protocol=resolved["protocol"],
            max_iters=resolved["max-iters"],
            step_size=resolved["step-size"],
            threads=resolved["threads"],
        )
        report.write_registration_csv(out / f"register-{method.label()}.csv", results)
        for rot, trans in resolved["thresholds"]:
            ratio = success_ratio(results, rot, trans)
            summary.append((method.label(), rot, trans, ratio, len(results)))
            print(f"{method.label()}: success {ratio:.2f} at ({rot:g} deg, {trans:g})")
    csv_path = out / "register-summary.csv"
    report.write_registration_summary_csv(csv_path, summary)
    report.plot_registration_summary(report.figure_path(csv_path), summary)
    return 0


def _cmd_field_slice(resolved):
    out = _out_dir(resolved)
    cloud = read_xyz(resolved["cloud"])
    model = load_model(resolved["model"]) if resolved.get("model") else None
    if resolved["mode"] == "spd" and model is None:
        raise UsageError("spd mode requires --model")
    field = field_slice(
        cloud,
        resolved["z"],
        resolution=resolved["slice-resolution"],
        extent=resolved["extent"],
        mode=resolved["mode"],
        model=model,
    )
    csv_path = out / "slice.csv"
    report.write_slice_csv(csv_path, field)
    report.plot_slice(report.figure_path(csv_path), field)
    print(f"wrote {csv_path}")
    return 0


def _cmd_gradcheck(resolved):
    _out_dir(resolved)
    model = load_model(resolved["model"])
    worst = gradient_check(model, n_trials=resolved["trials"], epsilon=resolved["epsilon"], seed=resolved["seed"])
    print(report.fmt(worst))
    if worst >= resolved["threshold"]:
        print(f"gradient check failed: {worst:g} >= {resolved['threshold']:g}", file=sys.stderr)
        return 3
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench-translate": _cmd_bench_translate,
    "bench-rotate": _cmd_bench_rotate,
    "bench-identify": _cmd_bench_identify,
    "register": _cmd_register,
    "field-slice": _cmd_field_slice,
    "gradcheck": _cmd_gradcheck,
}


def run(argv) -> int:
    argv = list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(f"dpdist {__version__}\nsubcommands: {', '.join(_HANDLERS)}")
        return 0
    command = argv[0]
    if command not in _HANDLERS:
        raise UsageError(f"dpdist: unknown subcommand {command!r}; expected one of: {', '.join(_HANDLERS)}")
    resolved = _resolve(command, argv[1:])
    _write_manifest(command, resolved, _out_dir(resolved))
    return _HANDLERS[command](resolved)


def main(argv=None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (MeshParseError, ArchiveFormatError, ArchiveIntegrityError, EmptySurfaceError, DegenerateShapeError, OSError) as exc:
        print(f"dpdist: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergenceError as exc:
        print(f"dpdist: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"dpdist: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
