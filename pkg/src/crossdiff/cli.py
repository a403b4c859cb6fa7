"""Command-line entry point: ``crossdiff simulate|audit|converge|invert``.

Exit codes: 0 success, 1 program or input failure, 2 structure not
certified, 3 diagnostic violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .amap import invert_A
from .config import build_initial, load_config
from .errors import ConfigError, CrossDiffError, DiagnosticViolation
from .grid import integrate, write_field_csv
from .model import entropy_reaction_bound, eval_A
from .stepper import TimeGrid, run
from .structure import certify

log = logging.getLogger("crossdiff")

EXIT_OK, EXIT_ERROR, EXIT_UNCERTIFIED, EXIT_VIOLATION = 0, 1, 2, 3
LOG_ENV = "CROSSDIFF_LOG_LEVEL"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir):
    """manifest.json listing every artifact under ``out_dir`` with size and sha256."""
    out_dir = Path(out_dir)
    entries = []
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            rel = path.relative_to(out_dir).as_posix()
            entries.append({"path": rel, "bytes": path.stat().st_size, "sha256": _sha256(path)})
    (out_dir / "manifest.json").write_text(_dump({"artifacts": entries}))
    return entries


class _DirectorySink:
    """Streams the ledger and snapshots of a run into an output directory."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        (self.out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
        self._ledger = open(self.out_dir / "ledger.ndjson", "w")

    def snapshot(self, k, t, field):
        write_field_csv(self.out_dir / "snapshots" / f"u_{k:06d}.csv", field)

    def ledger_row(self, row):
        self._ledger.write(json.dumps(row, default=_json_default) + "\n")

    def close(self):
        self._ledger.close()


def _structure(model, cfg):
    cert = certify(model, samples=cfg.samples, seed=cfg.seed)
    return cert, (cert.entropy_spec if cert.certified else None)


def _resolve_out(args, cfg):
    return Path(args.out or cfg.output.get("dir", "out"))


def simulate(cfg, out_dir, strict=False, time=None):
    """Run one configuration, writing artifacts to ``out_dir``; returns (exit code, trajectory)."""
    model = cfg.build_model()
    mesh = cfg.build_mesh()
    time = time or cfg.build_time()
    settings = cfg.build_settings()
    cert, entropy = _structure(model, cfg)
    if entropy is None:
        log.warning("no uniform entropy certified; entropy diagnostics are skipped")
    C = entropy_reaction_bound(model, entropy) if entropy is not None else 0.0
    try:
        time.check(model.reaction.rho_max, C if entropy is not None else None)
    except CrossDiffError as exc:
        raise ConfigError(str(exc)) from None
    U_in = build_initial(cfg, mesh, model.species)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(_dump(cfg.to_dict()))
    (out_dir / "certificate.json").write_text(_dump(cert.to_dict()))
    sink = _DirectorySink(out_dir)
    code = EXIT_OK
    traj = None
    try:
        traj = run(model, mesh, time, U_in, settings, sinks=(sink,), entropy=entropy, C=C,
                   strict=strict, snapshot_stride=int(cfg.output.get("snapshot_stride", 1)))
    except DiagnosticViolation as exc:
        log.error("%s", exc)
        (out_dir / "summary.json").write_text(_dump({"passed": False, "aborted_at": exc.k, "flags": exc.flags}))
        code = EXIT_VIOLATION
    finally:
        sink.close()
    if traj is not None:
        summary = dict(traj.summary)
        summary["certified"] = cert.certified
        (out_dir / "summary.json").write_text(_dump(summary))
        if not summary["passed"]:
            code = EXIT_VIOLATION
    write_manifest(out_dir)
    return code, traj


def cmd_simulate(args):
    cfg = load_config(args.config)
    strict = bool(args.strict or cfg.output.get("strict", False))
    code, traj = simulate(cfg, _resolve_out(args, cfg), strict=strict)
    if traj is not None:
        print(f"completed {traj.time.N} steps; diagnostics {'passed' if code == EXIT_OK else 'FAILED'}")
    return code


def cmd_audit(args):
    cfg = load_config(args.config)
    model = cfg.build_model()
    cert = certify(model, samples=cfg.samples, seed=cfg.seed)
    report = cert.to_dict()
    out_dir = _resolve_out(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "certificate.json").write_text(_dump(report))
    write_manifest(out_dir)
    print(_dump(report), end="")
    return EXIT_OK if cert.certified else EXIT_UNCERTIFIED


def _restrict(U, fine_n, coarse_n):
    """Average fine cells onto a coarser 1-D or 2-D mesh (sizes differ by a factor of 2 per axis)."""
    I = U.shape[0]
    V = U.reshape((I,) + tuple(fine_n))
    for ax, (f, c) in enumerate(zip(fine_n, coarse_n)):
        if f == c:
            continue
        shape = list(V.shape)
        shape[ax + 1:ax + 2] = [c, f // c]
        V = V.reshape(shape).mean(axis=ax + 2)
    return V.reshape(I, -1)


def converge(cfg, levels, out_dir, mode="time"):
    """Run ``levels`` simulations, halving tau (or the mesh width) each time; L1 differences at t = T."""
    if levels < 2:
        raise ConfigError("converge needs at least 2 levels")
    base_time = cfg.build_time()
    base_mesh = cfg.build_mesh()
    out_dir = Path(out_dir)
    finals, meshes = [], []
    for lev in range(levels):
        level_cfg = cfg
        time = base_time
        if mode == "time":
            time = TimeGrid(base_time.T, base_time.N * 2**lev)
        else:
            level_cfg = type(cfg).from_dict({**cfg.to_dict(), "mesh": {
                "dim": base_mesh.dim, "extents": list(base_mesh.extents),
                "n": [k * 2**lev for k in base_mesh.n]}}, base_dir=cfg.base_dir)
        level_cfg = replace(level_cfg, output={**level_cfg.output, "snapshot_stride": time.N})
        code, traj = simulate(level_cfg, out_dir / f"level_{lev}", time=time)
        if traj is None:
            raise CrossDiffError(f"level {lev} aborted")
        finals.append(traj.final())
        meshes.append(traj.mesh)
    rows = []
    for lev in range(levels - 1):
        a, b = finals[lev], finals[lev + 1]
        mesh = meshes[lev]
        if mode == "mesh":
            b = _restrict(b, meshes[lev + 1].n, mesh.n)
        diff = float(np.sum(integrate(mesh, np.abs(a - b))))
        rows.append({"level": lev, "N": base_time.N * 2**lev if mode == "time" else base_time.N,
                     "n": list(mesh.n), "l1_diff": diff})
    for lev in range(len(rows)):
        order = None
        if lev > 0 and rows[lev]["l1_diff"] > 0 and rows[lev - 1]["l1_diff"] > 0:
            order = math.log2(rows[lev - 1]["l1_diff"] / rows[lev]["l1_diff"])
        rows[lev]["order"] = order
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "converge.json").write_text(_dump({"mode": mode, "levels": levels, "rows": rows}))
    with open(out_dir / "converge.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "N", "n", "l1_diff", "order"])
        for r in rows:
            writer.writerow([r["level"], r["N"], "x".join(map(str, r["n"])), f"{r['l1_diff']:.17g}",
                             "" if r["order"] is None else f"{r['order']:.6f}"])
    write_manifest(out_dir)
    return rows


def cmd_converge(args):
    cfg = load_config(args.config)
    rows = converge(cfg, args.levels, _resolve_out(args, cfg), mode=args.mode)
    print(f"{'level':>5} {'N':>8} {'n':>10} {'L1 diff':>14} {'order':>8}")
    for r in rows:
        order = "" if r["order"] is None else f"{r['order']:.4f}"
        print(f"{r['level']:>5} {r['N']:>8} {'x'.join(map(str, r['n'])):>10} {r['l1_diff']:>14.6e} {order:>8}")
    return EXIT_OK


def cmd_invert(args):
    cfg = load_config(args.config)
    model = cfg.build_model()
    if args.w is None:
        raise ConfigError("invert needs --w with one value per species")
    W = np.asarray(args.w, dtype=float)
    if W.shape != (model.species,):
        raise ConfigError(f"--w needs {model.species} values, got {W.size}")
    X = invert_A(model, W)
    residual = float(np.max(np.abs(eval_A(model, X) - W)))
    print(_dump({"w": W.tolist(), "x": X.tolist(), "residual": residual}), end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="crossdiff", description="Cross-diffusion scheme and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--strict", action="store_true", help="abort on the first violated estimate")

    p = sub.add_parser("simulate", help="run the scheme and write snapshots, ledger and summary")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("audit", help="certify detailed balance and the uniform entropy")
    common(p)
    p.set_defaults(func=cmd_audit)
    p = sub.add_parser("converge", help="self-convergence study")
    common(p)
    p.add_argument("--levels", type=int, default=4, help="number of simulations")
    p.add_argument("--mode", choices=("time", "mesh"), default="time", help="refine tau or the mesh")
    p.set_defaults(func=cmd_converge)
    p = sub.add_parser("invert", help="solve A(X) = W at one point")
    common(p)
    p.add_argument("--w", type=float, nargs="+", help="target values, one per species")
    p.set_defaults(func=cmd_invert)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"crossdiff: {exc.filename or exc}: file not found", file=sys.stderr)
    except (CrossDiffError, OSError) as exc:
        print(f"crossdiff: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
