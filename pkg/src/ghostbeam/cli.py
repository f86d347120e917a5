"""``ghostbeam`` command-line front end.

Every command reads one config file, writes its artifacts into the output
directory and finishes with ``manifest.json`` listing each artifact with
its SHA-256.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, GeometryError, GhostbeamError, NumericalQualityError,
                     RegimeWarning, SamplingWarning)

RECORD_LIMIT = 10**9


def worker_count() -> int:
    raw = os.environ.get("GHOSTBEAM_THREADS")
    if raw is None or raw == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GHOSTBEAM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"GHOSTBEAM_THREADS must be a positive integer, got {raw!r}")
    return n


def _pmap(fn, items):
    items = list(items)
    n = min(worker_count(), len(items)) or 1
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory plus the bookkeeping for the manifest."""

    def __init__(self, out_dir: Path, command: str, cfg, seed):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.artifacts: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def finish(self) -> Path:
        manifest = {
            "tool_version": __version__,
            "command": self.command,
            "config_path": str(self.cfg.path),
            "config_hash": self.cfg.text_hash,
            "rng_seed": self.seed,
            "wall_clock_s": round(time.perf_counter() - self.t0, 6),
            "artifacts": [{"path": name, "sha256": _sha256(self.out / name)}
                          for name in sorted(set(self.artifacts))],
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


def _fmt(v: float) -> str:
    return f"{v:g}".replace("+", "")


def _transfer_csv(path: Path, y, T) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("y_nm,re,im\n")
        for yy, t in zip(y, T):
            fh.write(f"{yy:.10g},{t.real:.10g},{t.imag:.10g}\n")


def _bucket_point(cfg, arg):
    scene = cfg.scene
    if arg is None:
        bp = cfg.output.get("bucket_point") or scene.bucket_center
        return (float(bp[0]), float(bp[1]))
    parts = [p for p in str(arg).replace(" ", "").split(",") if p]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--bucket-point expects 'y' or 'x,y' in nm, got {arg!r}") from None
    if len(vals) == 1:
        return (scene.bucket_center[0], vals[0])
    if len(vals) == 2:
        return (vals[0], vals[1])
    raise ConfigError(f"--bucket-point expects 'y' or 'x,y' in nm, got {arg!r}")


def _state(cfg, strict):
    from .joint import build_joint_state
    from .scene import require_valid

    require_valid(cfg.scene, cfg.source)
    return build_joint_state(cfg.scene, cfg.source, cfg.n_components, strict=strict)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_forward(cfg, args, run: Run) -> dict:
    from .joint import forward_field, ungated_image
    from .propagation import time_reversed_field

    state = _state(cfg, args.strict)
    scene = cfg.scene
    if cfg.output["dump_fields"]:
        forward_field(state).save(run.path("forward_field.gbf"))
        time_reversed_field(scene.bucket_center, scene, args.strict).save(run.path("reverse_field.gbf"))
    _transfer_csv(run.path("transfer.csv"), scene.y_grid, state.transfer)
    summary = {}
    images = _pmap(lambda df: ungated_image(state, df, transmitted=True), cfg.output["defocus"])
    for df, img in zip(cfg.output["defocus"], images):
        img.to_csv(run.path(f"ungated_defocus_{_fmt(df)}nm.csv"))
        summary[f"ungated_visibility_defocus_{_fmt(df)}nm"] = img.visibility
    return summary


def cmd_ghost(cfg, args, run: Run) -> dict:
    from .joint import electron_image, ghost_scan, has_two_dominant, marginal_gated_image, postselect

    state = _state(cfg, args.strict)
    scene = cfg.scene
    defocus = args.defocus if args.defocus is not None else cfg.output["defocus"]
    summary = {}
    if args.bucket_scan:
        pts = scene.bucket_points()
        scan = ghost_scan(state, pts)
        scan.to_csv(run.path("ghost_scan.csv"), axis_name="bucket_y_nm")
        for df in defocus:
            img = marginal_gated_image(state, pts, df)
            img.to_csv(run.path(f"bucket_summed_defocus_{_fmt(df)}nm.csv"))
        summary["n_bucket_points"] = len(pts)
        return summary
    point = _bucket_point(cfg, args.bucket_point)
    if not scene.in_bucket(point):
        raise GeometryError(f"bucket point {point} outside the bucket extent")
    post = postselect(state, point)
    meta = {"phi_rad": post.phi, "dominance_ratio": post.dominance_ratio,
            "two_dominant": has_two_dominant(post), "dominant_pair": post.dominant}
    images = _pmap(lambda df: electron_image(post, df), defocus)
    for df, img in zip(defocus, images):
        img.meta.update(meta)
        img.to_csv(run.path(f"gated_defocus_{_fmt(df)}nm.csv"))
        summary[f"gated_visibility_defocus_{_fmt(df)}nm"] = img.visibility
    far = electron_image(post, 0.0, far_field=True)
    far.meta.update(meta)
    far.to_csv(run.path("gated_far_field.csv"), axis_name="recoil_ky_per_nm")
    summary.update(meta)
    return summary


def _tag_images(cfg, rates, strict):
    from .joint import electron_image, postselect_many

    scene = cfg.scene
    n_tags = len(rates.tag_weights)
    if n_tags == 1:
        pts = [_bucket_point(cfg, None)]
    else:
        grid = np.array([p[1] for p in scene.bucket_points()])
        ys = np.linspace(grid[0], grid[-1], n_tags)
        pts = [(scene.bucket_center[0], float(grid[np.argmin(np.abs(grid - y))])) for y in ys]
    state = _state(cfg, strict)
    posts = postselect_many(state, pts)
    return {i: electron_image(p) for i, p in enumerate(posts)}, state, pts


def cmd_coincidence(cfg, args, run: Run) -> dict:
    from .coincidence import (STREAM_THRESHOLD, correlate, correlate_stream, gated_accumulate,
                              simulate_events, simulate_events_stream, write_report)
    from .joint import ghost_scan

    if cfg.rates is None:
        raise ConfigError(f"{cfg.path}: missing required table 'rates'")
    rates = replace(cfg.rates, rng_seed=run.seed)
    images, state, pts = _tag_images(cfg, rates, args.strict)
    extra = {}
    if cfg.p_ps_from_joint:
        p_ps = float(ghost_scan(state, pts).intensity.mean())
        rates = replace(rates, P_PS=min(1.0, p_ps))
        extra["p_ps_source"] = "joint"
    expected = rates.expected_records()
    if expected > RECORD_LIMIT and not args.stream:
        raise ConfigError(f"~{expected:.3g} event records expected (limit {RECORD_LIMIT:.0e}); "
                          "shorten duration_s or rerun with --stream")
    log_path = run.path("events.csv")
    if args.stream or expected > STREAM_THRESHOLD:
        n_total = 0

        def chunks():
            nonlocal n_total
            with open(log_path, "w", newline="") as fh:
                fh.write("timestamp_ns,kind,tag\n")
            for chunk in simulate_events_stream(rates, args.chunk_s):
                n_total += chunk.meta["n_electrons_total"]
                _append_csv(log_path, chunk)
                yield chunk

        summary = correlate_stream(chunks(), rates.window_tau, rates.dead_time)
        extra["streamed"] = True
    else:
        log = simulate_events(rates)
        log.to_csv(log_path)
        n_total = log.meta["n_electrons_total"]
        summary = correlate(log, rates.window_tau, rates.dead_time)
    extra["n_electrons_total"] = n_total
    extra["bucket_points"] = [list(p) for p in pts]
    write_report(run.path("coincidence_report.json"), summary, rates, n_total, extra)
    acc = gated_accumulate(summary, images, seed=run.seed)
    with open(run.path("histogram.csv"), "w", newline="") as fh:
        tags = sorted(acc.per_tag)
        fh.write("y_nm,total," + ",".join(f"tag_{t}" for t in tags) + "\n")
        for i, y in enumerate(acc.axis):
            fh.write(f"{y:.10g},{acc.counts[i]}," + ",".join(str(acc.per_tag[t][i]) for t in tags) + "\n")
    return {"true": summary.true, "accidental": summary.accidental,
            "dead_time_rejected": summary.dead_time_rejected}


def _append_csv(path: Path, log) -> None:
    from .coincidence import KIND_NAMES

    names = np.array(KIND_NAMES)[log.kinds]
    tags = np.where(log.tags >= 0, log.tags.astype(str), "")
    with open(path, "a", newline="") as fh:
        rows = [f"{t!r},{k},{g}" for t, k, g in zip(log.timestamps.tolist(), names, tags)]
        if rows:
            fh.write("\n".join(rows) + "\n")


def cmd_beamshape(cfg, args, run: Run) -> dict:
    from .beamshape import mixture_spectrum, oam_analyze, phase_winding, ring_vortex_scene

    obj = cfg.scene.object
    n_rings = getattr(obj, "n_rings", 0)
    channels = (1, -1) if args.mixture else (args.l,)
    spectra = {}
    summary = {}
    for l in channels:
        vs = ring_vortex_scene(n_rings, cfg.scene, l, cfg.source, cfg.output["beta_peak"])
        tag = "plus" if l > 0 else "minus"
        vs.reverse_field.save(run.path(f"reverse_field_l_{tag}.gbf"))
        vs.beta.save(run.path(f"beta_map_l_{tag}.gbf"))
        electron = vs.electron()
        electron.save(run.path(f"electron_l_{tag}.gbf"))
        spec = oam_analyze(electron)
        spec.to_csv(run.path(f"oam_spectrum_l_{tag}.csv"))
        spectra[l] = spec
        summary[f"dominant_l_{tag}"] = spec.dominant_l
        summary[f"winding_l_{tag}_rad"] = phase_winding(vs.beta, 10.0)
    if args.mixture:
        mix = mixture_spectrum(*spectra.values())
        mix.to_csv(run.path("oam_spectrum_mixture.csv"))
        summary["mixture_mean_l"] = mix.mean
    return summary


def cmd_resolution(cfg, args, run: Run) -> dict:
    from .joint import resolution_sweep

    lam = cfg.scene.lambda_spp
    distances = args.distances or cfg.resolution["distances"]
    rows = _pmap(lambda d: resolution_sweep([d], lam, cfg.resolution["n"])[0], distances)
    k = 2 * np.pi / lam
    with open(run.path("resolution.csv"), "w", newline="") as fh:
        fh.write(f"# lambda_spp_nm={lam:g}\nD_nm,k_star_per_nm,k_star_over_k_spp\n")
        for d, ks in rows:
            fh.write(f"{d:.10g},{ks:.10g},{ks / k:.10g}\n")
    return {"points": len(rows)}


COMMANDS = {
    "forward": cmd_forward,
    "ghost": cmd_ghost,
    "coincidence": cmd_coincidence,
    "beamshape": cmd_beamshape,
    "resolution": cmd_resolution,
}


def _l_value(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid l {text!r}") from None
    if v not in (1, -1):
        raise argparse.ArgumentTypeError("only l = +1 or l = -1 is modelled")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostbeam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ghostbeam {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    common.add_argument("--strict", action="store_true",
                        help="turn numerical-quality warnings into errors")
    common.add_argument("--out", default=None, help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common], help="forward SPP fields and ungated image")
    g = sub.add_parser("ghost", parents=[common], help="coincidence-gated images / ghost scan")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--bucket-scan", action="store_true", help="scan every bucket grid point")
    mode.add_argument("--bucket-point", default=None, help="'y' or 'x,y' in nm")
    g.add_argument("--defocus", type=float, nargs="+", default=None, help="defocus values (nm)")
    c = sub.add_parser("coincidence", parents=[common], help="event Monte Carlo and correlation")
    c.add_argument("--stream", action="store_true", help="simulate and correlate in chunks")
    c.add_argument("--chunk-s", type=float, default=1.0, help="chunk length in seconds")
    b = sub.add_parser("beamshape", parents=[common], help="ring vortex coupling and OAM")
    b.add_argument("--l", type=_l_value, default=1, help="post-selected channel, +1 or -1")
    b.add_argument("--mixture", action="store_true", help="analyse the unconditioned mixture")
    r = sub.add_parser("resolution", parents=[common], help="near-field resolution sweep")
    r.add_argument("--distances", type=float, nargs="+", default=None, help="gaps D (nm)")
    return parser


def main(argv=None) -> int:
    from .config import load_config

    args = build_parser().parse_args(argv)
    try:
        worker_count()
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else (cfg.rates.rng_seed if cfg.rates else 0)
        out = Path(args.out if args.out is not None else cfg.output["dir"])
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error", SamplingWarning)
            warnings.simplefilter("always", RegimeWarning)
            run = Run(out, args.command, cfg, seed)
            summary = COMMANDS[args.command](cfg, args, run)
            manifest = run.finish()
    except GhostbeamError as exc:
        print(f"ghostbeam: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SamplingWarning as exc:
        print(f"ghostbeam: error: {exc}", file=sys.stderr)
        return NumericalQualityError.exit_code
    for key, value in summary.items():
        print(f"{key}: {value}")
    print(f"manifest: {manifest}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
