"""Command line driver: ``run``, ``validate`` and ``oracle-compare``.

Exit codes are 0 on success, 1 when a validation check fails, 2 for a bad
configuration and 3 for a runtime failure such as an unwritable checkpoint.
Reports never carry timestamps or worker counts, so identical configs give
byte-identical files whatever the degree of parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from . import __version__
from .config import VALIDATORS, ConfigError, RunConfig, load_config
from .estimators import (
    CompatibilityObserver,
    DensityObserver,
    GradientObserver,
    KernelObserver,
    OccupationObserver,
    QBoundObserver,
    RuelleObserver,
    TraceObserver,
    bound_constants,
    check_compatibility,
    check_trace,
    validate_energy_floor,
    validate_gradient_bound,
    validate_kernel_bounds,
    validate_q_bound,
    validate_ruelle,
)
from .geometry import max_occupancy
from .loops import Loop
from .mcmc import MOVES, FloorMonitor, params_fingerprint, run_chain
from .oracle import OracleSizeError, QuadratureSpec, quad_partition, quad_rdmk, quad_trace
from .sampling import RandomStream, sample_bridge

__all__ = ["main", "run_command", "validate_command", "oracle_command", "build_observers", "make_test_loops",
           "write_reports", "EXIT_OK", "EXIT_FAIL", "EXIT_CONFIG", "EXIT_RUNTIME"]

log = logging.getLogger("loopgas")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
WORKERS_ENV = "LOOPGAS_WORKERS"
TEST_LOOP_TAG = 505
COLUMNS = ("check", "reference", "estimate", "target", "stderr", "pass", "detail", "source")


class RuntimeFailure(RuntimeError):
    pass


# observers ---------------------------------------------------------------------------


def make_test_loops(cfg: RunConfig) -> list[Loop]:
    """Fixed test loops for the moment bound, based uniformly in the inner (or full) box."""
    ph, ob = cfg.physics, cfg.observables
    box = (ph.inner_box or ph.box).region()
    rng = RandomStream(cfg.run.seed, (TEST_LOOP_TAG,))
    out = []
    for i in range(ob.test_loops or 4):
        k = ob.test_loop_k[i % len(ob.test_loop_k)]
        base = rng.uniform(box.lower, box.upper)
        out.append(sample_bridge(base, base, k, ph.beta, ph.slices, rng))
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def build_observers(cfg: RunConfig, chain_id: int, command: str, checks: Sequence[str] = ()) -> list:
    """Observers needed by ``command``; the order is part of the checkpoint format."""
    ph, ob, seed = cfg.physics, cfg.observables, cfg.run.seed
    inner = ph.inner_box.region() if ph.inner_box else None
    obs: list = []
    if command == "run":
        obs.append(OccupationObserver(ob.occupation_n_max))
        if ob.kernel_pairs:
            _require(inner is not None, "kernel pairs need 'physics.inner_box'")
            obs.append(KernelObserver(inner, ob.kernel_pairs, ob.inner_samples, seed, chain_id))
        if ob.density_cells:
            obs.append(DensityObserver([c.region() for c in ob.density_cells]))
        if ob.test_loops:
            obs.append(RuelleObserver(make_test_loops(cfg)))
        return obs
    if command == "oracle-compare":
        obs.append(OccupationObserver(cfg.oracle.n_max))
        if ob.kernel_pairs:
            _require(inner is not None, "kernel pairs need 'physics.inner_box'")
            obs.append(KernelObserver(inner, ob.kernel_pairs, ob.inner_samples, seed, chain_id))
        if inner is not None and len(ph.box.center) == 1:
            obs.append(TraceObserver(inner, ob.inner_samples, seed, chain_id))
        return obs
    for c in checks:
        if c == "ruelle":
            obs.append(RuelleObserver(make_test_loops(cfg)))
        elif c == "q_bound":
            obs.append(QBoundObserver())
        elif c == "kernel_bound":
            _require(inner is not None and bool(ob.kernel_pairs), "kernel_bound needs 'physics.inner_box' and "
                                                                  "'observables.kernel_pairs'")
            obs.append(KernelObserver(inner, ob.kernel_pairs, ob.inner_samples, seed, chain_id))
        elif c == "gradient_bound":
            pairs = [p for p in ob.kernel_pairs if len(p[1])]
            _require(inner is not None and bool(pairs), "gradient_bound needs 'physics.inner_box' and a kernel "
                                                        "pair with endpoints")
            x, y = pairs[0]
            obs.append(GradientObserver(inner, x, y, step=ob.gradient_step, n_inner=ob.inner_samples, seed=seed,
                                        chain_id=chain_id))
        elif c == "compatibility":
            _require(inner is not None and ph.small_box is not None and bool(ob.kernel_pairs),
                     "compatibility needs 'physics.inner_box', 'physics.small_box' and 'observables.kernel_pairs'")
            obs.append(CompatibilityObserver(inner, ph.small_box.region(), ob.kernel_pairs, ob.inner_samples,
                                             seed, chain_id))
        elif c == "trace":
            _require(inner is not None, "trace needs 'physics.inner_box'")
            obs.append(TraceObserver(inner, ob.inner_samples, seed, chain_id))
        elif c == "energy_floor":
            pass
        else:
            raise ConfigError(f"unknown validator {c!r}")
    return obs


# chains ------------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise RuntimeFailure(f"cannot write {path}: {exc.strerror}") from None


def _checkpoint_path(outdir: Path, command: str, chain_id: int) -> Path:
    return outdir / "checkpoints" / command / f"chain_{chain_id:03d}.json"


def _run_one(cfg: RunConfig, chain_id: int, command: str, checks: tuple, outdir: str, resume: bool) -> dict:
    """One chain end to end; returns JSON-ready observer and monitor state."""
    params = cfg.params()
    observers = build_observers(cfg, chain_id, command, checks)
    path = _checkpoint_path(Path(outdir), command, chain_id)
    record = None
    if resume and path.exists():
        try:
            record = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise RuntimeFailure(f"unreadable checkpoint {path}: {exc}") from None
        names = [d.get("name") for d in record.get("observers", [])]
        if names != [o.name for o in observers]:
            raise RuntimeFailure(f"checkpoint {path} holds different observers")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeFailure(f"cannot create {path.parent}: {exc.strerror}") from None

    def save(rec: dict) -> None:
        _atomic_write(path, json.dumps(rec, sort_keys=True))

    try:
        res = run_chain(params, observers, chain_id=chain_id, checkpoint=save,
                        checkpoint_every=cfg.run.checkpoint_interval, resume=record)
    except ValueError as exc:
        raise RuntimeFailure(str(exc)) from None
    return {
        "chain_id": chain_id,
        "observers": [o.state_dict() for o in res.observers],
        "stats": res.sampler.stats,
        "floor": res.sampler.floor.to_dict(),
        "samples": res.samples,
    }


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be positive")
    return n


def run_chains(cfg: RunConfig, command: str, checks: tuple = (), outdir: str | None = None,
               resume: bool = False) -> tuple[list, dict, FloorMonitor, int]:
    """Run every chain and merge results in stream-id order."""
    outdir = outdir or cfg.output.directory
    ids = list(range(cfg.run.chains))
    n_workers = min(_workers(), len(ids))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            futs = [pool.submit(_run_one, cfg, i, command, checks, outdir, resume) for i in ids]
            results = [f.result() for f in futs]
    else:
        results = [_run_one(cfg, i, command, checks, outdir, resume) for i in ids]
    results.sort(key=lambda r: r["chain_id"])
    merged = build_observers(cfg, 0, command, checks)
    stats = {m: [0, 0] for m in MOVES}
    floor = FloorMonitor()
    samples = 0
    for r in results:
        fresh = build_observers(cfg, r["chain_id"], command, checks)
        for o, d in zip(fresh, r["observers"]):
            o.load_state_dict(d)
        if r["chain_id"] == 0:
            merged = fresh
        else:
            for a, b in zip(merged, fresh):
                a.merge(b)
        for m, (tried, acc) in r["stats"].items():
            stats[m][0] += tried
            stats[m][1] += acc
        floor.checks += r["floor"]["checks"]
        floor.violations += r["floor"]["violations"]
        floor.worst_margin = min(floor.worst_margin, r["floor"]["worst_margin"])
        samples += r["samples"]
    return merged, stats, floor, samples


# reports -------------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "pass" if v else "FAIL"
    if isinstance(v, float):
        return repr(v)
    return str(v).replace("\t", " ")


def _record(check, reference, estimate=None, target=None, stderr=None, passed=None, detail="", source="mc") -> dict:
    return {"check": check, "reference": reference, "estimate": estimate, "target": target, "stderr": stderr,
            "pass": passed, "detail": detail, "source": source}


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return _json_safe(v.item())
    return v


def write_reports(outdir: Path, records: Sequence[dict], cfg: RunConfig, command: str, extra: dict | None = None
                  ) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    files = {}
    if "tsv" in cfg.output.formats:
        lines = ["\t".join(COLUMNS)]
        for r in records:
            lines.append("\t".join("skip" if c == "pass" and r[c] is None and r["target"] is not None
                                   else _fmt(r[c]) for c in COLUMNS))
        files["report.tsv"] = "\n".join(lines) + "\n"
    if "jsonl" in cfg.output.formats:
        files["report.jsonl"] = "".join(
            json.dumps({k: _json_safe(r[k]) for k in COLUMNS}, sort_keys=True) + "\n" for r in records)
    for name, text in files.items():
        _atomic_write(outdir / name, text)
    params = cfg.params()
    manifest = {
        "command": command,
        "package_version": __version__,
        "schema_version": cfg.schema_version,
        "config_sha256": cfg.digest(),
        "params_fingerprint": params_fingerprint(params),
        "seed": cfg.run.seed,
        "stream_ids": [[cfg.run.seed, i] for i in range(cfg.run.chains)],
        "slices": cfg.physics.slices,
        "files": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(files.items())},
    }
    manifest.update(extra or {})
    _atomic_write(outdir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _observer_records(observers, stats: dict, samples: int) -> list[dict]:
    out = []
    for ob in observers:
        for lab, (mean, err, n) in ob.summary().items():
            out.append(_record(ob.name, lab, mean, None, err, None, f"n={n}"))
        if isinstance(ob, OccupationObserver):
            a = ob.acc["P(N=0)"]
            if a.count and a.mean > 0:
                out.append(_record("partition", "Xi", 1.0 / a.mean, None, a.stderr / a.mean**2, None,
                                   "inverse empty-state frequency"))
    for m in MOVES:
        tried, acc = stats[m]
        out.append(_record("acceptance", m, acc / tried if tried else None, None, None, None,
                           f"tried={tried} accepted={acc}"))
    out.append(_record("samples", "total", float(samples)))
    return out


# commands ---------------------------------------------------------------------------------


def run_command(cfg: RunConfig, outdir: Path, resume: bool = False) -> int:
    observers, stats, floor, samples = run_chains(cfg, "run", (), str(outdir), resume)
    records = _observer_records(observers, stats, samples)
    records.append(validate_energy_floor(SimpleNamespace(floor=floor)).as_dict())
    write_reports(outdir, records, cfg, "run")
    return EXIT_OK


def _skip(check: str, reference: str, detail: str) -> dict:
    return _record(check, reference, None, math.inf, None, None, detail)


def validate_command(cfg: RunConfig, outdir: Path, checks: Sequence[str] | None = None, resume: bool = False) -> int:
    checks = tuple(checks if checks else cfg.validate.checks or VALIDATORS)
    for c in checks:
        if c not in VALIDATORS:
            raise ConfigError(f"unknown validator {c!r}; choose from {', '.join(VALIDATORS)}")
    observers, stats, floor, samples = run_chains(cfg, "validate", checks, str(outdir), resume)
    params = cfg.params()
    inner = cfg.physics.inner_box.region() if cfg.physics.inner_box else params.box
    bounds = bound_constants(params, inner)
    stable = math.isfinite(bounds.kernel_bound)
    ns = cfg.validate.n_sigma
    by_name = {o.name: o for o in observers}
    records: list[dict] = []
    for c in checks:
        if c == "ruelle":
            if bounds.rho_bar >= 1:
                records.append(_skip("ruelle_bound", "one-loop moment bound", "inapplicable: rho_bar >= 1"))
            else:
                records += [r.as_dict() for r in validate_ruelle(by_name["ruelle"], params)]
        elif c == "q_bound":
            records.append(validate_q_bound(by_name["q_bound"], bounds).as_dict())
        elif c == "kernel_bound":
            if not stable:
                records.append(_skip("kernel_bound", "uniform kernel bound", "inapplicable: rho_bar >= 1"))
            else:
                records += [r.as_dict() for r in validate_kernel_bounds(by_name["kernel"].estimates(), bounds)]
        elif c == "gradient_bound":
            if not stable:
                records.append(_skip("gradient_bound", "uniform kernel gradient bound",
                                     "inapplicable: rho_bar >= 1"))
            else:
                records.append(validate_gradient_bound(by_name["gradient"], bounds).as_dict())
        elif c == "compatibility":
            records += [r.as_dict() for r in check_compatibility(by_name["compatibility"], ns)]
        elif c == "trace":
            records.append(check_trace(by_name["trace"], ns).as_dict())
        elif c == "energy_floor":
            records.append(validate_energy_floor(SimpleNamespace(floor=floor)).as_dict())
    records += _observer_records([], stats, samples)
    write_reports(outdir, records, cfg, "validate", {"checks": list(checks), "rho_bar": _json_safe(bounds.rho_bar)})
    return EXIT_FAIL if any(r["pass"] is False for r in records) else EXIT_OK


def oracle_command(cfg: RunConfig, outdir: Path, resume: bool = False) -> int:
    params = cfg.params()
    oc = cfg.oracle
    spec = QuadratureSpec(n_max=oc.n_max, k_max=params.k_max, nodes=oc.nodes)
    v0 = max_occupancy(params.box, params.potential.core_r)
    if v0 > oc.n_max:
        raise OracleSizeError(f"occupancy ceiling {v0} exceeds oracle n_max {oc.n_max}; the comparison would be "
                              "against a truncated sum")
    part = quad_partition(params, spec)  # size caps are enforced before any sampling
    inner = cfg.physics.inner_box.region() if cfg.physics.inner_box else None
    observers, stats, floor, samples = run_chains(cfg, "oracle-compare", (), str(outdir), resume)
    ns = cfg.validate.n_sigma
    records: list[dict] = []

    def compare(name, lab, acc, ref, ref_err):
        err = math.hypot(acc.stderr, ref_err)
        records.append(_record(name, lab, acc.mean, ref, err, bool(abs(acc.mean - ref) <= ns * err),
                               f"oracle_error={ref_err:.3g} n={acc.count}", "oracle"))

    xi = part.value
    occ = observers[0]
    for n in range(oc.n_max + 1):
        compare("occupation", f"P(N={n})", occ.acc[f"P(N={n})"], part.terms[n] / xi, part.error / xi)
    for ob in observers[1:]:
        if isinstance(ob, KernelObserver):
            for (x, y), lab in zip(ob.pairs, ob.labels):
                ref = quad_rdmk(params, spec, inner, x, y, partition=part)
                compare("kernel", lab, ob.acc[lab], ref.value, ref.error)
        elif isinstance(ob, TraceObserver):
            ref = quad_trace(params, spec, inner)
            compare("trace", "trace", ob.acc["trace"], ref.value, ref.error)
    records += _observer_records([], stats, samples)
    write_reports(outdir, records, cfg, "oracle-compare",
                  {"oracle": {"nodes": oc.nodes, "n_max": oc.n_max, "k_max": params.k_max, "grid": part.grid,
                              "partition": part.value, "partition_error": part.error}})
    return EXIT_FAIL if any(r["pass"] is False for r in records) else EXIT_OK


# entry point --------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopgas", description="Loop-gas Monte Carlo for hard-core Bose gases.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "sample and report observables"),
                        ("validate", "run validation checks"),
                        ("oracle-compare", "compare against deterministic quadrature")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="YAML run configuration")
        s.add_argument("-o", "--output", help="output directory (overrides the config)")
        s.add_argument("--resume", action="store_true", help="continue from per-chain checkpoints")
        if name == "validate":
            s.add_argument("--checks", help=f"comma-separated subset of {','.join(VALIDATORS)}")
    sub.add_parser("schema", help="print an example configuration")
    return p


EXAMPLE_CONFIG = """\
schema_version: 1
physics:
  box: {center: [0.0], half_side: 1.5}
  inner_box: {center: [0.0], half_side: 0.5}
  small_box: {center: [0.0], half_side: 0.25}
  z: 0.3
  beta: 0.5
  slices: 2
  k_max: 1
  potential: {family: hard_core, core_r: 1.55, range_R: 3.1}
run:
  seed: 1
  sweeps: 20000
  steps_per_sweep: 10
  burn_in: 100
  chains: 2
observables:
  kernel_pairs:
    - {x: [], y: []}
    - {x: [[0.1]], y: [[0.1]]}
validate:
  checks: [trace, compatibility, energy_floor]
"""


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "schema":
        sys.stdout.write(EXAMPLE_CONFIG)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        outdir = Path(args.output or cfg.output.directory)
        if args.command == "run":
            code = run_command(cfg, outdir, args.resume)
        elif args.command == "validate":
            checks = [c.strip() for c in args.checks.split(",")] if args.checks else None
            code = validate_command(cfg, outdir, checks, args.resume)
        else:
            code = oracle_command(cfg, outdir, args.resume)
    except (ConfigError, OracleSizeError) as exc:
        print(f"loopgas: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, OSError) as exc:
        print(f"loopgas: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error for the exit code
        log.debug("unhandled", exc_info=True)
        print(f"loopgas: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
