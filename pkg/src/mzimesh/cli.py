"""Command-line entry point: ``mzimesh <subcommand> [--config run.ini] [flags]``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical failure.
Each run writes its artifacts and a ``resolved.ini`` copy of the effective
configuration to the output directory (``--out``, ``[run] output_dir``,
``$MZIMESH_OUTPUT_DIR`` or ``./mzimesh-out``, in that order).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import energy as en
from .calibration import calibration_plan, simulate_calibration
from .config import OUTPUT_ENV, ConfigError, RunConfig, load_config
from .mzi import VoltagePhaseModel
from .onn import (
    Activation,
    IdxFormatError,
    OnnModel,
    TrainingConfig,
    TrainingDivergedError,
    evaluate_accuracy,
    gaussian_dataset,
    mnist_reduced,
    train,
)
from .programming import (
    MonitorFitError,
    NotAccessibleError,
    monitor_theta,
    monitoring_plan,
    program_ex_situ,
    program_in_situ,
)
from .propagation import CrosstalkModel, MeshState, apply_crosstalk, main_matrix, read_matrix_csv, rng_stream
from .robustness import Axis, SweepSpec, run_sweep
from .topology import build, structural_report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeFailure(RuntimeError):
    pass


# flag dest -> (section, key)
FLAG_KEYS = {
    "seed": ("run", "seed"),
    "out": ("run", "output_dir"),
    "kind": ("mesh", "kind"),
    "n": ("mesh", "n"),
    "crosstalk": ("mesh", "crosstalk"),
    "averaging": ("calibration", "averaging"),
    "residual_db": ("calibration", "residual_db"),
    "dataset": ("training", "dataset"),
    "layers": ("training", "layers"),
    "epochs": ("training", "epochs"),
    "learning_rate": ("training", "learning_rate"),
    "model": ("sweep", "model"),
    "mode": ("sweep", "mode"),
    "trials": ("sweep", "trials"),
    "samples": ("sweep", "samples"),
    "workers": ("sweep", "workers"),
    "energy_n": ("energy", "n"),
    "f_w_max": ("energy", "f_w_max"),
    "method": ("programming", "method"),
    "iterations": ("programming", "iterations"),
    "target": ("programming", "target"),
    "mzi": ("programming", "mzi"),
}


def _add(p, *names, **kw):
    p.add_argument(*names, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mzimesh", description="MZI mesh simulator and ONN toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mesh=True):
        _add(p, "--config", help="INI run configuration")
        _add(p, "--out", help=f"output directory (default ${OUTPUT_ENV} or ./mzimesh-out)")
        _add(p, "--seed", type=int)
        if mesh:
            _add(p, "--kind", choices=["reck", "clements", "diamond", "bokun"])
            _add(p, "--n", type=int, help="main ports N")
        return p

    common(sub.add_parser("mesh-info", help="structural characteristics of a mesh"))
    p = common(sub.add_parser("calibrate", help="calibration plan and simulated errors"))
    _add(p, "--averaging", choices=["true", "false"])
    _add(p, "--residual-db", dest="residual_db", type=float)
    p = common(sub.add_parser("train", help="train an ONN"))
    _add(p, "--dataset", choices=["gaussian", "mnist"])
    _add(p, "--layers", type=int)
    _add(p, "--epochs", type=int)
    _add(p, "--learning-rate", dest="learning_rate", type=float)
    p = common(sub.add_parser("sweep", help="noise/loss sweep of a trained model"), mesh=False)
    _add(p, "--model", help="trained model JSON")
    _add(p, "--mode", choices=["theta-phi", "sigma-loss"])
    _add(p, "--trials", type=int)
    _add(p, "--samples", type=int)
    _add(p, "--workers", type=int)
    p = common(sub.add_parser("energy", help="energy per operation table"), mesh=False)
    _add(p, "--n", dest="energy_n", type=int)
    _add(p, "--f-w-max", dest="f_w_max", type=float)
    p = common(sub.add_parser("monitor", help="monitored vs set theta of a programmed mesh"))
    _add(p, "--crosstalk", type=float)
    _add(p, "--mzi", type=int, help="monitor a single MZI")
    p = common(sub.add_parser("program", help="program a mesh ex-situ or in-situ"))
    _add(p, "--crosstalk", type=float)
    _add(p, "--method", choices=["ex-situ", "in-situ"])
    _add(p, "--iterations", type=int)
    _add(p, "--target", help="target matrix CSV for in-situ programming")
    return ap


def _config(args) -> RunConfig:
    overrides = {}
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[key] = v
    return load_config(args.config, overrides)


def _outdir(cfg: RunConfig) -> str:
    path = cfg.output_dir
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise RuntimeFailure(f"cannot create output directory {path}: {exc.strerror}") from exc
    cfg.write(os.path.join(path, "resolved.ini"))
    return path


def _topology(cfg: RunConfig):
    try:
        return build(cfg["mesh"]["kind"], cfg["mesh"]["n"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_mesh_info(cfg: RunConfig) -> int:
    topo = _topology(cfg)
    out = _outdir(cfg)
    rep = structural_report(topo)
    doc = rep.to_dict()
    doc["accessible_ids"] = sorted(rep.accessible_ids)
    _write_json(os.path.join(out, "structure.json"), doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    topo = _topology(cfg)
    c = cfg["calibration"]
    try:
        model = VoltagePhaseModel(c["v_pi"], c["resolution"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _outdir(cfg)
    plan = calibration_plan(topo)
    report = simulate_calibration(topo, plan=plan, model=model, span_v=c["span_v"],
                                  averaging=c["averaging"], residual_db=c["residual_db"],
                                  seed=cfg["run"]["seed"])
    plan.to_json(os.path.join(out, "plan.json"))
    report.write_csv(os.path.join(out, "calibration_errors.csv"))
    counts = plan.classification_counts()
    print(f"{topo.kind.value}({topo.n_main}): {len(plan.steps)} steps, "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"max calibration error: {report.max_error / np.pi:.3e} pi rad")
    return EXIT_OK


def _datasets(cfg: RunConfig, n: int):
    t = cfg["training"]
    seed = cfg["run"]["seed"]
    if t["dataset"] == "gaussian":
        kw = dict(separation=t["separation"], spread=t["spread"])
        return (gaussian_dataset(n, t["per_class"], seed=seed, **kw),
                gaussian_dataset(n, t["validation_per_class"], seed=seed + 1_000_003, **kw))
    if t["dataset"] == "mnist":
        paths = [t[k] for k in ("train_images", "train_labels", "test_images", "test_labels")]
        if any(p is None for p in paths):
            raise ConfigError("mnist dataset needs train_images, train_labels, test_images and test_labels")
        if t["n_features"] != n:
            raise ConfigError(f"n_features ({t['n_features']}) must equal the mesh size N ({n})")
        try:
            tr, red = mnist_reduced(paths[0], paths[1], n)
            va, _ = mnist_reduced(paths[2], paths[3], n, reducer=red)
        except OSError as exc:
            raise RuntimeFailure(f"cannot read {exc.filename}: {exc.strerror}") from exc
        if t["train_limit"] > 0:
            tr = tr.subset(np.arange(min(t["train_limit"], len(tr))))
        return tr, va
    raise ConfigError(f"unknown dataset {t['dataset']!r}; use gaussian or mnist")


def cmd_train(cfg: RunConfig) -> int:
    _topology(cfg)
    t = cfg["training"]
    n = cfg["mesh"]["n"]
    seed = cfg["run"]["seed"]
    try:
        act = Activation(t["activation"], b=t["modrelu_b"])
        tcfg = TrainingConfig(t["epochs"], t["batch_size"], t["learning_rate"], seed)
        model = OnnModel.create(cfg["mesh"]["kind"], n, t["layers"], seed=seed, activation=act,
                                loss_fn=t["loss_fn"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tr, va = _datasets(cfg, n)
    out = _outdir(cfg)
    result = train(model, tr, tcfg)
    result.model.save(os.path.join(out, "model.json"))
    with open(os.path.join(out, "loss_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, l in enumerate(result.loss_curve):
            w.writerow([i + 1, f"{l:.10g}"])
    summary = {
        "kind": model.kind.value,
        "n": n,
        "layers": t["layers"],
        "train_accuracy": evaluate_accuracy(result.model, tr),
        "validation_accuracy": evaluate_accuracy(result.model, va),
        "final_loss": result.loss_curve[-1] if result.loss_curve else None,
    }
    _write_json(os.path.join(out, "train.json"), summary)
    print(f"validation accuracy {summary['validation_accuracy']:.4f} "
          f"(train {summary['train_accuracy']:.4f})")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    s = cfg["sweep"]
    if s["model"] is None:
        raise ConfigError("sweep needs a trained model (--model or [sweep] model)")
    try:
        spec = SweepSpec(
            s["mode"],
            Axis(s["axis1_start"], s["axis1_stop"], s["axis1_steps"]),
            Axis(s["axis2_start"], s["axis2_stop"], s["axis2_steps"]),
            s["trials"], s["samples"], cfg["run"]["seed"], s["workers"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        model = OnnModel.load(s["model"])
    except OSError as exc:
        raise RuntimeFailure(f"cannot read model {s['model']}: {exc.strerror}") from exc
    except ValueError as exc:
        raise RuntimeFailure(f"malformed model file {s['model']}: {exc}") from exc
    _, va = _datasets(cfg, model.n_features)
    out = _outdir(cfg)
    rep = run_sweep(model, va, spec, metadata={"dataset": cfg["training"]["dataset"]})
    rep.threshold = s["threshold"]
    rep.write_csv(os.path.join(out, "grid.csv"))
    rep.write_json(os.path.join(out, "sweep.json"))
    rep.write_svg(os.path.join(out, "sweep.svg"))
    print(f"{model.kind.value}: FoM = {rep.fom_value:.6g} {rep.units} "
          f"(origin accuracy {rep.accuracy[0, 0]:.4f})")
    return EXIT_OK


def cmd_energy(cfg: RunConfig) -> int:
    e = cfg["energy"]
    try:
        params = en.EnergyParams(e["p_pi"], e["vr"], 0.0, e["transit_time"],
                                 e["in_situ_iterations"], e["ex_situ_iterations"])
        grid = en.f_w_sweep(0.0, e["f_w_max"], e["f_w_steps"])
        rows = en.efficiency_report(e["n"], grid, params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _outdir(cfg)
    en.write_csv(rows, os.path.join(out, "energy.csv"))
    en.summary_json(rows, params, os.path.join(out, "energy.json"))
    print(f"{'topology':<10} {'f_w_hz':>10} {'e_static_fj':>12} {'e_total_fj':>12}")
    for r in rows:
        if r.f_w_hz in (grid[0], grid[-1]):
            print(f"{r.topology:<10} {r.f_w_hz:>10g} {r.e_static_fj:>12.1f} {r.e_total_fj:>12.1f}")
    h = en.paper_reference(params, e["f_w_max"])
    print(f"saving Bokun vs Clements at {h['f_w_hz']:g} Hz: {100 * h['saving_quoted_static']:.1f}% "
          f"(Bokun static {h['bokun_static_fj_quoted']:g} fJ/Op), "
          f"{100 * h['saving_model_static']:.1f}% (counted {h['bokun_static_fj_model']:.0f} fJ/Op)")
    return EXIT_OK


def _programmed_state(cfg: RunConfig):
    topo = _topology(cfg)
    try:
        xt = CrosstalkModel(cfg["mesh"]["crosstalk"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return MeshState.random(topo, rng_stream(cfg["run"]["seed"], 7), crosstalk=xt)


def cmd_monitor(cfg: RunConfig) -> int:
    state = _programmed_state(cfg)
    topo = state.topology
    only = cfg["programming"]["mzi"]
    if only and not 1 <= only <= topo.n_mzi:
        raise ConfigError(f"MZI id {only} out of range 1..{topo.n_mzi}")
    ids = [only] if only else [p.id for p in topo.placements]
    out = _outdir(cfg)
    th_eff, _ = apply_crosstalk(state)
    rows = []
    for mid in ids:
        plan = monitoring_plan(topo, mid)
        if plan is None:
            if only:
                raise RuntimeFailure(f"MZI {mid} of {topo.kind.value}({topo.n_main}) is not independently "
                                     "accessible: no route keeps one input of it and of every later MZI dark")
            rows.append((mid, state.theta[mid - 1], th_eff[mid - 1], None))
            continue
        rows.append((mid, state.theta[mid - 1], th_eff[mid - 1], monitor_theta(state, plan).theta))
    with open(os.path.join(out, "monitor.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mzi_id", "set_theta", "effective_theta", "monitored_theta", "abs_error"])
        for mid, s, e, m in rows:
            s2, e2 = s % (2 * np.pi), e % (2 * np.pi)
            if m is None:
                w.writerow([mid, f"{s2:.10g}", f"{e2:.10g}", "", ""])
            else:
                err = abs((m - e2 + np.pi) % (2 * np.pi) - np.pi)
                w.writerow([mid, f"{s2:.10g}", f"{e2:.10g}", f"{m:.10g}", f"{err:.3e}"])
    for mid, s, e, m in rows:
        shown = "not independently accessible" if m is None else f"monitored {m:.6f}"
        print(f"MZI {mid:3d}: set {s % (2 * np.pi):.6f} effective {e % (2 * np.pi):.6f} {shown}")
    return EXIT_OK


def cmd_program(cfg: RunConfig) -> int:
    state = _programmed_state(cfg)
    topo = state.topology
    p = cfg["programming"]
    out = _outdir(cfg)
    if p["method"] == "ex-situ":
        rng = rng_stream(cfg["run"]["seed"], 8)
        tth = rng.uniform(0, 2 * np.pi, topo.n_mzi)
        tph = rng.uniform(0, 2 * np.pi, topo.n_mzi)
        try:
            res = program_ex_situ(state, tth, tph, p["iterations"], tol=p["tol"])
        except NotAccessibleError as exc:
            raise RuntimeFailure(str(exc)) from exc
    elif p["method"] == "in-situ":
        if p["target"]:
            try:
                target = read_matrix_csv(p["target"])
            except OSError as exc:
                raise RuntimeFailure(f"cannot read target {p['target']}: {exc.strerror}") from exc
        else:
            target = main_matrix(MeshState.random(topo, rng_stream(cfg["run"]["seed"], 8)))
        try:
            res = program_in_situ(state, target, p["max_iterations"], p["step"], tol=p["tol"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        raise ConfigError(f"unknown programming method {p['method']!r}; use ex-situ or in-situ")
    res.to_json(os.path.join(out, "program.json"))
    status = "converged" if res.converged else "NOT converged"
    print(f"{res.method}: {status}, residual {res.residual:.3e} after {res.iterations} iterations, "
          f"t_prog {res.t_prog * 1e6:.1f} us")
    return EXIT_OK


COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "energy": cmd_energy,
    "monitor": cmd_monitor,
    "program": cmd_program,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, MonitorFitError, TrainingDivergedError, IdxFormatError,
            NotAccessibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
