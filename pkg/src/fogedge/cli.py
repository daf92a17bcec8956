"""``fogedge`` command line: datagen, train, compress, evaluate, simulate, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .compression import compress, load_quantized, save_quantized, size_breakdown
from .config import OUTPUT_ROOT_ENV, ExperimentConfig, dump_config, load_config
from .container import load_parameters, save_parameters
from .errors import ConfigError, DataError, FogEdgeError, ShapeError
from .evaluation.cohort import generate_synthetic_cohort, get_profile, synth_subject
from .evaluation.features import feature_oracle_auc
from .evaluation.loo import ablation, cohort_windows, decision_agreement, loo_folds, report_from_folds
from .evaluation.metrics import METRIC_NAMES
from .evaluation.report_io import plain, read_report_yaml, write_report_yaml, write_reports_csv
from .netsim.inference import ConstantInference, FloatInference, QuantizedInference
from .netsim.sim import check_conservation, find_collisions, run_simulation, write_log
from .netsim.sources import RecordingSource
from .nn.model import ModelSpec, default_model_spec, fit_input_scales, window_geometry
from .nn.train import train
from .signals import labeled_windows, load_dataset, save_dataset, select_channels

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("fogedge")


# ---------------------------------------------------------------------------
# shared helpers


def load_cohort(cfg: ExperimentConfig) -> list:
    ds = cfg.dataset
    if ds.source == "manifest":
        recs = load_dataset(ds.manifest)
    else:
        s = ds.synthetic
        recs = generate_synthetic_cohort(s.n_subjects, s.windows_per_subject, s.effect_profile, s.seed,
                                         cfg.windowing.length_s, cfg.windowing.stride_s)
    if ds.channels:
        recs = [select_channels(r, ds.channels) for r in recs]
    if len(recs) < 2:
        raise DataError("the dataset needs at least 2 subjects")
    return recs


def base_spec(cfg: ExperimentConfig, window) -> ModelSpec:
    m = cfg.model
    return default_model_spec(window_geometry(window), tuple(m.eeg_kernels), m.emg_kernel, m.acc_kernel,
                              m.n_layers, m.stride, tuple(m.head_dims), m.multiplier)


def all_windows(cfg: ExperimentConfig, cohort) -> list:
    w = cfg.windowing
    return [win for rec in cohort for win in labeled_windows(rec, w.length_s, w.stride_s, w.label_threshold)]


def write_yaml(path: Path, doc) -> None:
    path.write_text(yaml.safe_dump(plain(doc), sort_keys=True, default_flow_style=False), encoding="utf-8")


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def prepare_output(cfg: ExperimentConfig, command: str) -> Path:
    out = cfg.output_path()
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{command}.config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write to output directory {out}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_datagen(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.dataset.source != "synthetic":
        raise ConfigError("datagen needs dataset.source = synthetic")
    cohort = load_cohort(cfg)
    manifest = save_dataset(cohort, out / "dataset", name=f"synthetic-{cfg.dataset.synthetic.effect_profile}")
    windows = cohort_windows(cohort, cfg.windowing)
    n = sum(len(ws) for ws in windows.values())
    n_pos = sum(int(w.label) for ws in windows.values() for w in ws)
    auc = feature_oracle_auc(windows)
    n_neg = n - n_pos
    # spread of a chance-level AUC (Mann-Whitney null) for this class balance
    null_sd = math.sqrt((n_pos + n_neg + 1) / (12.0 * n_pos * n_neg)) if n_pos and n_neg else float("nan")
    summary = {
        "subjects": len(cohort),
        "windows": n,
        "positive_windows": n_pos,
        "positive_fraction": n_pos / n,
        "effect_profile": cfg.dataset.synthetic.effect_profile,
        "feature_oracle_auc": auc,
        "chance_auc_sd": null_sd,
        "chance_level": bool(abs(auc - 0.5) <= 3 * null_sd),
        "manifest_sha256": file_sha256(manifest),
    }
    write_yaml(out / "datagen_summary.yaml", summary)
    print(f"wrote {len(cohort)} subjects to {manifest.parent}")
    print(f"windows {n}, positive {n_pos} ({n_pos / n:.1%}); band-power oracle LOO AUC {auc:.3f}"
          f"{' (chance level)' if summary['chance_level'] else ''}")
    return summary


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    cohort = load_cohort(cfg)
    windows = all_windows(cfg, cohort)
    if not windows:
        raise DataError("no windows to train on")
    spec = fit_input_scales(base_spec(cfg, windows[0]), windows)
    res = train(spec, windows, cfg.train)
    nbytes = save_parameters(out / "model.fogp", res.params, spec)
    with open(out / "train_log.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(res.losses, 1):
            w.writerow([i, repr(float(loss))])
    print(f"trained on {len(windows)} windows; loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}; "
          f"model.fogp {nbytes} bytes")
    return {"first_loss": res.losses[0], "final_loss": res.losses[-1], "bytes": nbytes}


def cmd_compress(cfg: ExperimentConfig, out: Path, model_path: Path | None = None) -> dict:
    model_path = model_path or out / "model.fogp"
    params, spec = load_parameters(model_path)
    if spec is None:
        raise DataError(f"{model_path}: container has no model spec")
    cohort = load_cohort(cfg)
    windows = all_windows(cfg, cohort)
    if not windows:
        raise DataError("compression needs calibration windows")
    cc = cfg.compression
    result = compress(spec, params, windows, cc)
    sizes = size_breakdown(spec, params, result, cc.sparse_encoding)
    files = {"float": str(model_path)}
    save_parameters(out / "model_pruned.fogp", result.params, spec, sparse=True)
    files["pruned_sparse"] = str(out / "model_pruned.fogp")
    if result.model is not None:
        save_quantized(out / "model.fogq", result.model, cc.sparse_encoding)
        save_quantized(out / "model_int8_dense.fogq", result.model, False)
        files["int8"] = str(out / "model_int8_dense.fogq")
        files["compressed"] = str(out / "model.fogq")
    else:
        save_parameters(out / "model_compressed.fogp", result.params, spec, sparse=cc.sparse_encoding)
        files["compressed"] = str(out / "model_compressed.fogp")
    on_disk = {k: Path(v).stat().st_size for k, v in files.items()}
    report = {"sizes": sizes, "files": {k: Path(v).name for k, v in files.items()}, "file_bytes": on_disk,
              "sparsity": cc.sparsity, "quantized": cc.quantize}
    write_yaml(out / "sizes.yaml", report)
    with open(out / "sizes.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["artifact", "bytes"])
        for k in ("float_bytes", "pruned_sparse_bytes", "int8_bytes", "compressed_bytes"):
            w.writerow([k, "" if sizes[k] is None else sizes[k]])
    print(f"float {sizes['float_bytes']} B -> compressed {sizes['compressed_bytes']} B "
          f"(ratio {sizes['ratio']:.3f})")
    return report


def _fidelity(float_rep, comp_rep, folds) -> dict:
    diffs = {}
    for name in METRIC_NAMES:
        a, b = float_rep.metric(name), comp_rep.metric(name)
        diffs[name] = None if a is None or b is None else abs(a - b)
    return {"abs_diff": diffs, "decision_agreement_at_0.5": decision_agreement(folds, 0.5),
            "decision_agreement_at_operating_point": decision_agreement(folds, None)}


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    cohort = load_cohort(cfg)
    windows = cohort_windows(cohort, cfg.windowing)
    first = next(iter(windows.values()))[0]
    spec = base_spec(cfg, first)
    ev = cfg.evaluation
    comp_cfg = cfg.compression if ev.compressed else None
    folds = loo_folds(windows, spec, cfg.train, comp_cfg, cfg.jobs)
    rdir = out / "reports"
    rdir.mkdir(exist_ok=True)
    reports = {"float": report_from_folds(folds, False, ev.n_boot, ev.seed)}
    write_report_yaml(reports["float"], rdir / "loo_float.yaml", "float")
    summary = {"folds": len(folds)}
    if comp_cfg is not None:
        reports["compressed"] = report_from_folds(folds, True, ev.n_boot, ev.seed)
        write_report_yaml(reports["compressed"], rdir / "loo_compressed.yaml", "compressed")
        summary["fidelity"] = _fidelity(reports["float"], reports["compressed"], folds)
        write_yaml(rdir / "fidelity.yaml", summary["fidelity"])
    if ev.ablation:
        abl = ablation(cohort, spec, ev.ablation_spec(), cfg.train, cfg.windowing, ev.n_boot, ev.seed,
                       cfg.jobs, full_folds=folds)
        for key, rep in abl.items():
            write_report_yaml(rep, rdir / f"ablation_{key}.yaml", f"ablation:{key}")
            reports[f"ablation:{key}"] = rep
        summary["ablation_auc"] = {k: r.auc for k, r in abl.items()}
    write_reports_csv(reports, rdir / "metrics.csv")
    with open(rdir / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "window", "label", "float_score", "compressed_score"])
        for f in folds:
            for i, (y, s) in enumerate(zip(f.labels, f.scores)):
                c = "" if f.compressed_scores is None else repr(float(f.compressed_scores[i]))
                w.writerow([f.subject_id, i, int(y), repr(float(s)), c])
    for name, rep in reports.items():
        print(f"{name:>22}: " + "  ".join(
            f"{m} {rep.metric(m):.3f}" if rep.metric(m) is not None else f"{m} n/a"
            for m in ("sensitivity", "specificity", "f1", "auc")))
    return summary


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    ns = cfg.netsim
    sc = ns.scenario
    if abs(sc.window_s - cfg.windowing.length_s) > 1e-9:
        raise ConfigError("netsim.scenario.window_s must equal windowing.length_s")
    profile = get_profile(cfg.dataset.synthetic.effect_profile)
    rec = synth_subject("SIM", sc.duration_s, profile, np.random.default_rng(ns.recording_seed))
    if cfg.dataset.channels:
        rec = select_channels(rec, cfg.dataset.channels)
    source = RecordingSource(rec)
    if ns.inference == "quantized":
        infer = QuantizedInference(load_quantized(out / "model.fogq"), source)
    elif ns.inference == "float":
        params, spec = load_parameters(out / "model.fogp")
        infer = FloatInference(spec, params, source)
    else:
        infer = ConstantInference(ns.constant_score)
    log_ = run_simulation(source.nodes, source, sc, infer)
    report = write_log(log_, out / "netsim")
    checks = {"collisions": len(find_collisions(log_)), "conservation": check_conservation(log_),
              "diagnostics": list(log_.diagnostics), "event_digest": log_.digest()}
    write_yaml(out / "netsim" / "checks.yaml", checks)
    print(f"simulated {sc.duration_s:g} s: {report['windows']} windows, {report['alerts']} alerts, "
          f"max alert latency {report['max_alert_latency_s']:.3f} s, backlog high-water "
          f"{report['backlog_high_water']}, frames lost {report['frames_lost']}/{report['frames_tx']}")
    for d in log_.diagnostics:
        print(f"diagnostic: {d}")
    return {**report, **checks}


def cmd_report(cfg: ExperimentConfig, out: Path) -> dict:
    rdir = out / "reports"
    reports = {}
    for name in ("float", "compressed"):
        p = rdir / f"loo_{name}.yaml"
        if p.is_file():
            reports[name] = read_report_yaml(p)
    for p in sorted(rdir.glob("ablation_*.yaml")) if rdir.is_dir() else ():
        reports[f"ablation:{p.stem[len('ablation_'):]}"] = read_report_yaml(p)
    if not reports:
        raise DataError(f"no evaluation reports under {rdir}; run 'fogedge evaluate' first")
    lines = ["# Results", "", "| model | " + " | ".join(METRIC_NAMES) + " |",
             "|---" * (len(METRIC_NAMES) + 1) + "|"]
    for name, rep in reports.items():
        cells = []
        for m in METRIC_NAMES:
            v = rep.metric(m)
            lo, hi = rep.ci95.get(m, (None, None))
            if v is None:
                cells.append("n/a")
            elif lo is None or (isinstance(lo, float) and math.isnan(lo)):
                cells.append(f"{v:.3f}")
            else:
                cells.append(f"{v:.3f} ({lo:.3f}, {hi:.3f})")
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    sizes = out / "sizes.yaml"
    if sizes.is_file():
        s = yaml.safe_load(sizes.read_text(encoding="utf-8"))["sizes"]
        lines += ["", "## Model size", "",
                  f"float {s['float_bytes']} B, compressed {s['compressed_bytes']} B, ratio {s['ratio']:.3f}"]
    sim = out / "netsim" / "summary.csv"
    if sim.is_file():
        lines += ["", "## Network simulation", ""]
        with open(sim, encoding="utf-8") as fh:
            for row in list(csv.reader(fh))[1:]:
                lines.append(f"- {row[0]}: {row[1]}")
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text, encoding="utf-8")
    write_reports_csv(reports, out / "report.csv")
    print(text, end="")
    return {"models": list(reports)}


COMMANDS = {
    "datagen": (cmd_datagen, "generate the synthetic cohort and write it as a dataset"),
    "train": (cmd_train, "train the float model on the whole dataset"),
    "compress": (cmd_compress, "prune, fine-tune, calibrate and quantize a trained model"),
    "evaluate": (cmd_evaluate, "leave-one-subject-out evaluation, compression fidelity and ablation"),
    "simulate": (cmd_simulate, "simulate the body-area network streaming to the central node"),
    "report": (cmd_report, "collect evaluation, size and simulation outputs into one report"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogedge", description=__doc__.splitlines()[0],
        epilog=f"Relative output directories are placed under ${OUTPUT_ROOT_ENV} (default: current directory).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("-c", "--config", help="experiment YAML file (defaults apply when omitted)")
        p.add_argument("-o", "--output", help="output directory (overrides output_dir)")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=5 (repeatable)")
        p.add_argument("-j", "--jobs", type=int, help="maximum worker processes")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "compress":
            p.add_argument("--model", help="float model container (default: <output>/model.fogp)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.output:
            overrides.append(f"output_dir={args.output}")
        if args.jobs is not None:
            overrides.append(f"jobs={args.jobs}")
        cfg = load_config(args.config, overrides)
        out = prepare_output(cfg, args.command)
        fn = COMMANDS[args.command][0]
        if args.command == "compress" and args.model:
            fn(cfg, out, Path(args.model))
        else:
            fn(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FogEdgeError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
