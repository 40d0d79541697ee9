"""Command-line surface: eval, sweep, validate, prompts, synth, bench.

Exit codes are a stable API: 0 success, 1 internal error, 2 invalid input
or validation failure. Configuration precedence is flags over config file
over defaults; reports embed the parameters and input digests they were
produced from.
"""

from __future__ import annotations

import hashlib
import json
import sys
import traceback
from pathlib import Path

import click

from . import __version__, backend
from .errors import InputError
from .ingest import parse_ground_truth, write_prompt_catalog
from .metrics import MetricsReport
from .pipeline import METHODS, SLICES, Dataset, RunParams, run_eval, sweep_score_thr
from .scoring import ScoringMethod


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fail(exc: Exception) -> int:
    if isinstance(exc, InputError):
        click.echo(f"error: {exc}", err=True)
        return 2
    traceback.print_exc()
    return 1


def _apply_config(ctx: click.Context, config_path: str | None) -> None:
    """Fill parameters the user did not pass explicitly from a JSON config."""
    if not config_path:
        return
    with open(config_path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    for key, value in cfg.items():
        name = key.replace("-", "_")
        if name not in ctx.params:
            raise click.UsageError(f"unknown config key {key!r}")
        src = ctx.get_parameter_source(name)
        if src is not None and src.name == "DEFAULT":
            ctx.params[name] = value


def _run_params(params: dict) -> RunParams:
    return RunParams(
        scoring=ScoringMethod(params["scoring"]),
        conf_thr=params["conf_thr"],
        group_iou=params["group_iou"],
        iou_thr=params["iou_thr"],
        score_thr=params["dba_score_thr"],
        nms_iou=params["nms_iou"],
        relevant_only=not params["all_tokens"],
        workers=params["workers"],
    )


def _write_report(report: MetricsReport, out_dir: str | None, dump_pr) -> None:
    click.echo(report.to_text(), nl=False)
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    if dump_pr:
        with open(out / "pr_curves.jsonl", "w", encoding="utf-8") as fh:
            for method, slice_name, curve in dump_pr:
                fh.write(
                    json.dumps(
                        {
                            "method": method,
                            "slice": slice_name,
                            "points": [[r, p] for r, p in curve.points],
                            "ap": curve.ap,
                        }
                    )
                    + "\n"
                )


_shared_eval_options = [
    click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--token-maps", "token_maps_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--scoring", type=click.Choice([m.value for m in ScoringMethod]), default="nlse", show_default=True),
    click.option("--conf-thr", type=float, default=0.3, show_default=True, help="Confidence threshold applied after scoring."),
    click.option("--group-iou", type=float, default=0.85, show_default=True, help="IoU to the anchor required to join an overlap group."),
    click.option("--iou-thr", type=float, default=0.5, show_default=True, help="IoU required for a TP match."),
    click.option("--dba-score-thr", type=float, default=0.0, show_default=True, help="Retention window below the per-group maximum score."),
    click.option("--nms-iou", type=float, default=0.5, show_default=True),
    click.option("--all-tokens", is_flag=True, help="Aggregate over every token instead of the categorized ones."),
    click.option("--workers", type=int, default=1, show_default=True),
    click.option("--strict/--lenient", "strict", default=True, show_default=True, help="Abort on ground-truth sanity violations."),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config; flags take precedence."),
]


def _with_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return wrap


@click.group()
@click.version_option(version=__version__, prog_name="ovdeval")
def main():
    """Open-vocabulary detection evaluation toolkit."""


@main.command("eval")
@_with_options(_shared_eval_options)
@click.option("--baseline", type=click.Choice(list(METHODS) + ["all"]), default="dba", show_default=True)
@click.option("--slice", "slice_name", type=click.Choice(list(SLICES) + ["all"]), default="global", show_default=True)
@click.option("--per-group-map", is_flag=True, help="Also report the mean AP across synonym groups.")
@click.option("--dump-pr", is_flag=True, help="Write per-slice PR curve points next to the report.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def cmd_eval(ctx, **params):
    """Score, group, aggregate, and report AP/F1 against the ground truth."""
    try:
        _apply_config(ctx, params["config_path"])
        params = dict(ctx.params)
        dataset = Dataset.load(
            params["gt_path"],
            params["pred_path"],
            params["prompts_path"],
            params["token_maps_path"],
            strict_gt=params["strict"],
        )
        methods = list(METHODS) if params["baseline"] == "all" else [params["baseline"]]
        slices = list(SLICES) if params["slice_name"] == "all" else [params["slice_name"]]
        run = _run_params(params)
        metadata = {
            "tool": "ovdeval",
            "version": __version__,
            "backend": backend.backend_name(),
            "inputs": {
                "gt": {"path": str(params["gt_path"]), "sha256": _digest(params["gt_path"])},
                "pred": {"path": str(params["pred_path"]), "sha256": _digest(params["pred_path"])},
                "prompts": {"path": str(params["prompts_path"]), "sha256": _digest(params["prompts_path"])},
                "token_maps": {"path": str(params["token_maps_path"]), "sha256": _digest(params["token_maps_path"])},
            },
        }
        report = run_eval(
            dataset, run, slices, methods,
            per_group_map=params["per_group_map"], metadata=metadata,
        )
        dump = None
        if params["dump_pr"]:
            from .metrics import average_precision
            from .pipeline import _Runner, _slice_items, group_by_image, score_and_filter

            scored = score_and_filter(dataset, run)
            items = group_by_image(dataset.gts, scored)
            dump = []
            with _Runner(run.workers) as runner:
                for method in methods:
                    for slice_name in slices:
                        ledger = runner.ledger(_slice_items(items, slice_name), run, method)
                        dump.append((method, slice_name, average_precision(ledger)))
        _write_report(report, params["out_dir"], dump)
    except Exception as exc:  # noqa: BLE001 - exit-code boundary
        sys.exit(_fail(exc))


@main.command("sweep")
@_with_options(_shared_eval_options)
@click.option("--grid", default="0.0,0.02,0.05,0.1,0.2", show_default=True, help="Comma-separated retention-window values.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def cmd_sweep(ctx, **params):
    """Sweep the DBA retention window and pick the best global F1."""
    try:
        _apply_config(ctx, params["config_path"])
        params = dict(ctx.params)
        grid = [float(v) for v in str(params["grid"]).split(",") if v.strip() != ""]
        dataset = Dataset.load(
            params["gt_path"],
            params["pred_path"],
            params["prompts_path"],
            params["token_maps_path"],
            strict_gt=params["strict"],
        )
        best, table = sweep_score_thr(dataset, grid, _run_params(params))
        header = f"{'score_thr':>9}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'ap':>9}  {'tp':>6}  {'fp':>6}  {'fn':>6}"
        click.echo(header)
        click.echo("-" * len(header))
        for row in table:
            ap = "-" if row.ap is None else f"{row.ap:9.6f}"
            click.echo(
                f"{row.score_thr:9.4f}  {row.precision:9.6f}  {row.recall:9.6f}  "
                f"{row.f1:9.6f}  {ap}  {row.tp:6d}  {row.fp:6d}  {row.fn:6d}"
            )
        click.echo(f"best score_thr by global F1: {best}")
        if params["out_dir"]:
            out = Path(params["out_dir"])
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "sweep.json", "w", encoding="utf-8") as fh:
                json.dump(
                    {
                        "best_score_thr": best,
                        "rows": [row.__dict__ for row in table],
                    },
                    fh,
                    indent=2,
                    sort_keys=True,
                )
                fh.write("\n")
    except Exception as exc:  # noqa: BLE001
        sys.exit(_fail(exc))


@main.command("validate")
@click.argument("gt_path", type=click.Path(exists=True, dir_okay=False))
def cmd_validate(gt_path):
    """Run the annotation sanity rules; exit 0 iff the file is clean."""
    try:
        result = parse_ground_truth(gt_path, strict=False)
    except Exception as exc:  # noqa: BLE001
        sys.exit(_fail(exc))
    if result.violations:
        for v in result.violations:
            click.echo(str(v))
        click.echo(f"{len(result.violations)} violation(s) in {len(result.records)} record(s)")
        sys.exit(2)
    click.echo(f"OK: {len(result.records)} record(s), no violations")


@main.command("prompts")
@click.option("--templates", "templates_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Defaults to the packaged template file.")
@click.option("--synonyms", "synonyms_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Defaults to the packaged synonym dictionary.")
@click.option("--combos", "combos_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Defaults to the packaged combination list.")
@click.option("--cap-per-combo", type=int, default=7, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def cmd_prompts(templates_path, synonyms_path, combos_path, cap_per_combo, out_path):
    """Generate the prompt catalog from label combinations."""
    try:
        from .promptgen import (
            generate_prompts,
            load_combinations,
            load_synonyms,
            load_templates,
        )

        entries = generate_prompts(
            load_combinations(combos_path),
            load_templates(templates_path),
            load_synonyms(synonyms_path),
            cap_per_combo=cap_per_combo,
        )
        with open(out_path, "w", encoding="utf-8") as fh:
            write_prompt_catalog(entries, fh)
        groups = len({e.synonym_group for e in entries})
        click.echo(f"wrote {len(entries)} prompts in {groups} synonym groups to {out_path}")
    except Exception as exc:  # noqa: BLE001
        sys.exit(_fail(exc))


@main.command("synth")
@click.option("--n-images", type=int, default=10, show_default=True)
@click.option("--gt-per-image", type=int, default=4, show_default=True)
@click.option("--frac-duplicate", type=float, default=0.0, show_default=True)
@click.option("--frac-disjoint", type=float, default=0.0, show_default=True)
@click.option("--frac-inflated", type=float, default=0.0, show_default=True)
@click.option("--frac-suppressed", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def cmd_synth(n_images, gt_per_image, frac_duplicate, frac_disjoint, frac_inflated,
              frac_suppressed, seed, out_dir):
    """Generate a seeded synthetic scenario in the ingest file formats."""
    try:
        from .synth import ScenarioConfig, generate_scenario

        cfg = ScenarioConfig(
            n_images=n_images,
            n_gt_per_image=gt_per_image,
            frac_duplicate=frac_duplicate,
            frac_disjoint=frac_disjoint,
            frac_inflated=frac_inflated,
            frac_suppressed=frac_suppressed,
            seed=seed,
        )
        paths = generate_scenario(cfg).write(out_dir)
        for name, path in paths.items():
            click.echo(f"{name}: {path}")
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001
        sys.exit(_fail(exc))


@main.command("bench")
@click.option("--records", type=int, default=1_000_000, show_default=True)
@click.option("--preds-per-image", type=int, default=100, show_default=True)
@click.option("--gt-per-image", type=int, default=5, show_default=True)
@click.option("--batch-images", type=int, default=2000, show_default=True)
@click.option("--backend", "backend_name", type=click.Choice(["auto", "python", "compiled"]), default="auto", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def cmd_bench(records, preds_per_image, gt_per_image, batch_images, backend_name, seed, as_json):
    """Measure score + group + DBA-classify throughput on synthetic data."""
    try:
        from .bench import run_benchmark

        result = run_benchmark(
            records,
            preds_per_image=preds_per_image,
            gt_per_image=gt_per_image,
            batch_images=batch_images,
            seed=seed,
            backend_name=backend_name,
        )
        if as_json:
            click.echo(json.dumps(result.to_dict(), sort_keys=True))
        else:
            d = result.to_dict()
            for key in ("backend", "records", "kept", "tp", "fp", "fn",
                        "elapsed_s", "throughput_rps", "peak_rss_mb"):
                click.echo(f"{key}: {d[key]}")
    except Exception as exc:  # noqa: BLE001
        sys.exit(_fail(exc))


if __name__ == "__main__":
    main()
