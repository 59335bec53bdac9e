"""Command-line entry point: simulate, embed, train, predict, evaluate.

Every subcommand accepts --seed, --config, --out-dir and --quiet. A config
file is flat ``key = value`` text whose keys are option names (dashes or
underscores); explicit flags override it. Each run writes its resolved
configuration next to its primary output as ``<output>.config``.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import baselines as B
from . import checkpoint as ckpt
from . import evaluation as E
from . import model as M
from .core import CascadeFormatError, estimate_adjacency, load_cascades, save_cascades
from .graph_embed import EmbedConfig, load_embeddings, save_embeddings, train_embeddings
from .hawkes_sim import SimConfig, simulate, synthesize_params, write_sidecar
from .numerics import make_rng

log = logging.getLogger("gbtpp")

NOT_CONFIGURABLE = {"config"}


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _merge_config(ctx: click.Context, kwargs: dict) -> dict:
    path = kwargs.get("config")
    if not path:
        return kwargs
    values = read_config_file(path)
    params = {p.name: p for p in ctx.command.params}
    for key, raw in values.items():
        if key not in params or key in NOT_CONFIGURABLE:
            raise click.UsageError(f"{path}: unknown key {key!r} for '{ctx.command.name}'")
        if ctx.get_parameter_source(key) is click.core.ParameterSource.COMMANDLINE:
            continue
        p = params[key]
        if raw == "":
            kwargs[key] = None
        elif p.is_flag:
            kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            kwargs[key] = p.type_cast_value(ctx, raw)
    return kwargs


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


def write_resolved_config(command: str, kwargs: dict, primary: Path) -> Path:
    path = primary.parent / (primary.name + ".config")
    lines = [f"# resolved configuration for '{command}'"]
    for k in sorted(kwargs):
        if k in NOT_CONFIGURABLE:
            continue
        lines.append(f"{k} = {_fmt_value(kwargs[k])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def common(fn):
    """Shared flags, config-file merging, logging setup and error reporting."""
    @click.option("--seed", type=int, default=0, show_default=True, help="Master random seed.")
    @click.option("--config", type=click.Path(exists=True, dir_okay=False),
                  help="Flat key = value file; flags override it.")
    @click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True,
                  help="Base directory for relative output paths.")
    @click.option("--quiet", is_flag=True, help="Only print warnings and errors.")
    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, **kwargs):
        kwargs = _merge_config(ctx, kwargs)
        logging.basicConfig(level=logging.WARNING if kwargs["quiet"] else logging.INFO,
                            format="%(message)s", stream=sys.stderr, force=True)
        Path(kwargs["out_dir"]).mkdir(parents=True, exist_ok=True)
        try:
            return fn(**kwargs)
        except (ValueError, CascadeFormatError, FileNotFoundError, OSError) as exc:
            raise click.ClickException(str(exc)) from None
    return wrapper


def _out(out_dir: str, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(out_dir) / p


@click.group()
def main():
    """Graph-biased temporal point process toolkit."""


@main.command("simulate")
@click.option("--out", required=True, help="Cascade file to write (JSONL).")
@click.option("--nodes", type=click.IntRange(min=2), default=20, show_default=True)
@click.option("--sequences", type=click.IntRange(min=1), default=2000, show_default=True)
@click.option("--max-events", type=click.IntRange(min=2), default=20, show_default=True)
@click.option("--horizon", type=float, default=1000.0, show_default=True)
@click.option("--beta", type=float, default=1.0, show_default=True, help="Kernel decay rate.")
@click.option("--radius", type=float, default=0.8, show_default=True,
              help="Spectral radius of the infectivity matrix.")
@common
def simulate_cmd(out, nodes, sequences, max_events, horizon, beta, radius, seed, out_dir,
                 quiet, **_):
    """Simulate cascades from a block-banded multivariate Hawkes process."""
    if radius / beta >= 1:
        raise click.BadParameter(f"radius/beta = {radius / beta:g} must be < 1", param_hint="--radius")
    path = _out(out_dir, out)
    params = synthesize_params(nodes, seed, target_radius=radius, beta=beta)
    config = SimConfig(sequences, max_events, horizon, seed)
    ds, report = simulate(params, config)
    save_cascades(ds, path)
    sidecar = path.with_name(path.stem + ".params.json")
    write_sidecar(params, config, report, sidecar)
    write_resolved_config("simulate", dict(out=out, nodes=nodes, sequences=sequences,
                                           max_events=max_events, horizon=horizon, beta=beta,
                                           radius=radius, seed=seed, out_dir=out_dir), path)
    log.info("wrote %d cascades (%d events, %d redrawn) to %s", report.n_sequences,
             report.n_events, report.discarded, path)


@main.command("embed")
@click.option("--cascades", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, help="Embedding CSV to write.")
@click.option("--dim", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=200, show_default=True)
@click.option("--l2", type=float, default=1e-4, show_default=True)
@click.option("--neg-samples", type=click.IntRange(min=0), default=5, show_default=True)
@click.option("--edge-quantile", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0,
              show_default=True, help="Drop edges whose count is at or below this quantile.")
@common
def embed_cmd(cascades, out, dim, learning_rate, epochs, l2, neg_samples, edge_quantile, seed,
              out_dir, quiet, **_):
    """Fit first-order-proximity node embeddings to observed propagations."""
    ds = load_cascades(cascades)
    config = EmbedConfig(dim, learning_rate, epochs, l2, neg_samples, seed,
                         edge_quantile=edge_quantile)
    emb = train_embeddings(estimate_adjacency(ds), config, make_rng(seed))
    path = _out(out_dir, out)
    save_embeddings(emb, path)
    write_resolved_config("embed", dict(cascades=cascades, out=out, dim=dim,
                                        learning_rate=learning_rate, epochs=epochs, l2=l2,
                                        neg_samples=neg_samples, edge_quantile=edge_quantile,
                                        seed=seed, out_dir=out_dir), path)
    if emb.loss_trace:
        log.info("embedding loss %.6g -> %.6g", emb.loss_trace[0], min(emb.loss_trace))
    log.info("wrote %s", path)


def _time_scale(value: str):
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise click.BadParameter("expected a positive number or 'auto'",
                                 param_hint="--time-scale") from None


@main.command("train")
@click.option("--cascades", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False),
              help="Embedding CSV (required for gbtpp and nrpp).")
@click.option("--out", required=True, help="Checkpoint file to write (JSON).")
@click.option("--model", type=click.Choice(list(E.ALL_MODELS)), default="gbtpp", show_default=True)
@click.option("--hidden", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--input-dim", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--bptt", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--learning-rate", type=float, default=0.01, show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--grad-clip", type=float, default=5.0, show_default=True)
@click.option("--time-feature", type=click.Choice(["raw_gap", "log_gap"]), default="raw_gap",
              show_default=True)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default="adam", show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--time-scale", default="1.0", show_default=True,
              help="Divide times by this before training, or 'auto' for the mean gap.")
@click.option("--time-weight", type=float, default=1.0, show_default=True)
@click.option("--smoothing", type=float, default=0.1, show_default=True,
              help="Additive smoothing for Markov baselines.")
@common
def train_cmd(cascades, embeddings, out, model, hidden, input_dim, bptt, learning_rate, epochs,
              grad_clip, time_feature, optimizer, batch_size, time_scale, time_weight, smoothing,
              seed, out_dir, quiet, **_):
    """Train one model (GBTPP, an ablation or a baseline) and write a checkpoint."""
    ds = load_cascades(cascades)
    path = _out(out_dir, out)
    resolved = dict(cascades=cascades, embeddings=embeddings, out=out, model=model, seed=seed,
                    out_dir=out_dir)
    if model in E.RECURRENT:
        emb = None
        if model != "rmtpp":
            if embeddings is None:
                raise click.UsageError(f"--embeddings is required for --model {model}")
            emb = load_embeddings(embeddings)
            if emb.V != ds.V:
                raise click.ClickException(
                    f"embeddings have V={emb.V} but cascades have V={ds.V}")
        config = M.TrainConfig(hidden, input_dim, bptt, learning_rate, epochs, grad_clip,
                               time_feature, seed, model, optimizer, time_weight,
                               _time_scale(time_scale), batch_size)
        res = M.train(ds, emb, config, rng=make_rng(seed), log=log.info)
        ckpt.save_recurrent(res.params, config, path, None if emb is None else embeddings)
        resolved.update(hidden=hidden, input_dim=input_dim, bptt=bptt,
                        learning_rate=learning_rate, epochs=epochs, grad_clip=grad_clip,
                        time_feature=time_feature, optimizer=optimizer, batch_size=batch_size,
                        time_scale=time_scale, time_weight=time_weight)
        log.info("best epoch %d, mean nll %.6f", res.best_epoch, res.loss_trace[res.best_epoch])
    else:
        fitted = E._fit(model, ds, None, False, None, make_rng(seed), smoothing)
        ckpt.save_baseline(fitted, model, path, ds.V)
        if model.startswith("mc"):
            resolved["smoothing"] = smoothing
    write_resolved_config("train", resolved, path)
    log.info("wrote %s", path)


def _parse_prefix(text: str):
    nodes, times = [], []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            v, t = item.split(":")
            nodes.append(int(v))
            times.append(float(t))
        except ValueError:
            raise click.BadParameter(f"bad event {item!r}; expected node:time",
                                     param_hint="--prefix") from None
    return nodes, times


@main.command("predict")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--prefix", help="Observed events as node:time pairs, e.g. '3:0,7:1.5'.")
@click.option("--cascades", type=click.Path(exists=True, dir_okay=False),
              help="Take the prefix from this cascade file instead.")
@click.option("--seq-id", help="Cascade to take the prefix from (with --cascades).")
@click.option("--length", type=click.IntRange(min=1), default=1, show_default=True,
              help="Number of leading events of --seq-id to use as the prefix.")
@click.option("--topk", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--out", help="Also write the prediction JSON to this file.")
@common
def predict_cmd(checkpoint, prefix, cascades, seq_id, length, topk, out, seed, out_dir, quiet,
                **_):
    """Predict the next node and time after an observed prefix; prints JSON."""
    ck = ckpt.load(checkpoint)
    if (prefix is None) == (cascades is None):
        raise click.UsageError("give exactly one of --prefix or --cascades")
    if cascades is not None:
        ds = load_cascades(cascades)
        if ds.V != ck.V:
            raise click.ClickException(f"cascades have V={ds.V} but checkpoint has V={ck.V}")
        match = [c for c in ds.cascades if c.seq_id == seq_id] if seq_id else list(ds.cascades[:1])
        if not match:
            raise click.ClickException(f"no cascade with seq_id {seq_id!r}")
        c = match[0]
        if length > len(c):
            raise click.BadParameter(f"cascade has only {len(c)} events", param_hint="--length")
        nodes, times = c.nodes[:length].tolist(), c.times[:length].tolist()
    else:
        nodes, times = _parse_prefix(prefix)
    node, time, probs = ckpt.predict_prefix(ck, nodes, times)
    doc = {"model": ck.kind, "node": node, "time": time,
           "topk": None if probs is None else ckpt.topk(probs, min(topk, ck.V))}
    text = json.dumps(doc)
    click.echo(text)
    if out:
        path = _out(out_dir, out)
        path.write_text(text + "\n", encoding="utf-8")
        write_resolved_config("predict", dict(checkpoint=checkpoint, prefix=prefix,
                                              cascades=cascades, seq_id=seq_id, length=length,
                                              topk=topk, out=out, seed=seed, out_dir=out_dir), path)


@main.command("evaluate")
@click.option("--cascades", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--models", default=",".join(E.ALL_MODELS), show_default=True,
              help="Comma-separated model list.")
@click.option("--folds", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=E.BENCHMARK_TRAIN.epochs,
              show_default=True)
@click.option("--hidden", type=click.IntRange(min=1), default=E.BENCHMARK_TRAIN.H,
              show_default=True)
@click.option("--learning-rate", type=float, default=E.BENCHMARK_TRAIN.learning_rate,
              show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=E.BENCHMARK_TRAIN.batch_size,
              show_default=True)
@click.option("--time-feature", type=click.Choice(["raw_gap", "log_gap"]),
              default=E.BENCHMARK_TRAIN.time_feature, show_default=True)
@click.option("--time-scale", default=str(E.BENCHMARK_TRAIN.time_scale), show_default=True)
@click.option("--embed-dim", type=click.IntRange(min=1), default=E.BENCHMARK_EMBED.d,
              show_default=True)
@click.option("--edge-quantile", type=click.FloatRange(0.0, 1.0, max_open=True),
              default=E.BENCHMARK_EMBED.edge_quantile, show_default=True)
@click.option("--report-name", default="benchmark", show_default=True,
              help="File name stem for the report files.")
@common
def evaluate_cmd(cascades, models, folds, epochs, hidden, learning_rate, batch_size,
                 time_feature, time_scale, embed_dim, edge_quantile, report_name, seed, out_dir,
                 quiet, **_):
    """Cross-validated benchmark; writes report JSON, per-record and top-K CSVs."""
    ds = load_cascades(cascades)
    names = [m.strip() for m in models.split(",") if m.strip()]
    train_config = replace(E.BENCHMARK_TRAIN, epochs=epochs, H=hidden,
                           learning_rate=learning_rate, batch_size=batch_size,
                           time_feature=time_feature, time_scale=_time_scale(time_scale),
                           seed=seed)
    embed_config = replace(E.BENCHMARK_EMBED, d=embed_dim, edge_quantile=edge_quantile, seed=seed)
    try:
        report, records, fold_assign = E.run_benchmark(ds, names, folds, seed, embed_config,
                                                       train_config)
    except RuntimeError as exc:
        raise click.ClickException(str(exc)) from None
    base = Path(out_dir)
    report_path = base / f"{report_name}.report.json"
    E.write_report(report, report_path)
    E.write_records(records, base / f"{report_name}.records.csv")
    E.write_fold_metrics(report, base / f"{report_name}.folds.csv")
    fold_assign.to_csv(ds, base / f"{report_name}.assignment.csv")
    if report.topk:
        E.write_topk_csv(report, base / f"{report_name}.topk.csv")
    write_resolved_config("evaluate", dict(
        cascades=cascades, models=",".join(names), folds=folds, epochs=epochs, hidden=hidden,
        learning_rate=learning_rate, batch_size=batch_size, time_feature=time_feature,
        time_scale=time_scale, embed_dim=embed_dim, edge_quantile=edge_quantile,
        report_name=report_name, seed=seed, out_dir=out_dir), report_path)
    for m, entry in report.metrics.items():
        cells = [f"{k} {v['mean']:.4f} ({v['std']:.4f})" for k, v in entry.items()]
        click.echo(f"{m:8s} " + "  ".join(cells))


if __name__ == "__main__":
    main()
