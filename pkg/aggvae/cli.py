"""Command-line driver: ``aggvae {synth,encode,infer,render,compare}``.

Exit codes: 0 on success, 1 on a hard error, 2 when a run completed but its
diagnostics raised warnings (divergent or unconverged chains).
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import pandas as pd

from . import __version__, aggregate, diagnostics, render, serialize, synthdata, vae
from ._classes import Era, ModelKind, PartitionKind
from .config import PipelineConfig, load_config, log_level, provenance
from .errors import AggVAEError, ConfigError, DimensionMismatch
from .geometry import build_grid, load_polygons, membership_matrix
from .inference import ModelSpec, load_prevalence, posterior_prevalence, run_nuts
from .priors import HyperPriorSpec, KernelSpec
from .sampler import NUTSOptions

logger = logging.getLogger("aggvae")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2

MODEL_CHOICES = {"agggp": ModelKind.AGGGP, "aggvae": ModelKind.AGGVAE}


def setup_logging(level: Optional[str] = None) -> None:
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel((level or log_level()).upper())


def _require(*paths: Path) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"Missing input file(s): {', '.join(missing)}.")


def _seed(config: PipelineConfig) -> int:
    if config.seed is None:
        raise ConfigError("A root seed is required: set 'seed' in the config or pass --seed.")
    return int(config.seed)


def _hyperpriors(config: PipelineConfig) -> HyperPriorSpec:
    return HyperPriorSpec(
        lengthscale_shape=config.lengthscale_shape,
        lengthscale_scale=config.lengthscale_scale,
        sigma_scale=config.sigma_scale,
    )


def _out(config: PipelineConfig, name: str) -> Path:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _geometry(config: PipelineConfig):
    _require(config.path("boundaries_old"), config.path("boundaries_new"))
    polygons_old = load_polygons(config.path("boundaries_old"), Era.OLD)
    polygons_new = load_polygons(config.path("boundaries_new"), Era.NEW)
    grid = build_grid([polygons_old, polygons_new], config.resolution)
    M_old = membership_matrix(grid, polygons_old)
    M_new = membership_matrix(grid, polygons_new)
    logger.info("Grid %s: %d points, cell area %.4g", grid.grid_id, grid.n, grid.cell_area)
    return polygons_old, polygons_new, grid, M_old, M_new


def _write_commented_csv(frame: pd.DataFrame, path: Path, info: Dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in sorted(info.items()):
            fh.write(f"# {key} = {value}\n")
        frame.to_csv(fh, index=False)


# ---------------------------
# Subcommands
# ---------------------------


def cmd_synth(config: PipelineConfig, args) -> int:
    seed = _seed(config)
    extent = config.extent_tuple()
    if config.partition_kind == PartitionKind.VORONOI:
        polygons_old, _ = synthdata.make_partitions(
            config.rows_old, config.cols_old, config.rows_new, config.cols_new, extent
        )
        polygons_new = synthdata.make_voronoi_partition(config.voronoi_count, extent, seed)
    else:
        polygons_old, polygons_new = synthdata.make_partitions(
            config.rows_old, config.cols_old, config.rows_new, config.cols_new, extent
        )

    truth = synthdata.TruthSpec(
        b0=config.b0_true,
        kernel=KernelSpec(variance=config.sigma_true ** 2, lengthscale=config.lengthscale_true),
    )
    scenario = synthdata.simulate_counts(
        polygons_old, polygons_new, config.resolution, truth, config.tests_per_unit, seed, skew=config.skew
    )
    paths = synthdata.write_scenario(scenario, config.out_dir, provenance(config))
    for role, path in paths.items():
        logger.info("%s -> %s", role, path)
    return EXIT_OK


def cmd_encode(config: PipelineConfig, args) -> int:
    seed = _seed(config)
    polygons_old, polygons_new, grid, M_old, M_new = _geometry(config)
    info = provenance(config, cell_area=grid.cell_area, encode_scaled=config.encode_scaled, grid_id=grid.grid_id)

    draws = aggregate.generate_training_set(
        grid, M_old, M_new, _hyperpriors(config), config.training_size, seed, threads=config.worker_count
    )
    values = aggregate.stack(draws)
    if config.encode_scaled:
        values = grid.cell_area * values
    serialize.save_training_set(
        config.path("training_set"), values, polygons_old.K, polygons_new.K, seed, provenance=info
    )

    spec = vae.default_spec(
        polygons_old.K + polygons_new.K,
        latent_dim=config.latent_dim or None,
        hidden=config.hidden(),
        activation=config.activation,
    )
    weights = vae.train(
        values,
        spec,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        noise_sigma=config.noise_sigma or None,
        seed=seed,
        K1=polygons_old.K,
        provenance=info,
        log_every=config.log_every,
    )
    serialize.save_decoder(config.path("decoder"), weights)

    trace = pd.DataFrame({"loss": weights.loss_trace})
    _write_commented_csv(trace, _out(config, "loss_trace.csv"), info)
    logger.info("Decoder %s written, final loss %.6g", config.path("decoder"), weights.loss_trace[-1])
    return EXIT_OK


def _model_spec(config: PipelineConfig, kind: str) -> ModelSpec:
    _require(config.path("data_old"), config.path("data_new"))
    polygons_old, polygons_new, grid, M_old, M_new = _geometry(config)
    data_old = load_prevalence(config.path("data_old")).reindex(polygons_old.labels)
    data_new = load_prevalence(config.path("data_new")).reindex(polygons_new.labels)
    common = dict(
        kind=kind,
        data_old=data_old,
        data_new=data_new,
        hyperpriors=_hyperpriors(config),
        intercept_scale=config.intercept_scale,
        s_scale=config.s_scale,
    )
    if kind == ModelKind.AGGGP:
        return ModelSpec(grid=grid, M_old=M_old, M_new=M_new, **common)

    _require(config.path("decoder"))
    decoder = serialize.load_decoder(config.path("decoder"))
    if (decoder.K1, decoder.K2) != (polygons_old.K, polygons_new.K):
        raise DimensionMismatch(
            f"Decoder was trained for {decoder.K1}+{decoder.K2} units, "
            f"boundaries have {polygons_old.K}+{polygons_new.K}."
        )
    return ModelSpec(decoder=decoder, **common)


def draws_path(config: PipelineConfig, kind: str) -> Path:
    return _out(config, f"draws_{kind}.bin")


def cmd_infer(config: PipelineConfig, args) -> int:
    seed = _seed(config)
    kind = MODEL_CHOICES[args.model]
    spec = _model_spec(config, kind)
    info = provenance(config, model=kind)

    options = NUTSOptions(
        target_accept=config.target_accept, max_depth=config.max_tree_depth, log_every=config.log_every * 10
    )
    chains = run_nuts(
        spec,
        chains=config.chains,
        warmup=config.warmup,
        samples=config.samples,
        seed=seed,
        options=options,
        threads=config.worker_count,
        provenance=info,
    )
    serialize.save_draws(draws_path(config, kind), chains)

    table = diagnostics.summarize(chains)
    warnings = diagnostics.warnings_for(chains, table)
    info = dict(info, unreliable=chains.unreliable, divergence_rate=round(chains.divergence_rate, 6))
    _write_commented_csv(table, _out(config, f"diagnostics_{kind}.csv"), info)
    _write_commented_csv(posterior_prevalence(chains), _out(config, f"prevalence_{kind}.csv"), info)

    logger.info(
        "%s: %d draws written, sampling %s",
        kind,
        chains.chains * chains.samples,
        diagnostics.format_duration(chains.sampling_time),
    )
    return EXIT_WARNINGS if warnings else EXIT_OK


def _truth(config: PipelineConfig) -> Optional[pd.DataFrame]:
    path = config.path("truth")
    if not path.exists():
        return None
    return pd.read_csv(path, comment="#", dtype={"unit": str})


def cmd_render(config: PipelineConfig, args) -> int:
    path = Path(args.draws) if args.draws else draws_path(config, MODEL_CHOICES[args.model])
    _require(path, config.path("data_old"), config.path("data_new"))
    chains = serialize.load_draws(path)
    polygons = {
        Era.OLD: load_polygons(config.path("boundaries_old"), Era.OLD),
        Era.NEW: load_polygons(config.path("boundaries_new"), Era.NEW),
    }
    if (polygons[Era.OLD].K, polygons[Era.NEW].K) != (chains.K1, chains.K2):
        raise DimensionMismatch(
            f"Draws cover {chains.K1}+{chains.K2} units, boundaries have "
            f"{polygons[Era.OLD].K}+{polygons[Era.NEW].K}."
        )
    data = {
        Era.OLD: load_prevalence(config.path("data_old")).reindex(polygons[Era.OLD].labels),
        Era.NEW: load_prevalence(config.path("data_new")).reindex(polygons[Era.NEW].labels),
    }
    truth = _truth(config) if args.truth else None
    summary = posterior_prevalence(chains)
    info = provenance(config, model=chains.kind, draws=str(path))

    rows = []
    for era in Era.TYPES:
        estimate = summary[summary["era"] == era]["mean"].to_numpy()
        crude = data[era].crude()
        truth_values = None
        if truth is not None:
            lookup = truth[truth["era"] == era].set_index("unit")["theta"]
            truth_values = lookup.reindex(list(polygons[era].labels)).to_numpy()
        render.render_choropleth(
            polygons[era],
            estimate,
            crude,
            _out(config, f"map_{chains.kind}_{era}.svg"),
            title=f"{chains.kind}, {era} boundaries",
            truth=truth_values,
            provenance=info,
        )
        for i, label in enumerate(polygons[era].labels):
            row = {"era": era, "unit": label, "estimate": estimate[i], "crude": crude[i]}
            if truth_values is not None:
                row["truth"] = truth_values[i]
            rows.append(row)

    render.write_scatter(pd.DataFrame(rows), _out(config, f"scatter_{chains.kind}.csv"), info)
    scalars = ["b0"] + [name for name in ("s", "lengthscale", "sigma") if chains.has(name)]
    render.render_trace(chains, scalars, _out(config, f"trace_{chains.kind}.svg"), info)
    return EXIT_OK


def cmd_compare(config: PipelineConfig, args) -> int:
    path_gp = Path(args.agggp) if args.agggp else draws_path(config, ModelKind.AGGGP)
    path_vae = Path(args.aggvae) if args.aggvae else draws_path(config, ModelKind.AGGVAE)
    _require(path_gp, path_vae)
    first = serialize.load_draws(path_gp)
    second = serialize.load_draws(path_vae)

    frame = diagnostics.comparison_report(first, second)
    print(diagnostics.format_report(frame), end="")
    diagnostics.write_report(frame, _out(config, "comparison"), provenance(config))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "infer": cmd_infer,
    "render": cmd_render,
    "compare": cmd_compare,
}


def _global_flags(parser: argparse.ArgumentParser, default=None) -> argparse.ArgumentParser:
    parser.add_argument("--config", default=default, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=default, help="root seed (overrides the config)")
    parser.add_argument("--out", default=default, help="output directory (overrides the config)")
    parser.add_argument("--log-level", default=default, help="DEBUG, INFO, WARNING or ERROR")
    return parser


def build_parser() -> argparse.ArgumentParser:
    # flags may come before or after the subcommand; the subcommand copy must not reset them
    common = _global_flags(argparse.ArgumentParser(add_help=False), default=argparse.SUPPRESS)

    parser = _global_flags(argparse.ArgumentParser(prog="aggvae", description=__doc__.splitlines()[0]))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="write a synthetic two-partition scenario")
    sub.add_parser("encode", parents=[common], help="draw aggregates and train the decoder")

    infer = sub.add_parser("infer", parents=[common], help="run NUTS for one model")
    infer.add_argument("--model", choices=sorted(MODEL_CHOICES), required=True)

    draw = sub.add_parser("render", parents=[common], help="choropleth maps and traces from a draw file")
    draw.add_argument("--model", choices=sorted(MODEL_CHOICES), default="aggvae")
    draw.add_argument("--draws", help="draw file (default: the model's file in the output directory)")
    draw.add_argument("--truth", action="store_true", help="add a residual panel against truth.csv")

    compare = sub.add_parser("compare", parents=[common], help="efficiency report for both models")
    compare.add_argument("--agggp", help="aggGP draw file")
    compare.add_argument("--aggvae", help="aggVAE draw file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out)
        logger.debug("config:\n%s", config)
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, args)
    except AggVAEError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR
    except ValueError as exc:
        logger.error("Invalid input: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
