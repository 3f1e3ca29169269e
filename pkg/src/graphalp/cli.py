"""Experiment harness: config parsing, seeded runs, sweeps and report files.

Configs are plain JSON. Every run writes its effective config plus per-seed
report, timing, embedding and checkpoint artifacts into the output directory,
so a finished run is reconstructible from its outputs alone. Report files
contain no wall-clock data; runtimes go to a timing.json sidecar so reports
stay byte-identical across repeat runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, fields as dataclass_fields, replace
from pathlib import Path

import numpy as np

from .finetune import TrainConfig, run_pipeline
from .graph import (
    Graph,
    apply_step_imbalance,
    derive_seed,
    inject_uniform_noise,
    load_dataset,
    save_dataset,
)
from .llm import (
    JsonlCache,
    Provider,
    ProviderConfig,
    RemoteChatProvider,
    RemoteEmbedProvider,
    offline_provider,
)
from .metrics import export_embeddings
from .nn import save_params
from .pretrain import write_synthetic_edges

log = logging.getLogger(__name__)

METRIC_KEYS = ("accuracy", "macro_f1", "g_mean")


class ConfigError(ValueError):
    """Config file rejected: parse failure, unknown key or out-of-range value."""


def _train_defaults() -> dict:
    out = {}
    for f in dataclass_fields(TrainConfig):
        if f.name != "seed":
            out[f.name] = f.default
    return out


_SCHEMA = {
    "dataset": {"path": None, "format": "csv"},
    "imbalance": {"apply": True, "rho": 0.7, "majority_per_class": 20,
                  "num_minority": 1},
    "noise": {"p": 0.3},
    "provider": {"kind": "offline", "url": "", "model": "", "embed_model": "",
                 "key_env": "", "cache": "", "max_parallel": 4,
                 "temperature": 0.8},
    "train": None,  # resolved from TrainConfig defaults at parse time
    "output": {"dir": "runs/experiment"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    imbalance: dict
    noise: dict
    provider: dict
    train: dict
    output: dict
    seeds: tuple[int, ...]

    def effective(self) -> dict:
        return {
            "dataset": dict(self.dataset),
            "imbalance": dict(self.imbalance),
            "noise": dict(self.noise),
            "provider": dict(self.provider),
            "train": dict(self.train),
            "output": dict(self.output),
            "seeds": list(self.seeds),
        }

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)


def _merge_section(name: str, defaults: dict, given) -> dict:
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    out = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key '{name}.{key}'")
        out[key] = value
    return out


def parse_config(source) -> ExperimentConfig:
    """Load and validate a config from a JSON file path or an in-memory dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}"
            ) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    known_top = set(_SCHEMA) | {"seeds"}
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"unknown config key {key!r}")

    dataset = _merge_section("dataset", _SCHEMA["dataset"], raw.get("dataset"))
    imbalance = _merge_section("imbalance", _SCHEMA["imbalance"], raw.get("imbalance"))
    noise = _merge_section("noise", _SCHEMA["noise"], raw.get("noise"))
    provider = _merge_section("provider", _SCHEMA["provider"], raw.get("provider"))
    train = _merge_section("train", _train_defaults(), raw.get("train"))
    output = _merge_section("output", _SCHEMA["output"], raw.get("output"))
    seeds = raw.get("seeds", [1, 2, 3, 4, 5])

    if not dataset["path"]:
        raise ConfigError("dataset.path is required")
    if not 0 < imbalance["rho"] <= 1:
        raise ConfigError(f"imbalance.rho must be in (0, 1], got {imbalance['rho']}")
    if imbalance["majority_per_class"] < 1:
        raise ConfigError("imbalance.majority_per_class must be >= 1")
    if imbalance["num_minority"] < 0:
        raise ConfigError("imbalance.num_minority must be >= 0")
    if not 0 <= noise["p"] <= 1:
        raise ConfigError(f"noise.p must be in [0, 1], got {noise['p']}")
    if provider["kind"] not in ("offline", "remote"):
        raise ConfigError(f"provider.kind must be 'offline' or 'remote', got "
                          f"{provider['kind']!r}")
    if provider["kind"] == "remote" and not (provider["url"] and provider["model"]
                                             and provider["key_env"]):
        raise ConfigError("remote provider requires provider.url, provider.model "
                          "and provider.key_env")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list of integers")
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    try:
        TrainConfig(seed=0, **train)
    except TypeError as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid train setting: {exc}") from exc

    return ExperimentConfig(dataset=dataset, imbalance=imbalance, noise=noise,
                            provider=provider, train=train, output=output,
                            seeds=tuple(int(s) for s in seeds))


def build_provider(config: ExperimentConfig, graph: Graph, seed: int) -> Provider:
    """Provider bundle for one seeded run.

    The offline provider is a pure function of the graph and seed, so it
    never uses the response cache; the cache only backs remote calls.
    """
    spec = config.provider
    if spec["kind"] == "offline":
        return offline_provider(graph, seed)
    chat = RemoteChatProvider(ProviderConfig(
        kind="remote-chat", base_url=spec["url"], model=spec["model"],
        temperature=spec["temperature"], api_key_env=spec["key_env"],
        max_parallel=spec["max_parallel"]))
    embed = RemoteEmbedProvider(ProviderConfig(
        kind="remote-embed", base_url=spec["url"],
        model=spec["embed_model"] or spec["model"],
        api_key_env=spec["key_env"]))
    cache = JsonlCache(spec["cache"] or None)
    return Provider(chat=chat, embedder=embed, cache=cache,
                    max_parallel=spec["max_parallel"])


def prepare_graph(config: ExperimentConfig, base: Graph, seed: int
                  ) -> tuple[Graph, np.ndarray]:
    """Apply the configured imbalance and noise; returns (graph, reference labels)."""
    graph = base
    if config.imbalance["apply"]:
        graph = apply_step_imbalance(graph, config.imbalance["rho"],
                                     config.imbalance["majority_per_class"],
                                     config.imbalance["num_minority"],
                                     derive_seed(seed, 11))
    reference = graph.labels.copy()
    if config.noise["p"] > 0:
        graph = inject_uniform_noise(graph, config.noise["p"], derive_seed(seed, 12))
    return graph, reference


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_seed(config: ExperimentConfig, base: Graph, seed: int, seed_dir: Path) -> dict:
    """One full pipeline run; writes all per-seed artifacts and returns the report."""
    started = time.perf_counter()
    graph, reference = prepare_graph(config, base, seed)
    provider = build_provider(config, graph, derive_seed(seed, 13))
    result = run_pipeline(graph, config.train_config(seed), provider,
                          reference_labels=reference)

    seed_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(seed_dir / "report.json", result.report)
    export_embeddings(result.z_values, result.balanced.labels,
                      result.balanced.origin, seed_dir / "embeddings.csv")
    write_synthetic_edges(seed_dir / "synthetic_edges.csv", result.balanced)
    params = {**result.ae.parameters(), **result.gae.parameters(),
              **result.classifier.parameters("clf")}
    save_params(seed_dir / "checkpoint.json", params)
    _dump_json(seed_dir / "timing.json",
               {"runtime_seconds": time.perf_counter() - started})
    return result.report


def aggregate_reports(reports: dict[int, dict]) -> dict:
    """Mean and population std of the final metrics across seeds."""
    seeds = sorted(reports)
    out = {"seeds": seeds, "metrics": {}}
    for key in METRIC_KEYS:
        values = [float(reports[s]["final"][key]) for s in seeds]
        arr = np.array(values)
        out["metrics"][key] = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=0)),
            "per_seed": values,
        }
    return out


def run_experiment(config: ExperimentConfig, dry_run: bool = False) -> dict | None:
    """Run every configured seed and write per-seed plus aggregate reports."""
    base = load_dataset(config.dataset["path"], config.dataset["format"])
    if dry_run:
        if config.provider["kind"] == "remote":
            build_provider(config, base, 0).check_ready()
        log.info("dry run: config valid, dataset %s loads (%d nodes), provider ready",
                 config.dataset["path"], base.num_nodes)
        return None

    out_dir = Path(config.output["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(out_dir / "effective_config.json", config.effective())

    reports: dict[int, dict] = {}
    for seed in config.seeds:
        log.info("running seed %d", seed)
        try:
            reports[seed] = run_seed(config, base, seed, out_dir / f"seed_{seed}")
        except Exception as exc:
            raise RuntimeError(f"seed {seed} failed: {exc}") from exc
    aggregate = aggregate_reports(reports)
    _dump_json(out_dir / "aggregate.json", aggregate)
    return aggregate


SWEEP_AXES = ("rho", "p")


def sweep(config: ExperimentConfig, axis: str, values: list[float]) -> list[dict]:
    """Run the experiment per axis value; one aggregate CSV row per value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    base_out = Path(config.output["dir"])
    for value in values:
        if axis == "rho":
            if not 0 < value <= 1:
                raise ConfigError(f"sweep value {value} out of range for rho")
            sub = replace(config, imbalance={**config.imbalance, "rho": value},
                          output={"dir": str(base_out / f"sweep_rho_{value:g}")})
        else:
            if not 0 <= value <= 1:
                raise ConfigError(f"sweep value {value} out of range for p")
            sub = replace(config, noise={**config.noise, "p": value},
                          output={"dir": str(base_out / f"sweep_p_{value:g}")})
        aggregate = run_experiment(sub)
        row = {axis: value}
        for key in METRIC_KEYS:
            row[f"{key}_mean"] = aggregate["metrics"][key]["mean"]
            row[f"{key}_std"] = aggregate["metrics"][key]["std"]
        rows.append(row)

    base_out.mkdir(parents=True, exist_ok=True)
    csv_path = base_out / f"sweep_{axis}.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    log.info("sweep written to %s", csv_path)
    return rows


def prepare(config: ExperimentConfig, out_dir) -> None:
    """Apply imbalance and noise once (first seed) and save the result as a dataset."""
    base = load_dataset(config.dataset["path"], config.dataset["format"])
    graph, reference = prepare_graph(config, base, config.seeds[0])
    out = Path(out_dir)
    save_dataset(graph, out)
    _dump_json(out / "noise.json", {
        "p": config.noise["p"],
        "seed": config.seeds[0],
        "noise_mask": list(graph.noise_mask),
        "reference_labels": [int(v) for v in reference],
    })


def reaggregate(out_dir) -> dict:
    """Rebuild aggregate.json from the per-seed reports already on disk."""
    out = Path(out_dir)
    reports = {}
    for report_path in sorted(out.glob("seed_*/report.json")):
        seed = int(report_path.parent.name.split("_", 1)[1])
        reports[seed] = json.loads(report_path.read_text())
    if not reports:
        raise FileNotFoundError(f"no seed_*/report.json files under {out}")
    aggregate = aggregate_reports(reports)
    _dump_json(out / "aggregate.json", aggregate)
    return aggregate


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphalp",
        description="Imbalanced node classification with LLM oversampling, "
                    "self-supervised pre-training and pseudo-label fine-tuning.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run all configured seeds")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate config and provider reachability only")

    p_sweep = sub.add_parser("sweep", help="run the experiment across one axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values, e.g. 0.1,0.3,0.5")

    p_prep = sub.add_parser("prepare", help="apply imbalance and noise to a dataset")
    p_prep.add_argument("--config", required=True)
    p_prep.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="re-aggregate existing per-seed reports")
    p_rep.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            run_experiment(parse_config(args.config), dry_run=args.dry_run)
        elif args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            sweep(parse_config(args.config), args.axis, values)
        elif args.command == "prepare":
            prepare(parse_config(args.config), args.out)
        elif args.command == "report":
            reaggregate(args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any stage failure with context
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
