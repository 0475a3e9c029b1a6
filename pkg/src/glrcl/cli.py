"""Batch experiment runner and file utilities.

Subcommands:
    run --config <path> [--stream-files f ...]   run one experiment
    gen-stream --spec <path> --out <dir>         write synthetic .glrf pairs
    inspect <file>                               summarize a generator/pool file
    metrics --matrix <csv>                       recompute metrics from a matrix

Configs are strict JSON: unknown keys are rejected, defaults are materialized
into the run report, and rerunning from a run report reproduces the matrix
byte for byte.  Exit codes: 0 success, 1 configuration error, 2 runtime
failure.  The GLRCL_VERBOSITY env var (0 quiet, 1 summary, 2 chatty) only
affects logging, never artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import baselines, gmm, metrics, nnet, replay, streams
from .errors import ConfigError, GlrclError
from .ioutil import atomic_write_bytes, atomic_write_text
from .tensor import Rng

METHODS = ("glrcl", "naive", "joint", "cumulative", "buffer_replay")

GMM_DEFAULTS = {
    "max_iter": 200,
    "rel_tol": 1e-6,
    "reg_eps_scale": 1e-6,
    "k_max": 10,
    "covariance_kind": "auto",
    "restarts": 1,
}

TRAIN_DEFAULTS = {
    "replay_ratio": 1.0,
    "epochs": 20,
    "batch_size": 64,
    "shuffle": True,
    "lr": 1e-3,
    "weight_decay": 1e-2,
    "hidden_dims": [512, 256, 128, 64, 32],
}


def _verbosity() -> int:
    raw = os.environ.get("GLRCL_VERBOSITY", "1")
    try:
        return int(raw)
    except ValueError:
        return 1


def _say(level: int, message: str) -> None:
    if _verbosity() >= level:
        print(message)


def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _get(obj: dict, key: str, kinds, where: str, default=KeyError):
    if key not in obj:
        if default is KeyError:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    value = obj[key]
    if kinds is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a boolean")
        return value
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{key}: expected an integer")
        return value
    if kinds is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key}: expected a number")
        return float(value)
    if not isinstance(value, kinds):
        raise ConfigError(f"{where}.{key}: unexpected type {type(value).__name__}")
    return value


def _resolve_synthetic(raw: dict) -> dict:
    allowed = (
        "num_domains", "classes", "dim", "train_per_class", "eval_per_class",
        "within_sd", "seed", "base_means", "mean_radius", "rotations_deg",
        "translations", "scales",
    )
    _check_keys(raw, allowed, "stream.synthetic")
    kwargs = {
        "num_domains": _get(raw, "num_domains", int, "stream.synthetic"),
        "classes": _get(raw, "classes", int, "stream.synthetic"),
        "dim": _get(raw, "dim", int, "stream.synthetic"),
        "train_per_class": _get(raw, "train_per_class", int, "stream.synthetic"),
        "eval_per_class": _get(raw, "eval_per_class", int, "stream.synthetic"),
        "within_sd": _get(raw, "within_sd", float, "stream.synthetic"),
        "seed": _get(raw, "seed", int, "stream.synthetic"),
        "mean_radius": _get(raw, "mean_radius", float, "stream.synthetic",
                            default=3.0),
    }
    for key in ("base_means", "rotations_deg", "translations", "scales"):
        value = raw.get(key)
        kwargs[key] = None if value is None else value
    if kwargs["base_means"] is not None:
        kwargs["base_means"] = np.asarray(kwargs["base_means"], dtype=np.float64)
    if kwargs["translations"] is not None:
        kwargs["translations"] = np.asarray(kwargs["translations"],
                                            dtype=np.float64)
    try:
        spec = streams.SyntheticShiftSpec(**kwargs)
    except GlrclError as exc:
        raise ConfigError(f"stream.synthetic: {exc}") from None
    return {
        "num_domains": spec.num_domains,
        "classes": spec.classes,
        "dim": spec.dim,
        "train_per_class": spec.train_per_class,
        "eval_per_class": spec.eval_per_class,
        "within_sd": spec.within_sd,
        "seed": spec.seed,
        "base_means": spec.base_means.tolist(),
        "mean_radius": spec.mean_radius,
        "rotations_deg": list(spec.rotations_deg),
        "translations": spec.translations.tolist(),
        "scales": list(spec.scales),
    }


def resolve_config(raw: dict) -> dict:
    """Validate a run config and materialize every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, ("seed", "method", "buffer_capacity", "stream", "gmm",
                      "train", "out_dir"), "config")
    method = _get(raw, "method", str, "config")
    if method not in METHODS:
        raise ConfigError(f"config.method: expected one of {METHODS}, got {method!r}")
    capacity = raw.get("buffer_capacity")
    if method == "buffer_replay":
        if not isinstance(capacity, int) or isinstance(capacity, bool) or capacity < 1:
            raise ConfigError("config.buffer_capacity: positive integer required "
                              "for buffer_replay")
    elif capacity is not None:
        raise ConfigError("config.buffer_capacity only applies to buffer_replay")

    stream_raw = _get(raw, "stream", dict, "config")
    _check_keys(stream_raw, ("synthetic", "files"), "config.stream")
    if ("synthetic" in stream_raw) == ("files" in stream_raw):
        raise ConfigError("config.stream: exactly one of 'synthetic'/'files'")
    if "synthetic" in stream_raw:
        stream_resolved = {"synthetic": _resolve_synthetic(
            _get(stream_raw, "synthetic", dict, "config.stream"))}
    else:
        files = _get(stream_raw, "files", list, "config.stream")
        if not files or any(not isinstance(p, str) for p in files) \
                or len(files) % 2 != 0:
            raise ConfigError("config.stream.files: even-length list of paths")
        stream_resolved = {"files": list(files)}

    gmm_raw = dict(_get(raw, "gmm", dict, "config", default={}))
    _check_keys(gmm_raw, GMM_DEFAULTS, "config.gmm")
    gmm_resolved = {
        "max_iter": _get(gmm_raw, "max_iter", int, "config.gmm",
                         default=GMM_DEFAULTS["max_iter"]),
        "rel_tol": _get(gmm_raw, "rel_tol", float, "config.gmm",
                        default=GMM_DEFAULTS["rel_tol"]),
        "reg_eps_scale": _get(gmm_raw, "reg_eps_scale", float, "config.gmm",
                              default=GMM_DEFAULTS["reg_eps_scale"]),
        "k_max": _get(gmm_raw, "k_max", int, "config.gmm",
                      default=GMM_DEFAULTS["k_max"]),
        "covariance_kind": _get(gmm_raw, "covariance_kind", str, "config.gmm",
                                default=GMM_DEFAULTS["covariance_kind"]),
        "restarts": _get(gmm_raw, "restarts", int, "config.gmm",
                         default=GMM_DEFAULTS["restarts"]),
    }
    train_raw = dict(_get(raw, "train", dict, "config", default={}))
    _check_keys(train_raw, TRAIN_DEFAULTS, "config.train")
    hidden = _get(train_raw, "hidden_dims", list, "config.train",
                  default=list(TRAIN_DEFAULTS["hidden_dims"]))
    if not hidden or any(isinstance(h, bool) or not isinstance(h, int) or h < 1
                         for h in hidden):
        raise ConfigError("config.train.hidden_dims: list of positive integers")
    train_resolved = {
        "replay_ratio": _get(train_raw, "replay_ratio", float, "config.train",
                             default=TRAIN_DEFAULTS["replay_ratio"]),
        "epochs": _get(train_raw, "epochs", int, "config.train",
                       default=TRAIN_DEFAULTS["epochs"]),
        "batch_size": _get(train_raw, "batch_size", int, "config.train",
                           default=TRAIN_DEFAULTS["batch_size"]),
        "shuffle": _get(train_raw, "shuffle", bool, "config.train",
                        default=TRAIN_DEFAULTS["shuffle"]),
        "lr": _get(train_raw, "lr", float, "config.train",
                   default=TRAIN_DEFAULTS["lr"]),
        "weight_decay": _get(train_raw, "weight_decay", float, "config.train",
                             default=TRAIN_DEFAULTS["weight_decay"]),
        "hidden_dims": list(hidden),
    }
    resolved = {
        "seed": _get(raw, "seed", int, "config"),
        "method": method,
        "buffer_capacity": capacity,
        "stream": stream_resolved,
        "gmm": gmm_resolved,
        "train": train_resolved,
        "out_dir": _get(raw, "out_dir", str, "config"),
    }
    try:
        _build_engine_configs(resolved)
    except (GlrclError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return resolved


def _build_engine_configs(cfg: dict):
    g = cfg["gmm"]
    em_cfg = gmm.EmConfig(
        max_iter=g["max_iter"],
        rel_tol=g["rel_tol"],
        reg_eps_scale=g["reg_eps_scale"],
        k_max=g["k_max"],
        covariance_kind_policy=g["covariance_kind"],
        restarts=g["restarts"],
    )
    t = cfg["train"]
    replay_cfg = replay.ReplayConfig(
        replay_ratio=t["replay_ratio"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        shuffle=t["shuffle"],
    )
    head_cfg = nnet.HeadConfig(
        hidden_dims=tuple(t["hidden_dims"]),
        lr=t["lr"],
        weight_decay=t["weight_decay"],
    )
    return em_cfg, replay_cfg, head_cfg


def _build_stream(cfg: dict) -> streams.TaskStream:
    src = cfg["stream"]
    if "synthetic" in src:
        s = dict(src["synthetic"])
        s["base_means"] = np.asarray(s["base_means"], dtype=np.float64)
        s["translations"] = np.asarray(s["translations"], dtype=np.float64)
        s["rotations_deg"] = tuple(s["rotations_deg"])
        s["scales"] = tuple(s["scales"])
        return streams.generate_stream(streams.SyntheticShiftSpec(**s))
    return streams.load_stream(src["files"])


def _dispatch(cfg: dict, stream: streams.TaskStream) -> replay.RunResult:
    em_cfg, replay_cfg, head_cfg = _build_engine_configs(cfg)
    rng = Rng(cfg["seed"])
    method = cfg["method"]
    if method == "glrcl":
        return replay.run_glrcl(stream, em_cfg, replay_cfg, head_cfg, rng)
    if method == "naive":
        return baselines.run_naive(stream, em_cfg, replay_cfg, head_cfg, rng)
    if method == "joint":
        return baselines.run_joint(stream, em_cfg, replay_cfg, head_cfg, rng)
    if method == "cumulative":
        return baselines.run_cumulative(stream, em_cfg, replay_cfg, head_cfg, rng)
    return baselines.run_buffer_replay(stream, em_cfg, replay_cfg, head_cfg,
                                       cfg["buffer_capacity"], rng)


def _metrics_payload(cfg: dict, mat: metrics.AccuracyMatrix) -> dict:
    try:
        bwt_value = metrics.bwt(mat)
    except GlrclError:
        bwt_value = None
    try:
        ilm_value = metrics.ilm(mat)
    except GlrclError:
        ilm_value = None
    return {
        "avg_accuracy": metrics.avg_accuracy(mat),
        "bwt": bwt_value,
        "ilm": ilm_value,
        "ilm_definition": metrics.ILM_DEFINITION,
        "method": cfg["method"],
        "seed": cfg["seed"],
        "T": mat.num_tasks,
    }


def _timeline_csv(mat: metrics.AccuracyMatrix) -> str:
    lines = []
    for t in range(1, mat.t_filled + 1):
        seen_mean = float(np.mean(mat.values[t - 1, :t]))
        lines.append(f"{t},{seen_mean!r}")
    return "\n".join(lines) + "\n"


def _privacy_payload(cfg: dict, stream: streams.TaskStream,
                     result: replay.RunResult, pool_bytes: int | None) -> dict:
    d = stream.feature_dim
    train_rows = sum(task.train.n for task in stream.tasks)
    all_rows = sum(task.train.n + task.eval.n for task in stream.tasks)
    method = cfg["method"]
    if method in ("naive", "glrcl"):
        retained_samples = 0
    elif method == "buffer_replay":
        retained_samples = cfg["buffer_capacity"]
    else:
        retained_samples = train_rows
    retained_bytes = retained_samples * (4 * d + 4)
    return {
        "method": method,
        "retained_samples": retained_samples,
        "retained_sample_bytes": retained_bytes,
        "pool_file_bytes": pool_bytes,
        "stream_feature_values": all_rows * d,
        "stream_feature_bytes": all_rows * d * 8,
        "stream_feature_bytes_note":
            "float64 bytes of every train+eval feature held by the engine",
    }


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_run(config_path: str, stream_files=None) -> int:
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    if isinstance(raw, dict) and "config" in raw:
        raw = raw["config"]   # a run report doubles as a rerunnable config
    if stream_files:
        if not isinstance(raw, dict):
            print("error: config root must be a JSON object", file=sys.stderr)
            return 1
        raw = dict(raw)
        raw["stream"] = {"files": list(stream_files)}
    try:
        cfg = resolve_config(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        started = time.perf_counter()
        stream = _build_stream(cfg)
        result = _dispatch(cfg, stream)
        out_dir = cfg["out_dir"]
        os.makedirs(out_dir, exist_ok=True)

        pool_bytes = None
        artifacts = {
            "accuracy_matrix": "accuracy_matrix.csv",
            "metrics": "metrics.json",
            "timeline": "timeline.csv",
            "run_report": "run_report.json",
        }
        if cfg["method"] == "glrcl":
            pool_blob = result.pool.to_bytes()
            pool_bytes = len(pool_blob)
            atomic_write_bytes(os.path.join(out_dir, "generator_pool.gmm"),
                               pool_blob)
            artifacts["pool"] = "generator_pool.gmm"

        payload = _metrics_payload(cfg, result.matrix)
        atomic_write_text(os.path.join(out_dir, "accuracy_matrix.csv"),
                          metrics.matrix_to_csv(result.matrix))
        atomic_write_text(os.path.join(out_dir, "metrics.json"),
                          _json_text(payload))
        atomic_write_text(os.path.join(out_dir, "timeline.csv"),
                          _timeline_csv(result.matrix))
        report = {
            "config": cfg,
            "metrics": payload,
            "privacy": _privacy_payload(cfg, stream, result, pool_bytes),
            "timings_sec": {
                "total": time.perf_counter() - started,
                "per_session": result.session_seconds,
            },
            "artifacts": artifacts,
        }
        atomic_write_text(os.path.join(out_dir, "run_report.json"),
                          _json_text(report))
    except GlrclError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    _say(1, f"{cfg['method']} seed={cfg['seed']} T={result.matrix.num_tasks} "
            f"avg_accuracy={payload['avg_accuracy']:.2f} "
            f"bwt={payload['bwt'] if payload['bwt'] is None else round(payload['bwt'], 2)} "
            f"-> {out_dir}")
    return 0


def cmd_gen_stream(spec_path: str, out_dir: str) -> int:
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("stream spec must be a JSON object")
        resolved = _resolve_synthetic(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = dict(resolved)
        cfg["base_means"] = np.asarray(cfg["base_means"], dtype=np.float64)
        cfg["translations"] = np.asarray(cfg["translations"], dtype=np.float64)
        cfg["rotations_deg"] = tuple(cfg["rotations_deg"])
        cfg["scales"] = tuple(cfg["scales"])
        stream = streams.generate_stream(streams.SyntheticShiftSpec(**cfg))
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for t in range(len(stream)):
            paths.append(os.path.join(out_dir, f"domain{t:02d}_train.glrf"))
            paths.append(os.path.join(out_dir, f"domain{t:02d}_eval.glrf"))
        streams.save_stream(stream, paths)
    except GlrclError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _say(1, f"wrote {len(paths)} feature files to {out_dir}")
    return 0


def _describe_generator(key, g: gmm.GmmGenerator) -> str:
    prefix = f"domain={key[0]} class={key[1]} " if key else ""
    weights = ", ".join(f"{w:.4f}" for w in g.weights)
    return (f"{prefix}k={g.k} d={g.dim} kind={g.covariance_kind} "
            f"fitted_on={g.fitted_on} weight_sum={float(np.sum(g.weights)):.9f} "
            f"weights=[{weights}]")


def cmd_inspect(path: str) -> int:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if blob[:4] == gmm.GENERATOR_MAGIC:
            print(f"{path}: single generator")
            print("  " + _describe_generator(None, gmm.deserialize(blob)))
        else:
            pool = replay.GeneratorPool.from_bytes(blob)
            print(f"{path}: generator pool with {len(pool)} entries "
                  f"(dim {pool.feature_dim})")
            for key in pool.sorted_keys():
                print("  " + _describe_generator(key, pool.entries[key]))
    except GlrclError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_metrics(matrix_path: str) -> int:
    try:
        with open(matrix_path, "r", encoding="utf-8") as fh:
            mat = metrics.matrix_from_csv(fh.read())
    except (OSError, GlrclError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    payload = {
        "avg_accuracy": metrics.avg_accuracy(mat),
        "bwt": None,
        "ilm": None,
        "ilm_definition": metrics.ILM_DEFINITION,
        "T": mat.num_tasks,
    }
    try:
        payload["bwt"] = metrics.bwt(mat)
    except GlrclError:
        pass
    try:
        payload["ilm"] = metrics.ilm(mat)
    except GlrclError:
        pass
    print(_json_text(payload), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glrcl",
        description="Generative latent replay continual-learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--stream-files", nargs="+", default=None,
                       help="override the stream with .glrf train/eval pairs")

    p_gen = sub.add_parser("gen-stream", help="write synthetic .glrf files")
    p_gen.add_argument("--spec", required=True)
    p_gen.add_argument("--out", required=True)

    p_inspect = sub.add_parser("inspect", help="summarize a generator/pool file")
    p_inspect.add_argument("file")

    p_metrics = sub.add_parser("metrics", help="recompute metrics from a CSV")
    p_metrics.add_argument("--matrix", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, stream_files=args.stream_files)
    if args.command == "gen-stream":
        return cmd_gen_stream(args.spec, args.out)
    if args.command == "inspect":
        return cmd_inspect(args.file)
    return cmd_metrics(args.matrix)


if __name__ == "__main__":
    sys.exit(main())
