"""`manistat run <config.toml>`: run one experiment over explicit seeds and write CSV or JSON."""
import argparse
import inspect
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import experiments
from .errors import ConfigError, DomainError, NumericalError

log = logging.getLogger("manistat")

TOP_KEYS = ("experiment", "seeds", "format", "output", "params")
FORMATS = ("csv", "json")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _runner_for(experiment, params):
    """The function that will receive ``params``; used to validate keys up front."""
    if experiment not in experiments.RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {sorted(experiments.RUNNERS)}")
    if experiment == "barycentre":
        mode = params.get("mode", "rate")
        fn = {"rate": experiments.barycentre_rate, "scheme": experiments.barycentre_bound}.get(mode)
        if fn is None:
            raise ConfigError(f"unknown barycentre mode {mode!r}")
        return fn, {"mode"}
    return experiments.RUNNERS[experiment], set()


def _plain(v):
    """TOML/numpy values to JSON-compatible Python values."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def load_config(data):
    """Validate a parsed config dict and return it in normalized form."""
    unknown = [k for k in data if k not in TOP_KEYS]
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "experiment" not in data:
        raise ConfigError("missing key: experiment")
    experiment = data["experiment"]
    seeds = data.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a nonempty list of integers")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative integers")
    fmt = data.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be a table")
    fn, extra = _runner_for(experiment, params)
    accepted = {p for p in inspect.signature(fn).parameters if p != "seed"} | extra
    bad = [k for k in params if k not in accepted]
    if bad:
        raise ConfigError(f"unknown params key(s) for {experiment}: {', '.join(bad)}")
    output = data.get("output", f"{experiment}.{fmt}")
    return {"experiment": experiment, "seeds": list(seeds), "format": fmt, "output": output,
            "params": _plain(params)}


def read_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return load_config(data)


def _run_seed(experiment, params, seed):
    rows = experiments.RUNNERS[experiment](seed, **params)
    out = []
    for r in rows:
        r = {k: _plain(v) for k, v in r.items()}
        if "seed" not in r:
            r = {"seed": seed, **r}
        out.append(r)
    return out


def run_experiment(cfg, jobs=1):
    """Rows for every seed, concatenated in seed-list order."""
    exp, params, seeds = cfg["experiment"], cfg["params"], cfg["seeds"]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as ex:
            parts = list(ex.map(_run_seed, [exp] * len(seeds), [params] * len(seeds), seeds))
    else:
        parts = [_run_seed(exp, params, s) for s in seeds]
    return [r for part in parts for r in part]


def _csv_cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if v is None:
        return ""
    if isinstance(v, (list, dict)):
        return json.dumps(v, separators=(",", ":"))
    return str(v)


def format_csv(cfg, rows):
    buf = io.StringIO()
    buf.write("# config = " + json.dumps(cfg, sort_keys=True) + "\n")
    cols = list(rows[0]) if rows else []
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(_csv_cell(r.get(k)) for k in cols) + "\n")
    return buf.getvalue()


def format_json(cfg, rows):
    # json.dumps writes floats with repr, the shortest round-trip form
    return json.dumps({"config": cfg, "rows": rows}, indent=1, allow_nan=True) + "\n"


def parse_metadata(text):
    """Config embedded in a CSV or JSON output file."""
    if text.startswith("# config = "):
        return json.loads(text.splitlines()[0][len("# config = "):])
    return json.loads(text)["config"]


def run(config_path, jobs=1, output=None, fmt=None, stream=None):
    """Run one config file; returns the process exit code."""
    stream = sys.stdout if stream is None else stream
    t0 = time.perf_counter()
    try:
        cfg = read_config(config_path)
        if fmt is not None:
            if fmt not in FORMATS:
                raise ConfigError(f"format must be one of {FORMATS}")
            cfg["format"] = fmt
        if output is not None:
            cfg["output"] = output
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        rows = run_experiment(cfg, jobs)
        text = format_csv(cfg, rows) if cfg["format"] == "csv" else format_json(cfg, rows)
        experiments.atomic_write_text(cfg["output"], text)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    dt = time.perf_counter() - t0
    print(f"{cfg['experiment']}: {len(rows)} rows from {len(cfg['seeds'])} seed(s) -> "
          f"{cfg['output']} ({cfg['format']}, {dt:.1f}s)", file=stream)
    return EXIT_OK


def _setup_logging():
    name = os.environ.get("MANISTAT_LOG", "warn").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"MANISTAT_LOG must be one of {sorted(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    ap = argparse.ArgumentParser(prog="manistat")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1, help="worker processes, one seed per job")
    r.add_argument("--output", help="override the config's output path")
    r.add_argument("--format", choices=FORMATS, help="override the config's output format")
    args = ap.parse_args(argv)
    try:
        _setup_logging()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.config, jobs=args.jobs, output=args.output, fmt=args.format)


if __name__ == "__main__":
    sys.exit(main())
