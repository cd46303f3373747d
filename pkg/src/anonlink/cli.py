"""Command-line front end.

Config files are line-oriented ``key = value`` text with dotted section
prefixes; ``#`` starts a comment. Example::

    scenario.k = 5
    scenario.nt = 10
    scenario.nr = 11
    scenario.streams = 4
    scenario.constellation = qpsk
    scenario.alias.policy = all
    sweep.snr_db = 0, 5, 10, 15, 20
    sweep.trials = 10000
    precoders = svd, zf, mmse, im_anon, ci_anon
    seed = 7
    output.path = results/sweep.csv
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

from .airlink import AliasPolicy, Scenario, ScenarioError, psk_constellation
from .detect import DEFAULT_TIE_TOL
from .harness import PRECODER_IDS, SweepResult, run_sweep

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "format_config",
    "CSV_HEADER",
    "format_csv",
    "format_json",
    "cmd_run",
    "cmd_selftest",
    "main",
]

CSV_HEADER = "snr_db,precoder,der,der_lo,der_hi,ser,ser_lo,ser_hi,mean_entropy_bits,trials,seed"
DEFAULT_SNR_GRID = tuple(2.5 * i for i in range(13))

_CONSTELLATIONS = {"bpsk": 2, "qpsk": 4, "8psk": 8, "2": 2, "4": 4, "8": 8}
_REQUIRED = ("scenario.k", "scenario.nt", "scenario.nr", "scenario.streams")
_KNOWN = _REQUIRED + (
    "scenario.constellation",
    "scenario.power_watts",
    "scenario.alias.policy",
    "scenario.alias.fixed",
    "scenario.block_length",
    "scenario.channels",
    "sweep.snr_db",
    "sweep.trials",
    "sweep.z",
    "sweep.workers",
    "detect.tie_tol",
    "precoders",
    "seed",
    "output.path",
    "output.format",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    k: int
    nt: int
    nr: int
    streams: int
    constellation: str = "qpsk"
    power_watts: float = 1.0
    alias_policy: str = "all"
    alias_fixed: tuple[int, ...] = ()
    block_length: int = 1
    channels: str = "block"
    snr_db: tuple[float, ...] = DEFAULT_SNR_GRID
    trials: int = 10000
    z: float = 1.96
    workers: int = 1
    tie_tol: float = DEFAULT_TIE_TOL
    precoders: tuple[str, ...] = PRECODER_IDS
    seed: int = 0
    output_path: str = "sweep.csv"
    output_format: str = "csv"

    def scenario(self) -> Scenario:
        return Scenario(
            k_candidates=self.k,
            n_tx=self.nt,
            n_rx=self.nr,
            n_streams=self.streams,
            constellation=psk_constellation(_CONSTELLATIONS[self.constellation]),
            power_watts=self.power_watts,
            alias_policy=AliasPolicy(self.alias_policy, self.alias_fixed),
            block_length=self.block_length,
            fixed_channels=self.channels == "fixed",
        )


def _split_list(v: str) -> list[str]:
    return [item.strip() for item in v.split(",") if item.strip()]


def _convert(key: str, raw: str, lineno: int):
    try:
        if key in ("scenario.k", "scenario.nt", "scenario.nr", "scenario.streams",
                   "scenario.block_length", "sweep.trials", "sweep.workers", "seed"):
            return int(raw)
        if key in ("scenario.power_watts", "sweep.z", "detect.tie_tol"):
            return float(raw)
        if key == "sweep.snr_db":
            return tuple(float(v) for v in _split_list(raw))
        if key == "scenario.alias.fixed":
            return tuple(int(v) for v in _split_list(raw))
        if key == "precoders":
            return tuple(_split_list(raw))
        if key == "scenario.constellation":
            return raw.lower()
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from None
    return raw


_FIELD_OF = {
    "scenario.k": "k",
    "scenario.nt": "nt",
    "scenario.nr": "nr",
    "scenario.streams": "streams",
    "scenario.constellation": "constellation",
    "scenario.power_watts": "power_watts",
    "scenario.alias.policy": "alias_policy",
    "scenario.alias.fixed": "alias_fixed",
    "scenario.block_length": "block_length",
    "scenario.channels": "channels",
    "sweep.snr_db": "snr_db",
    "sweep.trials": "trials",
    "sweep.z": "z",
    "sweep.workers": "workers",
    "detect.tie_tol": "tie_tol",
    "precoders": "precoders",
    "seed": "seed",
    "output.path": "output_path",
    "output.format": "output_format",
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration.

    Raises ConfigError naming the offending line for syntax problems and the
    violated rule for semantic ones.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = _convert(key, raw, lineno)

    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    cfg = RunConfig(**{_FIELD_OF[k]: v for k, v in values.items()})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.constellation not in _CONSTELLATIONS:
        raise ConfigError(f"unsupported constellation {cfg.constellation!r}")
    if cfg.channels not in ("block", "fixed"):
        raise ConfigError("scenario.channels must be 'block' or 'fixed'")
    if cfg.trials < 1:
        raise ConfigError("sweep.trials must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("sweep.workers must be >= 1")
    if not cfg.snr_db:
        raise ConfigError("sweep.snr_db must list at least one value")
    if any(math.isnan(v) for v in cfg.snr_db):
        raise ConfigError("sweep.snr_db values must be numbers")
    if not cfg.z > 0:
        raise ConfigError("sweep.z must be positive")
    if not cfg.precoders:
        raise ConfigError("precoders must name at least one precoder")
    unknown = [p for p in cfg.precoders if p not in PRECODER_IDS]
    if unknown:
        raise ConfigError(f"unknown precoder(s) {unknown}; choose from {', '.join(PRECODER_IDS)}")
    if len(set(cfg.precoders)) != len(cfg.precoders):
        raise ConfigError("precoders list has duplicates")
    if cfg.output_format not in ("csv", "json"):
        raise ConfigError("output.format must be 'csv' or 'json'")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be in [0, 2^64)")
    try:
        cfg.scenario()
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(format_config(c)) == c``."""

    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    inverse = {field: key for key, field in _FIELD_OF.items()}
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v == ():
            continue
        lines.append(f"{inverse[f.name]} = {fmt(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _g(v: float) -> str:
    return format(v, ".9g")


def _cell_fields(c):
    der_lo, der_hi = c.der_ci
    ser_lo, ser_hi = c.ser_ci
    return [
        ("snr_db", c.snr_db),
        ("precoder", c.precoder),
        ("der", c.der),
        ("der_lo", der_lo),
        ("der_hi", der_hi),
        ("ser", c.ser),
        ("ser_lo", ser_lo),
        ("ser_hi", ser_hi),
        ("mean_entropy_bits", c.mean_entropy_bits),
        ("trials", c.trials),
        ("seed", c.seed),
    ]


def format_csv(result: SweepResult) -> str:
    lines = [CSV_HEADER]
    for c in result.cells:
        lines.append(",".join(v if isinstance(v, str) else str(v) if isinstance(v, int) else _g(v)
                              for _, v in _cell_fields(c)))
    return "\n".join(lines) + "\n"


def format_json(result: SweepResult) -> str:
    def conv(v):
        if isinstance(v, float):
            return None if not math.isfinite(v) else float(_g(v))
        return v

    rows = [{k: conv(v) for k, v in _cell_fields(c)} for c in result.cells]
    return json.dumps(rows, indent=2) + "\n"


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".anonlink-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_run(cfg: RunConfig, err=sys.stderr) -> int:
    """Run the sweep described by ``cfg`` and write its output file.

    Exit codes: 0 success, 2 configuration problem, 3 every cell infeasible.
    """
    out_dir = os.path.dirname(os.path.abspath(cfg.output_path))
    if not os.path.isdir(out_dir):
        print(f"error: output directory does not exist: {out_dir}", file=err)
        return 2
    result = run_sweep(
        cfg.scenario(),
        cfg.precoders,
        cfg.snr_db,
        cfg.trials,
        cfg.seed,
        workers=cfg.workers,
        z=cfg.z,
        tie_tol=cfg.tie_tol,
    )
    for p in cfg.precoders:
        bad = sum(c.infeasible for c in result.curve(p))
        if bad:
            print(f"warning: {p}: {bad} infeasible trial(s) excluded", file=err)
    text = format_json(result) if cfg.output_format == "json" else format_csv(result)
    _write_atomic(cfg.output_path, text)
    if all(c.trials == 0 for c in result.cells):
        print("error: every requested cell was infeasible", file=err)
        return 3
    return 0


def cmd_selftest(inject_fault: str | None = None) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(inject_fault) else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anonlink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a DER/SER sweep from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="override output.path")
    run.add_argument("--workers", type=int, help="override sweep.workers")
    st = sub.add_parser("selftest", help="run the built-in property suites")
    st.add_argument("--inject-fault", metavar="SUITE", help="perturb one suite (tests the failure path)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        try:
            return cmd_selftest(args.inject_fault)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output_path"] = args.out
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
            validate(cfg)
    except (OSError, UnicodeDecodeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return cmd_run(cfg)


if __name__ == "__main__":
    sys.exit(main())
