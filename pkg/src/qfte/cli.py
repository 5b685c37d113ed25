"""Command-line experiment runner.

Subcommands: ``build-source``, ``run`` and ``fidelity``. Exit codes:
0 success, 2 invalid arguments or config, 3 qubit budget exceeded,
4 majority vote tied while decoding a relayed bit.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .engine import NoiseModel, simulate_pure
from .fidelity import FidelityReport, ProbabilityPair
from .protocols import (
    BACKENDS,
    CASCADE_SOURCES,
    DEFAULT_SHOTS,
    PROTOCOL_LABELS,
    VARIANTS,
    IndeterminateBitError,
    InputState,
    MultiOrbitResult,
    ProtocolRun,
    run_protocol,
)
from .source import QubitBudgetError, build_source, verify_disjoint

EXIT_OK, EXIT_USAGE, EXIT_BUDGET, EXIT_TIE = 0, 2, 3, 4
SEED_ENV = "QFTE_SEED"
PAIR_SUM_TOL = 1e-4
MULTI_ORBIT_HOPS = 5

_CONFIG_KEYS = {"protocol", "inputs", "variant", "noise", "shots", "seed", "backend",
                "bits", "hops", "source", "library_version"}


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


@dataclass
class ExperimentConfig:
    protocol: str
    inputs: list = field(default_factory=list)
    variant: str = "deferred"
    noise: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    shots: int = DEFAULT_SHOTS
    seed: int = 0
    backend: str = "exact"
    bits: str | None = None
    hops: int | None = None
    source: str | None = None

    def to_manifest(self) -> dict:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        doc["library_version"] = __version__
        return doc

    def run(self) -> ProtocolRun:
        noise = NoiseModel(*self.noise)
        return ProtocolRun(tuple(self.inputs), self.variant, None if noise.trivial else noise,
                           self.shots, self.seed, self.backend)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _normalize_input(spec, where: str):
    """Named state -> canonical name; amplitude pair -> [[re, im], [re, im]]."""
    if isinstance(spec, str):
        try:
            return InputState.parse(spec).label
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if isinstance(spec, list) and len(spec) == 2:
        amps = []
        for j, a in enumerate(spec):
            if isinstance(a, list) and len(a) == 2:
                amps.append([_number(a[0], f"{where}[{j}][0]"), _number(a[1], f"{where}[{j}][1]")])
            else:
                amps.append([_number(a, f"{where}[{j}]"), 0.0])
        if all(re == 0 and im == 0 for re, im in amps):
            raise ConfigError(f"{where}: amplitude pair has zero norm")
        return amps
    raise ConfigError(f"{where}: expected a state name or a pair of amplitudes, got {spec!r}")


def _input_value(spec):
    if isinstance(spec, str):
        return spec
    return [complex(re, im) for re, im in spec]


def parse_config(doc) -> ExperimentConfig:
    """Validate a decoded JSON config and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"config: unknown field(s) {', '.join(unknown)}")
    if "protocol" not in doc:
        raise ConfigError("protocol: missing required field")
    proto = doc["protocol"]
    if not isinstance(proto, str) or not _valid_label(proto):
        raise ConfigError(f"protocol: unknown protocol {proto!r}; valid names: "
                          f"{', '.join(PROTOCOL_LABELS)}")
    cfg = ExperimentConfig(proto)

    if proto == "multi-orbit":
        bits = doc.get("bits")
        if not isinstance(bits, str) or not bits or set(bits) - {"0", "1"}:
            raise ConfigError(f"bits: expected a non-empty string of 0/1, got {bits!r}")
        cfg.bits = bits
        hops = doc.get("hops", MULTI_ORBIT_HOPS)
        if not _is_int(hops) or hops < 2:
            raise ConfigError(f"hops: expected an integer >= 2, got {hops!r}")
        cfg.hops = hops
        if doc.get("inputs"):
            raise ConfigError("inputs: multi-orbit takes its message from 'bits'")
    else:
        for key in ("bits", "hops"):
            if key in doc:
                raise ConfigError(f"{key}: only valid for protocol multi-orbit")
        inputs = doc.get("inputs")
        if not isinstance(inputs, list) or not inputs:
            raise ConfigError("inputs: expected a non-empty list of state specs")
        cfg.inputs = [_normalize_input(s, f"inputs[{i}]") for i, s in enumerate(inputs)]

    if "source" in doc:
        if not proto.startswith("fo-ca-"):
            raise ConfigError("source: only valid for fo-ca-N protocols")
        if doc["source"] not in CASCADE_SOURCES:
            raise ConfigError(f"source: expected one of {', '.join(CASCADE_SOURCES)}, "
                              f"got {doc['source']!r}")
        cfg.source = doc["source"]
    elif proto.startswith("fo-ca-"):
        cfg.source = "per_hop"

    variant = doc.get("variant", cfg.variant)
    if variant not in VARIANTS:
        raise ConfigError(f"variant: expected one of {', '.join(VARIANTS)}, got {variant!r}")
    cfg.variant = variant
    backend = doc.get("backend", cfg.backend)
    if backend not in BACKENDS:
        raise ConfigError(f"backend: expected one of {', '.join(BACKENDS)}, got {backend!r}")
    cfg.backend = backend

    noise = doc.get("noise", cfg.noise)
    if isinstance(noise, dict):
        extra = sorted(set(noise) - {"p_x", "p_y", "p_z"})
        if extra:
            raise ConfigError(f"noise: unknown field(s) {', '.join(extra)}")
        noise = [noise.get("p_x", 0.0), noise.get("p_y", 0.0), noise.get("p_z", 0.0)]
    if not isinstance(noise, list) or len(noise) != 3:
        raise ConfigError(f"noise: expected [p_x, p_y, p_z] or an object, got {noise!r}")
    cfg.noise = [_number(p, f"noise[{i}]") for i, p in enumerate(noise)]
    try:
        NoiseModel(*cfg.noise)
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from None

    shots = doc.get("shots", cfg.shots)
    if not _is_int(shots) or shots <= 0:
        raise ConfigError(f"shots: expected a positive integer, got {shots!r}")
    cfg.shots = shots
    if "seed" in doc:
        cfg.seed = _check_seed(doc["seed"], "seed")
    return cfg


def _valid_label(label: str) -> bool:
    if label in PROTOCOL_LABELS and label != "fo-ca-N":
        return True
    suffix = label[len("fo-ca-"):] if label.startswith("fo-ca-") else ""
    return suffix.isdigit() and int(suffix) >= 1


def _check_seed(seed, where: str) -> int:
    if not _is_int(seed) or not 0 <= seed < 1 << 64:
        raise ConfigError(f"{where}: expected an unsigned 64-bit integer, got {seed!r}")
    return seed


def load_config(path: Path) -> tuple[ExperimentConfig, bool]:
    """Read and validate a config file; also report whether it fixed a seed."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    cfg = parse_config(doc)
    return cfg, isinstance(doc, dict) and "seed" in doc


# -- output -------------------------------------------------------------------------

def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_histograms(out: Path, hists, fmt: str) -> list[str]:
    names = []
    for i, h in enumerate(hists):
        name = f"histogram_{i}.{fmt}"
        (out / name).write_text(h.to_csv() if fmt == "csv" else h.to_json())
        names.append(name)
    return names


def execute_config(cfg: ExperimentConfig, out: Path, fmt: str = "csv") -> dict:
    """Run one experiment and write its output bundle; returns the fidelity document."""
    run = cfg.run()
    params = {}
    if cfg.protocol == "multi-orbit":
        params = {"bits": cfg.bits, "hops": cfg.hops}
    elif cfg.source is not None:
        params = {"source": cfg.source}
    inputs = tuple(_input_value(s) for s in cfg.inputs)
    result = run_protocol(cfg.protocol, ProtocolRun(inputs, run.variant, run.noise, run.shots,
                                                    run.seed, run.backend), **params)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, MultiOrbitResult):
        doc = {"protocol": "multi-orbit", "sent": result.sent, "received": result.received,
               "hop_f_ap": [list(h) for h in result.hop_f_ap]}
    else:
        doc = result.to_dict()
        for ch in doc["channels"]:
            ch.pop("counts")
            ch.pop("shots")
    _write_histograms(out, result.histograms, fmt)
    (out / "fidelity.json").write_text(_dump(doc))
    (out / "manifest.json").write_text(_dump(cfg.to_manifest()))
    return doc


def _summary(doc: dict) -> str:
    if doc["protocol"] == "multi-orbit":
        return f"sent={doc['sent']} received={doc['received']}"
    lines = []
    for ch in doc["channels"]:
        fu = "n/a" if ch["f_uhlmann"] is None else f"{ch['f_uhlmann']:.4f}"
        lines.append(f"channel {ch['channel']} input={ch['input']} F_RP={ch['f_rp']:.4f} "
                     f"F_TP={ch['f_tp']:.4f} F_AP={ch['f_ap']:.4f} Uhlmann={fu}")
    if "hop_f_ap" in doc:
        lines.append("per-hop F_AP: " + " ".join(f"{f:.4f}" for f in doc["hop_f_ap"]))
    return "\n".join(lines)


# -- subcommands --------------------------------------------------------------------

def cmd_build_source(args) -> int:
    if args.sets < 1 or args.size < 2:
        print(f"error: need --sets >= 1 and --size >= 2, got {args.sets}, {args.size}",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        circ, layout = build_source(args.sets, args.size)
    except QubitBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    report = verify_disjoint(simulate_pure(circ), layout)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "circuit.txt").write_text(circ.to_text())
        (out / "layout.json").write_text(layout.to_json())
    else:
        sys.stdout.write(circ.to_text())
    print(f"qubits={layout.n_qubits} {report.summary()}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg, has_seed = load_config(Path(args.config))
        if args.seed is not None:
            cfg.seed = _check_seed(args.seed, "--seed")
        elif not has_seed and os.environ.get(SEED_ENV, "") != "":
            raw = os.environ[SEED_ENV]
            if not raw.isdigit():
                raise ConfigError(f"{SEED_ENV}: expected an unsigned integer, got {raw!r}")
            cfg.seed = _check_seed(int(raw), SEED_ENV)
        if args.shots is not None:
            if args.shots <= 0:
                raise ConfigError(f"--shots: expected a positive integer, got {args.shots}")
            cfg.shots = args.shots
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        doc = execute_config(cfg, Path(args.out), args.format)
    except QubitBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except IndeterminateBitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TIE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(_summary(doc))
    return EXIT_OK


def _pair(text: str, where: str) -> ProbabilityPair:
    try:
        p0, p1 = (float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{where}: expected 'p0,p1', got {text!r}") from None
    if not (0 <= p0 <= 1 and 0 <= p1 <= 1) or abs(p0 + p1 - 1) > PAIR_SUM_TOL:
        raise ConfigError(f"{where}: {text!r} is not a probability pair summing to 1")
    # printed pairs are rounded, so keep p0 and take its complement
    return ProbabilityPair.of(p0)


def cmd_fidelity(args) -> int:
    try:
        theory = _pair(args.theory, "--theory")
        alice = _pair(args.alice, "--alice")
        bob = _pair(args.bob, "--bob")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rep = FidelityReport.from_pairs(theory, alice, bob)
    print(f"F_RP {rep.f_rp:.4f}\nF_TP {rep.f_tp:.4f}\nF_AP {rep.f_ap:.4f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qfte", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qfte {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-source", help="emit a multi-set GHZ source circuit and verify it")
    p.add_argument("--sets", type=int, required=True, help="number of entangled sets M")
    p.add_argument("--size", type=int, required=True, help="qubits per set N")
    p.add_argument("--out", help="directory for circuit.txt and layout.json (default: stdout)")
    p.set_defaults(func=cmd_build_source)

    p = sub.add_parser("run", help="run a protocol experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help=f"overrides config seed and ${SEED_ENV}")
    p.add_argument("--shots", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="histogram file format")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fidelity", help="F_RP, F_TP, F_AP from three probability pairs")
    p.add_argument("--theory", required=True, metavar="P0,P1")
    p.add_argument("--alice", required=True, metavar="P0,P1")
    p.add_argument("--bob", required=True, metavar="P0,P1")
    p.set_defaults(func=cmd_fidelity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
