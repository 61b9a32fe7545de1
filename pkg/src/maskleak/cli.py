"""Command-line front end: fit models, run attacks, emit guess-rank reports.

Exit codes: 0 on success, 1 for input problems, 2 for internal invariant
violations. Every command takes --seed and is byte-deterministic given the
same inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .keypad import CLASS_ORDER
from .observations import (
    ObservationSequence,
    load_latency_log,
    load_samples_csv,
    load_truth_csv,
    write_latency_log,
)
from .password_attack import (
    Dictionary,
    GammaDigraphRanker,
    baseline_expected_attempts,
    frequency_baseline_order,
    fuse_recordings,
    prepare_training,
    rank_dictionary,
    rank_dictionary_from_rankings,
)
from .pin_attack import (
    exact_distance_guess_curve,
    format_triplet,
    random_guess_curve,
    rank_pins,
    triplet_census,
    TOTAL_PINS,
)
from .simulate import (
    ChannelConfig,
    load_ground_truth_csv,
    simulate_entries,
    stats_from_pairs,
)
from .timing import TimingModel, distribution_report, fit

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2

DEFAULT_SEED = 1009

ATTEMPT_GRID = (5, 10, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120)

_CLASS_NAMES = {c.value for c in CLASS_ORDER}


class InvariantError(RuntimeError):
    """An internal consistency check failed; the output cannot be trusted."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems are input errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


@dataclass(frozen=True)
class ExperimentReport:
    """Guess ranks per instance plus the hit-rate curve over attempt counts."""

    instances: Tuple[Tuple[str, int], ...]
    attempts: Tuple[int, ...]
    hit_rates: Tuple[float, ...]
    random_rates: Tuple[float, ...]
    exact_rates: Tuple[float, ...]
    seed: int

    def __post_init__(self) -> None:
        if any(rank < 1 for _, rank in self.instances):
            raise InvariantError("guess ranks must be >= 1")
        if any(
            self.hit_rates[i] > self.hit_rates[i + 1] + 1e-12
            for i in range(len(self.hit_rates) - 1)
        ):
            raise InvariantError("hit-rate curve must be nondecreasing")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["attempts", "hit_rate", "random_rate", "exact_rate"])
            for i, k in enumerate(self.attempts):
                writer.writerow(
                    [k, _fmt(self.hit_rates[i]), _fmt(self.random_rates[i]),
                     _fmt(self.exact_rates[i])]
                )


def build_pin_report(
    instances: Sequence[Tuple[str, int]],
    attempts: Sequence[int],
    seed: int,
) -> ExperimentReport:
    n = len(instances)
    hit = tuple(sum(1 for _, r in instances if r <= k) / n for k in attempts)
    rnd = tuple(random_guess_curve(min(k, TOTAL_PINS)) for k in attempts)
    exact = tuple(exact_distance_guess_curve(k) for k in attempts)
    return ExperimentReport(tuple(instances), tuple(attempts), hit, rnd, exact, seed)


def _parse_tie(text: str, default_seed: int) -> Tuple[str, Optional[int]]:
    if text == "lex":
        return "lex", None
    if text == "shuffle":
        return "shuffle", default_seed
    if text.startswith("shuffle:"):
        try:
            return "shuffle", int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad shuffle seed in --tie {text!r}") from None
    raise ValueError(f"--tie must be lex or shuffle[:SEED], got {text!r}")


def _parse_attempts(text: str) -> Tuple[int, ...]:
    try:
        grid = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"bad --attempts list {text!r}") from None
    if not grid or any(k < 1 for k in grid) or list(grid) != sorted(grid):
        raise ValueError("--attempts must be increasing positive integers")
    return grid


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _write_census_csv(path: str | Path) -> Dict[str, int]:
    census = triplet_census()
    total = sum(census.values())
    if total != TOTAL_PINS:
        raise InvariantError(f"census covers {total} PINs, expected {TOTAL_PINS}")
    empty = sum(1 for n in census.values() if n == 0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["triplet", "pin_count"])
        for triplet, count in census.items():
            writer.writerow([format_triplet(triplet), count])
    return {"triplets": len(census), "empty": empty, "nonempty": len(census) - empty}


def cmd_census(args: argparse.Namespace) -> int:
    summary = _write_census_csv(args.out)
    print(f"seed={args.seed}")
    print(
        f"census: {summary['triplets']} triplets, "
        f"{summary['nonempty']} with PINs, {summary['empty']} empty -> {args.out}"
    )
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    samples = load_samples_csv(args.input, split_direction=args.split_direction)
    if args.labels == "digraph":
        samples = prepare_training(
            samples,
            max_per_digraph=args.max_samples,
            min_count=args.min_count,
            seed=args.seed,
        )
    else:
        bad = sorted(set(samples) - _CLASS_NAMES)
        if bad:
            raise ValueError(f"not distance-class labels: {', '.join(bad)}")
    model = fit(samples, min_samples=args.min_samples)
    model.save(args.out)
    print(f"seed={args.seed}")
    print(f"model: {len(model.labels)} labels -> {args.out}")
    for label in model.labels:
        p = model.params[label]
        print(
            f"  {label}: n={model.counts[label]} shape={_fmt(p.shape)} "
            f"scale={_fmt(p.scale)}"
        )
    if model.dropped:
        print(f"dropped below {args.min_samples} samples: {', '.join(model.dropped)}")
    return EXIT_OK


def cmd_rank_pins(args: argparse.Namespace) -> int:
    print(f"seed={args.seed}")
    if args.census:
        summary = _write_census_csv(args.out)
        print(
            f"census: {summary['triplets']} triplets, "
            f"{summary['nonempty']} with PINs, {summary['empty']} empty -> {args.out}"
        )
        return EXIT_OK
    if args.model is None or args.observations is None:
        raise ValueError("rank-pins needs MODEL and OBSERVATIONS (or --census)")
    model = TimingModel.load(args.model)
    observations = load_latency_log(args.observations)
    tie_policy, tie_seed = _parse_tie(args.tie, args.seed)
    truths = load_truth_csv(args.truth) if args.truth else None

    instances: List[Tuple[str, int]] = []
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["entry_id", "rank", "pin", "triplet", "log_prob"])
        for obs in observations:
            guesses = rank_pins(
                obs, model,
                prior_mode=args.prior, tie_policy=tie_policy, seed=tie_seed,
            )
            for guess in guesses:
                if guess.rank > args.top:
                    break
                writer.writerow(
                    [obs.entry_id, guess.rank, guess.pin,
                     format_triplet(guess.triplet), _fmt(guess.log_prob)]
                )
            if truths is not None:
                if obs.entry_id not in truths:
                    raise ValueError(f"no ground truth for entry {obs.entry_id!r}")
                rank = guesses.rank_of(truths[obs.entry_id])
                instances.append((obs.entry_id, rank))
                print(f"entry={obs.entry_id} true_rank={rank}")
    print(f"ranked {len(observations)} observation(s) -> {args.out}")
    if truths is not None and args.report:
        report = build_pin_report(instances, args.attempts, args.seed)
        report.write_csv(args.report)
        print(f"report -> {args.report}")
    return EXIT_OK


def cmd_rank_passwords(args: argparse.Namespace) -> int:
    print(f"seed={args.seed}")
    dictionary = Dictionary.load(args.dictionary)
    observations = load_latency_log(args.observations)
    if not observations:
        raise ValueError("no observations")
    truths = load_truth_csv(args.truth) if args.truth else None

    def emit(writer, rec_id: str, ordered: Sequence[Tuple[str, str]]) -> None:
        for rank, (password, penalty) in enumerate(ordered, 1):
            if rank > args.top:
                break
            writer.writerow([rec_id, rank, password, penalty])

    def secret_for(rec_id: str) -> str:
        assert truths is not None
        if rec_id not in truths:
            raise ValueError(f"no ground truth for recording {rec_id!r}")
        return truths[rec_id]

    results: List[Tuple[str, int]] = []  # (true secret, rank of truth)
    mode = "fused" if args.fuse else ("baseline" if args.baseline else "single")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "rank", "password", "penalty"])
        if args.baseline:
            for obs in observations:
                length = len(obs) + 1
                order = frequency_baseline_order(dictionary.filter_length(length))
                if not order:
                    raise ValueError(f"dictionary has no password of length {length}")
                emit(writer, obs.entry_id, [(pw, "") for pw in order])
                if truths is not None:
                    secret = secret_for(obs.entry_id)
                    if secret not in order:
                        raise ValueError(
                            f"true password for {obs.entry_id!r} not in dictionary"
                        )
                    results.append((secret, order.index(secret) + 1))
        else:
            model = TimingModel.load(args.model)
            ranker = GammaDigraphRanker(model, prior_mode=args.prior)
            if args.fuse:
                rankings = fuse_recordings(observations, ranker)
                scored = rank_dictionary_from_rankings(dictionary, rankings)
                emit(writer, "fused", [(s.password, str(s.penalty)) for s in scored])
                if truths is not None:
                    secrets = {secret_for(o.entry_id) for o in observations}
                    if len(secrets) != 1:
                        raise ValueError("fused recordings disagree on the true secret")
                    secret = secrets.pop()
                    rank = next(
                        (i for i, s in enumerate(scored, 1) if s.password == secret),
                        None,
                    )
                    if rank is None:
                        raise ValueError("true password not in dictionary")
                    results.append((secret, rank))
            else:
                for obs in observations:
                    scored = rank_dictionary(dictionary, obs, ranker)
                    emit(
                        writer, obs.entry_id,
                        [(s.password, str(s.penalty)) for s in scored],
                    )
                    if truths is not None:
                        secret = secret_for(obs.entry_id)
                        rank = next(
                            (i for i, s in enumerate(scored, 1) if s.password == secret),
                            None,
                        )
                        if rank is None:
                            raise ValueError(
                                f"true password for {obs.entry_id!r} not in dictionary"
                            )
                        results.append((secret, rank))
    print(f"ranked {len(observations)} observation(s) -> {args.out}")

    if truths is not None and args.report:
        by_secret: Dict[str, List[int]] = {}
        for secret, rank in results:
            by_secret.setdefault(secret, []).append(rank)
        with open(args.report, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["mode", "password", "n_instances", "avg_attempts", "stdev_attempts",
                 "median_attempts", "best_attempts", "baseline_attempts",
                 "frac_below_baseline"]
            )
            for secret in sorted(by_secret):
                ranks = by_secret[secret]
                base = baseline_expected_attempts(
                    dictionary.filter_length(len(secret)), secret
                )
                writer.writerow(
                    [mode, secret, len(ranks),
                     _fmt(statistics.mean(ranks)),
                     _fmt(statistics.stdev(ranks)) if len(ranks) > 1 else "0",
                     _fmt(statistics.median(ranks)),
                     min(ranks), _fmt(base),
                     _fmt(sum(1 for r in ranks if r < base) / len(ranks))]
                )
        print(f"report -> {args.report}")
    return EXIT_OK


_CONFIG_KEYS = {f.name for f in fields(ChannelConfig)}


def _load_channel_config(path: str | Path) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = float(value)
    return values


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = _load_channel_config(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key)
        if flag is not None:
            overrides[key] = flag
    cfg = replace(ChannelConfig(), **overrides)
    truths = load_ground_truth_csv(args.truth)
    if not truths:
        raise ValueError(f"{args.truth}: no ground-truth entries")
    pairs = simulate_entries(
        truths, cfg, args.seed, random_phases=not args.fixed_phases
    )
    write_latency_log(args.out, [obs for _, obs in pairs])
    clamped = sum(1 for _, obs in pairs if obs.clamped)
    print(f"seed={args.seed}")
    print(
        "config: "
        + " ".join(f"{k}={_fmt(getattr(cfg, k))}" for k in sorted(_CONFIG_KEYS))
    )
    print(f"simulated {len(pairs)} entries -> {args.out}")
    if clamped:
        print(f"warning: clamped zero latencies in {clamped} entries")
    if args.stats:
        st = stats_from_pairs(pairs)
        with open(args.stats, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["mean_abs_ms", "stdev_ms", "frac_under_10ms", "frac_under_20ms",
                 "n_latencies"]
            )
            writer.writerow(
                [_fmt(st.mean_abs_ms), _fmt(st.stdev_ms), _fmt(st.frac_under_10ms),
                 _fmt(st.frac_under_20ms), st.n_latencies]
            )
        print(f"stats -> {args.stats}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    samples = load_samples_csv(args.input, split_direction=args.split_direction)
    report = distribution_report(samples)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "count", "mean_ms", "stdev_ms"])
        for row in report.stats:
            writer.writerow(
                [row.label, row.count, _fmt(row.mean_ms), _fmt(row.stdev_ms)]
            )
    print(f"seed={args.seed}")
    print(f"stats for {len(report.stats)} labels -> {args.out}")
    if args.overlaps:
        with open(args.overlaps, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label_a", "label_b"])
            for a, b in report.overlapping:
                writer.writerow([a, b])
        print(f"overlaps -> {args.overlaps}")
    else:
        for a, b in report.overlapping:
            print(f"overlap: {a} ~ {b}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="maskleak",
        description="Recover PINs and rank password dictionaries from "
        "inter-keystroke timing leaks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help=f"global random seed (default {DEFAULT_SEED})")

    p = sub.add_parser("fit", help="fit a gamma timing model from samples")
    p.add_argument("input", help="samples CSV: label,latency_ms[,direction]")
    p.add_argument("--labels", choices=("pin-class", "digraph"), required=True)
    p.add_argument("--min-samples", type=int, default=100)
    p.add_argument("--max-samples", type=int, default=1000,
                   help="under-sampling cap per digraph")
    p.add_argument("--min-count", type=int, default=100,
                   help="digraphs with fewer samples are excluded")
    p.add_argument("--split-direction", action="store_true")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank-pins", help="rank PIN guesses per observation")
    p.add_argument("model", nargs="?")
    p.add_argument("observations", nargs="?",
                   help="latency log CSV: entry_id,position,latency_ms")
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--tie", default="lex", help="lex or shuffle[:SEED]")
    p.add_argument("--prior", choices=("pair_count", "fitted", "uniform"),
                   default="pair_count")
    p.add_argument("--census", action="store_true",
                   help="emit the triplet census instead of ranking")
    p.add_argument("--truth", help="ground-truth CSV: entry_id,secret")
    p.add_argument("--report", help="write hit-rate curve CSV here")
    p.add_argument("--attempts", type=_parse_attempts, default=ATTEMPT_GRID)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_rank_pins)

    p = sub.add_parser("rank-passwords", help="rank a dictionary per observation")
    p.add_argument("model")
    p.add_argument("dictionary", help="password<TAB>count lines")
    p.add_argument("observations")
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--prior", choices=("fitted", "uniform"), default="fitted")
    p.add_argument("--fuse", action="store_true",
                   help="average rankings over all recordings")
    p.add_argument("--baseline", action="store_true",
                   help="frequency-only guessing order")
    p.add_argument("--truth", help="ground-truth CSV: recording_id,secret")
    p.add_argument("--report", help="write per-password attempts summary here")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_rank_passwords)

    p = sub.add_parser("simulate", help="simulate the masking side channel")
    p.add_argument("truth", help="press-time CSV: entry_id,event_index,press_ms")
    p.add_argument("--config", help="key=value channel config file")
    for key in sorted(_CONFIG_KEYS):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float,
                       default=None)
    p.add_argument("--fixed-phases", action="store_true",
                   help="reuse config phases instead of per-entry random phases")
    p.add_argument("--stats", help="write error statistics CSV here")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("census", help="PIN counts of all 512 distance triplets")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("report", help="latency distribution report per label")
    p.add_argument("input", help="samples CSV: label,latency_ms[,direction]")
    p.add_argument("--split-direction", action="store_true")
    p.add_argument("--overlaps", help="write overlapping label pairs CSV here")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"maskleak: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, OSError) as exc:
        print(f"maskleak: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
