"""Command-line entry point: ``dppp {keygen,calibrate,simulate,compare,audit,bench}``."""

from __future__ import annotations

import argparse
import json
import math
import random
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .audit import (
    COORDINATE,
    DELTA_GRID as AUDIT_DELTAS,
    EPSILON_GRID as AUDIT_EPSILONS,
    FLIP,
    argmax_runner,
    binomial_grid_audit,
    collusion_residual_check,
    empirical_dp_test,
    gaussian_grid_audit,
    plan_exact_delta,
)
from .errors import DPPPError
from .experiment import EPSILON_GRID, ExperimentSpec, rows_to_csv, run_sweep
from .mechanisms import BINOMIAL, GAUSSIAN, PrivacyParams, dwork_min_tosses, make_plan, noiseless_plan
from .paillier import (
    DEFAULT_KEY_BITS,
    ThresholdConfig,
    add_all,
    combine,
    deal_keys,
    partial_decrypt,
)
from .protocol import (
    RunConfig,
    VoteVector,
    default_threshold,
    encode_noisy_vote,
    estimate_traffic,
    run_protocol,
    votes_from_labels,
)

MECHANISMS = {"bm": BINOMIAL, "dgm": GAUSSIAN}


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seeds(text: str) -> list[int]:
    """A bare count ``k`` means seeds 0..k-1; a comma list is taken literally."""
    values = _ints(text)
    if "," not in text and len(values) == 1:
        if values[0] < 1:
            raise argparse.ArgumentTypeError("seed count must be positive")
        return list(range(values[0]))
    return values


def _mechanisms(name: str) -> tuple[str, ...]:
    return (BINOMIAL, GAUSSIAN) if name == "both" else (MECHANISMS[name],)


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_keygen(args) -> int:
    if not 2 <= args.threshold <= args.teachers:
        args.parser.error(f"threshold must satisfy 2 <= t <= N, got t={args.threshold}, N={args.teachers}")
    out = Path(args.out)
    names = ["public_key.json"] + [f"share_{i:03d}.json" for i in range(1, args.teachers + 1)]
    existing = [n for n in names if (out / n).exists()]
    if existing and not args.force:
        print(f"refusing to overwrite {len(existing)} existing key file(s) in {out}; pass --force", file=sys.stderr)
        return 1
    rng = random.Random(f"dppp/cli-keygen/{args.seed}") if args.seed is not None else None
    config = ThresholdConfig(args.teachers, args.threshold)
    pk, shares = deal_keys(args.key_bits, config, rng)
    out.mkdir(parents=True, exist_ok=True)
    public = {**pk.to_dict(), "n_parties": args.teachers, "threshold": args.threshold}
    (out / names[0]).write_text(json.dumps(public, indent=2) + "\n")
    for name, share in zip(names[1:], shares):
        (out / name).write_text(json.dumps(share.to_dict(), indent=2) + "\n")
    print(f"wrote {len(names)} files to {out}")
    return 0


def cmd_calibrate(args) -> int:
    params = PrivacyParams(args.epsilon, args.delta, args.gamma)
    plan = make_plan(MECHANISMS[args.mechanism], params, args.teachers)
    record = plan.to_record(params)
    if plan.mechanism == BINOMIAL:
        record["n_dwork"] = dwork_min_tosses(params)
    print(json.dumps(record, indent=2))
    return 0


def cmd_simulate(args) -> int:
    if args.config:
        config = RunConfig.from_file(args.config)
    else:
        t = args.threshold if args.threshold is not None else default_threshold(args.teachers)
        config = RunConfig(
            n_teachers=args.teachers,
            threshold=t,
            class_count=args.classes,
            mechanism=MECHANISMS[args.mechanism],
            dropouts=frozenset(args.dropouts),
            compromised=frozenset(args.compromised),
            late_dropouts=frozenset(args.late_dropouts),
            seed=args.seed,
            key_bits=args.key_bits,
        )
    if args.votes:
        labels = args.votes
    else:
        rng = random.Random(f"dppp/cli-votes/{config.seed}")
        labels = [rng.randrange(config.class_count) for _ in range(config.n_teachers)]
    votes = votes_from_labels(labels, config.class_count)
    params = PrivacyParams(args.epsilon, args.delta, args.gamma)
    plan = make_plan(config.mechanism, params, config.n_teachers)
    hist, label, stats = run_protocol(config, votes, plan)
    if args.transcript:
        Path(args.transcript).write_text(stats.to_jsonl())
    summary = {
        "raw_counts": list(hist.raw_counts),
        "centered": list(hist.centered),
        "label": label,
        "true_counts": [sum(votes[i - 1].entries[j] for i in stats.participants) for j in range(config.class_count)],
        "participants": list(stats.participants),
        "selected": list(stats.selected),
        "messages": stats.message_count,
        "total_bytes": stats.total_bytes,
        "honest_noise": stats.honest_noise,
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_compare(args) -> int:
    spec = ExperimentSpec(
        epsilons=tuple(args.epsilon),
        deltas=tuple(args.delta),
        mechanisms=_mechanisms(args.mechanism),
        gamma=args.gamma,
        n_teachers=args.teachers,
        class_count=args.classes,
        seeds=tuple(args.seeds),
        dataset=args.dataset,
        label_column=int(args.label_column) if args.label_column.lstrip("-").isdigit() else args.label_column,
        n_samples=args.samples,
        key_bits=args.key_bits,
        backend=args.backend,
        output=args.csv,
    )
    rows = run_sweep(spec, workers=args.workers)
    _emit(rows_to_csv(rows), args.csv)
    return 0


def _audit_rows(args) -> list[dict]:
    rows = []
    neighbors = (COORDINATE, FLIP) if args.flip else (COORDINATE,)
    mechanisms = _mechanisms(args.mechanism)

    def add(check, mechanism, eps, delta, detail, actual, bound, passed, informational=False):
        rows.append(
            {
                "check": check,
                "mechanism": mechanism,
                "epsilon": eps,
                "delta": delta,
                "detail": detail,
                "delta_actual": actual,
                "bound": bound,
                "status": ("info-" if informational else "") + ("pass" if passed else "FAIL"),
            }
        )

    if BINOMIAL in mechanisms:
        for r in binomial_grid_audit(args.epsilon, args.delta, neighbors):
            info = r["neighbor"] == FLIP
            add("exact", BINOMIAL, r["epsilon"], r["delta_claimed"], f"n={r['n_total']} {r['neighbor']}",
                r["delta_actual"], r["delta_claimed"] + r["slack"], r["passed"], info)
            if not info:
                add("tighter", BINOMIAL, r["epsilon"], r["delta_claimed"], f"n={r['n_total']} n_dwork={r['n_dwork']}",
                    None, None, r["tighter"])
    if GAUSSIAN in mechanisms:
        for r in gaussian_grid_audit(args.epsilon, args.delta, neighbors):
            add("exact", GAUSSIAN, r["epsilon"], r["delta_claimed"], f"sigma={r['sigma']:.6g} {r['neighbor']}",
                r["delta_actual"], r["delta_claimed"] + r["slack"], r["passed"], r["neighbor"] == FLIP)

    for mechanism in mechanisms:
        for n_parties in args.teachers:
            for eps in args.epsilon:
                for delta in args.delta:
                    params = PrivacyParams(eps, delta)
                    plan = make_plan(mechanism, params, n_parties)
                    actual = plan_exact_delta(plan, params)
                    bound = delta * (1.1 if mechanism == GAUSSIAN else 1.0)
                    add("stability", mechanism, eps, delta, f"h={plan.honest}", actual, bound, actual <= bound)
            for eps in args.epsilon:
                params = PrivacyParams(eps, args.delta[0], 2 / 3)
                plan = make_plan(mechanism, params, n_parties)
                compromised = set(range(1, n_parties // 3 + 1))
                add("collusion", mechanism, eps, args.delta[0], f"N={n_parties} |K|={len(compromised)}",
                    None, None, collusion_residual_check(plan, n_parties, compromised))

    if args.trials:
        d = votes_from_labels([0, 0, 1], 2)
        d_prime = votes_from_labels([0, 1, 1], 2)
        params = PrivacyParams(1.0, 1e-3)
        report = empirical_dp_test(argmax_runner(make_plan(BINOMIAL, params, 3)), d, d_prime, 1.0, 1e-3, args.trials, seed=0)
        add("empirical", BINOMIAL, 1.0, 1e-3, f"N=3 trials={args.trials}", report.delta_actual,
            report.delta_claimed + report.slack, report.passed)
        control = empirical_dp_test(argmax_runner(noiseless_plan(3)), d, d_prime, 1.0, 1e-3, args.trials, seed=0)
        # the noiseless control is expected to fail
        add("empirical-control", "none", 1.0, 1e-3, "zero noise", control.delta_actual,
            control.delta_claimed + control.slack, not control.passed)
    return rows


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def cmd_audit(args) -> int:
    rows = _audit_rows(args)
    if args.json:
        text = json.dumps(rows, indent=2) + "\n"
    else:
        cols = ("check", "mechanism", "epsilon", "delta", "detail", "delta_actual", "bound", "status")
        table = [cols] + [tuple(_fmt(r[c]) for c in cols) for r in rows]
        widths = [max(len(line[k]) for line in table) for k in range(len(cols))]
        text = "".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() + "\n" for line in table)
    _emit(text, args.output)
    failures = [r for r in rows if r["status"] == "FAIL"]
    if failures:
        print(f"{len(failures)} audit check(s) failed", file=sys.stderr)
        return 1
    return 0


def _timed(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cmd_bench(args) -> int:
    n, c = args.teachers, args.classes
    t = args.threshold if args.threshold is not None else default_threshold(n)
    config = ThresholdConfig(n, t)
    rng = random.Random(f"dppp/bench/{args.seed}")
    start = time.perf_counter()
    pk, shares = deal_keys(args.key_bits, config, rng)
    keygen = time.perf_counter() - start

    plan = make_plan(MECHANISMS[args.mechanism], PrivacyParams(args.epsilon, args.delta), n)
    votes = [VoteVector.one_hot(rng.randrange(c), c) for _ in range(n)]
    encrypted = [encode_noisy_vote(v, plan, pk, rng, teacher_index=i + 1) for i, v in enumerate(votes)]
    aggregate = [add_all(pk, [ev.per_class[j] for ev in encrypted]) for j in range(c)]
    partials = [[partial_decrypt(s, config, a) for a in aggregate] for s in shares[:t]]

    encrypt_s = _timed(lambda: encode_noisy_vote(votes[0], plan, pk, rng, teacher_index=1), args.repeats)
    partial_s = _timed(lambda: [partial_decrypt(shares[0], config, a) for a in aggregate], args.repeats)

    def aggregator():
        agg = [add_all(pk, [ev.per_class[j] for ev in encrypted]) for j in range(c)]
        return agg, [combine(pk, config, [p[j] for p in partials]) for j in range(c)]

    combine_s = _timed(aggregator, args.repeats)
    run_config = RunConfig(n, t, c, mechanism=plan.mechanism, seed=args.seed, key_bits=args.key_bits)
    _, _, stats = run_protocol(run_config, votes, plan, keys=(pk, shares))
    measured = stats.per_teacher_bytes[stats.selected[0]]
    report = {
        "n_teachers": n,
        "threshold": t,
        "class_count": c,
        "key_bits": args.key_bits,
        "keygen_seconds": keygen,
        "teacher_encrypt_seconds": encrypt_s,
        "teacher_partial_decrypt_seconds": partial_s,
        "aggregator_combine_seconds": combine_s,
        "per_teacher_bytes": estimate_traffic(c, args.key_bits),
        "measured_selected_teacher_bytes": measured,
    }
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dppp", description="Private aggregation of teacher votes under threshold Paillier.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def privacy(p, multi=False, eps_default=1.0, delta_default=1e-3):
        if multi:
            p.add_argument("--epsilon", type=_floats, default=list(eps_default), help="comma-separated epsilon grid")
            p.add_argument("--delta", type=_floats, default=list(delta_default), help="comma-separated delta grid")
        else:
            p.add_argument("--epsilon", type=float, default=eps_default)
            p.add_argument("--delta", type=float, default=delta_default)
        p.add_argument("--gamma", type=float, default=1.0, help="fraction of parties assumed honest")

    p = sub.add_parser("keygen", help="deal a threshold key to a directory")
    p.add_argument("--key-bits", type=int, default=DEFAULT_KEY_BITS)
    p.add_argument("--teachers", type=int, required=True)
    p.add_argument("--threshold", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="deterministic keys (testing only)")
    p.add_argument("--force", action="store_true", help="overwrite existing key files")
    p.set_defaults(func=cmd_keygen, parser=p)

    p = sub.add_parser("calibrate", help="print the noise plan for (epsilon, delta, gamma, N)")
    privacy(p)
    p.add_argument("--teachers", type=int, default=20)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS), default="bm")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run one encrypted query")
    privacy(p)
    p.add_argument("--config", help="RunConfig as .json or .toml (overrides the run flags)")
    p.add_argument("--teachers", type=int, default=5)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS), default="bm")
    p.add_argument("--votes", type=_ints, default=None, help="comma-separated teacher labels")
    p.add_argument("--dropouts", type=_ints, default=[])
    p.add_argument("--late-dropouts", type=_ints, default=[])
    p.add_argument("--compromised", type=_ints, default=[])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--key-bits", type=int, default=DEFAULT_KEY_BITS)
    p.add_argument("--transcript", help="write the message log as JSON lines")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="accuracy sweep over the six frameworks")
    privacy(p, multi=True, eps_default=EPSILON_GRID, delta_default=(1e-3,))
    p.add_argument("--teachers", type=int, default=20)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS) + ["both"], default="bm")
    p.add_argument("--seeds", type=_seeds, default=list(range(20)), help="count k (seeds 0..k-1) or a comma list")
    p.add_argument("--dataset", default="synthetic", help="'synthetic' or a CSV path")
    p.add_argument("--label-column", default="-1", help="CSV label column name or index")
    p.add_argument("--samples", type=int, default=660, help="synthetic dataset size")
    p.add_argument("--key-bits", type=int, default=512)
    p.add_argument("--backend", choices=("encrypted", "shadow"), default="encrypted")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="exact and empirical privacy audits; exits 1 on failure")
    privacy(p, multi=True, eps_default=AUDIT_EPSILONS, delta_default=AUDIT_DELTAS)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS) + ["both"], default="both")
    p.add_argument("--teachers", type=_ints, default=[4, 9, 20], help="party counts for plan-level checks")
    p.add_argument("--flip", action="store_true", help="add informational rows for the vote-flip neighbor")
    p.add_argument("--trials", type=int, default=0, help="Monte-Carlo trials for the empirical rows (0 skips)")
    p.add_argument("--json", action="store_true")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="per-teacher and aggregator timings plus traffic")
    p.add_argument("--teachers", type=int, default=20)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--key-bits", type=int, default=DEFAULT_KEY_BITS)
    p.add_argument("--mechanism", choices=sorted(MECHANISMS), default="bm")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DPPPError, ValueError, OSError) as exc:
        print(f"dppp {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
