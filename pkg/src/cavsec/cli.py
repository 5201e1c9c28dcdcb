"""Command-line driver.

  cavsec gen-params          write a parameter file (hex key=value lines)
  cavsec bench               benchmark the cryptosystem algorithms over an
                             attribute sweep, with exact operation counters
  cavsec run                 execute a scenario end to end; nonzero exit on
                             any verification failure
  cavsec audit               check one uplink exchange's counters against
                             the advertised cost formulas
  cavsec scenario-template   print a starter scenario configuration

The default parameter profile comes from --profile or the CAVSEC_PROFILE
environment variable (test | standard).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import audit_costs, bench_primitives
from .group import generate_params, params_to_text
from .scenario import ScenarioConfig, default_scenario, run_scenario


def _default_profile() -> str:
    return os.environ.get("CAVSEC_PROFILE", "test")


def _cmd_gen_params(args) -> int:
    params = generate_params(args.profile, args.seed)
    text = params_to_text(params)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    attrs = tuple(int(a) for a in args.attrs.split(","))
    if any(a < 1 for a in attrs):
        print("error: attribute counts must be positive", file=sys.stderr)
        return 2
    report = bench_primitives(
        attrs=attrs,
        iters=args.iters,
        profile=args.profile,
        seed=args.seed,
        batch_file=args.batch_file,
    )
    text = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"wrote {len(report.rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_run(args) -> int:
    cfg = ScenarioConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    result = run_scenario(cfg)
    if args.transcript:
        with open(args.transcript, "w", encoding="utf-8") as f:
            f.write("\n".join(result.transcript) + "\n")
    print(f"transcript hash: {result.transcript_hash}")
    for phase in sorted(result.phase_spans_ns):
        print(f"{phase}: {result.phase_spans_ns[phase] / 1e6:.3f} ms simulated")
    delivered = sum(len(v) for v in result.delivered.values())
    denied = sum(len(v) for v in result.denied.values())
    print(f"payloads delivered: {delivered}, access denied: {denied}")
    if result.failures:
        for f in result.failures:
            print(f"FAILURE {f.code} at {f.entity} "
                  f"(phase {f.phase} step {f.step}): {f.detail}", file=sys.stderr)
        return 2
    print("no verification failures")
    return 0


def _cmd_audit(args) -> int:
    report = audit_costs(n_s=args.ns, n_r=args.nr, seed=args.seed)
    print(report.render())
    return 0 if report.ok else 1


def _cmd_scenario_template(args) -> int:
    print(json.dumps(default_scenario().to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavsec",
        description="attribute-based end-to-end security toolkit for "
                    "connected-vehicle networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-params", help="generate group parameters")
    p.add_argument("--profile", default=_default_profile(), choices=["test", "standard"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(fn=_cmd_gen_params)

    p = sub.add_parser("bench", help="benchmark cryptosystem algorithms")
    p.add_argument("--attrs", default="4,8,16,32",
                   help="comma-separated attribute counts to sweep")
    p.add_argument("--iters", type=int, default=10_000,
                   help="iterations per measurement (default 10000)")
    p.add_argument("--profile", default=_default_profile(), choices=["test", "standard"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output file (default: stdout)")
    p.add_argument("--batch-file", help="also write the batch-verify vectors here")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("run", help="run a scenario end to end")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--transcript", help="write the wire transcript here")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("audit", help="audit one exchange against the cost formulas")
    p.add_argument("--ns", type=int, default=16, help="system attribute count")
    p.add_argument("--nr", type=int, default=8, help="receiver attribute count")
    p.add_argument("--seed", type=int, default=5)
    p.set_defaults(fn=_cmd_audit)

    p = sub.add_parser("scenario-template", help="print a starter scenario config")
    p.set_defaults(fn=_cmd_scenario_template)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
