"""Admin command line.

Exit status: 0 on success or a permitting decision, 3 on Deny (or a tampered
capsule for ``verify``), 2 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ProvGateError
from .evaluator import AccessRequest, Outcome
from .service import GateService, ServiceConfig
from .timefmt import parse_timestamp

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_DENY = 3


def _pairs(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provgate", description="Provenance-policy access gate")
    parser.add_argument("--data-dir", required=True, type=Path)
    parser.add_argument("--config", type=Path, help="JSON service configuration")
    parser.add_argument("--fixed-clock", metavar="ISO8601", help="freeze the clock at this UTC instant")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    actor = sub.add_parser("actor", help="seed actor records").add_subparsers(dest="action", required=True)
    p = actor.add_parser("add")
    p.add_argument("id")
    p.add_argument("name")
    p.add_argument("role")

    context = sub.add_parser("context", help="seed context records").add_subparsers(dest="action", required=True)
    p = context.add_parser("add")
    p.add_argument("id")
    p.add_argument("state")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    pref = sub.add_parser("preference", help="owner preferences").add_subparsers(dest="action", required=True)
    p = pref.add_parser("add")
    p.add_argument("id")
    p.add_argument("--target", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--effect", required=True, choices=["Permit", "Deny"])
    p.add_argument("--obligation", action="append", default=[], metavar='"N days"')

    p = sub.add_parser("upload", help="seal and store a resource")
    p.add_argument("resource_id")
    p.add_argument("file", type=Path)
    p.add_argument("--owner", required=True)
    p.add_argument("--context")

    p = sub.add_parser("access", help="request access to a resource")
    p.add_argument("resource_id")
    p.add_argument("--actor", required=True)
    p.add_argument("--role", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--action", action="append", required=True, dest="actions")
    p.add_argument("--attr", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--payload", type=Path, help="replacement bytes for a write")
    p.add_argument("--out", type=Path, help="where to write bytes returned by a read")

    p = sub.add_parser("regen", help="regenerate and attach policies")
    p.add_argument("resource_id", nargs="?")

    p = sub.add_parser("audit", help="print the audit trail of a resource")
    p.add_argument("resource_id")

    p = sub.add_parser("verify", help="check a capsule's seal")
    p.add_argument("resource_id")

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--listen", help="host:port (overrides config)")
    return parser


def run(args: argparse.Namespace) -> int:
    fixed = parse_timestamp(args.fixed_clock) if args.fixed_clock else None
    config = ServiceConfig.from_file(args.config, args.data_dir, fixed)
    service = GateService(config)

    if args.verb == "actor":
        print(service.add_actor(args.id, args.name, args.role))
    elif args.verb == "context":
        print(service.add_context(args.id, args.state, _pairs(args.param)))
    elif args.verb == "preference":
        print(service.add_preference(args.id, args.target, args.condition, args.effect, tuple(args.obligation)))
    elif args.verb == "upload":
        summary = service.upload_resource(args.resource_id, args.file.read_bytes(), args.owner, args.context)
        print(json.dumps(summary, indent=2))
    elif args.verb == "access":
        request = AccessRequest(
            actor_id=args.actor,
            claimed_role=args.role,
            context_id=args.context,
            resource_id=args.resource_id,
            requested_actions=frozenset(args.actions),
            at=service.clock.now(),
            system_attributes=_pairs(args.attr),
        )
        payload = args.payload.read_bytes() if args.payload else None
        result = service.request_access(request, payload)
        print(json.dumps(result.decision.to_json(), indent=2))
        if result.payload is not None and args.out:
            args.out.write_bytes(result.payload)
        return EXIT_DENY if result.decision.outcome is Outcome.DENY else EXIT_OK
    elif args.verb == "regen":
        print(service.regenerate_policies(args.resource_id))
    elif args.verb == "audit":
        sys.stdout.write(service.get_audit_trail(args.resource_id).render())
    elif args.verb == "verify":
        integrity = service.verify_resource(args.resource_id)
        print(integrity)
        return EXIT_OK if integrity.intact else EXIT_DENY
    elif args.verb == "serve":
        import uvicorn

        from .api import create_app

        host, _, port = (args.listen or config.listen_address).rpartition(":")
        uvicorn.run(create_app(service), host=host or "127.0.0.1", port=int(port))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return run(args)
    except (ProvGateError, OSError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
