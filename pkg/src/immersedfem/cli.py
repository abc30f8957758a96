"""Thin-client command line for the immersed FEM service.

Subcommands post a study request to the FastAPI app, by default through an
in-process ASGI transport (no server needed); `--server URL` targets a running
instance and `immersed serve` starts one.

Exit codes: 0 success, 1 error, 2 flagged-assertion failure under --check.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .studies import StudyRow, emit

STUDIES = ("solve", "conditioning", "convergence", "schwarz", "stability")

_DEFAULTS = {
    "geometry": "circle:0.5,0.5,0.3",
    "mesh": "8",
    "p": 1,
    "stab": "none",
    "tau": "0.1,0.1",
    "beta_mode": None,
    "beta_c": 10.0,
    "bc_cut": None,
    "mms": "sinsin",
    "eta_star": 1.0,
    "max_chain": 10,
    "quad_depth": 6,
    "quad_order": None,
    "precond": "direct",
    "preconds": "none,jacobi,as,ms",
    "blocks": "cut",
    "theta": 1e-12,
    "tol": 1e-8,
    "maxit": None,
    "cond": "dense",
    "sweep": "",
    "seed": 42,
}


def _add_study_flags(sub):
    sub.add_argument("--geometry", help="circle:cx,cy,r | plane:nx,ny,c | "
                     "corner:a,b,s | annulus:cx,cy,r0,r1")
    sub.add_argument("--mesh", help="comma-separated mesh sizes, e.g. 8,16,32")
    sub.add_argument("--p", type=int, choices=(1, 2))
    sub.add_argument("--stab", choices=("none", "ghost-face", "ghost-elem-s0",
                                        "ghost-elem-s1", "agfem"))
    sub.add_argument("--tau", help="ghost-penalty coefficients, e.g. 0.1,0.1")
    sub.add_argument("--beta-mode", dest="beta_mode", choices=("local", "global"))
    sub.add_argument("--beta-c", dest="beta_c", type=float)
    sub.add_argument("--bc-cut", dest="bc_cut", choices=("dirichlet", "neumann"))
    sub.add_argument("--mms", choices=("xy", "x2-y2", "sinsin"))
    sub.add_argument("--eta-star", dest="eta_star", type=float)
    sub.add_argument("--max-chain", dest="max_chain", type=int)
    sub.add_argument("--quad-depth", dest="quad_depth", type=int)
    sub.add_argument("--quad-order", dest="quad_order", type=int)
    sub.add_argument("--precond", choices=("direct", "none", "jacobi", "as", "ms"))
    sub.add_argument("--preconds", help="preconditioners for the schwarz study")
    sub.add_argument("--blocks", help="cut | all | threshold:<real>")
    sub.add_argument("--theta", type=float)
    sub.add_argument("--tol", type=float)
    sub.add_argument("--maxit", type=int)
    sub.add_argument("--cond", choices=("dense", "lanczos"))
    sub.add_argument("--sweep", help="value list or log:a:b:n")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--config", help="key value file, overridden by flags")
    sub.add_argument("--out", help="output path for the row table")
    sub.add_argument("--format", choices=("csv", "json"),
                     help="output format (default from --out extension)")
    sub.add_argument("--check", action="store_true",
                     help="exit 2 when any study assertion is flagged")
    sub.add_argument("--server", help="base URL of a running service; "
                     "in-process by default")


def build_parser():
    parser = argparse.ArgumentParser(prog="immersed",
                                     description=__doc__.split("\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for study in STUDIES:
        _add_study_flags(subs.add_parser(study))
    serve = subs.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8421)
    return parser


def _read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_settings(args):
    settings = dict(_DEFAULTS)
    if args.config:
        settings.update(_read_config_file(args.config))
    for key in _DEFAULTS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            settings[key] = cli_val
    return settings


def _coerce(settings):
    """Build the request payload from merged string/typed settings."""
    def as_int(v):
        return None if v in (None, "") else int(v)

    def as_float(v):
        return None if v in (None, "") else float(v)

    return {
        "geometry": settings["geometry"],
        "mesh_sizes": [int(t) for t in str(settings["mesh"]).split(",")],
        "p": int(settings["p"]),
        "stab": settings["stab"],
        "tau": [float(t) for t in str(settings["tau"]).split(",")],
        "beta_mode": settings["beta_mode"] or None,
        "beta_c": float(settings["beta_c"]),
        "bc_cut": settings["bc_cut"] or None,
        "mms": settings["mms"],
        "eta_star": float(settings["eta_star"]),
        "max_chain": int(settings["max_chain"]),
        "quad_depth": int(settings["quad_depth"]),
        "quad_order": as_int(settings["quad_order"]),
        "precond": settings["precond"],
        "preconds": str(settings["preconds"]).split(","),
        "blocks": settings["blocks"],
        "theta": float(settings["theta"]),
        "tol": float(settings["tol"]),
        "maxit": as_int(settings["maxit"]),
        "cond_method": settings["cond"],
        "sweep": settings["sweep"],
        "seed": int(settings["seed"]),
    }


def _endpoint(study):
    return "/solve" if study == "solve" else f"/studies/{study}"


def _post(study, payload, server=None):
    if server:
        with httpx.Client(base_url=server, timeout=3600.0) as client:
            response = client.post(_endpoint(study), json=payload)
    else:
        from .service import app

        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://immersed",
                                         timeout=3600.0) as client:
                return await client.post(_endpoint(study), json=payload)

        response = asyncio.run(go())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:
            detail = response.text
        raise RuntimeError(f"study failed: {detail}")
    return response.json()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        payload = _coerce(_merge_settings(args))
        result = _post(args.command, payload, args.server)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    rows = [StudyRow(**r) for r in result["rows"]]
    if args.out:
        fmt = args.format or ("json" if args.out.endswith(".json") else "csv")
        emit(rows, fmt, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")

    print(json.dumps(result["summary"], indent=1, default=str))
    failed = [c for c in result["checks"] if not c["passed"]]
    for c in result["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"[{mark}] {c['name']}: {c['detail']}")
    if args.check and failed:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
