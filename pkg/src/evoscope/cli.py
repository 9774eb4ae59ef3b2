"""Thin command-line client for the HTTP service.

By default requests run in-process against the FastAPI app (no socket,
works offline).  Set EVOSCOPE_SERVICE_URL to talk to a separately
served instance instead.
"""

import argparse
import json
import os
import sys

import httpx

SERVICE_ENV = "EVOSCOPE_SERVICE_URL"


class AsgiSyncTransport(httpx.BaseTransport):
    """Runs an ASGI app on a private event loop, one request at a time."""

    def __init__(self, app):
        self._inner = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        import asyncio

        async def roundtrip():
            response = await self._inner.handle_async_request(request)
            body = b"".join([chunk async for chunk in response.stream])
            return response, body

        response, body = asyncio.run(roundtrip())
        return httpx.Response(
            status_code=response.status_code,
            headers=response.headers,
            content=body,
            request=request,
        )


def make_client() -> httpx.Client:
    url = os.environ.get(SERVICE_ENV)
    if url:
        return httpx.Client(base_url=url, timeout=600.0)
    from evoscope.service import create_app
    return httpx.Client(transport=AsgiSyncTransport(create_app()),
                        base_url="http://evoscope.local", timeout=600.0)


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _post(client: httpx.Client, endpoint: str, payload: dict) -> dict:
    response = client.post(endpoint, json=payload)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error ({response.status_code}): {detail}", file=sys.stderr)
        raise SystemExit(1)
    return response.json()


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_run(client, args) -> None:
    config = _load_json(args.config)
    _emit(_post(client, "/run", {"config": config}))


def cmd_analyze(client, args) -> None:
    _emit(_post(client, "/analyze",
                {"trajectories": args.trajectories, "out_dir": args.out}))


def cmd_stats(client, args) -> None:
    payload = {"table": args.table, "spec": args.spec}
    if args.out:
        payload["out_path"] = args.out
    _emit(_post(client, "/stats", payload))


def cmd_mds(client, args) -> None:
    payload = {
        "out_dir": args.out,
        "max_iter": args.max_iter,
        "eps": args.eps,
        "seed": args.seed,
        "cap_per_bucket": args.cap_per_bucket,
        "total_cap": args.total_cap,
    }
    if args.trajectories:
        payload["trajectories"] = args.trajectories
    if args.distances:
        payload["distances"] = args.distances
    _emit(_post(client, "/mds", payload))


def cmd_zeroshot(client, args) -> None:
    payload = _load_json(args.config)
    if args.out:
        payload["out_path"] = args.out
    _emit(_post(client, "/zeroshot", payload))


def cmd_cost(client, args) -> None:
    payload = {"ledgers": args.ledgers, "prices": args.prices}
    if args.out:
        payload["out_path"] = args.out
    _emit(_post(client, "/cost", payload))


def cmd_serve(_client, args) -> None:
    import uvicorn
    from evoscope.service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoscope",
        description="evolutionary-search workbench client",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a run config end to end")
    p.add_argument("config", help="run config JSON path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="metrics tables from trajectories")
    p.add_argument("--trajectories", required=True,
                   help="glob over trajectory JSONL files")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stats", help="fit one named regression spec")
    p.add_argument("--table", required=True, help="input CSV path")
    p.add_argument("--spec", required=True, help="model spec name")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mds", help="2-D embedding of attempt genomes")
    p.add_argument("--trajectories", help="glob over trajectory JSONL files")
    p.add_argument("--distances", help="distance-matrix JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--cap-per-bucket", type=int, default=60)
    p.add_argument("--total-cap", type=int, default=4000)
    p.set_defaults(func=cmd_mds)

    p = sub.add_parser("zeroshot", help="best-of-N single-prompt probe")
    p.add_argument("config", help="JSON with task, gateway, and model keys")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("cost", help="aggregate exchange ledgers into costs")
    p.add_argument("--ledgers", required=True, help="glob over ledger JSONL")
    p.add_argument("--prices", required=True, help="price table JSON path")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        cmd_serve(None, args)
        return 0
    try:
        with make_client() as client:
            args.func(client, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input ({exc})", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
