"""Entry point: python -m iassa_bridge [--transport stdio|http] ...

Exits nonzero if the model cannot be constructed; after that, per-request
failures are reported in-band and the process stays alive.
"""

import argparse
import sys

from .model import ClassifierBridge
from .server import BridgeServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="iassa-bridge", description=__doc__)
    parser.add_argument(
        "--weights", default="auto",
        help="auto | pretrained | random | path to a state dict (default: auto)",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--score-kind", default="probabilities",
                        choices=["probabilities", "logits"])
    parser.add_argument("--batch-cap", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed when weights are random")
    parser.add_argument("--transport", default="stdio", choices=["stdio", "http"])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8098)
    args = parser.parse_args(argv)

    try:
        bridge = ClassifierBridge(
            weights=args.weights,
            device=args.device,
            score_kind=args.score_kind,
            seed=args.seed,
        )
    except Exception as e:
        print(f"iassa-bridge: model load failed: {e}", file=sys.stderr)
        return 1

    server = BridgeServer(bridge, batch_cap=args.batch_cap)
    if args.transport == "stdio":
        server.serve_stdio()
    else:
        server.serve_http(args.host, args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
