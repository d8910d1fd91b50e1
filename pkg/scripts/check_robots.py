"""Check paths against a robots.txt file or URL.

    python scripts/check_robots.py robots.txt /some/path /other?q=1 [--agent NAME]
    python scripts/check_robots.py https://example.com/robots.txt /news/
"""

import argparse
from pathlib import Path

from crashnews.netfetch import DEFAULT_USER_AGENT, Fetcher, FetchError, is_allowed, parse_robots


def load(source: str) -> bytes:
    if source.startswith(("http://", "https://")):
        try:
            return Fetcher().get(source).body
        except FetchError as exc:
            print(f"could not fetch {source} ({exc}); treating as allow-all")
            return b""
    return Path(source).read_bytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("robots", help="robots.txt path or URL")
    ap.add_argument("paths", nargs="+")
    ap.add_argument("--agent", default=DEFAULT_USER_AGENT)
    args = ap.parse_args()

    policy = parse_robots(load(args.robots))
    for path in args.paths:
        verdict = "allow" if is_allowed(policy, args.agent, path) else "DENY"
        print(f"{verdict:5}  {path}")


if __name__ == "__main__":
    main()
