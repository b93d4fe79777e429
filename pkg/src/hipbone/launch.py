"""Entry point of one socket-transport rank launched by :func:`run_socket_ranks`.

Usage: ``python -m hipbone.launch JOB.pkl OUT.pkl --rank R --peers h:p,h:p,...``
"""

import argparse
import pickle
import sys

from .transport import parse_peers, run_socket_rank


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m hipbone.launch")
    parser.add_argument("job")
    parser.add_argument("out")
    parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--peers", required=True)
    args = parser.parse_args(argv)
    with open(args.job, "rb") as fh:
        fn, fargs, fkwargs, timeout = pickle.load(fh)
    result = run_socket_rank(args.rank, parse_peers(args.peers), fn, *fargs,
                             timeout=timeout, **fkwargs)
    with open(args.out, "wb") as fh:
        pickle.dump(result, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
