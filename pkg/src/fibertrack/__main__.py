import sys

from .cli import parse_and_dispatch

sys.exit(parse_and_dispatch(sys.argv[1:]))
