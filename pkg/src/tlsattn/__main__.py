import sys

from tlsattn.harness.cli import main

sys.exit(main())
