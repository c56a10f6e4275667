import sys

from tipifreq.cli import main

sys.exit(main())
