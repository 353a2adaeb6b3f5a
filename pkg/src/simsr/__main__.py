import sys

from simsr.cli import main

sys.exit(main())
