import sys

from dprf.cli import main

sys.exit(main())
