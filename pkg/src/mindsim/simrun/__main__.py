import sys

from mindsim.simrun.cli import main

sys.exit(main())
