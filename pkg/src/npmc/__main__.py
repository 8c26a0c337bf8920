import sys

from npmc.cli import main

sys.exit(main())
