import sys

from dirmono.cli import main

sys.exit(main())
