import sys

from sips.cli import main

sys.exit(main())
