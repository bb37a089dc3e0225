import sys

from uvhl.cli import main

sys.exit(main())
