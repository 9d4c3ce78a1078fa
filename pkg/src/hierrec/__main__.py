import sys

from hierrec.cli import main

sys.exit(main())
