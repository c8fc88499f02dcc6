import sys

from tailcode.cli import main

sys.exit(main())
