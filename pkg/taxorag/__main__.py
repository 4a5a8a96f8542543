import sys

from taxorag.cli import main

sys.exit(main())
