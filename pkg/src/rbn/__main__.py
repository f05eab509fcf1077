import sys

from rbn.cli import main

sys.exit(main())
