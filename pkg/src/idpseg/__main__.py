import sys

from idpseg.cli import main

sys.exit(main())
