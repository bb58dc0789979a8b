import sys

from ideadialog.cli import main

sys.exit(main())
