import sys

from gentron.cli import main

sys.exit(main())
