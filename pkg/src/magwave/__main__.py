import sys

from magwave.harness.cli import main

sys.exit(main())
