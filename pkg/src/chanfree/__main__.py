import sys

from chanfree.harness.cli import main

sys.exit(main())
