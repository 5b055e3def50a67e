import sys

from fedinv.cli import main

sys.exit(main())
