import sys

from stc_dropout.cli import main

sys.exit(main())
