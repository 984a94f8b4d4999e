import sys

from dereverb.cli import main

sys.exit(main())
