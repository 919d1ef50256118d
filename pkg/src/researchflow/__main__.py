import sys

from researchflow.cli import main

sys.exit(main())
