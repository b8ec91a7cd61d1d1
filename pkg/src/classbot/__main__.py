import sys

from classbot.cli import main

sys.exit(main())
