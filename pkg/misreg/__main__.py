import sys

from misreg.main import main

sys.exit(main())
