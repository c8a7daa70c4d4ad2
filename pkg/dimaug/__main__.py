import sys

from dimaug.cli import main


sys.exit(main())
