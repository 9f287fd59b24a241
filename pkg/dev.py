# dev.py
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

import sys

from rsrdiff.main import main

if __name__ == "__main__":
    sys.exit(main())
